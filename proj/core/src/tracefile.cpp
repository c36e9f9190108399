#include <array>
#include <fstream>

#include "binio.hpp"
#include "mprobe/error.hpp"
#include "mprobe/trace.hpp"

namespace mprobe::trace {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'P', 'R', 'O', 'B', 'E', '0', '1'};

bool storable(TraceKind kind) { return static_cast<std::uint8_t>(kind) <= 3; }

}  // namespace

void write_traces(const TraceFile& tf, const std::filesystem::path& path) {
  if (!storable(tf.kind))
    fail(ErrorKind::Input, "write_traces: " + to_string(tf.kind) + " traces have no file kind");
  if (is_pooled(tf.kind) && tf.heads != 1)
    fail(ErrorKind::Input, "write_traces: pooled traces must have heads == 1");
  for (const auto& r : tf.records)
    if (r.kind != tf.kind || r.layers != tf.layers || r.heads != tf.heads ||
        r.values.size() != static_cast<std::size_t>(r.layers) * r.heads * r.width)
      fail(ErrorKind::Input, "write_traces: record " + std::to_string(r.example_id) +
                                 " does not match the file header");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  binio::put<std::uint32_t>(out, kTraceVersion);
  binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(tf.kind));
  binio::put<std::uint16_t>(out, tf.layers);
  binio::put<std::uint16_t>(out, tf.heads);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(tf.records.size()));
  for (const auto& r : tf.records) {
    binio::put<std::uint64_t>(out, r.example_id);
    binio::put<std::uint32_t>(out, r.width);
    for (float v : r.values) binio::put_f32(out, v);
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

TraceFile read_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open trace file " + path.string());
  const auto where = path.string() + ": ";

  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kMagic) fail(ErrorKind::Data, where + "bad magic");
  const auto version = binio::get<std::uint32_t>(in, "trace version");
  if (version != kTraceVersion)
    fail(ErrorKind::Data, where + "unsupported trace version " + std::to_string(version));
  const auto kind_byte = binio::get<std::uint8_t>(in, "trace kind");
  if (kind_byte > 3) fail(ErrorKind::Data, where + "unknown kind flag " + std::to_string(kind_byte));

  TraceFile tf;
  tf.kind = static_cast<TraceKind>(kind_byte);
  tf.layers = binio::get<std::uint16_t>(in, "trace layers");
  tf.heads = binio::get<std::uint16_t>(in, "trace heads");
  if (tf.layers == 0 || tf.heads == 0) fail(ErrorKind::Data, where + "zero layers or heads");
  if (is_pooled(tf.kind) && tf.heads != 1)
    fail(ErrorKind::Data, where + "kind flag says pooled but heads != 1");
  const auto n = binio::get<std::uint32_t>(in, "trace record count");

  // Payload sizes are validated against the remaining file size before
  // allocating, so a corrupted header cannot trigger a huge allocation.
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto file_end = in.tellg();
  in.seekg(here);
  auto remaining = static_cast<std::uint64_t>(file_end - here);

  tf.records.reserve(std::min<std::uint64_t>(n, remaining / 12));
  for (std::uint32_t r = 0; r < n; ++r) {
    const auto id = binio::get<std::uint64_t>(in, "record id");
    const auto width = binio::get<std::uint32_t>(in, "record width");
    remaining -= std::min<std::uint64_t>(remaining, 12);
    const std::uint64_t count = std::uint64_t{tf.layers} * tf.heads * width;
    if (width == 0 || count * 4 > remaining)
      fail(ErrorKind::Data, where + "record " + std::to_string(r) +
                                " payload length inconsistent with header");
    SimplifiedAttention rec(tf.kind, tf.layers, tf.heads, width, id);
    for (auto& v : rec.values) v = binio::get_f32(in, "record payload");
    remaining -= count * 4;
    tf.records.push_back(std::move(rec));
  }
  binio::expect_eof(in, "last trace record");
  return tf;
}

}  // namespace mprobe::trace
