#include <array>
#include <fstream>

#include "binio.hpp"
#include "json.hpp"
#include "mprobe/error.hpp"
#include "mprobe/toylm.hpp"

namespace mprobe::toylm {

namespace {
constexpr std::array<char, 8> kMagic = {'M', 'P', 'C', 'K', 'P', 'T', '0', '1'};
}

std::string config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_model"] = cfg.d_model;
  j["vocab_size"] = cfg.vocab_size;
  j["max_seq_len"] = cfg.max_seq_len;
  j["seed"] = cfg.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers").get<std::uint32_t>();
    cfg.n_heads = j.at("n_heads").get<std::uint32_t>();
    cfg.d_model = j.at("d_model").get<std::uint32_t>();
    cfg.vocab_size = j.at("vocab_size").get<std::uint32_t>();
    cfg.max_seq_len = j.at("max_seq_len").get<std::uint32_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const std::exception& e) {
    fail(ErrorKind::Data, std::string("checkpoint config block: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  const auto cfg = config_to_json(model.config());
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (float p : model.params()) binio::put_f32(out, p);
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path, std::optional<std::uint32_t> max_seq_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kMagic)
    fail(ErrorKind::Data, path.string() + ": not a checkpoint (bad magic)");
  const auto version = binio::get<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion)
    fail(ErrorKind::Data, path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = binio::get<std::uint32_t>(in, "checkpoint config length");
  if (len > (1u << 20)) fail(ErrorKind::Data, path.string() + ": implausible config length");
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len))
    fail(ErrorKind::Data, path.string() + ": truncated config block");
  const ModelConfig stored_cfg = config_from_json(text);
  stored_cfg.validate();

  Model stored(stored_cfg);
  for (auto& p : stored.params()) p = binio::get_f32(in, "checkpoint parameters");
  binio::expect_eof(in, "checkpoint parameters");

  if (!max_seq_len || *max_seq_len == stored_cfg.max_seq_len) return stored;
  if (*max_seq_len == 0 || *max_seq_len > stored_cfg.max_seq_len)
    fail(ErrorKind::Input, "load_checkpoint: max_seq_len override must be in [1, " +
                               std::to_string(stored_cfg.max_seq_len) + "]");

  ModelConfig cfg = stored_cfg;
  cfg.max_seq_len = *max_seq_len;
  Model model(cfg);
  const auto& src_lay = stored.layout();
  const auto& dst_lay = model.layout();
  auto src = stored.params();
  auto dst = model.params();
  const std::size_t keep_pos = static_cast<std::size_t>(cfg.max_seq_len) * cfg.d_model;
  std::copy_n(src.begin(), src_lay.pos_emb, dst.begin());
  std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(src_lay.pos_emb), keep_pos,
              dst.begin() + static_cast<std::ptrdiff_t>(dst_lay.pos_emb));
  const std::size_t src_tail = src_lay.pos_emb + static_cast<std::size_t>(stored_cfg.max_seq_len) * cfg.d_model;
  const std::size_t dst_tail = dst_lay.pos_emb + keep_pos;
  std::copy(src.begin() + static_cast<std::ptrdiff_t>(src_tail), src.end(),
            dst.begin() + static_cast<std::ptrdiff_t>(dst_tail));
  return model;
}

}  // namespace mprobe::toylm
