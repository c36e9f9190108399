#pragma once

// Published GPT-2 probing results on the k-th smallest task (m = 16): raw
// F1-macro for random / pretrained / finetuned models and the printed
// normalized scores. Used to check score normalization arithmetic.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mprobe::reference {

/// All values in percentage points.
struct Row {
  std::uint32_t k;
  double use_rand, use_pre, use_ft;           // raw F1, usefulness probe
  double height_rand, height_pre, height_ft;  // raw F1, height probe
  double test_acc_ft;
  std::optional<double> s_p1_pre, s_p1_ft;    // printed
  std::optional<double> s_p2_pre, s_p2_ft;    // printed; absent when blank or "< 1"
};

std::span<const Row> rows();

struct Cell {
  std::uint32_t k = 0;
  std::string column;  // "S_P1 GPT-2", "S_P1 GPT-2_FT", ...
  std::optional<double> computed;
  std::optional<double> printed;
  bool within_tolerance = false;
  /// Cells known to disagree with their own raw inputs.
  bool known_inconsistency = false;
  /// Cells covered by the reproduction check (finetuned columns).
  bool checked = false;
};

/// Recomputes every normalized cell from the raw values.
std::vector<Cell> reproduce(double tolerance = 0.15);

/// Plain-text comparison table with per-cell deltas.
std::string format_table(std::span<const Cell> cells);

}  // namespace mprobe::reference
