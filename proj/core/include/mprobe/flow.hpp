#pragma once

// Attention rollout: Accum(l+1) = A(l+1) Accum(l), the information ratio of
// the first token, and a numeric check of IR >= 1 - (1 - eps)^l.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mprobe/attention.hpp"
#include "mprobe/rng.hpp"

namespace mprobe::flow {

using Matrix = Eigen::MatrixXd;

struct FlowState {
  std::vector<Matrix> accum;  // one T x T matrix per layer
  double epsilon = 0.0;       // min over allowed (i >= j) entries of every layer
  Matrix ir_first;            // T x L, filled by information_ratio_first
};

/// Each layer must be T x T, causal (upper triangle within `tol` of 0) and
/// row-stochastic within `tol`; anything else is a data error.
void check_causal_stochastic(std::span<const Matrix> layers, double tol = 1e-5);

FlowState rollout(std::span<const Matrix> layers, double tol = 1e-5);

/// ir(i, l) = accum[l](i, 0). Also stored in state.ir_first.
Matrix information_ratio_first(FlowState& state);

struct BoundReport {
  bool holds = true;
  double margin = 0.0;  // min over (i, l) of IR - (1 - (1 - eps)^(l + 1))
  double epsilon = 0.0;
  std::uint32_t worst_token = 0;
  std::uint32_t worst_layer = 0;
};

/// `holds` means margin >= -tol.
BoundReport check_domination_bound(FlowState& state, double tol = 1e-9);

/// Head-mean attention per layer.
std::vector<Matrix> pooled_layers(const trace::AttentionTensor& a);

/// L random causal row-stochastic T x T matrices with strictly positive
/// allowed entries.
std::vector<Matrix> random_causal_stack(Rng& rng, std::uint32_t tokens, std::uint32_t layers);

struct ExampleFlow {
  std::uint64_t example_id = 0;
  BoundReport bound;
};

std::string flow_report_json(std::span<const ExampleFlow> rows, const std::string& config_echo, int indent = 2);

}  // namespace mprobe::flow
