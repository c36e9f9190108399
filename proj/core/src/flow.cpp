#include "mprobe/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "mprobe/error.hpp"

namespace mprobe::flow {

void check_causal_stochastic(std::span<const Matrix> layers, double tol) {
  if (layers.empty()) fail(ErrorKind::Input, "rollout: no layers");
  const auto T = layers.front().rows();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Matrix& a = layers[l];
    if (a.rows() != T || a.cols() != T) fail(ErrorKind::Data, "rollout: layer " + std::to_string(l) + " is not T x T");
    for (Eigen::Index i = 0; i < T; ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < T; ++j) {
        const double v = a(i, j);
        if (!std::isfinite(v) || v < -tol || (j > i && std::abs(v) > tol))
          fail(ErrorKind::Data, "rollout: layer " + std::to_string(l) + " row " + std::to_string(i) +
                                    " is not causal with non-negative entries");
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol)
        fail(ErrorKind::Data, "rollout: layer " + std::to_string(l) + " row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum));
    }
  }
}

FlowState rollout(std::span<const Matrix> layers, double tol) {
  check_causal_stochastic(layers, tol);
  FlowState s;
  s.epsilon = std::numeric_limits<double>::infinity();
  for (const Matrix& a : layers) {
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j <= i; ++j) s.epsilon = std::min(s.epsilon, a(i, j));
    Matrix causal = a.triangularView<Eigen::Lower>();
    s.accum.push_back(s.accum.empty() ? causal : Matrix(causal * s.accum.back()));
  }
  return s;
}

Matrix information_ratio_first(FlowState& state) {
  if (state.accum.empty()) fail(ErrorKind::Input, "information_ratio_first: rollout not computed");
  const auto T = state.accum.front().rows();
  Matrix ir(T, static_cast<Eigen::Index>(state.accum.size()));
  for (std::size_t l = 0; l < state.accum.size(); ++l) ir.col(static_cast<Eigen::Index>(l)) = state.accum[l].col(0);
  state.ir_first = ir;
  return ir;
}

BoundReport check_domination_bound(FlowState& state, double tol) {
  const Matrix ir = information_ratio_first(state);
  BoundReport r;
  r.epsilon = state.epsilon;
  r.margin = std::numeric_limits<double>::infinity();
  for (Eigen::Index l = 0; l < ir.cols(); ++l) {
    const double bound = 1.0 - std::pow(1.0 - state.epsilon, static_cast<double>(l + 1));
    for (Eigen::Index i = 0; i < ir.rows(); ++i) {
      const double m = ir(i, l) - bound;
      if (m < r.margin) {
        r.margin = m;
        r.worst_token = static_cast<std::uint32_t>(i);
        r.worst_layer = static_cast<std::uint32_t>(l);
      }
    }
  }
  r.holds = r.margin >= -tol;
  return r;
}

std::vector<Matrix> pooled_layers(const trace::AttentionTensor& a) {
  const auto T = static_cast<Eigen::Index>(a.tokens());
  std::vector<Matrix> out;
  for (std::uint32_t l = 0; l < a.layers(); ++l) {
    Matrix m = Matrix::Zero(T, T);
    for (std::uint32_t h = 0; h < a.heads(); ++h)
      for (Eigen::Index i = 0; i < T; ++i)
        for (Eigen::Index j = 0; j <= i; ++j)
          m(i, j) += a.at(l, h, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));
    m /= static_cast<double>(a.heads());
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Matrix> random_causal_stack(Rng& rng, std::uint32_t tokens, std::uint32_t layers) {
  std::vector<Matrix> out;
  for (std::uint32_t l = 0; l < layers; ++l) {
    Matrix m = Matrix::Zero(tokens, tokens);
    for (std::uint32_t i = 0; i < tokens; ++i) {
      double sum = 0.0;
      for (std::uint32_t j = 0; j <= i; ++j) sum += m(i, j) = rng.uniform() + 1e-3;
      m.row(i) /= sum;
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string flow_report_json(std::span<const ExampleFlow> rows, const std::string& config_echo, int indent) {
  using nlohmann::ordered_json;
  ordered_json j;
  ordered_json arr = ordered_json::array();
  bool all = true;
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    ordered_json e;
    e["example_id"] = r.example_id;
    e["epsilon"] = r.bound.epsilon;
    e["min_margin"] = r.bound.margin;
    e["holds"] = r.bound.holds;
    arr.push_back(e);
    all = all && r.bound.holds;
    worst = std::min(worst, r.bound.margin);
  }
  j["n_examples"] = rows.size();
  j["all_hold"] = all;
  j["min_margin"] = rows.empty() ? ordered_json(nullptr) : ordered_json(worst);
  j["examples"] = arr;
  j["config"] = config_echo.empty() ? ordered_json(nullptr) : ordered_json::parse(config_echo);
  return j.dump(indent);
}

}  // namespace mprobe::flow
