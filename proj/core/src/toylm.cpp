#include "mprobe/toylm.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <thread>

#include "mprobe/error.hpp"
#include "mprobe/rng.hpp"

namespace mprobe::toylm {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using CMap = Eigen::Map<const Mat<S>>;
template <typename S>
using MMap = Eigen::Map<Mat<S>>;
template <typename S>
using CVec = Eigen::Map<const RowVec<S>>;
template <typename S>
using MVec = Eigen::Map<RowVec<S>>;

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

template <typename S>
struct LayerCache {
  Mat<S> xhat1, h1, qkv, concat, xhat2, h2, pre, act;
  std::vector<S> rstd1, rstd2;
  AlignedVector<S> probs;  // B x H x T x T
};

template <typename S>
struct Pass {
  std::uint32_t batch = 0;
  std::uint32_t len = 0;
  std::vector<std::uint32_t> tokens;  // batch x len
  std::vector<LayerCache<S>> layers;
  Mat<S> x;  // residual stream, (batch * len) x d
  Mat<S> xhatf, hf;
  std::vector<S> rstdf;
  Mat<S> logits;  // batch x V
  std::vector<Mat<S>> hidden;
};

template <typename S>
struct View {
  const ModelConfig& cfg;
  const ParamLayout& lay;
  const S* p;

  CMap<S> mat(std::size_t off, Eigen::Index rows, Eigen::Index cols) const {
    return CMap<S>(p + off, rows, cols);
  }
  CVec<S> vec(std::size_t off, Eigen::Index n) const { return CVec<S>(p + off, n); }
};

template <typename S>
struct GradView {
  S* p;
  MMap<S> mat(std::size_t off, Eigen::Index rows, Eigen::Index cols) const {
    return MMap<S>(p + off, rows, cols);
  }
  MVec<S> vec(std::size_t off, Eigen::Index n) const { return MVec<S>(p + off, n); }
};

template <typename S>
void layer_norm(const Mat<S>& x, const CVec<S>& g, const CVec<S>& b, Mat<S>& xhat,
                std::vector<S>& rstd, Mat<S>& y) {
  const auto rows = x.rows();
  xhat.resize(rows, x.cols());
  y.resize(rows, x.cols());
  rstd.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    xhat.row(r) = x.row(r).array() - mean;
    const S var = xhat.row(r).squaredNorm() / static_cast<S>(x.cols());
    const S rs = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) *= rs;
    y.row(r) = xhat.row(r).cwiseProduct(g) + b;
  }
}

template <typename S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const std::vector<S>& rstd,
                         const CVec<S>& g, MVec<S> dg, MVec<S> db, Mat<S>& dx) {
  const auto n = static_cast<S>(dy.cols());
  RowVec<S> dxhat(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    dxhat = dy.row(r).cwiseProduct(g);
    const S m1 = dxhat.sum() / n;
    const S m2 = dxhat.dot(xhat.row(r)) / n;
    dx.row(r).array() +=
        rstd[static_cast<std::size_t>(r)] * (dxhat.array() - m1 - xhat.row(r).array() * m2);
  }
  dg += dy.cwiseProduct(xhat).colwise().sum();
  db += dy.colwise().sum();
}

template <typename S>
S gelu(S x) {
  constexpr S c = static_cast<S>(0.7978845608028654);  // sqrt(2 / pi)
  return S(0.5) * x * (S(1) + std::tanh(c * (x + S(0.044715) * x * x * x)));
}

template <typename S>
S gelu_grad(S x) {
  constexpr S c = static_cast<S>(0.7978845608028654);
  const S t = std::tanh(c * (x + S(0.044715) * x * x * x));
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c * (S(1) + S(3 * 0.044715) * x * x);
}

template <typename S>
void run_forward(const Transformer<S>& model, Pass<S>& pass, const PruneMask& mask,
                 bool keep_hidden) {
  const auto& cfg = model.config();
  const View<S> w{cfg, model.layout(), model.params().data()};
  const auto& lay = model.layout();
  const Eigen::Index d = cfg.d_model, dh = cfg.d_head(), dff = cfg.d_ff();
  const Eigen::Index V = cfg.vocab_size;
  const std::uint32_t B = pass.batch, T = pass.len, H = cfg.n_heads;
  const Eigen::Index BT = static_cast<Eigen::Index>(B) * T;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  const auto tok_emb = w.mat(lay.tok_emb, V, d);
  const auto pos_emb = w.mat(lay.pos_emb, cfg.max_seq_len, d);
  pass.x.resize(BT, d);
  for (std::uint32_t b = 0; b < B; ++b)
    for (std::uint32_t t = 0; t < T; ++t) {
      const auto r = static_cast<Eigen::Index>(b) * T + t;
      pass.x.row(r) = tok_emb.row(pass.tokens[r]) + pos_emb.row(t);
    }
  if (keep_hidden) pass.hidden.assign(1, pass.x);

  pass.layers.resize(cfg.n_layers);
  Mat<S> scores(T, T);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& o = lay.layers[l];
    auto& c = pass.layers[l];

    layer_norm(pass.x, w.vec(o.ln1_g, d), w.vec(o.ln1_b, d), c.xhat1, c.rstd1, c.h1);
    c.qkv.noalias() = c.h1 * w.mat(o.w_qkv, 3 * d, d).transpose();
    c.qkv.rowwise() += w.vec(o.b_qkv, 3 * d);

    c.probs.assign(static_cast<std::size_t>(B) * H * T * T, S(0));
    c.concat.setZero(BT, d);
    const bool layer_on = !mask.layer_disabled(l);
    for (std::uint32_t b = 0; b < B; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b) * T;
      for (std::uint32_t h = 0; h < H; ++h) {
        const auto q = c.qkv.block(r0, h * dh, T, dh);
        const auto k = c.qkv.block(r0, d + h * dh, T, dh);
        scores.noalias() = q * k.transpose();
        S* P = c.probs.data() + (static_cast<std::size_t>(b) * H + h) * T * T;
        for (std::uint32_t i = 0; i < T; ++i) {
          S mx = scores(i, 0) * scale;
          for (std::uint32_t j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j) * scale);
          S sum = 0;
          for (std::uint32_t j = 0; j <= i; ++j) {
            const S e = std::exp(scores(i, j) * scale - mx);
            P[i * T + j] = e;
            sum += e;
          }
          const S inv = S(1) / sum;
          for (std::uint32_t j = 0; j <= i; ++j) P[i * T + j] *= inv;
        }
        if (layer_on && !mask.head_disabled(l, h)) {
          const CMap<S> pm(P, T, T);
          c.concat.block(r0, h * dh, T, dh).noalias() =
              pm * c.qkv.block(r0, 2 * d + h * dh, T, dh);
        }
      }
    }
    if (layer_on) {
      pass.x.noalias() += c.concat * w.mat(o.w_o, d, d).transpose();
      pass.x.rowwise() += w.vec(o.b_o, d);
    }

    layer_norm(pass.x, w.vec(o.ln2_g, d), w.vec(o.ln2_b, d), c.xhat2, c.rstd2, c.h2);
    c.pre.noalias() = c.h2 * w.mat(o.w_fc, dff, d).transpose();
    c.pre.rowwise() += w.vec(o.b_fc, dff);
    c.act = c.pre.unaryExpr([](S v) { return gelu(v); });
    pass.x.noalias() += c.act * w.mat(o.w_proj, d, dff).transpose();
    pass.x.rowwise() += w.vec(o.b_proj, d);
    if (keep_hidden) pass.hidden.push_back(pass.x);
  }

  Mat<S> last(B, d);
  for (std::uint32_t b = 0; b < B; ++b)
    last.row(b) = pass.x.row(static_cast<Eigen::Index>(b) * T + T - 1);
  layer_norm(last, w.vec(lay.lnf_g, d), w.vec(lay.lnf_b, d), pass.xhatf, pass.rstdf, pass.hf);
  pass.logits.noalias() = pass.hf * w.mat(lay.w_out, V, d).transpose();
}

// Gradient of sum_b scale * CE_b accumulated into `grad`.
template <typename S>
void run_backward(const Transformer<S>& model, Pass<S>& pass, std::span<const std::uint32_t> targets,
                  S* grad, S grad_scale) {
  const auto& cfg = model.config();
  const auto& lay = model.layout();
  const View<S> w{cfg, lay, model.params().data()};
  const GradView<S> g{grad};
  const Eigen::Index d = cfg.d_model, dh = cfg.d_head(), dff = cfg.d_ff();
  const Eigen::Index V = cfg.vocab_size;
  const std::uint32_t B = pass.batch, T = pass.len, H = cfg.n_heads;
  const Eigen::Index BT = static_cast<Eigen::Index>(B) * T;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // d(CE)/d(logits) = softmax - onehot
  Mat<S> dlogits = pass.logits;
  for (std::uint32_t b = 0; b < B; ++b) {
    auto row = dlogits.row(b);
    const S mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
    row(targets[b]) -= S(1);
  }
  dlogits *= grad_scale;

  g.mat(lay.w_out, V, d).noalias() += dlogits.transpose() * pass.hf;
  Mat<S> dhf = dlogits * w.mat(lay.w_out, V, d);
  Mat<S> dlast = Mat<S>::Zero(B, d);
  layer_norm_backward(dhf, pass.xhatf, pass.rstdf, w.vec(lay.lnf_g, d), g.vec(lay.lnf_g, d),
                      g.vec(lay.lnf_b, d), dlast);

  Mat<S> dx = Mat<S>::Zero(BT, d);
  for (std::uint32_t b = 0; b < B; ++b) dx.row(static_cast<Eigen::Index>(b) * T + T - 1) = dlast.row(b);

  Mat<S> dact, dh2, dconcat, dqkv, dh1, dP(T, T), dS(T, T);
  for (std::uint32_t li = cfg.n_layers; li-- > 0;) {
    const auto& o = lay.layers[li];
    auto& c = pass.layers[li];

    // MLP sublayer
    g.mat(o.w_proj, d, dff).noalias() += dx.transpose() * c.act;
    g.vec(o.b_proj, d) += dx.colwise().sum();
    dact.noalias() = dx * w.mat(o.w_proj, d, dff);
    dact.array() *= c.pre.unaryExpr([](S v) { return gelu_grad(v); }).array();
    g.mat(o.w_fc, dff, d).noalias() += dact.transpose() * c.h2;
    g.vec(o.b_fc, dff) += dact.colwise().sum();
    dh2.noalias() = dact * w.mat(o.w_fc, dff, d);
    layer_norm_backward(dh2, c.xhat2, c.rstd2, w.vec(o.ln2_g, d), g.vec(o.ln2_g, d),
                        g.vec(o.ln2_b, d), dx);

    // Attention sublayer. Training never applies a prune mask, so every
    // head contributes here.
    g.mat(o.w_o, d, d).noalias() += dx.transpose() * c.concat;
    g.vec(o.b_o, d) += dx.colwise().sum();
    dconcat.noalias() = dx * w.mat(o.w_o, d, d);
    dqkv.setZero(BT, 3 * d);
    for (std::uint32_t b = 0; b < B; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b) * T;
      for (std::uint32_t h = 0; h < H; ++h) {
        const CMap<S> P(c.probs.data() + (static_cast<std::size_t>(b) * H + h) * T * T, T, T);
        const auto dO = dconcat.block(r0, h * dh, T, dh);
        const auto q = c.qkv.block(r0, h * dh, T, dh);
        const auto k = c.qkv.block(r0, d + h * dh, T, dh);
        const auto v = c.qkv.block(r0, 2 * d + h * dh, T, dh);
        dqkv.block(r0, 2 * d + h * dh, T, dh).noalias() += P.transpose() * dO;
        dP.noalias() = dO * v.transpose();
        for (std::uint32_t i = 0; i < T; ++i) {
          const S dot = dP.row(i).dot(P.row(i));
          dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
        }
        dS *= scale;
        dqkv.block(r0, h * dh, T, dh).noalias() += dS * k;
        dqkv.block(r0, d + h * dh, T, dh).noalias() += dS.transpose() * q;
      }
    }
    g.mat(o.w_qkv, 3 * d, d).noalias() += dqkv.transpose() * c.h1;
    g.vec(o.b_qkv, 3 * d) += dqkv.colwise().sum();
    dh1.noalias() = dqkv * w.mat(o.w_qkv, 3 * d, d);
    layer_norm_backward(dh1, c.xhat1, c.rstd1, w.vec(o.ln1_g, d), g.vec(o.ln1_g, d),
                        g.vec(o.ln1_b, d), dx);
  }

  auto dtok = g.mat(lay.tok_emb, V, d);
  auto dpos = g.mat(lay.pos_emb, cfg.max_seq_len, d);
  for (std::uint32_t b = 0; b < B; ++b)
    for (std::uint32_t t = 0; t < T; ++t) {
      const auto r = static_cast<Eigen::Index>(b) * T + t;
      dtok.row(pass.tokens[r]) += dx.row(r);
      dpos.row(t) += dx.row(r);
    }
}

template <typename S>
void load_tokens(const Transformer<S>& model, Pass<S>& pass, std::span<const Sequence> group) {
  const auto& cfg = model.config();
  pass.batch = static_cast<std::uint32_t>(group.size());
  pass.len = static_cast<std::uint32_t>(group.front().tokens.size());
  if (pass.len == 0) fail(ErrorKind::Input, "forward: empty token sequence");
  if (pass.len > cfg.max_seq_len)
    fail(ErrorKind::Input, "forward: sequence length " + std::to_string(pass.len) +
                               " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  pass.tokens.clear();
  for (const auto& s : group) {
    for (auto t : s.tokens) {
      if (t >= cfg.vocab_size) fail(ErrorKind::Input, "forward: token id out of vocabulary");
      pass.tokens.push_back(t);
    }
  }
}

// Groups sequences by length, preserving first-appearance order of lengths.
std::vector<std::vector<std::size_t>> group_by_length(std::span<const Sequence> batch) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto len = batch[i].tokens.size();
    auto [it, inserted] = slot.emplace(len, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

}  // namespace

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || vocab_size == 0 || max_seq_len == 0)
    fail(ErrorKind::Config, "model: all dimensions must be positive");
  if (d_model % n_heads != 0)
    fail(ErrorKind::Config, "model: d_model must be divisible by n_heads");
}

void PruneMask::validate(const ModelConfig& cfg) const {
  for (auto [l, h] : disabled_heads)
    if (l >= cfg.n_layers || h >= cfg.n_heads)
      fail(ErrorKind::Input, "prune mask: head (" + std::to_string(l) + "," + std::to_string(h) +
                                 ") out of range");
  for (auto l : disabled_layers)
    if (l >= cfg.n_layers) fail(ErrorKind::Input, "prune mask: layer out of range");
}

ParamLayout::ParamLayout(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, dff = cfg.d_ff(), V = cfg.vocab_size;
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const auto at = off;
    off += n;
    return at;
  };
  tok_emb = take(V * d);
  pos_emb = take(static_cast<std::size_t>(cfg.max_seq_len) * d);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    LayerOffsets o{};
    o.ln1_g = take(d);
    o.ln1_b = take(d);
    o.w_qkv = take(3 * d * d);
    o.b_qkv = take(3 * d);
    o.w_o = take(d * d);
    o.b_o = take(d);
    o.ln2_g = take(d);
    o.ln2_b = take(d);
    o.w_fc = take(dff * d);
    o.b_fc = take(dff);
    o.w_proj = take(d * dff);
    o.b_proj = take(d);
    layers.push_back(o);
  }
  lnf_g = take(d);
  lnf_b = take(d);
  w_out = take(V * d);
  total = off;
}

template <typename S>
Transformer<S>::Transformer(const ModelConfig& cfg) : cfg_(cfg), layout_(cfg) {
  cfg_.validate();
  params_.assign(layout_.total, S(0));
}

template <typename S>
Transformer<S> Transformer<S>::init_random(const ModelConfig& cfg) {
  Transformer<S> m(cfg);
  Rng rng(cfg.seed);
  const auto& lay = m.layout_;
  const std::size_t d = cfg.d_model, dff = cfg.d_ff(), V = cfg.vocab_size;
  auto normal = [&](std::size_t off, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) m.params_[off + i] = static_cast<S>(kInitStd * rng.normal());
  };
  auto ones = [&](std::size_t off, std::size_t n) {
    std::fill_n(m.params_.begin() + static_cast<std::ptrdiff_t>(off), n, S(1));
  };
  normal(lay.tok_emb, V * d);
  normal(lay.pos_emb, cfg.max_seq_len * d);
  for (const auto& o : lay.layers) {
    ones(o.ln1_g, d);
    normal(o.w_qkv, 3 * d * d);
    normal(o.w_o, d * d);
    ones(o.ln2_g, d);
    normal(o.w_fc, dff * d);
    normal(o.w_proj, d * dff);
  }
  ones(lay.lnf_g, d);
  normal(lay.w_out, V * d);
  return m;
}

template <typename S>
ForwardRecord forward(const Transformer<S>& model, std::span<const std::uint32_t> tokens,
                      const PruneMask& mask, bool keep_hidden) {
  const auto& cfg = model.config();
  mask.validate(cfg);
  const Sequence seq{tokens, 0};
  Pass<S> pass;
  load_tokens(model, pass, std::span<const Sequence>(&seq, 1));
  run_forward(model, pass, mask, keep_hidden);

  ForwardRecord rec;
  const std::uint32_t T = pass.len;
  rec.logits.resize(cfg.vocab_size);
  for (std::uint32_t v = 0; v < cfg.vocab_size; ++v)
    rec.logits[v] = static_cast<float>(pass.logits(0, v));
  rec.attention = trace::AttentionTensor(cfg.n_layers, cfg.n_heads, T);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      const S* P = pass.layers[l].probs.data() + static_cast<std::size_t>(h) * T * T;
      auto dst = rec.attention.matrix(l, h);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(P[i]);
      if (mask.head_disabled(l, h)) rec.excluded_heads.emplace_back(l, h);
    }
  if (keep_hidden) {
    for (const auto& hm : pass.hidden) {
      std::vector<float> flat(static_cast<std::size_t>(hm.size()));
      for (Eigen::Index r = 0; r < hm.rows(); ++r)
        for (Eigen::Index c = 0; c < hm.cols(); ++c)
          flat[static_cast<std::size_t>(r * hm.cols() + c)] = static_cast<float>(hm(r, c));
      rec.hidden.push_back(std::move(flat));
    }
  }
  return rec;
}

template <typename S>
std::vector<S> batch_logits(const Transformer<S>& model, std::span<const Sequence> batch,
                            const PruneMask& mask) {
  const auto& cfg = model.config();
  mask.validate(cfg);
  std::vector<S> out(batch.size() * cfg.vocab_size);
  Pass<S> pass;
  std::vector<Sequence> group;
  for (const auto& idx : group_by_length(batch)) {
    group.clear();
    for (auto i : idx) group.push_back(batch[i]);
    load_tokens(model, pass, group);
    run_forward(model, pass, mask, false);
    for (std::size_t gi = 0; gi < idx.size(); ++gi)
      for (std::uint32_t v = 0; v < cfg.vocab_size; ++v)
        out[idx[gi] * cfg.vocab_size + v] = pass.logits(static_cast<Eigen::Index>(gi), v);
  }
  return out;
}

template <typename S>
double loss_and_grad(const Transformer<S>& model, std::span<const Sequence> batch,
                     std::span<S> grad, double grad_scale) {
  if (batch.empty()) return 0.0;
  const auto& cfg = model.config();
  if (!grad.empty() && grad.size() != model.params().size())
    fail(ErrorKind::Input, "loss_and_grad: gradient buffer has the wrong size");
  double total = 0.0;
  Pass<S> pass;
  std::vector<Sequence> group;
  std::vector<std::uint32_t> targets;
  for (const auto& idx : group_by_length(batch)) {
    group.clear();
    targets.clear();
    for (auto i : idx) {
      group.push_back(batch[i]);
      if (batch[i].target >= cfg.vocab_size)
        fail(ErrorKind::Input, "loss_and_grad: target out of vocabulary");
      targets.push_back(batch[i].target);
    }
    load_tokens(model, pass, group);
    run_forward(model, pass, PruneMask{}, false);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto row = pass.logits.row(static_cast<Eigen::Index>(b));
      const double mx = static_cast<double>(row.maxCoeff());
      double sum = 0.0;
      for (Eigen::Index v = 0; v < row.size(); ++v) sum += std::exp(static_cast<double>(row(v)) - mx);
      total += mx + std::log(sum) - static_cast<double>(row(targets[b]));
    }
    if (!grad.empty()) run_backward(model, pass, targets, grad.data(), static_cast<S>(grad_scale));
  }
  return total / static_cast<double>(batch.size());
}

std::vector<Sequence> as_sequences(const taskgen::Dataset& ds) {
  std::vector<Sequence> out;
  out.reserve(ds.size());
  for (const auto& ex : ds) out.push_back({ex.tokens, ex.answer});
  return out;
}

std::uint32_t max_length(const taskgen::Dataset& ds) {
  std::size_t n = 0;
  for (const auto& ex : ds) n = std::max(n, ex.tokens.size());
  return static_cast<std::uint32_t>(n);
}

std::vector<bool> predict_correct(const Model& model, const taskgen::Dataset& ds,
                                  const PruneMask& mask, unsigned threads) {
  constexpr std::size_t kChunk = 256;
  const auto seqs = as_sequences(ds);
  const std::size_t n_chunks = (seqs.size() + kChunk - 1) / kChunk;
  const std::uint32_t V = model.config().vocab_size;
  std::vector<char> correct(seqs.size(), 0);

  auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < n_chunks; c += stride) {
      const std::size_t lo = c * kChunk, hi = std::min(seqs.size(), lo + kChunk);
      const auto logits =
          batch_logits(model, std::span<const Sequence>(seqs).subspan(lo, hi - lo), mask);
      for (std::size_t i = lo; i < hi; ++i) {
        const float* row = logits.data() + (i - lo) * V;
        const auto best = static_cast<std::uint32_t>(std::max_element(row, row + V) - row);
        correct[i] = best == seqs[i].target;
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, n_chunks))));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  return {correct.begin(), correct.end()};
}

double evaluate_accuracy(const Model& model, const taskgen::Dataset& ds, const PruneMask& mask,
                         unsigned threads) {
  if (ds.empty()) fail(ErrorKind::Input, "evaluate_accuracy: empty dataset");
  const auto correct = predict_correct(model, ds, mask, threads);
  const auto hits = std::count(correct.begin(), correct.end(), true);
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

template class Transformer<float>;
template class Transformer<double>;

template ForwardRecord forward(const Transformer<float>&, std::span<const std::uint32_t>,
                               const PruneMask&, bool);
template ForwardRecord forward(const Transformer<double>&, std::span<const std::uint32_t>,
                               const PruneMask&, bool);
template std::vector<float> batch_logits(const Transformer<float>&, std::span<const Sequence>,
                                         const PruneMask&);
template std::vector<double> batch_logits(const Transformer<double>&, std::span<const Sequence>,
                                          const PruneMask&);
template double loss_and_grad(const Transformer<float>&, std::span<const Sequence>,
                              std::span<float>, double);
template double loss_and_grad(const Transformer<double>&, std::span<const Sequence>,
                              std::span<double>, double);

}  // namespace mprobe::toylm
