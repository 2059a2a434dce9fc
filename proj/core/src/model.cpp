// Copyright (c) 2026, The desktrain Authors
// SPDX-License-Identifier: Apache-2.0

#include "desktrain/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "desktrain/rng.hpp"

namespace desktrain {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data.data(), static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data.data(), static_cast<Index>(t.shape[0]), static_cast<Index>(t.shape[1]));
}
Eigen::Map<const Eigen::RowVectorXd> as_row(const Tensor& t) {
  return Eigen::Map<const Eigen::RowVectorXd>(t.data.data(), static_cast<Index>(t.data.size()));
}

void quantize(bf16::Quantizer& q, RowMat& m) {
  if (q.active()) q.apply(std::span<double>(m.data(), static_cast<std::size_t>(m.size())));
}

// Row-wise RMSNorm; stores 1/rms per row for the backward pass.
void rmsnorm_rows(const RowMat& x, const Tensor& w, double eps, RowMat& y, Vec& inv_rms) {
  const auto d = static_cast<double>(x.cols());
  inv_rms = ((x.array().square().rowwise().sum() / d) + eps).rsqrt().matrix();
  y = (x.array().colwise() * inv_rms.array()).rowwise() * as_row(w).array();
}

// Returns dL/dx and accumulates dL/dw.
RowMat rmsnorm_rows_backward(const RowMat& x, const Tensor& w, const Vec& inv_rms, const RowMat& dy, Tensor& dw) {
  const auto d = static_cast<double>(x.cols());
  const auto wr = as_row(w);
  RowMat dyw = dy.array().rowwise() * wr.array();
  Eigen::Map<Eigen::RowVectorXd>(dw.data.data(), static_cast<Index>(dw.data.size())) +=
      (dy.array() * (x.array().colwise() * inv_rms.array())).colwise().sum().matrix();
  const Vec dot = (dyw.array() * x.array()).rowwise().sum();
  const Vec coef = inv_rms.array().cube() * dot.array() / d;
  return (dyw.array().colwise() * inv_rms.array()) - (x.array().colwise() * coef.array());
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::uint32_t ModelConfig::default_ffn_hidden(std::uint32_t model_dim) noexcept {
  auto f = static_cast<std::uint32_t>(std::lround(8.0 * model_dim / 3.0));
  return f + (f % 2);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (vocab_size == 0) fail("vocab_size must be positive");
  if (model_dim == 0) fail("model_dim must be positive");
  if (num_layers == 0) fail("num_layers must be positive");
  if (num_heads == 0) fail("num_heads must be positive");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (model_dim % num_heads != 0) fail("model_dim must be divisible by num_heads");
  if (head_dim() % 2 != 0) fail("head_dim (model_dim / num_heads) must be even for rotary pairing");
  if (!(rope_theta > 0.0)) fail("rope_theta must be positive");
  if (!(rmsnorm_eps > 0.0)) fail("rmsnorm_eps must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t v = config.vocab_size, d = config.model_dim, f = config.resolved_ffn_hidden();
  const std::size_t layers = config.num_layers;

  ModelParams params;
  auto add_normal = [&](std::string name, std::vector<std::size_t> shape, double stddev) {
    Tensor t(std::move(name), std::move(shape));
    SplitMix64 rng(mix_seed(seed, params.size()));
    for (double& x : t.data) x = stddev * rng.normal();
    params.push_back(std::move(t));
  };
  auto add_norm = [&](std::string name) { params.push_back(Tensor(std::move(name), {d}, ParamKind::kNorm, 1.0)); };

  add_normal("tok_embedding", {v, d}, config.init_std);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const double scaled = config.init_std / std::sqrt(2.0 * static_cast<double>(l + 1));
    add_norm(p + "attn_norm");
    add_normal(p + "attn_qkv", {d, 3 * d}, config.init_std);
    add_normal(p + "attn_out", {d, d}, scaled);
    add_norm(p + "ffn_norm");
    add_normal(p + "ffn_gate_up", {d, 2 * f}, config.init_std);
    add_normal(p + "ffn_down", {f, d}, scaled);
  }
  add_norm("final_norm");
  add_normal("lm_head", {d, v}, config.init_std);
  return params;
}

void rmsnorm(std::span<const double> x, std::span<const double> w, double eps, std::span<double> y) {
  if (x.size() != w.size() || x.size() != y.size()) throw std::invalid_argument("rmsnorm: size mismatch");
  if (x.empty()) return;
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = w[i] * x[i] * inv;
}

void rope_apply(std::span<double> x, std::size_t heads, std::size_t seq, std::size_t head_dim,
                std::span<const std::size_t> positions, double theta) {
  if (head_dim % 2 != 0) throw std::invalid_argument("rope_apply: head_dim must be even");
  if (x.size() != heads * seq * head_dim) throw std::invalid_argument("rope_apply: size mismatch");
  if (positions.size() != seq) throw std::invalid_argument("rope_apply: positions must have seq entries");
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t t = 0; t < seq; ++t) {
      double* row = x.data() + (h * seq + t) * head_dim;
      for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(positions[t]) * freq;
        const double c = std::cos(angle), s = std::sin(angle);
        const double a = row[2 * i], b = row[2 * i + 1];
        row[2 * i] = a * c - b * s;
        row[2 * i + 1] = a * s + b * c;
      }
    }
  }
}

// Activations of one sequence kept for the backward pass.
struct TinyDecoder::Workspace {
  struct Layer {
    RowMat x_in;
    RowMat h1;
    Vec inv_rms1;
    RowMat qkv;  // q and k already rotated
    std::vector<RowMat> probs;
    RowMat ctx;
    RowMat x_mid;
    RowMat h2;
    Vec inv_rms2;
    RowMat gate_up;
    RowMat act;
  };
  std::vector<Layer> layers;
  RowMat x_out;
  RowMat hf;
  Vec inv_rmsf;
  RowMat logits;
};

namespace {

// Rotates columns [col, col + d) of every row; sign = -1 applies the inverse.
void rotate_rows(RowMat& m, Index col, std::size_t heads, std::size_t head_dim, const std::vector<double>& cos_table,
                 const std::vector<double>& sin_table, double sign) {
  const std::size_t half = head_dim / 2;
  for (Index t = 0; t < m.rows(); ++t) {
    const double* c = cos_table.data() + static_cast<std::size_t>(t) * half;
    const double* s = sin_table.data() + static_cast<std::size_t>(t) * half;
    double* row = m.row(t).data() + col;
    for (std::size_t h = 0; h < heads; ++h) {
      double* hv = row + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const double a = hv[2 * i], b = hv[2 * i + 1];
        const double sn = sign * s[i];
        hv[2 * i] = a * c[i] - b * sn;
        hv[2 * i + 1] = a * sn + b * c[i];
      }
    }
  }
}

}  // namespace

TinyDecoder::TinyDecoder(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t half = config_.head_dim() / 2;
  rope_cos_.resize(config_.max_seq_len * half);
  rope_sin_.resize(config_.max_seq_len * half);
  for (std::size_t t = 0; t < config_.max_seq_len; ++t) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq =
          std::pow(config_.rope_theta, -2.0 * static_cast<double>(i) / static_cast<double>(config_.head_dim()));
      const double angle = static_cast<double>(t) * freq;
      rope_cos_[t * half + i] = std::cos(angle);
      rope_sin_[t * half + i] = std::sin(angle);
    }
  }
}

void TinyDecoder::check_params(const ModelParams& params) const {
  const std::size_t expected = ParamLayout::count(config_.num_layers);
  if (params.size() != expected) {
    throw std::invalid_argument("model params: expected " + std::to_string(expected) + " tensors, got " +
                                std::to_string(params.size()));
  }
  const std::size_t d = config_.model_dim;
  if (params[ParamLayout::embedding()].shape != std::vector<std::size_t>{config_.vocab_size, d} ||
      params[ParamLayout::lm_head(config_.num_layers)].shape != std::vector<std::size_t>{d, config_.vocab_size}) {
    throw std::invalid_argument("model params: embedding or head shape does not match config");
  }
}

void TinyDecoder::check_tokens(const TokenBatch& tokens) const {
  if (tokens.ids.size() != tokens.batch * tokens.seq) throw std::invalid_argument("token batch: size mismatch");
  if (tokens.seq == 0 || tokens.seq > config_.max_seq_len) {
    throw std::invalid_argument("token batch: sequence length " + std::to_string(tokens.seq) +
                                " outside [1, max_seq_len=" + std::to_string(config_.max_seq_len) + "]");
  }
  for (TokenId id : tokens.ids) {
    if (id < 0 || static_cast<std::uint32_t>(id) >= config_.vocab_size) {
      throw std::invalid_argument("token batch: token id " + std::to_string(id) + " outside vocabulary");
    }
  }
}

namespace {

struct SeqRunner {
  const ModelConfig& cfg;
  const ModelParams& params;
  const std::vector<double>& cos_table;
  const std::vector<double>& sin_table;

  template <typename Ws>
  void forward(std::span<const TokenId> tokens, bf16::Quantizer& q, Ws& ws) const {
    const auto T = static_cast<Index>(tokens.size());
    const Index d = cfg.model_dim;
    const std::size_t H = cfg.num_heads, hd = cfg.head_dim();
    const Index f = cfg.resolved_ffn_hidden();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    const auto emb = as_matrix(params[ParamLayout::embedding()]);
    RowMat x(T, d);
    for (Index t = 0; t < T; ++t) x.row(t) = emb.row(tokens[static_cast<std::size_t>(t)]);

    ws.layers.resize(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      auto& c = ws.layers[l];
      c.x_in = x;
      rmsnorm_rows(x, params[ParamLayout::layer(l, ParamLayout::kAttnNorm)], cfg.rmsnorm_eps, c.h1, c.inv_rms1);
      quantize(q, c.h1);

      c.qkv.noalias() = c.h1 * as_matrix(params[ParamLayout::layer(l, ParamLayout::kQkv)]);
      quantize(q, c.qkv);
      rotate_rows(c.qkv, 0, H, hd, cos_table, sin_table, 1.0);
      rotate_rows(c.qkv, d, H, hd, cos_table, sin_table, 1.0);
      if (q.active()) {
        for (Index t = 0; t < T; ++t) q.apply(std::span<double>(c.qkv.row(t).data(), static_cast<std::size_t>(2 * d)));
      }

      c.ctx.setZero(T, d);
      c.probs.resize(H);
      for (std::size_t h = 0; h < H; ++h) {
        const Index off = static_cast<Index>(h * hd), w = static_cast<Index>(hd);
        auto qh = c.qkv.block(0, off, T, w);
        auto kh = c.qkv.block(0, d + off, T, w);
        auto vh = c.qkv.block(0, 2 * d + off, T, w);
        RowMat& p = c.probs[h];
        p.noalias() = (qh * kh.transpose()) * scale;
        for (Index i = 0; i < T; ++i) {
          double mx = -std::numeric_limits<double>::infinity();
          for (Index j = 0; j <= i; ++j) mx = std::max(mx, p(i, j));
          double sum = 0.0;
          for (Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          for (Index j = 0; j <= i; ++j) p(i, j) /= sum;
          for (Index j = i + 1; j < T; ++j) p(i, j) = 0.0;
        }
        c.ctx.block(0, off, T, w).noalias() = p * vh;
      }
      quantize(q, c.ctx);

      RowMat a = c.ctx * as_matrix(params[ParamLayout::layer(l, ParamLayout::kAttnOut)]);
      quantize(q, a);
      x += a;
      quantize(q, x);
      c.x_mid = x;

      rmsnorm_rows(x, params[ParamLayout::layer(l, ParamLayout::kFfnNorm)], cfg.rmsnorm_eps, c.h2, c.inv_rms2);
      quantize(q, c.h2);
      c.gate_up.noalias() = c.h2 * as_matrix(params[ParamLayout::layer(l, ParamLayout::kGateUp)]);
      quantize(q, c.gate_up);
      c.act.resize(T, f);
      for (Index t = 0; t < T; ++t) {
        for (Index j = 0; j < f; ++j) {
          const double g = c.gate_up(t, j);
          c.act(t, j) = g * sigmoid(g) * c.gate_up(t, f + j);
        }
      }
      quantize(q, c.act);
      RowMat m = c.act * as_matrix(params[ParamLayout::layer(l, ParamLayout::kDown)]);
      quantize(q, m);
      x += m;
      quantize(q, x);
    }

    ws.x_out = x;
    rmsnorm_rows(x, params[ParamLayout::final_norm(cfg.num_layers)], cfg.rmsnorm_eps, ws.hf, ws.inv_rmsf);
    quantize(q, ws.hf);
    ws.logits.noalias() = ws.hf * as_matrix(params[ParamLayout::lm_head(cfg.num_layers)]);
    quantize(q, ws.logits);
  }

  // dlogits: T x V. Accumulates weight gradients into `grads` unquantized.
  template <typename Ws>
  void backward(std::span<const TokenId> tokens, const RowMat& dlogits, bf16::Quantizer& q, const Ws& ws,
                GradientSet& grads) const {
    const auto T = static_cast<Index>(tokens.size());
    const Index d = cfg.model_dim;
    const std::size_t H = cfg.num_heads, hd = cfg.head_dim();
    const Index f = cfg.resolved_ffn_hidden();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::size_t L = cfg.num_layers;

    as_matrix(grads[ParamLayout::lm_head(L)]).noalias() += ws.hf.transpose() * dlogits;
    RowMat dhf = dlogits * as_matrix(params[ParamLayout::lm_head(L)]).transpose();
    quantize(q, dhf);
    RowMat dx = rmsnorm_rows_backward(ws.x_out, params[ParamLayout::final_norm(L)], ws.inv_rmsf, dhf,
                                      grads[ParamLayout::final_norm(L)]);
    quantize(q, dx);

    for (std::size_t li = L; li-- > 0;) {
      const auto& c = ws.layers[li];

      // Feed-forward half: x_out = x_mid + down(silu(g) * u)
      as_matrix(grads[ParamLayout::layer(li, ParamLayout::kDown)]).noalias() += c.act.transpose() * dx;
      RowMat dact = dx * as_matrix(params[ParamLayout::layer(li, ParamLayout::kDown)]).transpose();
      quantize(q, dact);
      RowMat dgu(T, 2 * f);
      for (Index t = 0; t < T; ++t) {
        for (Index j = 0; j < f; ++j) {
          const double g = c.gate_up(t, j), u = c.gate_up(t, f + j);
          const double sg = sigmoid(g);
          dgu(t, j) = dact(t, j) * u * sg * (1.0 + g * (1.0 - sg));
          dgu(t, f + j) = dact(t, j) * g * sg;
        }
      }
      quantize(q, dgu);
      as_matrix(grads[ParamLayout::layer(li, ParamLayout::kGateUp)]).noalias() += c.h2.transpose() * dgu;
      RowMat dh2 = dgu * as_matrix(params[ParamLayout::layer(li, ParamLayout::kGateUp)]).transpose();
      quantize(q, dh2);
      dx += rmsnorm_rows_backward(c.x_mid, params[ParamLayout::layer(li, ParamLayout::kFfnNorm)], c.inv_rms2, dh2,
                                  grads[ParamLayout::layer(li, ParamLayout::kFfnNorm)]);
      quantize(q, dx);

      // Attention half: x_mid = x_in + out(attn(qkv(h1)))
      as_matrix(grads[ParamLayout::layer(li, ParamLayout::kAttnOut)]).noalias() += c.ctx.transpose() * dx;
      RowMat dctx = dx * as_matrix(params[ParamLayout::layer(li, ParamLayout::kAttnOut)]).transpose();
      quantize(q, dctx);

      RowMat dqkv(T, 3 * d);
      for (std::size_t h = 0; h < H; ++h) {
        const Index off = static_cast<Index>(h * hd), w = static_cast<Index>(hd);
        const auto qh = c.qkv.block(0, off, T, w);
        const auto kh = c.qkv.block(0, d + off, T, w);
        const auto vh = c.qkv.block(0, 2 * d + off, T, w);
        const auto dctx_h = dctx.block(0, off, T, w);
        const RowMat& p = c.probs[h];

        RowMat dp = dctx_h * vh.transpose();
        dqkv.block(0, 2 * d + off, T, w).noalias() = p.transpose() * dctx_h;
        const Vec rowdot = (p.array() * dp.array()).rowwise().sum();
        RowMat ds = (p.array() * (dp.array().colwise() - rowdot.array())) * scale;
        dqkv.block(0, off, T, w).noalias() = ds * kh;
        dqkv.block(0, d + off, T, w).noalias() = ds.transpose() * qh;
      }
      rotate_rows(dqkv, 0, H, hd, cos_table, sin_table, -1.0);
      rotate_rows(dqkv, d, H, hd, cos_table, sin_table, -1.0);
      quantize(q, dqkv);

      as_matrix(grads[ParamLayout::layer(li, ParamLayout::kQkv)]).noalias() += c.h1.transpose() * dqkv;
      RowMat dh1 = dqkv * as_matrix(params[ParamLayout::layer(li, ParamLayout::kQkv)]).transpose();
      quantize(q, dh1);
      dx += rmsnorm_rows_backward(c.x_in, params[ParamLayout::layer(li, ParamLayout::kAttnNorm)], c.inv_rms1, dh1,
                                  grads[ParamLayout::layer(li, ParamLayout::kAttnNorm)]);
      quantize(q, dx);
    }

    auto demb = as_matrix(grads[ParamLayout::embedding()]);
    for (Index t = 0; t < T; ++t) demb.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
  }
};

}  // namespace

Logits TinyDecoder::forward(const ModelParams& params, const TokenBatch& tokens, bf16::Quantizer& quantizer) const {
  check_params(params);
  check_tokens(tokens);
  const SeqRunner runner{config_, params, rope_cos_, rope_sin_};
  Logits out{tokens.batch, tokens.seq, config_.vocab_size, {}};
  out.values.resize(tokens.batch * tokens.seq * config_.vocab_size);
  Workspace ws;
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    runner.forward(std::span<const TokenId>(tokens.ids).subspan(b * tokens.seq, tokens.seq), quantizer, ws);
    std::copy(ws.logits.data(), ws.logits.data() + ws.logits.size(),
              out.values.begin() + static_cast<std::ptrdiff_t>(b * tokens.seq * config_.vocab_size));
  }
  return out;
}

LossAndGrads TinyDecoder::loss_and_backward(const ModelParams& params, const TokenBatch& tokens,
                                            const TokenBatch& targets, bf16::Quantizer& quantizer) const {
  check_params(params);
  check_tokens(tokens);
  if (targets.batch != tokens.batch || targets.seq != tokens.seq) {
    throw std::invalid_argument("loss_and_backward: targets shape differs from tokens");
  }
  check_tokens(targets);

  const SeqRunner runner{config_, params, rope_cos_, rope_sin_};
  LossAndGrads result{0.0, params.zeros_like()};
  const double inv_count = 1.0 / static_cast<double>(tokens.batch * tokens.seq);
  const auto T = static_cast<Index>(tokens.seq);
  const Index V = config_.vocab_size;

  Workspace ws;
  RowMat dlogits(T, V);
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    const auto seq_tokens = std::span<const TokenId>(tokens.ids).subspan(b * tokens.seq, tokens.seq);
    runner.forward(seq_tokens, quantizer, ws);
    for (Index t = 0; t < T; ++t) {
      const auto row = ws.logits.row(t);
      const double mx = row.maxCoeff();
      const double sum = (row.array() - mx).exp().sum();
      const double lse = mx + std::log(sum);
      const auto target = static_cast<Index>(targets.at(b, static_cast<std::size_t>(t)));
      result.loss += (lse - row(target)) * inv_count;
      dlogits.row(t) = ((row.array() - lse).exp() * inv_count).matrix();
      dlogits(t, target) -= inv_count;
    }
    quantize(quantizer, dlogits);
    runner.backward(seq_tokens, dlogits, quantizer, ws, result.grads);
  }
  for (auto& g : result.grads) quantizer.apply(g.data);
  return result;
}

}  // namespace desktrain
