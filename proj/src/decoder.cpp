#include "ruleforge/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ruleforge/errors.hpp"

namespace ruleforge {

Decoupled decouple(std::span<const double> f, std::size_t T, std::size_t V, std::size_t D) {
  if (f.size() != T * V * D) throw ValidationError("decouple: feature size mismatch");
  Decoupled out{Mat(V, D), Mat(T, D)};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v) {
      const double* src = f.data() + (t * V + v) * D;
      for (std::size_t d = 0; d < D; ++d) {
        out.spatial(v, d) += src[d];
        out.temporal(t, d) += src[d];
      }
    }
  for (auto& x : out.spatial.v) x /= static_cast<double>(T);
  for (auto& x : out.temporal.v) x /= static_cast<double>(V);
  return out;
}

Mat pool_parts(std::span<const double> f, std::size_t T, std::size_t V, std::size_t D,
               const std::vector<Part>& part_map) {
  Mat out(kBodyParts.size(), D);
  std::vector<std::size_t> count(kBodyParts.size(), 0);
  for (std::size_t v = 0; v < V; ++v) {
    const auto p = static_cast<std::size_t>(part_map[v]);
    if (p >= kBodyParts.size()) continue;
    ++count[p];
    for (std::size_t t = 0; t < T; ++t) {
      const double* src = f.data() + (t * V + v) * D;
      for (std::size_t d = 0; d < D; ++d) out(p, d) += src[d];
    }
  }
  for (std::size_t p = 0; p < kBodyParts.size(); ++p) {
    if (count[p] == 0) throw ValidationError("pool_parts: body part without joints");
    for (std::size_t d = 0; d < D; ++d) out(p, d) /= static_cast<double>(count[p] * T);
  }
  return out;
}

// ---- LayerNorm --------------------------------------------------------------

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache& cache) {
  const std::size_t n = x.cols;
  Mat y(x.rows, n);
  cache.xhat = Mat(x.rows, n);
  cache.inv_std.assign(x.rows, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double a : row) mean += a;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double a : row) var += (a - mean) * (a - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.inv_std[r] = inv;
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = (row[c] - mean) * inv;
      cache.xhat(r, c) = xh;
      y(r, c) = gain.v[c] * xh + bias.v[c];
    }
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gain, Mat& dgain,
                        Mat& dbias) {
  const std::size_t n = dy.cols;
  Mat dx(dy.rows, n);
  std::vector<double> dxh(n);
  for (std::size_t r = 0; r < dy.rows; ++r) {
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double g = dy(r, c);
      const double xh = cache.xhat(r, c);
      dgain.v[c] += g * xh;
      dbias.v[c] += g;
      dxh[c] = g * gain.v[c];
      mean_dxh += dxh[c];
      mean_dxh_xh += dxh[c] * xh;
    }
    mean_dxh /= static_cast<double>(n);
    mean_dxh_xh /= static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c)
      dx(r, c) = cache.inv_std[r] * (dxh[c] - mean_dxh - cache.xhat(r, c) * mean_dxh_xh);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// ---- branch parameters ------------------------------------------------------

std::vector<NamedTensor> BranchParams::tensors(const std::string& prefix) {
  return {{prefix + ".query", &query},       {prefix + ".ln1_gain", &ln1_gain},
          {prefix + ".ln1_bias", &ln1_bias}, {prefix + ".ffn_w1", &ffn_w1},
          {prefix + ".ffn_b1", &ffn_b1},     {prefix + ".ffn_w2", &ffn_w2},
          {prefix + ".ffn_b2", &ffn_b2},     {prefix + ".ln2_gain", &ln2_gain},
          {prefix + ".ln2_bias", &ln2_bias}, {prefix + ".group_w", &group_w}};
}

BranchShape make_branch_shape(std::size_t groups, std::size_t channels, std::size_t hidden,
                              std::size_t concept_count) {
  if (groups == 0) throw ValidationError("decoder: group count must be >= 1");
  BranchShape s;
  s.groups = groups;
  s.channels = channels;
  s.hidden = hidden;
  s.concept_count = concept_count;
  s.group_size = std::max<std::size_t>(1, (concept_count + groups - 1) / groups);
  return s;
}

BranchParams make_branch(const BranchShape& s) {
  BranchParams p;
  p.query = Mat(s.groups, s.channels);
  p.ln1_gain = Mat(1, s.channels, 1.0);
  p.ln1_bias = Mat(1, s.channels);
  p.ffn_w1 = Mat(s.channels, s.hidden);
  p.ffn_b1 = Mat(1, s.hidden);
  p.ffn_w2 = Mat(s.hidden, s.channels);
  p.ffn_b2 = Mat(1, s.channels);
  p.ln2_gain = Mat(1, s.channels, 1.0);
  p.ln2_bias = Mat(1, s.channels);
  p.group_w = Mat(s.groups, s.channels * s.group_size);
  return p;
}

void init_branch(BranchParams& p, const BranchShape& s, Rng& rng) {
  auto fill = [&rng](Mat& m, std::size_t fan_in) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : m.v) x = gaussian(rng, sd);
  };
  fill(p.query, s.channels);
  fill(p.ffn_w1, s.channels);
  fill(p.ffn_w2, s.hidden);
  fill(p.group_w, s.channels);
  for (Mat* m : {&p.ln1_gain, &p.ln2_gain}) std::fill(m->v.begin(), m->v.end(), 1.0);
  for (Mat* m : {&p.ln1_bias, &p.ln2_bias, &p.ffn_b1, &p.ffn_b2}) m->zero();
}

// ---- cross attention ----------------------------------------------------------

Mat cross_attend(const Mat& query, const Mat& input, const BranchParams& p,
                 const AttentionOptions& opt, AttentionCache& cache) {
  const std::size_t G = query.rows, N = input.rows, D = query.cols;
  if (input.cols != D) throw ValidationError("cross_attend: channel mismatch");
  if (opt.heads == 0 || D % opt.heads != 0)
    throw ValidationError("cross_attend: channels must divide evenly across heads");
  const std::size_t dh = D / opt.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  cache.input = input;
  cache.weights.assign(opt.heads, Mat(G, N));
  Mat r1 = query;
  for (std::size_t h = 0; h < opt.heads; ++h) {
    Mat& w = cache.weights[h];
    const std::size_t lo = h * dh;
    for (std::size_t g = 0; g < G; ++g) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::size_t d = lo; d < lo + dh; ++d) s += query(g, d) * input(n, d);
        w(g, n) = s * scale;
        mx = std::max(mx, w(g, n));
      }
      double z = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        w(g, n) = std::exp(w(g, n) - mx);
        z += w(g, n);
      }
      for (std::size_t n = 0; n < N; ++n) {
        w(g, n) /= z;
        const double a = w(g, n);
        for (std::size_t d = lo; d < lo + dh; ++d) r1(g, d) += a * input(n, d);
      }
    }
  }
  cache.h1 = layer_norm(r1, p.ln1_gain, p.ln1_bias, cache.ln1);

  cache.pre = matmul(cache.h1, p.ffn_w1);
  add_row_inplace(cache.pre, p.ffn_b1);
  cache.hidden = Mat(cache.pre.rows, cache.pre.cols);
  cache.mask.clear();
  const bool drop = opt.rng != nullptr && opt.dropout > 0.0;
  if (drop) cache.mask.resize(cache.pre.size());
  for (std::size_t i = 0; i < cache.pre.size(); ++i) {
    double m = 1.0;
    if (drop) {
      m = uniform01(*opt.rng) < opt.dropout ? 0.0 : 1.0 / (1.0 - opt.dropout);
      cache.mask[i] = m;
    }
    cache.hidden.v[i] = gelu(cache.pre.v[i]) * m;
  }
  Mat r2 = matmul(cache.hidden, p.ffn_w2);
  add_row_inplace(r2, p.ffn_b2);
  axpy(1.0, cache.h1, r2);
  cache.out = layer_norm(r2, p.ln2_gain, p.ln2_bias, cache.ln2);
  return cache.out;
}

Mat cross_attend_backward(const Mat& d_out, const AttentionCache& cache, const BranchParams& p,
                          const AttentionOptions& opt, BranchParams& grad) {
  const Mat& x = cache.input;
  const std::size_t G = d_out.rows, N = x.rows, D = d_out.cols;
  const std::size_t dh = D / opt.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat d_r2 = layer_norm_backward(d_out, cache.ln2, p.ln2_gain, grad.ln2_gain, grad.ln2_bias);
  add_matmul_at(grad.ffn_w2, cache.hidden, d_r2);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t d = 0; d < D; ++d) grad.ffn_b2.v[d] += d_r2(g, d);
  Mat d_pre = matmul_bt(d_r2, p.ffn_w2);  // d hidden, G x H
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    const double m = cache.mask.empty() ? 1.0 : cache.mask[i];
    d_pre.v[i] *= m * gelu_grad(cache.pre.v[i]);
  }
  add_matmul_at(grad.ffn_w1, cache.h1, d_pre);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t k = 0; k < d_pre.cols; ++k) grad.ffn_b1.v[k] += d_pre(g, k);
  Mat d_h1 = matmul_bt(d_pre, p.ffn_w1);
  axpy(1.0, d_r2, d_h1);
  Mat d_r1 = layer_norm_backward(d_h1, cache.ln1, p.ln1_gain, grad.ln1_gain, grad.ln1_bias);

  // Residual: r1 = query + context.
  axpy(1.0, d_r1, grad.query);
  Mat dx(N, D);
  std::vector<double> dp(N);
  for (std::size_t h = 0; h < opt.heads; ++h) {
    const Mat& w = cache.weights[h];
    const std::size_t lo = h * dh;
    for (std::size_t g = 0; g < G; ++g) {
      double wdp = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::size_t d = lo; d < lo + dh; ++d) {
          s += d_r1(g, d) * x(n, d);
          dx(n, d) += w(g, n) * d_r1(g, d);
        }
        dp[n] = s;
        wdp += w(g, n) * s;
      }
      for (std::size_t n = 0; n < N; ++n) {
        const double ds = w(g, n) * (dp[n] - wdp) * scale;
        if (ds == 0.0) continue;
        for (std::size_t d = lo; d < lo + dh; ++d) {
          grad.query(g, d) += ds * x(n, d);
          dx(n, d) += ds * p.query(g, d);
        }
      }
    }
  }
  return dx;
}

// ---- Group-FC ---------------------------------------------------------------

std::vector<double> group_fc(const Mat& refined, const Mat& group_w, std::size_t g,
                             std::size_t count) {
  const std::size_t D = refined.cols;
  if (refined.rows * g < count) throw ValidationError("group_fc: G * g < concept count");
  std::vector<double> logits(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto [k, j] = group_index(i, g);
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) s += refined(k, d) * group_w(k, d * g + j);
    logits[i] = s;
  }
  return logits;
}

Mat group_fc_backward(std::span<const double> d_logits, const Mat& refined, const Mat& group_w,
                      std::size_t g, Mat& d_group_w) {
  const std::size_t D = refined.cols;
  Mat d_refined(refined.rows, D);
  for (std::size_t i = 0; i < d_logits.size(); ++i) {
    const double dl = d_logits[i];
    if (dl == 0.0) continue;
    const auto [k, j] = group_index(i, g);
    for (std::size_t d = 0; d < D; ++d) {
      d_refined(k, d) += dl * group_w(k, d * g + j);
      d_group_w(k, d * g + j) += dl * refined(k, d);
    }
  }
  return d_refined;
}

// ---- decoder ----------------------------------------------------------------

std::vector<NamedTensor> DecoderParams::tensors() {
  auto out = spatial.tensors("decoder.spatial");
  auto t = temporal.tensors("decoder.temporal");
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

DecoderLayout make_decoder_layout(const ConceptVocabulary& vocab, std::size_t channels,
                                  const DecoderConfig& cfg) {
  if (cfg.heads == 0 || channels % cfg.heads != 0)
    throw ValidationError("decoder: channels must divide evenly across heads");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
    throw ValidationError("decoder: dropout must lie in [0, 1)");
  DecoderLayout l;
  l.spatial_ids = vocab.spatial_ids();
  l.sequence_ids = vocab.sequence_ids();
  l.num_concepts = vocab.size();
  l.spatial = make_branch_shape(cfg.spatial_groups, channels, cfg.hidden, l.spatial_ids.size());
  l.temporal =
      make_branch_shape(cfg.temporal_groups, channels, cfg.hidden, l.sequence_ids.size());
  return l;
}

DecoderParams make_decoder_params(const DecoderLayout& layout) {
  return {make_branch(layout.spatial), make_branch(layout.temporal)};
}

void init_decoder(DecoderParams& p, const DecoderLayout& layout, Rng& rng) {
  init_branch(p.spatial, layout.spatial, rng);
  init_branch(p.temporal, layout.temporal, rng);
}

ConceptActivations predict_concepts(const Decoupled& x, const DecoderParams& p,
                                    const DecoderLayout& layout, const DecoderConfig& cfg,
                                    DecoderCache& cache, Rng* dropout_rng) {
  ConceptActivations out;
  out.logits.assign(layout.num_concepts, 0.0);
  const AttentionOptions opt{cfg.heads, cfg.dropout, dropout_rng};
  auto run = [&](const Mat& input, const BranchParams& bp, const BranchShape& shape,
                 const std::vector<std::size_t>& ids, AttentionCache& c) {
    if (ids.empty()) return;
    const Mat refined = cross_attend(bp.query, input, bp, opt, c);
    const auto logits = group_fc(refined, bp.group_w, shape.group_size, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) out.logits[ids[i]] = logits[i];
  };
  run(x.spatial, p.spatial, layout.spatial, layout.spatial_ids, cache.spatial);
  run(x.temporal, p.temporal, layout.temporal, layout.sequence_ids, cache.temporal);
  out.soft.resize(out.logits.size());
  for (std::size_t i = 0; i < out.logits.size(); ++i) out.soft[i] = sigmoid(out.logits[i]);
  return out;
}

Decoupled predict_concepts_backward(std::span<const double> d_logits, const DecoderCache& cache,
                                    const DecoderParams& p, const DecoderLayout& layout,
                                    const DecoderConfig& cfg, DecoderParams& grad) {
  const AttentionOptions opt{cfg.heads, cfg.dropout, nullptr};
  auto run = [&](const BranchParams& bp, const BranchShape& shape,
                 const std::vector<std::size_t>& ids, const AttentionCache& c,
                 BranchParams& g) -> Mat {
    if (ids.empty()) return Mat();
    std::vector<double> dl(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) dl[i] = d_logits[ids[i]];
    const Mat d_refined = group_fc_backward(dl, c.out, bp.group_w, shape.group_size, g.group_w);
    return cross_attend_backward(d_refined, c, bp, opt, g);
  };
  Decoupled dx;
  dx.spatial = run(p.spatial, layout.spatial, layout.spatial_ids, cache.spatial, grad.spatial);
  dx.temporal =
      run(p.temporal, layout.temporal, layout.sequence_ids, cache.temporal, grad.temporal);
  return dx;
}

// ---- losses -------------------------------------------------------------------

LossGrad concept_loss(std::span<const double> c_hat, std::span<const std::uint8_t> target) {
  if (c_hat.size() != target.size()) throw ValidationError("concept_loss: length mismatch");
  LossGrad out;
  out.grad.assign(c_hat.size(), 0.0);
  const double n = static_cast<double>(c_hat.size());
  for (std::size_t i = 0; i < c_hat.size(); ++i) {
    const double raw = c_hat[i];
    const double q = std::clamp(raw, kBceEps, 1.0 - kBceEps);
    const double t = target[i] ? 1.0 : 0.0;
    out.loss -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    if (raw > kBceEps && raw < 1.0 - kBceEps) out.grad[i] = (-t / q + (1.0 - t) / (1.0 - q)) / n;
  }
  out.loss /= n;
  return out;
}

LossGrad part_divergence_loss(const Mat& f) {
  const std::size_t P = f.rows, D = f.cols;
  LossGrad out;
  out.grad.assign(P * D, 0.0);
  if (P < 2) return out;
  std::vector<double> norm(P);
  for (std::size_t p = 0; p < P; ++p) norm[p] = std::sqrt(dot(f.row(p), f.row(p)));
  const double pairs = static_cast<double>(P * (P - 1));
  constexpr double kTiny = 1e-12;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < P; ++q) {
      if (p == q || norm[p] < kTiny || norm[q] < kTiny) continue;
      const double c = dot(f.row(p), f.row(q)) / (norm[p] * norm[q]);
      if (c <= 0.0) continue;
      out.loss += c / pairs;
      // d cos / d f_p = f_q / (|p||q|) - cos f_p / |p|^2, and symmetrically.
      for (std::size_t d = 0; d < D; ++d) {
        out.grad[p * D + d] +=
            (f(q, d) / (norm[p] * norm[q]) - c * f(p, d) / (norm[p] * norm[p])) / pairs;
        out.grad[q * D + d] +=
            (f(p, d) / (norm[p] * norm[q]) - c * f(q, d) / (norm[q] * norm[q])) / pairs;
      }
    }
  return out;
}

}  // namespace ruleforge
