#include "ruleforge/logic.hpp"

#include <algorithm>
#include <cmath>

#include "ruleforge/errors.hpp"

namespace ruleforge {

LogicNetwork::LogicNetwork(std::size_t num_concepts, const LogicConfig& cfg)
    : num_concepts_(num_concepts), cfg_(cfg) {
  if (num_concepts == 0) throw ValidationError("logic: need at least one concept");
  if (cfg.layers == 0 || cfg.nodes == 0) throw ValidationError("logic: layers and nodes >= 1");
  if (!(0.0 <= cfg.init_low && cfg.init_low <= cfg.init_high && cfg.init_high <= 1.0))
    throw ValidationError("logic: init range must satisfy 0 <= low <= high <= 1");
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::size_t m = predicate_width();
    if (l > 0) m = 2 * cfg.nodes + (cfg.skip ? predicate_width() : 0);
    layers.push_back({Mat(cfg.nodes, m), Mat(cfg.nodes, m)});
  }
}

std::size_t LogicNetwork::input_width(std::size_t l) const { return layers[l].and_w.cols; }

std::size_t LogicNetwork::rule_width() const {
  if (!cfg_.skip) return output_width(layers.size() - 1);
  std::size_t r = predicate_width();
  for (std::size_t l = 0; l < layers.size(); ++l) r += output_width(l);
  return r;
}

std::size_t LogicNetwork::rule_offset(std::size_t l) const {
  if (!cfg_.skip) return 0;
  std::size_t off = predicate_width();
  for (std::size_t k = 0; k < l; ++k) off += output_width(k);
  return off;
}

void LogicNetwork::init_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(cfg_.init_low, cfg_.init_high);
  for (auto& layer : layers) {
    for (auto& x : layer.and_w.v) x = u(rng);
    for (auto& x : layer.or_w.v) x = u(rng);
  }
}

void LogicNetwork::clamp() {
  for (auto& layer : layers) {
    for (auto& x : layer.and_w.v) x = std::clamp(x, 0.0, 1.0);
    for (auto& x : layer.or_w.v) x = std::clamp(x, 0.0, 1.0);
  }
}

std::vector<NamedTensor> LogicNetwork::tensors() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.push_back({"logic." + std::to_string(l) + ".and_w", &layers[l].and_w});
    out.push_back({"logic." + std::to_string(l) + ".or_w", &layers[l].or_w});
  }
  return out;
}

std::size_t LogicNetwork::count_active() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    for (double x : layer.and_w.v) n += x > kBinarizeThreshold;
    for (double x : layer.or_w.v) n += x > kBinarizeThreshold;
  }
  return n;
}

std::vector<std::uint8_t> binarize(std::span<const double> c_hat, double threshold) {
  std::vector<std::uint8_t> out(c_hat.size());
  for (std::size_t i = 0; i < c_hat.size(); ++i) out[i] = c_hat[i] > threshold ? 1 : 0;
  return out;
}

std::vector<double> augment_predicates(std::span<const std::uint8_t> c_bar, bool negation) {
  std::vector<double> p(c_bar.begin(), c_bar.end());
  if (negation)
    for (auto c : c_bar) p.push_back(c ? 0.0 : 1.0);
  return p;
}

Mat binarize_weights(const Mat& w) {
  Mat out(w.rows, w.cols);
  for (std::size_t i = 0; i < w.v.size(); ++i) out.v[i] = w.v[i] > kBinarizeThreshold ? 1.0 : 0.0;
  return out;
}

namespace {

void check_predicates(std::span<const double> p, const LogicNetwork& net) {
  if (p.size() != net.predicate_width())
    throw ValidationError("logic: predicate width " + std::to_string(p.size()) + ", expected " +
                          std::to_string(net.predicate_width()));
}

}  // namespace

CompiledLogic compile_discrete(const LogicNetwork& net) {
  CompiledLogic c;
  c.predicate_width = net.predicate_width();
  c.skip = net.config().skip;
  for (const auto& layer : net.layers) {
    CompiledLogic::Layer cl;
    cl.nodes = layer.and_w.rows;
    cl.inputs = layer.and_w.cols;
    cl.words = (cl.inputs + 63) / 64;
    cl.and_mask.assign(cl.nodes * cl.words, 0);
    cl.or_mask.assign(cl.nodes * cl.words, 0);
    for (std::size_t i = 0; i < cl.nodes; ++i)
      for (std::size_t j = 0; j < cl.inputs; ++j) {
        const std::uint64_t bit = std::uint64_t{1} << (j % 64);
        if (layer.and_w(i, j) > kBinarizeThreshold) cl.and_mask[i * cl.words + j / 64] |= bit;
        if (layer.or_w(i, j) > kBinarizeThreshold) cl.or_mask[i * cl.words + j / 64] |= bit;
      }
    c.layers.push_back(std::move(cl));
  }
  return c;
}

DiscreteResult forward_discrete(std::span<const double> p, const CompiledLogic& net) {
  if (p.size() != net.predicate_width)
    throw ValidationError("logic: predicate width " + std::to_string(p.size()) + ", expected " +
                          std::to_string(net.predicate_width));
  DiscreteResult res;
  std::vector<std::uint8_t> pred(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) pred[i] = p[i] > 0.5 ? 1 : 0;
  std::vector<std::uint8_t> input = pred;
  std::vector<std::uint64_t> bits;
  for (const auto& layer : net.layers) {
    if (input.size() != layer.inputs) throw ValidationError("logic: layer width mismatch");
    bits.assign(layer.words, 0);
    for (std::size_t j = 0; j < input.size(); ++j)
      if (input[j]) bits[j / 64] |= std::uint64_t{1} << (j % 64);
    std::vector<std::uint8_t> out(2 * layer.nodes);
    for (std::size_t i = 0; i < layer.nodes; ++i) {
      const std::uint64_t* am = layer.and_mask.data() + i * layer.words;
      const std::uint64_t* om = layer.or_mask.data() + i * layer.words;
      bool a = true, b = false;
      for (std::size_t w = 0; w < layer.words; ++w) {
        a = a && (am[w] & ~bits[w]) == 0;  // every selected input is 1
        b = b || (om[w] & bits[w]) != 0;   // some selected input is 1
      }
      out[i] = a;
      out[layer.nodes + i] = b;
    }
    res.layers.push_back(out);
    input = out;
    if (net.skip) input.insert(input.end(), pred.begin(), pred.end());
  }
  if (net.skip) {
    res.rules = pred;
    for (const auto& o : res.layers) res.rules.insert(res.rules.end(), o.begin(), o.end());
  } else {
    res.rules = res.layers.back();
  }
  return res;
}

DiscreteResult forward_discrete(std::span<const double> p, const LogicNetwork& net) {
  return forward_discrete(p, compile_discrete(net));
}

GraftTape forward_soft(std::span<const double> p, const LogicNetwork& net) {
  check_predicates(p, net);
  GraftTape tape;
  tape.predicates.assign(p.begin(), p.end());
  std::vector<double> input(p.begin(), p.end());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const std::size_t n = layer.and_w.rows, m = layer.and_w.cols;
    std::vector<double> out(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* wa = layer.and_w.v.data() + i * m;
      const double* wo = layer.or_w.v.data() + i * m;
      double a = 1.0, nb = 1.0;
      for (std::size_t j = 0; j < m; ++j) {
        a *= 1.0 - wa[j] * (1.0 - input[j]);
        nb *= 1.0 - wo[j] * input[j];
      }
      out[i] = a;
      out[n + i] = 1.0 - nb;
    }
    tape.inputs.push_back(input);
    tape.outputs.push_back(out);
    input = out;
    if (net.config().skip) input.insert(input.end(), p.begin(), p.end());
  }
  if (net.config().skip) {
    tape.rules = tape.predicates;
    for (const auto& o : tape.outputs) tape.rules.insert(tape.rules.end(), o.begin(), o.end());
  } else {
    tape.rules = tape.outputs.back();
  }
  return tape;
}

std::vector<double> backward_grafted(std::span<const double> d_rules, const GraftTape& tape,
                                     const LogicNetwork& net, LogicNetwork* grad) {
  if (tape.inputs.size() != net.layers.size())
    throw ValidationError("logic: grafted backward needs a tape from the same network");
  if (d_rules.size() != net.rule_width()) throw ValidationError("logic: d_rules width mismatch");
  const std::size_t P = net.predicate_width();
  const bool skip = net.config().skip;
  const std::size_t L = net.layers.size();

  std::vector<double> d_pred(P, 0.0);
  if (skip)
    for (std::size_t i = 0; i < P; ++i) d_pred[i] = d_rules[i];

  // d_out of the current (top) layer.
  std::vector<double> d_out(d_rules.begin() + static_cast<std::ptrdiff_t>(net.rule_offset(L - 1)),
                            d_rules.begin() +
                                static_cast<std::ptrdiff_t>(net.rule_offset(L - 1) +
                                                            net.output_width(L - 1)));
  std::vector<double> prefix;
  for (std::size_t li = L; li-- > 0;) {
    const auto& layer = net.layers[li];
    const auto& x = tape.inputs[li];
    const std::size_t n = layer.and_w.rows, m = layer.and_w.cols;
    std::vector<double> d_in(m, 0.0);
    prefix.resize(m + 1);
    for (std::size_t i = 0; i < n; ++i) {
      // Conjunction: t_j = 1 - w_j (1 - x_j), a = prod t_j.
      if (const double g = d_out[i]; g != 0.0) {
        const double* w = layer.and_w.v.data() + i * m;
        double* dw = grad ? grad->layers[li].and_w.v.data() + i * m : nullptr;
        prefix[0] = 1.0;
        for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] * (1.0 - w[j] * (1.0 - x[j]));
        double suffix = 1.0;
        for (std::size_t j = m; j-- > 0;) {
          const double others = prefix[j] * suffix;
          if (dw) dw[j] += g * -(1.0 - x[j]) * others;
          d_in[j] += g * w[j] * others;
          suffix *= 1.0 - w[j] * (1.0 - x[j]);
        }
      }
      // Disjunction: u_j = 1 - w_j x_j, b = 1 - prod u_j.
      if (const double g = d_out[n + i]; g != 0.0) {
        const double* w = layer.or_w.v.data() + i * m;
        double* dw = grad ? grad->layers[li].or_w.v.data() + i * m : nullptr;
        prefix[0] = 1.0;
        for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] * (1.0 - w[j] * x[j]);
        double suffix = 1.0;
        for (std::size_t j = m; j-- > 0;) {
          const double others = prefix[j] * suffix;
          if (dw) dw[j] += g * x[j] * others;
          d_in[j] += g * w[j] * others;
          suffix *= 1.0 - w[j] * x[j];
        }
      }
    }
    if (li == 0) {
      for (std::size_t j = 0; j < P; ++j) d_pred[j] += d_in[j];
      break;
    }
    // Split d_in into the previous layer's outputs and the skip predicates.
    const std::size_t prev = net.output_width(li - 1);
    if (skip)
      for (std::size_t j = 0; j < P; ++j) d_pred[j] += d_in[prev + j];
    d_out.assign(d_in.begin(), d_in.begin() + static_cast<std::ptrdiff_t>(prev));
    if (skip) {
      const std::size_t off = net.rule_offset(li - 1);
      for (std::size_t j = 0; j < prev; ++j) d_out[j] += d_rules[off + j];
    }
  }
  return d_pred;
}

std::vector<double> predicate_grad_to_concepts(std::span<const double> d_p,
                                               std::size_t num_concepts, bool negation) {
  std::vector<double> d(num_concepts);
  for (std::size_t i = 0; i < num_concepts; ++i)
    d[i] = d_p[i] - (negation ? d_p[i + num_concepts] : 0.0);
  return d;
}

double l1_penalty(const LogicNetwork& net) {
  double s = 0.0;
  for (const auto& layer : net.layers) {
    for (double x : layer.and_w.v) s += std::abs(x);
    for (double x : layer.or_w.v) s += std::abs(x);
  }
  return s;
}

void add_l1_grad(LogicNetwork& grad, double scale) {
  for (auto& layer : grad.layers) {
    for (auto& x : layer.and_w.v) x += scale;
    for (auto& x : layer.or_w.v) x += scale;
  }
}

}  // namespace ruleforge
