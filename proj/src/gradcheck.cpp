#include <cmath>
#include <functional>

#include "ruleforge/errors.hpp"
#include "ruleforge/trainer.hpp"

namespace ruleforge {

namespace {

constexpr double kStep = 1e-5;

struct Probe {
  Mat* value;
  const Mat* analytic;
};

// Worst per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||);
// absolute when both norms are below 1e-6.
double compare(const std::vector<Probe>& probes, const std::function<double()>& loss) {
  double worst = 0.0;
  for (const auto& p : probes) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < p.value->v.size(); ++i) {
      double& x = p.value->v[i];
      const double keep = x;
      x = keep + kStep;
      const double up = loss();
      x = keep - kStep;
      const double down = loss();
      x = keep;
      const double num = (up - down) / (2.0 * kStep);
      const double ana = p.analytic->v[i];
      diff += (ana - num) * (ana - num);
      na += ana * ana;
      nn += num * num;
    }
    // Gradients that vanish identically (e.g. a bias the loss is invariant to)
    // are compared in absolute terms, since their numeric estimate is pure noise.
    const double scale = std::max(std::sqrt(na), std::sqrt(nn));
    const double denom = scale < 1e-6 ? 1.0 : scale;
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
  Mat m(r, c);
  for (auto& x : m.v) x = gaussian(rng, sd);
  return m;
}

void jitter(const std::vector<NamedTensor>& ts, Rng& rng, double sd) {
  for (const auto& t : ts)
    for (auto& x : t.mat->v) x += gaussian(rng, sd);
}

std::vector<Probe> pair_probes(std::vector<NamedTensor> values, std::vector<NamedTensor> grads) {
  std::vector<Probe> out;
  for (std::size_t k = 0; k < values.size(); ++k) out.push_back({values[k].mat, grads[k].mat});
  return out;
}


double check_decoder(Rng& rng) {
  const ConceptVocabulary vocab = planted_vocabulary(10);
  DecoderConfig cfg;
  cfg.spatial_groups = 3;
  cfg.temporal_groups = 2;
  cfg.hidden = 6;
  cfg.heads = 2;
  const std::size_t D = 8, V = 6, T = 5;
  const DecoderLayout layout = make_decoder_layout(vocab, D, cfg);
  DecoderParams p = make_decoder_params(layout);
  init_decoder(p, layout, rng);
  jitter(p.tensors(), rng, 0.1);
  Decoupled x{random_mat(V, D, rng), random_mat(T, D, rng)};
  std::vector<std::uint8_t> target(vocab.size());
  for (auto& t : target) t = uniform01(rng) < 0.5;

  auto loss = [&] {
    DecoderCache cache;
    const auto act = predict_concepts(x, p, layout, cfg, cache);
    return concept_loss(act.soft, target).loss;
  };
  DecoderCache cache;
  const auto act = predict_concepts(x, p, layout, cfg, cache);
  const auto bce = concept_loss(act.soft, target);
  std::vector<double> dl(act.soft.size());
  for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = bce.grad[i] * act.soft[i] * (1 - act.soft[i]);
  DecoderParams g = make_decoder_params(layout);
  for (auto& t : g.tensors()) t.mat->zero();
  const Decoupled dx = predict_concepts_backward(dl, cache, p, layout, cfg, g);
  auto probes = pair_probes(p.tensors(), g.tensors());
  probes.push_back({&x.spatial, &dx.spatial});
  probes.push_back({&x.temporal, &dx.temporal});
  return compare(probes, loss);
}

double check_logic(Rng& rng) {
  LogicConfig cfg;
  cfg.layers = 2;
  cfg.nodes = 4;
  LogicNetwork net(3, cfg);
  for (auto& l : net.layers) {
    for (auto& x : l.and_w.v) x = 0.05 + 0.9 * uniform01(rng);
    for (auto& x : l.or_w.v) x = 0.05 + 0.9 * uniform01(rng);
  }
  Mat p(1, net.predicate_width());
  for (auto& x : p.v) x = uniform01(rng);
  std::vector<double> up(net.rule_width());
  for (auto& x : up) x = gaussian(rng);
  auto loss = [&] {
    const auto tape = forward_soft(p.v, net);
    double s = 0.0;
    for (std::size_t j = 0; j < up.size(); ++j) s += up[j] * tape.rules[j];
    return s;
  };
  LogicNetwork grad(3, cfg);
  const auto tape = forward_soft(p.v, net);
  Mat dp(1, p.cols);
  dp.v = backward_grafted(up, tape, net, &grad);
  auto probes = pair_probes(net.tensors(), grad.tensors());
  probes.push_back({&p, &dp});
  return compare(probes, loss);
}

double check_classifier(Rng& rng) {
  const std::size_t A = 4, R = 7;
  Classifier c(A, R);
  c.weight = random_mat(A, R, rng);
  c.bias = random_mat(1, A, rng);
  Mat r(1, R);
  for (auto& x : r.v) x = uniform01(rng);
  const std::size_t label = rng() % A;
  auto loss = [&] { return task_loss(classify(r.v, c), label).loss; };
  Classifier g(A, R);
  const auto tl = task_loss(classify(r.v, c), label);
  Mat dr(1, R);
  dr.v = classify_backward(tl.grad, r.v, c, &g);
  auto probes = pair_probes(c.tensors(), g.tensors());
  probes.push_back({&r, &dr});
  return compare(probes, loss);
}

Model tiny_model(Rng& rng) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.text_dim = 5;
  cfg.align_dim = 4;
  cfg.decoder.spatial_groups = 3;
  cfg.decoder.temporal_groups = 2;
  cfg.decoder.hidden = 6;
  cfg.logic.nodes = 4;
  Model m = make_model(planted_vocabulary(10), {"a0", "a1", "a2"}, default_part_map(6), cfg);
  init_model(m, rng());
  jitter({{"w", &m.adapter_w}, {"b", &m.adapter_b}}, rng, 0.1);
  jitter(m.decoder.tensors(), rng, 0.1);
  return m;
}

double check_align(Rng& rng) {
  Model m = tiny_model(rng);
  const std::size_t B = 4;
  std::vector<Mat> gl;
  for (std::size_t i = 0; i < B; ++i) gl.push_back(random_mat(1, m.config.channels, rng));
  std::vector<const Mat*> globals;
  for (const auto& g : gl) globals.push_back(&g);
  std::vector<std::size_t> labels(B);
  for (auto& l : labels) l = rng() % m.num_actions();
  const Mat text = random_mat(m.num_actions(), m.config.text_dim, rng);
  m.log_tau.v[0] = std::log(0.5 + uniform01(rng));
  Model grad = m;
  auto loss = [&] {
    Model scratch = grad;
    return accumulate_align(m, globals, labels, text, 1.0, scratch);
  };
  grad.zero();
  accumulate_align(m, globals, labels, text, 1.0, grad);
  std::vector<Probe> probes = {{&m.adapter_w, &grad.adapter_w}, {&m.adapter_b, &grad.adapter_b},
                               {&m.skel_w, &grad.skel_w},       {&m.skel_b, &grad.skel_b},
                               {&m.text_w, &grad.text_w},       {&m.text_b, &grad.text_b},
                               {&m.log_tau, &grad.log_tau}};
  return compare(probes, loss);
}

double check_divergence(Rng& rng) {
  Mat parts = random_mat(6, 8, rng);
  auto loss = [&] { return part_divergence_loss(parts).loss; };
  Mat g(6, 8);
  g.v = part_divergence_loss(parts).grad;
  return compare({{&parts, &g}}, loss);
}

double check_concept(Rng& rng) {
  Mat c(1, 12);
  for (auto& x : c.v) x = 0.05 + 0.9 * uniform01(rng);
  std::vector<std::uint8_t> t(c.cols);
  for (auto& x : t) x = uniform01(rng) < 0.5;
  auto loss = [&] { return concept_loss(c.v, t).loss; };
  Mat g(1, c.cols);
  g.v = concept_loss(c.v, t).grad;
  return compare({{&c, &g}}, loss);
}

// Perception path of one sample: adapter, decoder, BCE and part divergence.
double check_sample(Rng& rng) {
  Model m = tiny_model(rng);
  const std::size_t T = 5, V = 6, D = m.config.channels;
  std::vector<double> f(T * V * D);
  for (auto& x : f) x = gaussian(rng);
  const SampleInput in = prepare_sample(f, T, V, D, m.part_map);
  std::vector<std::uint8_t> tc(m.num_concepts());
  for (auto& x : tc) x = uniform01(rng) < 0.5;
  const LossWeights w{1.0, 0.0, 0.7, 0.0};
  const GradFlags flags{false, false};
  Model grad = m;
  auto loss = [&] {
    Model scratch = grad;
    const auto l = accumulate_sample(m, in, 0, tc, w, flags, 1.0, scratch);
    return w.alpha * l.concept_bce + w.gamma * l.divergence;
  };
  grad.zero();
  accumulate_sample(m, in, 0, tc, w, flags, 1.0, grad);
  std::vector<Probe> probes = {{&m.adapter_w, &grad.adapter_w}, {&m.adapter_b, &grad.adapter_b}};
  for (auto& p : pair_probes(m.decoder.tensors(), grad.decoder.tensors())) probes.push_back(p);
  return compare(probes, loss);
}

}  // namespace

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names = {"decoder",    "logic",   "align", "classifier",
                                                 "divergence", "concept", "sample"};
  return names;
}

double finite_diff_check(const std::string& component, std::uint64_t point_seed) {
  Rng rng = make_rng(point_seed, "gradcheck." + component);
  if (component == "decoder") return check_decoder(rng);
  if (component == "logic") return check_logic(rng);
  if (component == "align") return check_align(rng);
  if (component == "classifier") return check_classifier(rng);
  if (component == "divergence") return check_divergence(rng);
  if (component == "concept") return check_concept(rng);
  if (component == "sample") return check_sample(rng);
  throw ValidationError("gradcheck: unknown component '" + component + "'");
}

}  // namespace ruleforge
