#include "ruleforge/model.hpp"

#include <algorithm>
#include <cmath>

#include "ruleforge/errors.hpp"

namespace ruleforge {

Json model_config_to_json(const ModelConfig& c) {
  return {{"channels", c.channels},
          {"text_dim", c.text_dim},
          {"align_dim", c.align_dim},
          {"tau_init", c.tau_init},
          {"decoder",
           {{"spatial_groups", c.decoder.spatial_groups},
            {"temporal_groups", c.decoder.temporal_groups},
            {"hidden", c.decoder.hidden},
            {"heads", c.decoder.heads},
            {"dropout", c.decoder.dropout}}},
          {"logic",
           {{"layers", c.logic.layers},
            {"nodes", c.logic.nodes},
            {"skip", c.logic.skip},
            {"negation", c.logic.negation},
            {"init_low", c.logic.init_low},
            {"init_high", c.logic.init_high}}}};
}

ModelConfig model_config_from_json(const Json& j) {
  try {
    ModelConfig c;
    c.channels = j.at("channels").get<std::size_t>();
    c.text_dim = j.at("text_dim").get<std::size_t>();
    c.align_dim = j.at("align_dim").get<std::size_t>();
    c.tau_init = j.at("tau_init").get<double>();
    const auto& d = j.at("decoder");
    c.decoder.spatial_groups = d.at("spatial_groups").get<std::size_t>();
    c.decoder.temporal_groups = d.at("temporal_groups").get<std::size_t>();
    c.decoder.hidden = d.at("hidden").get<std::size_t>();
    c.decoder.heads = d.at("heads").get<std::size_t>();
    c.decoder.dropout = d.at("dropout").get<double>();
    const auto& l = j.at("logic");
    c.logic.layers = l.at("layers").get<std::size_t>();
    c.logic.nodes = l.at("nodes").get<std::size_t>();
    c.logic.skip = l.at("skip").get<bool>();
    c.logic.negation = l.at("negation").get<bool>();
    c.logic.init_low = l.at("init_low").get<double>();
    c.logic.init_high = l.at("init_high").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
}

SampleInput prepare_sample(std::span<const double> features, std::size_t frames,
                           std::size_t joints, std::size_t channels,
                           const std::vector<Part>& part_map) {
  SampleInput in;
  in.x = decouple(features, frames, joints, channels);
  in.parts = pool_parts(features, frames, joints, channels, part_map);
  in.global = Mat(1, channels);
  // Global mean equals the mean of the per-joint time means.
  for (std::size_t v = 0; v < joints; ++v)
    for (std::size_t d = 0; d < channels; ++d) in.global.v[d] += in.x.spatial(v, d);
  for (auto& g : in.global.v) g /= static_cast<double>(joints);
  return in;
}

std::vector<NamedTensor> Model::tensors() {
  std::vector<NamedTensor> out = {{"adapter.weight", &adapter_w}, {"adapter.bias", &adapter_b}};
  for (auto& t : decoder.tensors()) out.push_back(t);
  out.push_back({"align.skel_w", &skel_w});
  out.push_back({"align.skel_b", &skel_b});
  out.push_back({"align.text_w", &text_w});
  out.push_back({"align.text_b", &text_b});
  out.push_back({"align.log_tau", &log_tau});
  for (auto& t : logic.tensors()) out.push_back(t);
  for (auto& t : classifier.tensors()) out.push_back(t);
  return out;
}

bool Model::is_logic_tensor(const std::string& name) {
  return name.starts_with("logic.") || name.starts_with("classifier.");
}

void Model::zero() {
  for (auto& t : tensors()) t.mat->zero();
}

Model make_model(const ConceptVocabulary& vocab, const std::vector<std::string>& actions,
                 const std::vector<Part>& part_map, const ModelConfig& cfg) {
  if (actions.empty()) throw ValidationError("model: need at least one action");
  if (cfg.align_dim == 0 || cfg.channels == 0 || cfg.text_dim == 0)
    throw ValidationError("model: dimensions must be >= 1");
  if (!(cfg.tau_init > 0.0)) throw ValidationError("model: tau_init must be > 0");
  Model m;
  m.config = cfg;
  m.vocabulary = vocab;
  m.actions = actions;
  m.part_map = part_map;
  m.layout = make_decoder_layout(vocab, cfg.channels, cfg.decoder);
  const std::size_t D = cfg.channels, K = cfg.align_dim;
  m.adapter_w = Mat(D, D);
  m.adapter_b = Mat(1, D);
  m.decoder = make_decoder_params(m.layout);
  m.skel_w = Mat(D, K);
  m.skel_b = Mat(1, K);
  m.text_w = Mat(cfg.text_dim, K);
  m.text_b = Mat(1, K);
  m.log_tau = Mat(1, 1);
  m.logic = LogicNetwork(vocab.size(), cfg.logic);
  m.classifier = Classifier(actions.size(), m.logic.rule_width());
  return m;
}

void init_model(Model& m, std::uint64_t seed) {
  m.zero();
  m.adapter_w = Mat::identity(m.config.channels);
  Rng dec = make_rng(seed, "init.decoder");
  init_decoder(m.decoder, m.layout, dec);
  Rng align = make_rng(seed, "init.align");
  const double ss = 1.0 / std::sqrt(static_cast<double>(m.skel_w.rows));
  for (auto& x : m.skel_w.v) x = gaussian(align, ss);
  const double st = 1.0 / std::sqrt(static_cast<double>(m.text_w.rows));
  for (auto& x : m.text_w.v) x = gaussian(align, st);
  m.log_tau.v[0] = std::log(m.config.tau_init);
  Rng logic = make_rng(seed, "init.logic");
  m.logic.init_uniform(logic);
}

Mat apply_adapter(const Mat& x, const Model& m) {
  Mat y = matmul(x, m.adapter_w);
  add_row_inplace(y, m.adapter_b);
  return y;
}

namespace {

void adapter_backward(const Mat& x, const Mat& dy, Model& grad) {
  if (dy.empty()) return;
  add_matmul_at(grad.adapter_w, x, dy);
  for (std::size_t r = 0; r < dy.rows; ++r)
    for (std::size_t c = 0; c < dy.cols; ++c) grad.adapter_b.v[c] += dy(r, c);
}

void scale_mat(Mat& m, double s) {
  for (auto& x : m.v) x *= s;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

SampleForward forward_sample(const Model& m, const SampleInput& in, Rng* dropout_rng,
                             const CompiledLogic* logic) {
  SampleForward f;
  f.adapted.x.spatial = apply_adapter(in.x.spatial, m);
  f.adapted.x.temporal = apply_adapter(in.x.temporal, m);
  f.adapted.parts = apply_adapter(in.parts, m);
  f.adapted.global = apply_adapter(in.global, m);
  f.concepts = predict_concepts(f.adapted.x, m.decoder, m.layout, m.config.decoder, f.cache,
                                dropout_rng);
  f.c_bar = binarize(f.concepts.soft);
  f.predicates = augment_predicates(f.c_bar, m.logic.config().negation);
  const DiscreteResult d =
      logic ? forward_discrete(f.predicates, *logic) : forward_discrete(f.predicates, m.logic);
  f.rules.assign(d.rules.begin(), d.rules.end());
  f.logits = classify(f.rules, m.classifier);
  f.predicted = argmax(f.logits);
  return f;
}

std::vector<double> logits_from_concepts(const Model& m, std::span<const double> c_hat,
                                         std::vector<double>* rules_out,
                                         const CompiledLogic* logic) {
  const auto c_bar = binarize(c_hat);
  const auto p = augment_predicates(c_bar, m.logic.config().negation);
  const DiscreteResult d = logic ? forward_discrete(p, *logic) : forward_discrete(p, m.logic);
  std::vector<double> r(d.rules.begin(), d.rules.end());
  auto logits = classify(r, m.classifier);
  if (rules_out) *rules_out = std::move(r);
  return logits;
}

SampleLosses accumulate_sample(const Model& m, const SampleInput& in, std::size_t label,
                               std::span<const std::uint8_t> true_concepts,
                               const LossWeights& w, const GradFlags& flags, double scale,
                               Model& grad, Rng* dropout_rng, const CompiledLogic* logic) {
  SampleForward f = forward_sample(m, in, dropout_rng, logic);
  SampleLosses out;
  const LossGrad task = task_loss(f.logits, label);
  const LossGrad bce = concept_loss(f.concepts.soft, true_concepts);
  const LossGrad div = part_divergence_loss(f.adapted.parts);
  out.task = task.loss;
  out.concept_bce = bce.loss;
  out.divergence = div.loss;
  out.correct = f.predicted == label;

  // d loss / d c_hat collects the BCE term and, through the STE, the task term.
  const std::size_t C = m.num_concepts();
  std::vector<double> d_chat(C);
  for (std::size_t i = 0; i < C; ++i) d_chat[i] = scale * w.alpha * bce.grad[i];

  if (flags.logic || flags.task_to_decoder) {
    std::vector<double> d_logits(task.grad);
    for (auto& g : d_logits) g *= scale;
    const auto d_rules =
        classify_backward(d_logits, f.rules, m.classifier, flags.logic ? &grad.classifier : nullptr);
    if (std::any_of(d_rules.begin(), d_rules.end(), [](double g) { return g != 0.0; })) {
      const GraftTape tape = forward_soft(f.predicates, m.logic);
      const auto d_p = backward_grafted(d_rules, tape, m.logic, flags.logic ? &grad.logic : nullptr);
      if (flags.task_to_decoder) {
        const auto d_cbar = predicate_grad_to_concepts(d_p, C, m.logic.config().negation);
        const auto d_ste = binarize_backward(d_cbar);
        for (std::size_t i = 0; i < C; ++i) d_chat[i] += d_ste[i];
      }
    }
  }

  std::vector<double> d_logit_c(C);
  for (std::size_t i = 0; i < C; ++i) {
    const double s = f.concepts.soft[i];
    d_logit_c[i] = d_chat[i] * s * (1.0 - s);
  }
  const Decoupled dx =
      predict_concepts_backward(d_logit_c, f.cache, m.decoder, m.layout, m.config.decoder, grad.decoder);
  adapter_backward(in.x.spatial, dx.spatial, grad);
  adapter_backward(in.x.temporal, dx.temporal, grad);

  if (w.gamma != 0.0) {
    Mat d_parts(f.adapted.parts.rows, f.adapted.parts.cols);
    d_parts.v = div.grad;
    scale_mat(d_parts, scale * w.gamma);
    adapter_backward(in.parts, d_parts, grad);
  }
  return out;
}

AlignGrad align_loss(const Mat& z, const Mat& t, double log_tau) {
  if (z.rows == 0) throw ValidationError("align_loss: empty batch");
  if (!z.same_shape(t)) throw ValidationError("align_loss: z and t shapes differ");
  const std::size_t B = z.rows;
  const double inv_tau = std::exp(-log_tau);
  Mat s = matmul_bt(z, t);
  scale_mat(s, inv_tau);
  AlignGrad g;
  Mat ds(B, B);
  for (std::size_t i = 0; i < B; ++i) {
    auto row = s.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double zsum = 0.0;
    for (double x : row) zsum += std::exp(x - mx);
    g.loss -= (row[i] - mx - std::log(zsum)) / static_cast<double>(B);
    for (std::size_t j = 0; j < B; ++j)
      ds(i, j) = (std::exp(row[j] - mx) / zsum - (i == j ? 1.0 : 0.0)) / static_cast<double>(B);
  }
  // S = Z T^T / tau: dZ = dS T / tau, dT = dS^T Z / tau, d log_tau = -sum dS * S.
  g.dz = matmul(ds, t);
  scale_mat(g.dz, inv_tau);
  g.dt = Mat(B, t.cols);
  add_matmul_at(g.dt, ds, z);
  scale_mat(g.dt, inv_tau);
  for (std::size_t k = 0; k < ds.size(); ++k) g.d_log_tau -= ds.v[k] * s.v[k];
  return g;
}

double accumulate_align(const Model& m, const std::vector<const Mat*>& globals,
                        const std::vector<std::size_t>& labels, const Mat& text_embeddings,
                        double scale, Model& grad) {
  const std::size_t B = globals.size();
  const std::size_t D = m.config.channels, E = m.config.text_dim;
  Mat g(B, D), e(B, E);
  for (std::size_t i = 0; i < B; ++i) {
    std::copy(globals[i]->v.begin(), globals[i]->v.end(), g.row(i).begin());
    const auto src = text_embeddings.row(labels[i]);
    std::copy(src.begin(), src.end(), e.row(i).begin());
  }
  const Mat ga = apply_adapter(g, m);
  Mat z = matmul(ga, m.skel_w);
  add_row_inplace(z, m.skel_b);
  Mat t = matmul(e, m.text_w);
  add_row_inplace(t, m.text_b);
  AlignGrad ag = align_loss(z, t, m.log_tau.v[0]);
  scale_mat(ag.dz, scale);
  scale_mat(ag.dt, scale);
  add_matmul_at(grad.skel_w, ga, ag.dz);
  add_matmul_at(grad.text_w, e, ag.dt);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t k = 0; k < ag.dz.cols; ++k) {
      grad.skel_b.v[k] += ag.dz(i, k);
      grad.text_b.v[k] += ag.dt(i, k);
    }
  grad.log_tau.v[0] += scale * ag.d_log_tau;
  const Mat d_ga = matmul_bt(ag.dz, m.skel_w);
  adapter_backward(g, d_ga, grad);
  return ag.loss;
}

}  // namespace ruleforge
