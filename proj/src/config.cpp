#include "ruleforge/config.hpp"

#include "ruleforge/errors.hpp"

namespace ruleforge {

namespace {

template <typename T>
void take(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(where + "." + key + ": wrong type");
  }
}

const Json& section(const Json& j, const char* key, const std::string& where) {
  static const Json empty = Json::object();
  if (!j.contains(key)) return empty;
  const Json& s = j.at(key);
  if (!s.is_object()) throw ValidationError(where + "." + key + ": expected object");
  return s;
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) throw ValidationError("config.threads: must be >= 1");
  if (world.vocabulary != "planted" && world.vocabulary != "ntu74" && world.vocabulary != "desk67")
    throw ValidationError("config.world.vocabulary: expected planted|ntu74|desk67");
  if (world.matrix != "planted" && world.matrix != "records")
    throw ValidationError("config.world.matrix: expected planted|records");
  if (world.matrix == "records" && world.vocabulary != "ntu74")
    throw ValidationError("config.world.matrix: records exist only for the ntu74 vocabulary");
  if (world.train_size < 1) throw ValidationError("config.world.train_size: must be >= 1");
  train.validate();
  for (double v : {loss.alpha, loss.beta, loss.gamma, loss.lambda})
    if (!(v >= 0.0)) throw ValidationError("config.loss: weights must be nonnegative");
  intervention_mode_from_string(analysis.intervention_mode);
  if (analysis.intervention_target != "signature" && analysis.intervention_target != "sample")
    throw ValidationError("config.analysis.intervention_target: expected signature|sample");
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  reject_unknown_keys(j, {"seed", "threads", "world", "model", "train", "loss", "analysis"},
                      "config");
  RunConfig c;
  take(j, "seed", c.seed, "config");
  take(j, "threads", c.threads, "config");

  const Json& w = section(j, "world", "config");
  reject_unknown_keys(w,
                      {"vocabulary", "matrix", "num_concepts", "num_actions", "density",
                       "min_distance", "frames", "joints", "channels", "text_dim", "noise_std",
                       "flip_prob", "train_size", "test_size"},
                      "config.world");
  const std::string ww = "config.world";
  take(w, "vocabulary", c.world.vocabulary, ww);
  take(w, "matrix", c.world.matrix, ww);
  take(w, "num_concepts", c.world.num_concepts, ww);
  take(w, "num_actions", c.world.num_actions, ww);
  take(w, "density", c.world.density, ww);
  take(w, "min_distance", c.world.min_distance, ww);
  take(w, "frames", c.world.frames, ww);
  take(w, "joints", c.world.joints, ww);
  take(w, "channels", c.world.channels, ww);
  take(w, "text_dim", c.world.text_dim, ww);
  take(w, "noise_std", c.world.noise_std, ww);
  take(w, "flip_prob", c.world.flip_prob, ww);
  take(w, "train_size", c.world.train_size, ww);
  take(w, "test_size", c.world.test_size, ww);

  const Json& m = section(j, "model", "config");
  reject_unknown_keys(m, {"align_dim", "tau_init", "decoder", "logic"}, "config.model");
  take(m, "align_dim", c.model.align_dim, "config.model");
  take(m, "tau_init", c.model.tau_init, "config.model");
  const Json& d = section(m, "decoder", "config.model");
  const std::string dw = "config.model.decoder";
  reject_unknown_keys(d, {"spatial_groups", "temporal_groups", "hidden", "heads", "dropout"}, dw);
  take(d, "spatial_groups", c.model.decoder.spatial_groups, dw);
  take(d, "temporal_groups", c.model.decoder.temporal_groups, dw);
  take(d, "hidden", c.model.decoder.hidden, dw);
  take(d, "heads", c.model.decoder.heads, dw);
  take(d, "dropout", c.model.decoder.dropout, dw);
  const Json& l = section(m, "logic", "config.model");
  const std::string lw = "config.model.logic";
  reject_unknown_keys(l, {"layers", "nodes", "skip", "negation", "init_low", "init_high"}, lw);
  take(l, "layers", c.model.logic.layers, lw);
  take(l, "nodes", c.model.logic.nodes, lw);
  take(l, "skip", c.model.logic.skip, lw);
  take(l, "negation", c.model.logic.negation, lw);
  take(l, "init_low", c.model.logic.init_low, lw);
  take(l, "init_high", c.model.logic.init_high, lw);

  const Json& t = section(j, "train", "config");
  const std::string tw = "config.train";
  reject_unknown_keys(t,
                      {"epochs", "batch_size", "base_lr", "logic_lr", "encoder_warmup_epochs",
                       "logic_frozen_epochs", "beta1", "beta2", "eps", "weight_decay", "clip_norm"},
                      tw);
  take(t, "epochs", c.train.epochs, tw);
  take(t, "batch_size", c.train.batch_size, tw);
  take(t, "base_lr", c.train.base_lr, tw);
  take(t, "logic_lr", c.train.logic_lr, tw);
  take(t, "encoder_warmup_epochs", c.train.encoder_warmup_epochs, tw);
  take(t, "logic_frozen_epochs", c.train.logic_frozen_epochs, tw);
  take(t, "beta1", c.train.adam.beta1, tw);
  take(t, "beta2", c.train.adam.beta2, tw);
  take(t, "eps", c.train.adam.eps, tw);
  take(t, "weight_decay", c.train.adam.weight_decay, tw);
  take(t, "clip_norm", c.train.clip_norm, tw);

  const Json& lo = section(j, "loss", "config");
  reject_unknown_keys(lo, {"alpha", "beta", "gamma", "lambda"}, "config.loss");
  take(lo, "alpha", c.loss.alpha, "config.loss");
  take(lo, "beta", c.loss.beta, "config.loss");
  take(lo, "gamma", c.loss.gamma, "config.loss");
  take(lo, "lambda", c.loss.lambda, "config.loss");

  const Json& a = section(j, "analysis", "config");
  const std::string aw = "config.analysis";
  reject_unknown_keys(a, {"intervention_levels", "intervention_mode", "intervention_target", "top_k"},
                      aw);
  take(a, "intervention_levels", c.analysis.intervention_levels, aw);
  take(a, "intervention_mode", c.analysis.intervention_mode, aw);
  take(a, "intervention_target", c.analysis.intervention_target, aw);
  take(a, "top_k", c.analysis.top_k, aw);

  c.model.channels = c.world.channels;
  c.model.text_dim = c.world.text_dim;
  c.train.threads = c.threads;
  c.validate();
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  Json model = model_config_to_json(c.model);
  model.erase("channels");
  model.erase("text_dim");
  // threads is deliberately left out: results are reproducible per thread
  // count, and the echo should not change a config hash for a pure speed knob.
  return {{"seed", c.seed},
          {"world",
           {{"vocabulary", c.world.vocabulary},
            {"matrix", c.world.matrix},
            {"num_concepts", c.world.num_concepts},
            {"num_actions", c.world.num_actions},
            {"density", c.world.density},
            {"min_distance", c.world.min_distance},
            {"frames", c.world.frames},
            {"joints", c.world.joints},
            {"channels", c.world.channels},
            {"text_dim", c.world.text_dim},
            {"noise_std", c.world.noise_std},
            {"flip_prob", c.world.flip_prob},
            {"train_size", c.world.train_size},
            {"test_size", c.world.test_size}}},
          {"model", model},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"base_lr", c.train.base_lr},
            {"logic_lr", c.train.logic_lr},
            {"encoder_warmup_epochs", c.train.encoder_warmup_epochs},
            {"logic_frozen_epochs", c.train.logic_frozen_epochs},
            {"beta1", c.train.adam.beta1},
            {"beta2", c.train.adam.beta2},
            {"eps", c.train.adam.eps},
            {"weight_decay", c.train.adam.weight_decay},
            {"clip_norm", c.train.clip_norm}}},
          {"loss",
           {{"alpha", c.loss.alpha},
            {"beta", c.loss.beta},
            {"gamma", c.loss.gamma},
            {"lambda", c.loss.lambda}}},
          {"analysis",
           {{"intervention_levels", c.analysis.intervention_levels},
            {"intervention_mode", c.analysis.intervention_mode},
            {"intervention_target", c.analysis.intervention_target},
            {"top_k", c.analysis.top_k}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json(path));
}

WorldConfig build_world_config(const RunConfig& c, std::uint64_t seed) {
  WorldConfig w;
  w.frames = c.world.frames;
  w.joints = c.world.joints;
  w.channels = c.world.channels;
  w.text_dim = c.world.text_dim;
  w.noise_std = c.world.noise_std;
  w.flip_prob = c.world.flip_prob;
  w.vocabulary = c.world.vocabulary == "planted" ? planted_vocabulary(c.world.num_concepts)
                                                 : fixture_vocabulary(c.world.vocabulary);
  if (c.world.matrix == "records") {
    const RecordFile rf = ntu74_records();
    w.matrix = build_association_matrix(w.vocabulary, rf.actions, rf.records);
  } else {
    w.matrix = planted_matrix(w.vocabulary, c.world.num_actions, c.world.density,
                              c.world.min_distance, stream_seed(seed, "matrix"));
  }
  require_unique_signatures(w.matrix);
  w.validate();
  return w;
}

Dataset generate_dataset(const RunConfig& c) {
  Dataset d;
  d.config = build_world_config(c, c.seed);
  d.world = generate_world(d.config, stream_seed(c.seed, "world"));
  d.train = sample_batch(d.world, c.world.train_size, stream_seed(c.seed, "train"));
  if (c.world.test_size > 0)
    d.test = sample_batch(d.world, c.world.test_size, stream_seed(c.seed, "test"));
  return d;
}

}  // namespace ruleforge
