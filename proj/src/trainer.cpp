#include "ruleforge/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

#include "ruleforge/errors.hpp"

namespace ruleforge {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
  if (!(base_lr > 0.0) || !(logic_lr > 0.0)) throw ValidationError("train: learning rates must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ValidationError("train: Adam betas must lie in [0, 1)");
  if (!(adam.eps > 0.0) || !(adam.weight_decay >= 0.0))
    throw ValidationError("train: eps must be > 0 and weight_decay >= 0");
  if (!(clip_norm > 0.0)) throw ValidationError("train: clip_norm must be > 0");
  if (threads < 1) throw ValidationError("train: threads must be >= 1");
}

void adamw_step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads,
                AdamState& st, double lr, const AdamHyper& h) {
  if (params.size() != grads.size()) throw ValidationError("adamw: params/grads count differ");
  if (st.m.empty()) {
    for (const Mat* p : params) {
      st.m.push_back(p->zeros_like());
      st.v.push_back(p->zeros_like());
    }
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (!params[k]->same_shape(*grads[k]) || !params[k]->same_shape(st.m[k]))
      throw ValidationError("adamw: shape mismatch at tensor " + std::to_string(k));
    for (double g : grads[k]->v)
      if (!std::isfinite(g))
        throw DivergenceError("adamw: non-finite gradient in tensor " + std::to_string(k));
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.step));
  const double decay = 1.0 - lr * h.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->v;
    const auto& g = grads[k]->v;
    auto& m = st.m[k].v;
    auto& v = st.v[k].v;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1, vh = v[i] / bc2;
      p[i] -= lr * mh / (std::sqrt(vh) + h.eps);
    }
  }
}

double global_norm(const std::vector<Mat*>& grads) {
  double s = 0.0;
  for (const Mat* g : grads)
    for (double x : g->v) s += x * x;
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<Mat*>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (Mat* g : grads)
      for (double& x : g->v) x *= f;
  }
  return norm;
}

double cosine_multiplier(std::size_t epoch, std::size_t epochs) {
  const double e = static_cast<double>(epoch - 1) / static_cast<double>(epochs);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * e));
}

Schedule warmup_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch < 1) throw ValidationError("schedule: epochs count from 1");
  Schedule s;
  s.logic_trainable = epoch > cfg.logic_frozen_epochs;
  s.task_to_decoder = epoch > cfg.encoder_warmup_epochs;
  s.lr_multiplier = cosine_multiplier(epoch, cfg.epochs);
  return s;
}

double total_loss(const LossParts& p, const LossWeights& w) {
  return p.task + w.alpha * p.concept_bce + w.beta * p.align + w.gamma * p.divergence +
         w.lambda * p.sparsity;
}

Json metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"l_task", m.loss.task},
          {"l_concept", m.loss.concept_bce},
          {"l_align", m.loss.align},
          {"l_div", m.loss.divergence},
          {"l_sparsity", m.loss.sparsity},
          {"l_total", m.total},
          {"train_acc", m.train_acc},
          {"acc", m.acc},
          {"concept_f1", m.concept_f1},
          {"active_weights", m.active_weights}};
}

PreparedSplit prepare_split(const FeatureBatch& batch, const std::vector<Part>& part_map) {
  PreparedSplit s;
  s.inputs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    s.inputs.push_back(
        prepare_sample(batch.sample(i), batch.frames, batch.joints, batch.channels, part_map));
  s.labels = batch.labels;
  s.true_concepts = batch.true_concepts;
  s.text_embeddings = batch.text_embeddings;
  return s;
}

namespace {

// Runs fn(begin, end, worker) over contiguous static chunks; worker 0 runs on
// the calling thread.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t b = std::min(n, t * chunk), e = std::min(n, b + chunk);
    pool.emplace_back([&fn, b, e, t] { fn(b, e, t); });
  }
  fn(0, std::min(n, chunk), 0);
  for (auto& th : pool) th.join();
}

void add_into(Model& dst, Model& src) {
  auto d = dst.tensors();
  auto s = src.tensors();
  for (std::size_t k = 0; k < d.size(); ++k)
    for (std::size_t i = 0; i < d[k].mat->v.size(); ++i) d[k].mat->v[i] += s[k].mat->v[i];
}

}  // namespace

double macro_f1(const std::vector<std::vector<std::uint8_t>>& truth,
                const std::vector<std::vector<std::uint8_t>>& pred) {
  if (truth.empty()) return 0.0;
  const std::size_t C = truth.front().size();
  double sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i][c], p = pred[i][c];
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    sum += tp + fp + fn == 0 ? 1.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  return sum / static_cast<double>(C);
}

Evaluation evaluate(const Model& m, const PreparedSplit& split, std::size_t threads) {
  const std::size_t n = split.inputs.size();
  Evaluation ev;
  ev.predictions.assign(n, 0);
  std::vector<std::vector<std::uint8_t>> c_bar(n);
  const CompiledLogic logic = compile_discrete(m.logic);
  parallel_chunks(n, threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      const SampleForward f = forward_sample(m, split.inputs[i], nullptr, &logic);
      ev.predictions[i] = f.predicted;
      c_bar[i] = f.c_bar;
    }
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += ev.predictions[i] == split.labels[i];
  ev.acc = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  ev.concept_f1 = macro_f1(split.true_concepts, c_bar);
  return ev;
}

TrainResult train(Model model, const PreparedSplit& train_split, const PreparedSplit& test_split,
                  const TrainConfig& cfg, const LossWeights& w, std::uint64_t seed,
                  const TrainHooks& hooks) {
  cfg.validate();
  const std::size_t n = train_split.inputs.size();
  if (n == 0) throw ValidationError("train: empty training split");
  for (std::size_t l : train_split.labels)
    if (l >= model.num_actions()) throw ValidationError("train: label out of range");

  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch_size));
  std::vector<Model> grads(workers, model);
  for (auto& g : grads) g.zero();

  auto params = model.tensors();
  auto grad_tensors = grads[0].tensors();
  std::vector<Mat*> base_p, logic_p, base_g, logic_g;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const bool logic = Model::is_logic_tensor(params[k].name);
    (logic ? logic_p : base_p).push_back(params[k].mat);
    (logic ? logic_g : base_g).push_back(grad_tensors[k].mat);
  }
  auto as_const = [](const std::vector<Mat*>& v) {
    return std::vector<const Mat*>(v.begin(), v.end());
  };
  AdamState base_state, logic_state;

  TrainResult res;
  Model last_good = model;
  std::vector<std::size_t> order(n);
  const bool use_dropout = model.config.decoder.dropout > 0.0;
  std::uint64_t sample_counter = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (hooks.before_epoch) hooks.before_epoch(epoch, model);
    const Schedule sched = warmup_schedule(epoch, cfg);
    const GradFlags flags{sched.logic_trainable, sched.task_to_decoder};

    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = make_rng(seed, "batch", epoch);
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[shuffle() % (i + 1)]);

    LossParts sum;
    std::size_t batches = 0, correct = 0;
    bool diverged = false;
    for (std::size_t start = 0; start < n && !diverged; start += cfg.batch_size) {
      const std::size_t B = std::min(cfg.batch_size, n - start);
      const double scale = 1.0 / static_cast<double>(B);
      for (auto& g : grads) g.zero();
      std::vector<SampleLosses> losses(B);
      const CompiledLogic logic = compile_discrete(model.logic);
      parallel_chunks(B, workers, [&](std::size_t b, std::size_t e, std::size_t t) {
        for (std::size_t k = b; k < e; ++k) {
          const std::size_t i = order[start + k];
          Rng drop = make_rng(seed, "dropout", sample_counter + k);
          losses[k] = accumulate_sample(model, train_split.inputs[i], train_split.labels[i],
                                        train_split.true_concepts[i], w, flags, scale, grads[t],
                                        use_dropout ? &drop : nullptr, &logic);
        }
      });
      sample_counter += B;
      for (std::size_t t = 1; t < workers; ++t) add_into(grads[0], grads[t]);

      LossParts parts;
      for (const auto& l : losses) {
        parts.task += l.task * scale;
        parts.concept_bce += l.concept_bce * scale;
        parts.divergence += l.divergence * scale;
        correct += l.correct;
      }
      if (w.beta != 0.0) {
        std::vector<const Mat*> globals(B);
        std::vector<std::size_t> labels(B);
        for (std::size_t k = 0; k < B; ++k) {
          globals[k] = &train_split.inputs[order[start + k]].global;
          labels[k] = train_split.labels[order[start + k]];
        }
        parts.align =
            accumulate_align(model, globals, labels, train_split.text_embeddings, w.beta, grads[0]);
      }
      parts.sparsity = l1_penalty(model.logic);
      if (sched.logic_trainable && w.lambda != 0.0) add_l1_grad(grads[0].logic, w.lambda);

      if (!std::isfinite(total_loss(parts, w))) {
        diverged = true;
        res.message = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }

      std::vector<Mat*> trainable = base_g;
      if (sched.logic_trainable) trainable.insert(trainable.end(), logic_g.begin(), logic_g.end());
      const double pre = clip_global_norm(trainable, cfg.clip_norm);
      const double post = hooks.after_step ? global_norm(trainable) : std::min(pre, cfg.clip_norm);
      try {
        adamw_step(base_p, as_const(base_g), base_state, cfg.base_lr * sched.lr_multiplier,
                   cfg.adam);
        if (sched.logic_trainable) {
          adamw_step(logic_p, as_const(logic_g), logic_state, cfg.logic_lr * sched.lr_multiplier,
                     cfg.adam);
          model.logic.clamp();
        }
      } catch (const DivergenceError& e) {
        diverged = true;
        res.message = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        break;
      }
      if (hooks.after_step) hooks.after_step(model, pre, post);

      sum.task += parts.task;
      sum.concept_bce += parts.concept_bce;
      sum.align += parts.align;
      sum.divergence += parts.divergence;
      sum.sparsity += parts.sparsity;
      ++batches;
    }
    if (diverged) {
      res.model = std::move(last_good);
      res.diverged = true;
      return res;
    }

    EpochMetrics em;
    em.epoch = epoch;
    const double nb = static_cast<double>(batches);
    em.loss = {sum.task / nb, sum.concept_bce / nb, sum.align / nb, sum.divergence / nb,
               sum.sparsity / nb};
    em.total = total_loss(em.loss, w);
    em.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    if (!test_split.inputs.empty()) {
      const Evaluation ev = evaluate(model, test_split, cfg.threads);
      em.acc = ev.acc;
      em.concept_f1 = ev.concept_f1;
    }
    em.active_weights = model.logic.count_active();
    res.history.push_back(em);
    if (hooks.after_epoch) hooks.after_epoch(em, model);
    last_good = model;
    res.last_good_epoch = epoch;
  }
  res.model = std::move(model);
  return res;
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little, "float blobs assume little-endian");

Json part_map_to_json(const std::vector<Part>& map) {
  Json j = Json::array();
  for (Part p : map) j.push_back(std::string(to_string(p)));
  return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, Model& m, const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  Json table = Json::array();
  std::vector<char> bytes;
  std::size_t offset = 0;
  for (const auto& t : m.tensors()) {
    table.push_back({{"name", t.name},
                     {"shape", {t.mat->rows, t.mat->cols}},
                     {"offset", offset},
                     {"count", t.mat->size()}});
    for (double x : t.mat->v) {
      const float f = static_cast<float>(x);
      char buf[sizeof f];
      std::memcpy(buf, &f, sizeof f);
      bytes.insert(bytes.end(), buf, buf + sizeof f);
    }
    offset += t.mat->size();
  }
  Json actions = Json::array();
  for (const auto& a : m.actions) actions.push_back(a);
  Json manifest = {{"schema_version", 1},
                   {"config", meta.config},
                   {"config_hash", json_hash(meta.config)},
                   {"seed", meta.seed},
                   {"epoch", meta.epoch},
                   {"rng_state", {{"seed", meta.seed}, {"next_epoch", meta.epoch + 1}}},
                   {"model", model_config_to_json(m.config)},
                   {"vocabulary", vocabulary_to_json(m.vocabulary)},
                   {"actions", actions},
                   {"part_map", part_map_to_json(m.part_map)},
                   {"data_file", "checkpoint.bin"},
                   {"tensors", table}};
  write_bytes_atomic(dir / "checkpoint.bin", bytes);
  write_json(dir / "checkpoint.json", manifest);
}

Model load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta) {
  const Json j = read_json(dir / "checkpoint.json");
  try {
    if (j.at("schema_version").get<int>() != 1)
      throw ValidationError("checkpoint.json: unsupported schema_version");
    std::vector<Part> part_map;
    for (const auto& p : j.at("part_map")) part_map.push_back(part_from_string(p.get<std::string>()));
    Model m = make_model(vocabulary_from_json(j.at("vocabulary")),
                         j.at("actions").get<std::vector<std::string>>(), part_map,
                         model_config_from_json(j.at("model")));
    std::ifstream in(dir / j.at("data_file").get<std::string>(), std::ios::binary);
    if (!in) throw ValidationError("checkpoint: cannot open tensor data");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto tensors = m.tensors();
    const auto& table = j.at("tensors");
    if (table.size() != tensors.size())
      throw ValidationError("checkpoint: tensor count " + std::to_string(table.size()) +
                            ", expected " + std::to_string(tensors.size()));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      const auto& e = table[k];
      Mat& t = *tensors[k].mat;
      if (e.at("name").get<std::string>() != tensors[k].name)
        throw ValidationError("checkpoint: tensor " + std::to_string(k) + " is '" +
                              e.at("name").get<std::string>() + "', expected '" +
                              tensors[k].name + "'");
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols)
        throw ValidationError("checkpoint: shape mismatch for " + tensors[k].name);
      const std::size_t off = e.at("offset").get<std::size_t>();
      if ((off + t.size()) * sizeof(float) > bytes.size())
        throw ValidationError("checkpoint: tensor data truncated at " + tensors[k].name);
      for (std::size_t i = 0; i < t.size(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + (off + i) * sizeof f, sizeof f);
        t.v[i] = f;
      }
    }
    if (meta) {
      meta->config = j.at("config");
      meta->seed = j.at("seed").get<std::uint64_t>();
      meta->epoch = j.at("epoch").get<std::size_t>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint.json: ") + e.what());
  }
}

}  // namespace ruleforge
