#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ruleforge/json_io.hpp"
#include "ruleforge/model.hpp"
#include "ruleforge/world.hpp"

namespace ruleforge {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double base_lr = 1e-3;
  double logic_lr = 1e-2;
  std::size_t encoder_warmup_epochs = 5;
  std::size_t logic_frozen_epochs = 15;
  AdamHyper adam;
  double clip_norm = 1.0;
  std::size_t threads = 1;
  void validate() const;
};

// Moments for one group of tensors plus that group's step counter.
struct AdamState {
  std::vector<Mat> m, v;
  std::size_t step = 0;
};

// Decoupled weight decay first, then the bias-corrected Adam update.
// Throws DivergenceError on a non-finite gradient.
void adamw_step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads,
                AdamState& state, double lr, const AdamHyper& h);

// Scales grads in place so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(const std::vector<Mat*>& grads, double max_norm);
double global_norm(const std::vector<Mat*>& grads);

struct Schedule {
  bool encoder_trainable = true;
  bool logic_trainable = false;   // switchboards and classifier
  bool task_to_decoder = false;
  double lr_multiplier = 1.0;     // cosine decay, shared by both groups
};

Schedule warmup_schedule(std::size_t epoch, const TrainConfig& cfg);
double cosine_multiplier(std::size_t epoch, std::size_t epochs);

struct LossParts {
  double task = 0.0, concept_bce = 0.0, align = 0.0, divergence = 0.0, sparsity = 0.0;
};
double total_loss(const LossParts& p, const LossWeights& w);

struct EpochMetrics {
  std::size_t epoch = 0;
  LossParts loss;
  double total = 0.0;
  double train_acc = 0.0;
  double acc = 0.0;         // test split
  double concept_f1 = 0.0;  // test split, macro over concepts
  std::size_t active_weights = 0;
};

Json metrics_to_json(const EpochMetrics& m);

// Precomputed per-sample inputs for a split.
struct PreparedSplit {
  std::vector<SampleInput> inputs;
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::uint8_t>> true_concepts;
  Mat text_embeddings;
};

PreparedSplit prepare_split(const FeatureBatch& batch, const std::vector<Part>& part_map);

struct Evaluation {
  double acc = 0.0;
  double concept_f1 = 0.0;
  std::vector<std::size_t> predictions;
};

// Macro-F1 over concepts; a concept with no positives and no predictions scores 1.
double macro_f1(const std::vector<std::vector<std::uint8_t>>& truth,
                const std::vector<std::vector<std::uint8_t>>& pred);
Evaluation evaluate(const Model& m, const PreparedSplit& split, std::size_t threads = 1);

struct TrainHooks {
  std::function<void(std::size_t epoch, const Model&)> before_epoch;
  std::function<void(const EpochMetrics&, const Model&)> after_epoch;
  // Called after every optimizer step with the pre-clip and post-clip norms.
  std::function<void(const Model&, double pre_clip, double post_clip)> after_step;
};

struct TrainResult {
  Model model;       // final, or last good on divergence
  std::vector<EpochMetrics> history;
  bool diverged = false;
  std::string message;
  std::size_t last_good_epoch = 0;
};

TrainResult train(Model model, const PreparedSplit& train_split, const PreparedSplit& test_split,
                  const TrainConfig& cfg, const LossWeights& w, std::uint64_t seed,
                  const TrainHooks& hooks = {});

// ---- checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  Json config;  // resolved run config echo
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

// checkpoint.json manifest + checkpoint.bin little-endian float32 tensors.
void save_checkpoint(const std::filesystem::path& dir, Model& m, const CheckpointMeta& meta);
Model load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

// ---- finite differences ---------------------------------------------------------

// Registered components: decoder, logic, align, classifier, divergence, concept.
const std::vector<std::string>& gradcheck_components();
// Worst relative error of analytic vs central-difference gradients (h = 1e-5)
// at one seeded random point.
double finite_diff_check(const std::string& component, std::uint64_t point_seed);

}  // namespace ruleforge
