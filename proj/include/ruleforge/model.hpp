#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/decoder.hpp"
#include "ruleforge/json_io.hpp"
#include "ruleforge/logic.hpp"
#include "ruleforge/rng.hpp"
#include "ruleforge/rule_head.hpp"

namespace ruleforge {

struct ModelConfig {
  std::size_t channels = 32;
  std::size_t text_dim = 32;
  std::size_t align_dim = 64;
  double tau_init = 0.07;
  DecoderConfig decoder;
  LogicConfig logic;
};

Json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

// Per-sample views of F that every consumer needs. All are linear in F, so
// the channel adapter can be applied after pooling.
struct SampleInput {
  Decoupled x;  // V x D, T x D
  Mat parts;    // 6 x D
  Mat global;   // 1 x D
};

SampleInput prepare_sample(std::span<const double> features, std::size_t frames,
                           std::size_t joints, std::size_t channels,
                           const std::vector<Part>& part_map);

struct Model {
  ModelConfig config;
  ConceptVocabulary vocabulary;
  std::vector<std::string> actions;
  std::vector<Part> part_map;
  DecoderLayout layout;

  // Channel adapter F' = F A + a: the trainable stand-in for the encoder.
  Mat adapter_w, adapter_b;
  DecoderParams decoder;
  Mat skel_w, skel_b;  // h_skel: D -> K
  Mat text_w, text_b;  // h_text: E -> K
  Mat log_tau;         // 1 x 1, tau = exp(log_tau)
  LogicNetwork logic;
  Classifier classifier;

  std::size_t num_concepts() const { return vocabulary.size(); }
  std::size_t num_actions() const { return actions.size(); }

  // Every parameter tensor in a fixed order.
  std::vector<NamedTensor> tensors();
  // True for the tensors stepped with the logic learning rate.
  static bool is_logic_tensor(const std::string& name);
  void zero();
};

// Zero-filled model with shapes fixed by the vocabulary and config.
Model make_model(const ConceptVocabulary& vocab, const std::vector<std::string>& actions,
                 const std::vector<Part>& part_map, const ModelConfig& cfg);
// Seeded init: identity adapter, Gaussian decoder and projections, uniform
// switchboards, zero classifier, log_tau = log(tau_init).
void init_model(Model& m, std::uint64_t seed);

Mat apply_adapter(const Mat& x, const Model& m);

struct SampleForward {
  SampleInput adapted;
  DecoderCache cache;
  ConceptActivations concepts;
  std::vector<std::uint8_t> c_bar;
  std::vector<double> predicates;
  std::vector<double> rules;  // discrete r as 0/1
  std::vector<double> logits;
  std::size_t predicted = 0;
};

// `logic` may carry precompiled switchboards of m.logic to skip recompiling.
SampleForward forward_sample(const Model& m, const SampleInput& in, Rng* dropout_rng = nullptr,
                             const CompiledLogic* logic = nullptr);

// Logic + classifier only, starting from (possibly corrected) soft concepts.
std::vector<double> logits_from_concepts(const Model& m, std::span<const double> c_hat,
                                         std::vector<double>* rules_out = nullptr,
                                         const CompiledLogic* logic = nullptr);

struct LossWeights {
  double alpha = 1.0;   // concept
  double beta = 0.1;    // alignment
  double gamma = 1.0;   // part divergence
  double lambda = 1e-6; // switchboard L1
};

struct GradFlags {
  bool logic = true;            // accumulate switchboard and classifier gradients
  bool task_to_decoder = true;  // let the task loss reach the decoder through the STE
};

struct SampleLosses {
  double task = 0.0, concept_bce = 0.0, divergence = 0.0;
  bool correct = false;
};

// Forward + backward for one sample. Gradients of
// scale * (task + alpha * concept + gamma * divergence) are added to `grad`.
SampleLosses accumulate_sample(const Model& m, const SampleInput& in, std::size_t label,
                               std::span<const std::uint8_t> true_concepts,
                               const LossWeights& w, const GradFlags& flags, double scale,
                               Model& grad, Rng* dropout_rng = nullptr,
                               const CompiledLogic* logic = nullptr);

// ---- alignment ------------------------------------------------------------------

struct AlignGrad {
  double loss = 0.0;
  Mat dz, dt;
  double d_log_tau = 0.0;
};

// -(1/B) sum_i log softmax_j(z_i . t_j / tau)[i], tau = exp(log_tau).
AlignGrad align_loss(const Mat& z, const Mat& t, double log_tau);

// Batch alignment through the adapter and both projections. Adds
// scale * gradient into `grad` and returns the loss.
double accumulate_align(const Model& m, const std::vector<const Mat*>& globals,
                        const std::vector<std::size_t>& labels, const Mat& text_embeddings,
                        double scale, Model& grad);

}  // namespace ruleforge
