#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/decoder.hpp"
#include "ruleforge/rng.hpp"
#include "ruleforge/tensor.hpp"

namespace ruleforge {

inline constexpr double kBinarizeThreshold = 0.5;

struct LogicConfig {
  std::size_t layers = 2;
  std::size_t nodes = 128;  // conjunction nodes per layer (and as many disjunctions)
  bool skip = true;
  bool negation = true;
  double init_low = 0.4;
  double init_high = 0.6;
};

// One layer: continuous switchboards, n x m each, entries in [0, 1].
struct LogicLayer {
  Mat and_w;
  Mat or_w;
};

// Stacked conjunction/disjunction layers over the predicate vector p.
// Layer l reads [n^(l-1); p] with skip (n^(0) = p for the first layer) and
// emits n^(l) = [a; b]. The rule vector is [p; n^(1); ...; n^(L)] with skip,
// else n^(L).
class LogicNetwork {
 public:
  LogicNetwork() = default;
  LogicNetwork(std::size_t num_concepts, const LogicConfig& cfg);

  std::size_t num_concepts() const { return num_concepts_; }
  const LogicConfig& config() const { return cfg_; }
  std::size_t predicate_width() const { return cfg_.negation ? 2 * num_concepts_ : num_concepts_; }
  std::size_t input_width(std::size_t l) const;
  std::size_t output_width(std::size_t l) const { return 2 * layers[l].and_w.rows; }
  std::size_t rule_width() const;
  // Offset of layer l's outputs inside r (predicates occupy [0, P) with skip).
  std::size_t rule_offset(std::size_t l) const;

  void init_uniform(Rng& rng);
  void clamp();  // every entry into [0, 1]

  std::vector<NamedTensor> tensors();
  std::size_t count_active() const;  // entries > 0.5

  std::vector<LogicLayer> layers;

 private:
  std::size_t num_concepts_ = 0;
  LogicConfig cfg_;
};

// c_bar_i = 1 iff c_hat_i > 0.5 (strict). Backward is the identity (STE).
std::vector<std::uint8_t> binarize(std::span<const double> c_hat,
                                   double threshold = kBinarizeThreshold);
inline std::vector<double> binarize_backward(std::span<const double> d_cbar) {
  return {d_cbar.begin(), d_cbar.end()};
}

// p = [c; 1 - c] with negation, else p = c.
std::vector<double> augment_predicates(std::span<const std::uint8_t> c_bar, bool negation = true);

// W = 1[W_tilde > 0.5].
Mat binarize_weights(const Mat& w);

struct DiscreteResult {
  std::vector<std::uint8_t> rules;
  std::vector<std::vector<std::uint8_t>> layers;  // n^(l)
};

// Binary switchboards packed into 64-bit masks. Valid until W_tilde changes.
struct CompiledLogic {
  struct Layer {
    std::size_t nodes = 0, inputs = 0, words = 0;
    std::vector<std::uint64_t> and_mask, or_mask;  // nodes x words
  };
  std::vector<Layer> layers;
  std::size_t predicate_width = 0;
  bool skip = true;
};

CompiledLogic compile_discrete(const LogicNetwork& net);

DiscreteResult forward_discrete(std::span<const double> p, const CompiledLogic& net);
DiscreteResult forward_discrete(std::span<const double> p, const LogicNetwork& net);

// Continuous stream activations, kept for the grafted backward pass.
struct GraftTape {
  std::vector<double> predicates;
  std::vector<std::vector<double>> inputs;   // per layer input vector
  std::vector<std::vector<double>> outputs;  // per layer [a~; b~]
  std::vector<double> rules;                 // r~
};

GraftTape forward_soft(std::span<const double> p, const LogicNetwork& net);

// Back-propagates d loss / d r through the continuous stream recorded in
// `tape`. Accumulates d W_tilde into `grad` (same shapes as `net`) when given,
// and returns d loss / d p.
std::vector<double> backward_grafted(std::span<const double> d_rules, const GraftTape& tape,
                                     const LogicNetwork& net, LogicNetwork* grad);

// d c_bar_i = d p_i - d p_{i+|C|} (negated slot enters with sign -1).
std::vector<double> predicate_grad_to_concepts(std::span<const double> d_p,
                                               std::size_t num_concepts, bool negation);

double l1_penalty(const LogicNetwork& net);
void add_l1_grad(LogicNetwork& grad, double scale);

}  // namespace ruleforge
