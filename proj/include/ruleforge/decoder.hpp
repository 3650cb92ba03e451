#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/rng.hpp"
#include "ruleforge/tensor.hpp"

namespace ruleforge {

struct NamedTensor {
  std::string name;
  Mat* mat;
};

// ---- decoupling -------------------------------------------------------------

struct Decoupled {
  Mat spatial;   // V x D, mean over frames
  Mat temporal;  // T x D, mean over joints
};

// F is T x V x D row-major.
Decoupled decouple(std::span<const double> features, std::size_t frames, std::size_t joints,
                   std::size_t channels);

// Mean over frames and the joints of each part: 6 x D (rows follow kBodyParts).
Mat pool_parts(std::span<const double> features, std::size_t frames, std::size_t joints,
               std::size_t channels, const std::vector<Part>& part_map);

// ---- building blocks ----------------------------------------------------------

struct LayerNormCache {
  Mat xhat;
  std::vector<double> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache& cache);
// Returns dx; accumulates into dgain/dbias.
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gain, Mat& dgain,
                        Mat& dbias);

double gelu(double x);
double gelu_grad(double x);

// Cross-attention block parameters for one branch.
struct BranchParams {
  Mat query;               // G x D
  Mat ln1_gain, ln1_bias;  // 1 x D
  Mat ffn_w1, ffn_b1;      // D x H, 1 x H
  Mat ffn_w2, ffn_b2;      // H x D, 1 x D
  Mat ln2_gain, ln2_bias;  // 1 x D
  Mat group_w;             // G x (D * g); W_k[:, j] lives at (k, d * g + j)

  std::vector<NamedTensor> tensors(const std::string& prefix);
};

struct BranchShape {
  std::size_t groups = 0;
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::size_t group_size = 0;  // g
  std::size_t concept_count = 0;
};

BranchShape make_branch_shape(std::size_t groups, std::size_t channels, std::size_t hidden,
                              std::size_t concept_count);
BranchParams make_branch(const BranchShape& s);                  // zero-filled
void init_branch(BranchParams& p, const BranchShape& s, Rng& rng);  // Gaussian / sqrt(fan_in)

struct AttentionCache {
  Mat input;                 // N x D
  std::vector<Mat> weights;  // per head, G x N softmax rows
  LayerNormCache ln1, ln2;
  Mat h1;                    // G x D after first LayerNorm
  Mat pre;                   // G x H pre-activation
  Mat hidden;                // G x H post-activation (after dropout)
  std::vector<double> mask;  // dropout scale per hidden unit, empty when off
  Mat out;                   // G x D refined queries
};

struct AttentionOptions {
  std::size_t heads = 1;
  double dropout = 0.0;
  Rng* rng = nullptr;  // dropout active only when rng != nullptr and dropout > 0
};

// softmax(Q X^T / sqrt(d_head)) X per head, residual + LayerNorm, two-layer
// GELU FFN with residual + LayerNorm.
Mat cross_attend(const Mat& query, const Mat& input, const BranchParams& p,
                 const AttentionOptions& opt, AttentionCache& cache);
// Returns dX; accumulates parameter gradients (including d query) into `grad`.
Mat cross_attend_backward(const Mat& d_out, const AttentionCache& cache, const BranchParams& p,
                          const AttentionOptions& opt, BranchParams& grad);

struct GroupIndex {
  std::size_t group;
  std::size_t slot;
};
inline GroupIndex group_index(std::size_t index, std::size_t group_size) {
  return {index / group_size, index % group_size};
}

// logits[i] = refined[i / g] . W_{i / g}[:, i % g] for i < concept_count.
std::vector<double> group_fc(const Mat& refined, const Mat& group_w, std::size_t group_size,
                             std::size_t concept_count);
// Returns d refined; accumulates d group_w.
Mat group_fc_backward(std::span<const double> d_logits, const Mat& refined, const Mat& group_w,
                      std::size_t group_size, Mat& d_group_w);

// ---- decoder ------------------------------------------------------------------

struct DecoderConfig {
  std::size_t spatial_groups = 8;
  std::size_t temporal_groups = 4;
  std::size_t hidden = 64;
  std::size_t heads = 1;
  double dropout = 0.0;
};

struct DecoderParams {
  BranchParams spatial, temporal;
  std::vector<NamedTensor> tensors();
};

struct DecoderLayout {
  BranchShape spatial, temporal;
  std::vector<std::size_t> spatial_ids;   // vocabulary ids fed by the spatial branch
  std::vector<std::size_t> sequence_ids;  // temporal + interaction ids
  std::size_t num_concepts = 0;
};

DecoderLayout make_decoder_layout(const ConceptVocabulary& vocab, std::size_t channels,
                                  const DecoderConfig& cfg);
DecoderParams make_decoder_params(const DecoderLayout& layout);
void init_decoder(DecoderParams& p, const DecoderLayout& layout, Rng& rng);

struct ConceptActivations {
  std::vector<double> soft;    // sigmoid(logits), vocabulary order
  std::vector<double> logits;
};

struct DecoderCache {
  AttentionCache spatial, temporal;
};

ConceptActivations predict_concepts(const Decoupled& x, const DecoderParams& p,
                                    const DecoderLayout& layout, const DecoderConfig& cfg,
                                    DecoderCache& cache, Rng* dropout_rng = nullptr);

// Backward from d logits (vocabulary order). Returns d inputs (spatial, temporal).
Decoupled predict_concepts_backward(std::span<const double> d_logits, const DecoderCache& cache,
                                    const DecoderParams& p, const DecoderLayout& layout,
                                    const DecoderConfig& cfg, DecoderParams& grad);

// ---- losses -------------------------------------------------------------------

inline constexpr double kBceEps = 1e-7;

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d input
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Mean BCE over concepts, probabilities clamped to [eps, 1-eps]; grad w.r.t. c_hat.
LossGrad concept_loss(std::span<const double> c_hat, std::span<const std::uint8_t> target);

// Mean over ordered part pairs of ReLU(cos). Zero-norm rows count as cosine 0.
// grad is w.r.t. the flattened P x D input.
LossGrad part_divergence_loss(const Mat& part_features);

}  // namespace ruleforge
