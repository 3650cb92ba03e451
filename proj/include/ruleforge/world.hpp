#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/tensor.hpp"

namespace ruleforge {

struct WorldConfig {
  std::size_t frames = 16;    // T
  std::size_t joints = 20;    // V
  std::size_t channels = 32;  // D
  std::size_t text_dim = 32;
  double noise_std = 0.1;
  double flip_prob = 0.05;
  std::vector<Part> part_map;  // joint -> part; empty means default_part_map(joints)
  ConceptVocabulary vocabulary;
  AssociationMatrix matrix;

  std::size_t num_actions() const { return matrix.num_actions(); }
  std::size_t num_concepts() const { return vocabulary.size(); }
  void validate() const;
};

// Proportional split of V joints over the six parts (2:4:4:2:4:4). Needs V >= 6.
std::vector<Part> default_part_map(std::size_t joints);

// Planted generative model. Spatial concept c adds unit vector spatial_basis[c]
// to every frame of every joint of its part. Temporal and interaction concepts
// add a zero-time-mean signal sequence_signal[c] (T x D) to every joint.
struct World {
  WorldConfig config;
  std::vector<Part> part_map;
  Mat spatial_basis;                  // |C| x D, zero rows for non-spatial concepts
  std::vector<Mat> sequence_signal;   // |C| entries, T x D, empty for spatial concepts
  Mat text_embeddings;                // |A| x text_dim, unit rows
};

World generate_world(const WorldConfig& config, std::uint64_t seed);

struct FeatureBatch {
  std::size_t frames = 0, joints = 0, channels = 0;
  std::vector<double> features;  // batch x T x V x D, row-major
  std::vector<std::size_t> labels;
  std::vector<std::vector<std::uint8_t>> true_concepts;
  Mat text_embeddings;  // per action

  std::size_t size() const { return labels.size(); }
  std::size_t sample_stride() const { return frames * joints * channels; }
  std::span<const double> sample(std::size_t i) const {
    return {features.data() + i * sample_stride(), sample_stride()};
  }
  double at(std::size_t i, std::size_t t, std::size_t v, std::size_t d) const {
    return features[((i * frames + t) * joints + v) * channels + d];
  }
};

FeatureBatch sample_batch(const World& world, std::size_t n, std::uint64_t seed);

// Noiseless feature tensor (T x V x D flattened) for a given concept vector.
std::vector<double> synthesize(const World& world, const std::vector<std::uint8_t>& concepts);

// Dataset directory: world.json, vocabulary.json, matrix.json, and per split
// <split>.json header + <split>.bin little-endian float32 features.
void save_split(const std::filesystem::path& dir, const std::string& split,
                const FeatureBatch& batch);
FeatureBatch load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace ruleforge
