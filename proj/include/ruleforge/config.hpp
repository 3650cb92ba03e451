#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ruleforge/analysis.hpp"
#include "ruleforge/json_io.hpp"
#include "ruleforge/model.hpp"
#include "ruleforge/trainer.hpp"
#include "ruleforge/world.hpp"

namespace ruleforge {

struct WorldSpec {
  std::string vocabulary = "planted";  // planted | ntu74 | desk67
  std::string matrix = "planted";      // planted | records (ntu74 only)
  std::size_t num_concepts = 20;       // planted vocabulary size
  std::size_t num_actions = 10;        // planted matrix rows
  double density = 0.3;
  std::size_t min_distance = 3;
  std::size_t frames = 16, joints = 20, channels = 32, text_dim = 32;
  double noise_std = 0.1;
  double flip_prob = 0.05;
  std::size_t train_size = 2000;
  std::size_t test_size = 500;
};

struct AnalysisSpec {
  std::size_t intervention_levels = 3;
  std::string intervention_mode = "all";
  std::string intervention_target = "signature";  // signature (M row) | sample (true_concepts)
  std::size_t top_k = 5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  WorldSpec world;
  ModelConfig model;  // channels / text_dim follow the world
  TrainConfig train;
  LossWeights loss;
  AnalysisSpec analysis;

  void validate() const;
};

// Missing keys keep their defaults; unknown keys are rejected with their path.
RunConfig run_config_from_json(const Json& j);
Json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Vocabulary, matrix and world config described by the run config.
WorldConfig build_world_config(const RunConfig& c, std::uint64_t seed);

// World plus train/test splits, every draw taken from named streams of c.seed.
struct Dataset {
  WorldConfig config;
  World world;
  FeatureBatch train, test;
};
Dataset generate_dataset(const RunConfig& c);

}  // namespace ruleforge
