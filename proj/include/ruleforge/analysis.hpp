#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ruleforge/json_io.hpp"
#include "ruleforge/model.hpp"
#include "ruleforge/trainer.hpp"

namespace ruleforge {

// Concept ids by |c_hat_i - c*_i| descending; ties go to the smaller id.
std::vector<std::size_t> intervention_order(std::span<const double> c_hat,
                                            std::span<const std::uint8_t> c_star);

// Replaces the m worst-predicted activations with their ground truth.
std::vector<double> intervene(std::span<const double> c_hat, std::span<const std::uint8_t> c_star,
                              std::size_t m);

enum class InterventionMode { All, Misclassified };
InterventionMode intervention_mode_from_string(const std::string& s);
std::string to_string(InterventionMode m);

struct InterventionLog {
  std::size_t sample = 0;
  std::size_t label = 0;
  std::vector<std::size_t> corrected;    // concept ids in correction order (first max_level)
  std::vector<std::size_t> predictions;  // per level 0..max_level
};

struct InterventionResult {
  InterventionMode mode = InterventionMode::All;
  std::vector<double> accuracy;  // per level 0..max_level, over every sample
  std::vector<InterventionLog> logs;
};

// Ground truth c* per sample. Levels run 0..max_level (clamped to |C|). In
// Misclassified mode only samples wrong at level 0 are corrected.
InterventionResult intervention_curve(const Model& m, const PreparedSplit& split,
                                      const std::vector<std::vector<std::uint8_t>>& c_star,
                                      std::size_t max_level, InterventionMode mode,
                                      std::size_t threads = 1);

Json intervention_to_json(const InterventionResult& r, const ConceptVocabulary& vocab);

inline constexpr double kCovEps = 1e-6;

struct ColumnStats {
  double mean = 0.0;
  std::optional<double> cov;  // population std / mean; empty when mean <= kCovEps
};

ColumnStats column_stats(std::span<const double> values);

struct ConceptStats {
  std::vector<double> mean;                // mean of binarized activation per concept
  std::vector<std::optional<double>> cov;  // CoV of soft activation per concept
  double mean_active = 0.0;                // active concepts per sample
  struct Group {
    std::string name;
    std::size_t samples = 0;
    double mean_active = 0.0;
  };
  std::vector<Group> per_action;  // grouped by true label
};

ConceptStats concept_stats(const Model& m, const PreparedSplit& split, std::size_t threads = 1);
Json concept_stats_to_json(const ConceptStats& s, const ConceptVocabulary& vocab);

}  // namespace ruleforge
