#include "ruleforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "ruleforge/errors.hpp"

namespace ruleforge {

std::vector<std::size_t> intervention_order(std::span<const double> c_hat,
                                            std::span<const std::uint8_t> c_star) {
  if (c_hat.size() != c_star.size()) throw ValidationError("intervene: length mismatch");
  std::vector<std::size_t> order(c_hat.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(c_hat[a] - c_star[a]) > std::abs(c_hat[b] - c_star[b]);
  });
  return order;
}

std::vector<double> intervene(std::span<const double> c_hat, std::span<const std::uint8_t> c_star,
                              std::size_t m) {
  if (m > c_hat.size()) throw ValidationError("intervene: m exceeds concept count");
  std::vector<double> out(c_hat.begin(), c_hat.end());
  const auto order = intervention_order(c_hat, c_star);
  for (std::size_t k = 0; k < m; ++k) out[order[k]] = c_star[order[k]];
  return out;
}

InterventionMode intervention_mode_from_string(const std::string& s) {
  if (s == "all") return InterventionMode::All;
  if (s == "misclassified") return InterventionMode::Misclassified;
  throw ValidationError("unknown intervention mode '" + s + "' (all|misclassified)");
}

std::string to_string(InterventionMode m) {
  return m == InterventionMode::All ? "all" : "misclassified";
}

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

InterventionResult intervention_curve(const Model& m, const PreparedSplit& split,
                                      const std::vector<std::vector<std::uint8_t>>& c_star,
                                      std::size_t max_level, InterventionMode mode,
                                      std::size_t threads) {
  const std::size_t n = split.inputs.size();
  if (c_star.size() != n) throw ValidationError("intervene: one ground-truth vector per sample");
  max_level = std::min(max_level, m.num_concepts());
  const CompiledLogic logic = compile_discrete(m.logic);
  InterventionResult res;
  res.mode = mode;
  res.logs.resize(n);
  auto run = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const SampleForward f = forward_sample(m, split.inputs[i], nullptr, &logic);
      auto& log = res.logs[i];
      log.sample = i;
      log.label = split.labels[i];
      const auto order = intervention_order(f.concepts.soft, c_star[i]);
      log.corrected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(max_level));
      log.predictions.push_back(f.predicted);
      const bool correct_it = mode == InterventionMode::All || f.predicted != log.label;
      for (std::size_t level = 1; level <= max_level; ++level) {
        if (!correct_it) {
          log.predictions.push_back(f.predicted);
          continue;
        }
        const auto fixed = intervene(f.concepts.soft, c_star[i], level);
        log.predictions.push_back(argmax(logits_from_concepts(m, fixed, nullptr, &logic)));
      }
    }
  };
  // Samples are independent; chunks write disjoint log slots.
  if (threads <= 1 || n < 2) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t t = std::min(threads, n), chunk = (n + t - 1) / t;
    for (std::size_t k = 1; k < t; ++k)
      pool.emplace_back(run, std::min(n, k * chunk), std::min(n, (k + 1) * chunk));
    run(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
  }
  res.accuracy.assign(max_level + 1, 0.0);
  for (const auto& log : res.logs)
    for (std::size_t level = 0; level <= max_level; ++level)
      res.accuracy[level] += log.predictions[level] == log.label;
  for (auto& a : res.accuracy) a = n ? a / static_cast<double>(n) : 0.0;
  return res;
}

Json intervention_to_json(const InterventionResult& r, const ConceptVocabulary& vocab) {
  Json levels = Json::array();
  for (std::size_t m = 0; m < r.accuracy.size(); ++m)
    levels.push_back({{"level", m}, {"accuracy", r.accuracy[m]}});
  Json logs = Json::array();
  for (const auto& l : r.logs) {
    Json corrected = Json::array();
    for (auto c : l.corrected) corrected.push_back(vocab[c].name);
    logs.push_back({{"sample", l.sample},
                    {"label", l.label},
                    {"corrected", corrected},
                    {"predictions", l.predictions}});
  }
  return {{"mode", to_string(r.mode)}, {"levels", levels}, {"samples", logs}};
}

ColumnStats column_stats(std::span<const double> values) {
  ColumnStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  if (s.mean > kCovEps) {
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.cov = std::sqrt(var / n) / s.mean;
  }
  return s;
}

ConceptStats concept_stats(const Model& m, const PreparedSplit& split, std::size_t threads) {
  const std::size_t n = split.inputs.size(), C = m.num_concepts();
  if (n == 0) throw ValidationError("stats: empty dataset");
  std::vector<std::vector<double>> soft(C, std::vector<double>(n)), hard(C, std::vector<double>(n));
  const CompiledLogic logic = compile_discrete(m.logic);
  std::vector<std::size_t> active(n, 0);
  auto run = [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const SampleForward f = forward_sample(m, split.inputs[i], nullptr, &logic);
      for (std::size_t c = 0; c < C; ++c) {
        soft[c][i] = f.concepts.soft[c];
        hard[c][i] = f.c_bar[c];
        active[i] += f.c_bar[c];
      }
    }
  };
  if (threads <= 1) {
    run(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t t = std::min(threads, n), chunk = (n + t - 1) / t;
    for (std::size_t k = 1; k < t; ++k)
      pool.emplace_back(run, std::min(n, k * chunk), std::min(n, (k + 1) * chunk));
    run(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
  }
  ConceptStats s;
  for (std::size_t c = 0; c < C; ++c) {
    s.mean.push_back(column_stats(hard[c]).mean);
    s.cov.push_back(column_stats(soft[c]).cov);
  }
  for (auto a : active) s.mean_active += static_cast<double>(a);
  s.mean_active /= static_cast<double>(n);
  s.per_action.resize(m.num_actions());
  for (std::size_t a = 0; a < m.num_actions(); ++a) s.per_action[a].name = m.actions[a];
  for (std::size_t i = 0; i < n; ++i) {
    auto& g = s.per_action.at(split.labels[i]);
    ++g.samples;
    g.mean_active += static_cast<double>(active[i]);
  }
  for (auto& g : s.per_action)
    if (g.samples) g.mean_active /= static_cast<double>(g.samples);
  return s;
}

Json concept_stats_to_json(const ConceptStats& s, const ConceptVocabulary& vocab) {
  Json concepts = Json::array();
  for (std::size_t c = 0; c < s.mean.size(); ++c) {
    concepts.push_back({{"id", c},
                        {"name", vocab[c].name},
                        {"mean", s.mean[c]},
                        {"cov", s.cov[c] ? Json(*s.cov[c]) : Json(nullptr)}});
  }
  Json groups = Json::array();
  for (const auto& g : s.per_action)
    groups.push_back({{"action", g.name}, {"samples", g.samples}, {"mean_active", g.mean_active}});
  return {{"mean_active", s.mean_active}, {"concepts", concepts}, {"per_action", groups}};
}

}  // namespace ruleforge
