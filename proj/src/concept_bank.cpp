#include "ruleforge/concept_bank.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "ruleforge/errors.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

namespace {

constexpr std::array<std::string_view, 3> kCategoryNames = {"spatial", "temporal",
                                                            "interaction"};
constexpr std::array<std::string_view, 7> kPartNames = {"head", "hand", "arm", "hip",
                                                        "leg",  "foot", "none"};

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::string_view to_string(Category c) { return kCategoryNames[static_cast<int>(c)]; }
std::string_view to_string(Part p) { return kPartNames[static_cast<int>(p)]; }

Category category_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
    if (kCategoryNames[i] == s) return static_cast<Category>(i);
  throw ValidationError("unknown concept category '" + std::string(s) + "'");
}

Part part_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPartNames.size(); ++i)
    if (kPartNames[i] == s) return static_cast<Part>(i);
  throw ValidationError("unknown body part '" + std::string(s) + "'");
}

// ---- vocabulary -----------------------------------------------------------

ConceptVocabulary::ConceptVocabulary(std::vector<Concept> concepts)
    : concepts_(std::move(concepts)) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    const auto& c = concepts_[i];
    const std::string at = "concepts[" + std::to_string(i) + "]";
    if (c.id != i) throw ValidationError(at + ".id: expected " + std::to_string(i));
    if (c.name.empty()) throw ValidationError(at + ".name: empty");
    if (!seen.insert(c.name).second)
      throw ValidationError(at + ".name: duplicate concept name '" + c.name + "'");
    if (c.category == Category::Spatial && c.part == Part::None)
      throw ValidationError(at + ".part: spatial concept '" + c.name + "' needs a body part");
    if (c.category != Category::Spatial && c.part != Part::None)
      throw ValidationError(at + ".part: non-spatial concept '" + c.name +
                            "' must have part none");
  }
}

std::size_t ConceptVocabulary::count(Category cat) const {
  return static_cast<std::size_t>(std::count_if(
      concepts_.begin(), concepts_.end(), [cat](const Concept& c) { return c.category == cat; }));
}

std::optional<std::size_t> ConceptVocabulary::find(std::string_view name) const {
  for (const auto& c : concepts_)
    if (c.name == name) return c.id;
  return std::nullopt;
}

std::size_t ConceptVocabulary::index_of(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ValidationError("unknown concept '" + std::string(name) + "'");
  return *i;
}

std::vector<std::size_t> ConceptVocabulary::spatial_ids() const {
  std::vector<std::size_t> out;
  for (const auto& c : concepts_)
    if (c.category == Category::Spatial) out.push_back(c.id);
  return out;
}

std::vector<std::size_t> ConceptVocabulary::sequence_ids() const {
  std::vector<std::size_t> out;
  for (const auto& c : concepts_)
    if (c.category == Category::Temporal) out.push_back(c.id);
  for (const auto& c : concepts_)
    if (c.category == Category::Interaction) out.push_back(c.id);
  return out;
}

// ---- association matrix ---------------------------------------------------

std::size_t AssociationMatrix::row_weight(std::size_t a) const {
  return static_cast<std::size_t>(std::count(rows[a].begin(), rows[a].end(), 1));
}

void AssociationMatrix::validate() const {
  if (rows.size() != actions.size())
    throw ValidationError("matrix: " + std::to_string(rows.size()) + " rows for " +
                          std::to_string(actions.size()) + " actions");
  std::set<std::string> names(actions.begin(), actions.end());
  if (names.size() != actions.size()) throw ValidationError("matrix: duplicate action name");
  for (std::size_t a = 0; a < rows.size(); ++a) {
    const std::string at = "rows[" + std::to_string(a) + "]";
    if (rows[a].size() != concepts.size())
      throw ValidationError(at + ": expected " + std::to_string(concepts.size()) + " entries");
    for (auto x : rows[a])
      if (x > 1) throw ValidationError(at + ": entries must be 0 or 1");
    if (row_weight(a) == 0)
      throw ValidationError(at + ": action '" + actions[a] + "' has no active concept");
  }
}

AssociationMatrix build_association_matrix(const ConceptVocabulary& vocab,
                                           const std::vector<std::string>& actions,
                                           const std::vector<ConceptRecord>& records) {
  AssociationMatrix m;
  m.actions = actions;
  for (const auto& c : vocab.concepts()) m.concepts.push_back(c.name);
  m.rows.assign(actions.size(), std::vector<std::uint8_t>(vocab.size(), 0));
  for (const auto& r : records) {
    auto it = std::find(actions.begin(), actions.end(), r.action);
    if (it == actions.end()) throw ValidationError("unknown action '" + r.action + "'");
    const auto a = static_cast<std::size_t>(it - actions.begin());
    for (const auto& name : r.concepts) m.rows[a][vocab.index_of(name)] = 1;
  }
  m.validate();
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> check_signature_uniqueness(
    const AssociationMatrix& m) {
  std::vector<std::pair<std::size_t, std::size_t>> dups;
  for (std::size_t i = 0; i < m.rows.size(); ++i)
    for (std::size_t j = i + 1; j < m.rows.size(); ++j)
      if (m.rows[i] == m.rows[j]) dups.emplace_back(i, j);
  return dups;
}

void require_unique_signatures(const AssociationMatrix& m) {
  auto dups = check_signature_uniqueness(m);
  if (dups.empty()) return;
  std::string msg = "duplicate concept signatures:";
  for (auto [i, j] : dups) msg += " (" + m.actions[i] + ", " + m.actions[j] + ")";
  throw ValidationError(msg);
}

// ---- clustering -----------------------------------------------------------

void EmbeddingSet::validate() const {
  if (vectors.empty()) throw ValidationError("embedding set is empty");
  if (!labels.empty() && labels.size() != vectors.size())
    throw ValidationError("embedding set: label count differs from vector count");
  const std::size_t d = vectors.front().size();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != d)
      throw ValidationError("embedding " + std::to_string(i) + ": dimension mismatch");
    for (double x : vectors[i])
      if (!std::isfinite(x))
        throw ValidationError("embedding " + std::to_string(i) + ": non-finite entry");
  }
}

KMeansResult kmeans_cluster(const EmbeddingSet& e, std::size_t k, std::uint64_t seed) {
  e.validate();
  const std::size_t n = e.size();
  if (k == 0) throw ValidationError("kmeans: k must be >= 1");
  if (k > n)
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(n) +
                          " points");
  const auto& x = e.vectors;

  // Farthest-point seeding.
  auto rng = make_rng(seed, "kmeans");
  std::vector<std::vector<double>> centroids;
  centroids.push_back(x[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(x[i], centroids.back()));
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    centroids.push_back(x[best]);
  }

  KMeansResult res;
  res.assignments.assign(n, k);  // sentinel: nothing assigned yet
  constexpr std::size_t kMaxIter = 300;
  for (std::size_t iter = 0; iter < kMaxIter; ++iter) {
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq_dist(x[i], centroids[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      const std::size_t cur = res.assignments[i];
      if (cur < k && sq_dist(x[i], centroids[cur]) == best) arg = cur;  // keep on ties
      sse += best;
      if (res.assignments[i] != arg) {
        res.assignments[i] = arg;
        changed = true;
      }
    }
    res.sse_trace.push_back(sse);
    res.iterations = iter + 1;
    if (!changed) break;

    // Update step.
    std::vector<std::size_t> counts(k, 0);
    for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& c = centroids[res.assignments[i]];
      for (std::size_t d = 0; d < c.size(); ++d) c[d] += x[i][d];
      ++counts[res.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : centroids[c]) v /= static_cast<double>(counts[c]);
    }
    // Empty cluster repair: move it onto the point farthest from its centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] <= 1) continue;
        const double d = sq_dist(x[i], centroids[res.assignments[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --counts[res.assignments[far]];
      res.assignments[far] = c;
      counts[c] = 1;
      centroids[c] = x[far];
    }
  }

  // Final centroids are exact means of their members.
  std::vector<std::size_t> counts(k, 0);
  for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < x[i].size(); ++d) centroids[res.assignments[i]][d] += x[i][d];
    ++counts[res.assignments[i]];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (auto& v : centroids[c]) v /= static_cast<double>(std::max<std::size_t>(counts[c], 1));
  res.sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) res.sse += sq_dist(x[i], centroids[res.assignments[i]]);
  res.centroids = std::move(centroids);

  res.representatives.assign(k, "");
  if (!e.labels.empty()) {
    std::vector<std::map<std::string, std::size_t>> freq(k);
    for (std::size_t i = 0; i < n; ++i) ++freq[res.assignments[i]][e.labels[i]];
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t best = 0;
      for (const auto& [label, count] : freq[c])  // map order: ties go to the smaller label
        if (count > best) {
          best = count;
          res.representatives[c] = label;
        }
    }
  }
  return res;
}

ElbowResult elbow_select_k(const EmbeddingSet& e, std::size_t k_max, std::uint64_t seed) {
  if (k_max < 3) throw ValidationError("elbow: k_max must be >= 3");
  if (k_max > e.size()) throw ValidationError("elbow: k_max exceeds number of points");
  ElbowResult res;
  for (std::size_t k = 1; k <= k_max; ++k) res.sse.push_back(kmeans_cluster(e, k, seed).sse);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k <= k_max - 1; ++k) {
    const double curvature = res.sse[k - 2] - 2.0 * res.sse[k - 1] + res.sse[k];
    if (curvature > best) {
      best = curvature;
      res.k_star = k;
    }
  }
  return res;
}

// ---- serialization --------------------------------------------------------

Json vocabulary_to_json(const ConceptVocabulary& v) {
  Json concepts = Json::array();
  for (const auto& c : v.concepts())
    concepts.push_back({{"id", c.id},
                        {"name", c.name},
                        {"category", std::string(to_string(c.category))},
                        {"part", std::string(to_string(c.part))}});
  return {{"schema_version", 1}, {"concepts", concepts}};
}

namespace {

void require_schema_v1(const Json& j, const std::string& what) {
  if (!j.is_object()) throw ValidationError(what + ": expected a JSON object");
  if (!j.contains("schema_version") || j["schema_version"] != 1)
    throw ValidationError(what + ".schema_version: expected 1");
}

template <class T>
T field(const Json& j, const char* key, const std::string& at) {
  if (!j.contains(key)) throw ValidationError(at + "." + key + ": missing");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(at + "." + key + ": wrong type");
  }
}

}  // namespace

ConceptVocabulary vocabulary_from_json(const Json& j) {
  require_schema_v1(j, "vocabulary");
  reject_unknown_keys(j, {"schema_version", "concepts"}, "vocabulary");
  if (!j.contains("concepts") || !j["concepts"].is_array())
    throw ValidationError("vocabulary.concepts: expected array");
  std::vector<Concept> cs;
  for (std::size_t i = 0; i < j["concepts"].size(); ++i) {
    const auto& e = j["concepts"][i];
    const std::string at = "vocabulary.concepts[" + std::to_string(i) + "]";
    reject_unknown_keys(e, {"id", "name", "category", "part"}, at);
    Concept c;
    c.id = field<std::size_t>(e, "id", at);
    c.name = field<std::string>(e, "name", at);
    c.category = category_from_string(field<std::string>(e, "category", at));
    c.part = part_from_string(field<std::string>(e, "part", at));
    cs.push_back(std::move(c));
  }
  return ConceptVocabulary(std::move(cs));
}

ConceptVocabulary load_vocabulary(const std::filesystem::path& path) {
  return vocabulary_from_json(read_json(path));
}

void save_vocabulary(const std::filesystem::path& path, const ConceptVocabulary& v) {
  write_json(path, vocabulary_to_json(v));
}

Json matrix_to_json(const AssociationMatrix& m) {
  Json rows = Json::array();
  for (const auto& r : m.rows) {
    Json row = Json::array();
    for (auto x : r) row.push_back(static_cast<int>(x));
    rows.push_back(row);
  }
  return {{"schema_version", 1}, {"actions", m.actions}, {"concepts", m.concepts}, {"rows", rows}};
}

AssociationMatrix matrix_from_json(const Json& j) {
  require_schema_v1(j, "matrix");
  reject_unknown_keys(j, {"schema_version", "actions", "concepts", "rows"}, "matrix");
  AssociationMatrix m;
  m.actions = field<std::vector<std::string>>(j, "actions", "matrix");
  m.concepts = field<std::vector<std::string>>(j, "concepts", "matrix");
  const auto rows = field<std::vector<std::vector<int>>>(j, "rows", "matrix");
  for (const auto& r : rows) {
    std::vector<std::uint8_t> row;
    for (int x : r) {
      if (x != 0 && x != 1) throw ValidationError("matrix.rows: entries must be 0 or 1");
      row.push_back(static_cast<std::uint8_t>(x));
    }
    m.rows.push_back(std::move(row));
  }
  m.validate();
  return m;
}

AssociationMatrix load_matrix(const std::filesystem::path& path) {
  return matrix_from_json(read_json(path));
}

void save_matrix(const std::filesystem::path& path, const AssociationMatrix& m) {
  write_json(path, matrix_to_json(m));
}

RecordFile records_from_json(const Json& j) {
  require_schema_v1(j, "records");
  reject_unknown_keys(j, {"schema_version", "actions", "records"}, "records");
  RecordFile f;
  f.actions = field<std::vector<std::string>>(j, "actions", "records");
  if (!j.contains("records") || !j["records"].is_array())
    throw ValidationError("records.records: expected array");
  for (std::size_t i = 0; i < j["records"].size(); ++i) {
    const auto& e = j["records"][i];
    const std::string at = "records.records[" + std::to_string(i) + "]";
    reject_unknown_keys(e, {"action", "concepts"}, at);
    f.records.push_back({field<std::string>(e, "action", at),
                         field<std::vector<std::string>>(e, "concepts", at)});
  }
  return f;
}

PatternFile patterns_from_json(const Json& j) {
  require_schema_v1(j, "patterns");
  reject_unknown_keys(j, {"schema_version", "parts"}, "patterns");
  PatternFile f;
  if (!j.contains("parts") || !j["parts"].is_array())
    throw ValidationError("patterns.parts: expected array");
  for (std::size_t i = 0; i < j["parts"].size(); ++i) {
    const auto& e = j["parts"][i];
    const std::string at = "patterns.parts[" + std::to_string(i) + "]";
    reject_unknown_keys(e, {"part", "patterns"}, at);
    EmbeddingSet set;
    for (const auto& p : e.at("patterns")) {
      set.labels.push_back(field<std::string>(p, "label", at + ".patterns"));
      set.vectors.push_back(field<std::vector<double>>(p, "vector", at + ".patterns"));
    }
    set.validate();
    f.parts.emplace_back(part_from_string(field<std::string>(e, "part", at)), std::move(set));
  }
  return f;
}

}  // namespace ruleforge
