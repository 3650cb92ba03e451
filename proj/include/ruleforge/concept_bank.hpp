#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ruleforge/json_io.hpp"

namespace ruleforge {

enum class Category { Spatial, Temporal, Interaction };
enum class Part { Head, Hand, Arm, Hip, Leg, Foot, None };

inline constexpr std::array<Part, 6> kBodyParts = {Part::Head, Part::Hand, Part::Arm,
                                                   Part::Hip,  Part::Leg,  Part::Foot};

std::string_view to_string(Category c);
std::string_view to_string(Part p);
Category category_from_string(std::string_view s);
Part part_from_string(std::string_view s);

struct Concept {
  std::size_t id = 0;
  std::string name;
  Category category = Category::Spatial;
  Part part = Part::None;

  bool operator==(const Concept&) const = default;
};

class ConceptVocabulary {
 public:
  ConceptVocabulary() = default;
  // Validates: contiguous ids, unique names, part/category consistency.
  explicit ConceptVocabulary(std::vector<Concept> concepts);

  const std::vector<Concept>& concepts() const { return concepts_; }
  std::size_t size() const { return concepts_.size(); }
  const Concept& operator[](std::size_t i) const { return concepts_[i]; }

  std::size_t count(Category c) const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws ValidationError

  // Concept ids routed through the spatial branch, and the rest (temporal then
  // interaction) through the temporal branch, each in vocabulary order.
  std::vector<std::size_t> spatial_ids() const;
  std::vector<std::size_t> sequence_ids() const;

  bool operator==(const ConceptVocabulary&) const = default;

 private:
  std::vector<Concept> concepts_;
};

struct AssociationMatrix {
  std::vector<std::string> actions;
  std::vector<std::string> concepts;
  std::vector<std::vector<std::uint8_t>> rows;  // |A| x |C|, entries 0/1

  std::size_t num_actions() const { return rows.size(); }
  std::size_t num_concepts() const { return concepts.size(); }
  std::size_t row_weight(std::size_t a) const;

  // Checks binary entries, shape, >=1 active per row.
  void validate() const;
  bool operator==(const AssociationMatrix&) const = default;
};

struct ConceptRecord {
  std::string action;
  std::vector<std::string> concepts;
};

AssociationMatrix build_association_matrix(const ConceptVocabulary& vocab,
                                           const std::vector<std::string>& actions,
                                           const std::vector<ConceptRecord>& records);

// Unordered action pairs (i < j) whose rows are identical.
std::vector<std::pair<std::size_t, std::size_t>> check_signature_uniqueness(
    const AssociationMatrix& m);

// Throws ValidationError listing duplicate pairs, if any.
void require_unique_signatures(const AssociationMatrix& m);

struct EmbeddingSet {
  std::vector<std::vector<double>> vectors;
  std::vector<std::string> labels;

  std::size_t size() const { return vectors.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
  void validate() const;
};

struct KMeansResult {
  std::vector<std::size_t> assignments;
  std::vector<std::vector<double>> centroids;
  std::vector<std::string> representatives;  // most frequent member label per cluster
  double sse = 0.0;
  std::size_t iterations = 0;
  std::vector<double> sse_trace;  // SSE after every assignment step
};

KMeansResult kmeans_cluster(const EmbeddingSet& e, std::size_t k, std::uint64_t seed);

struct ElbowResult {
  std::size_t k_star = 2;
  std::vector<double> sse;  // sse[k-1] for k = 1..k_max
};

ElbowResult elbow_select_k(const EmbeddingSet& e, std::size_t k_max, std::uint64_t seed);

// ---- serialization --------------------------------------------------------

Json vocabulary_to_json(const ConceptVocabulary& v);
ConceptVocabulary vocabulary_from_json(const Json& j);
ConceptVocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const std::filesystem::path& path, const ConceptVocabulary& v);

Json matrix_to_json(const AssociationMatrix& m);
AssociationMatrix matrix_from_json(const Json& j);
AssociationMatrix load_matrix(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const AssociationMatrix& m);

struct RecordFile {
  std::vector<std::string> actions;
  std::vector<ConceptRecord> records;
};
RecordFile records_from_json(const Json& j);

// Pattern embeddings grouped by body part, for the clustering stage.
struct PatternFile {
  std::vector<std::pair<Part, EmbeddingSet>> parts;
};
PatternFile patterns_from_json(const Json& j);

// ---- bundled fixtures -----------------------------------------------------

// 74 concepts: 52 spatial, 21 temporal, 1 interaction.
ConceptVocabulary ntu74_vocabulary();
// 67 concepts: 51 spatial, 15 temporal, 1 interaction.
ConceptVocabulary desk67_vocabulary();
ConceptVocabulary fixture_vocabulary(std::string_view name);
// Hand-written association records over the ntu74 vocabulary.
RecordFile ntu74_records();

// Vocabulary of `num_concepts` drawn from the ntu74 names: one interaction
// concept, ~35% temporal, the rest spatial spread round-robin over parts.
ConceptVocabulary planted_vocabulary(std::size_t num_concepts);

// Random binary matrix with >=1 active concept per row and pairwise row
// Hamming distance >= min_distance (rejection sampled).
AssociationMatrix planted_matrix(const ConceptVocabulary& vocab, std::size_t num_actions,
                                 double density, std::size_t min_distance,
                                 std::uint64_t seed);

}  // namespace ruleforge
