#include <doctest.h>

#include <cmath>
#include <limits>

#include "ruleforge/concept_bank.hpp"
#include "ruleforge/errors.hpp"
#include "ruleforge/rng.hpp"

using namespace ruleforge;

namespace {

EmbeddingSet points_1d(std::vector<double> xs) {
  EmbeddingSet e;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    e.vectors.push_back({xs[i]});
    e.labels.push_back("p" + std::to_string(i));
  }
  return e;
}

// Exhaustive optimum over every 2-partition.
double best_two_partition_sse(const EmbeddingSet& e) {
  const std::size_t n = e.size(), d = e.dim();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    double sse = 0.0;
    for (int side = 0; side < 2; ++side) {
      std::vector<double> mean(d, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1) == static_cast<std::size_t>(side)) {
          ++cnt;
          for (std::size_t k = 0; k < d; ++k) mean[k] += e.vectors[i][k];
        }
      for (auto& m : mean) m /= static_cast<double>(cnt);
      for (std::size_t i = 0; i < n; ++i)
        if (((mask >> i) & 1) == static_cast<std::size_t>(side))
          for (std::size_t k = 0; k < d; ++k) sse += std::pow(e.vectors[i][k] - mean[k], 2);
    }
    best = std::min(best, sse);
  }
  return best;
}

EmbeddingSet blobs(const std::vector<std::vector<double>>& centers, std::size_t per, double spread) {
  EmbeddingSet e;
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t i = 0; i < per; ++i) {
      auto v = centers[c];
      for (std::size_t k = 0; k < v.size(); ++k)
        v[k] += spread * std::sin(static_cast<double>(7 * i + 3 * k + c));
      e.vectors.push_back(v);
      e.labels.push_back("blob" + std::to_string(c));
    }
  return e;
}

// Knee of an SSE curve by the discrete second difference, computed from
// exhaustively optimal 2-partitions where k = 2.
std::size_t knee(const std::vector<double>& sse) {
  std::size_t arg = 2;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k + 1 <= sse.size(); ++k) {
    const double c = sse[k - 2] - 2 * sse[k - 1] + sse[k];
    if (c > best) best = c, arg = k;
  }
  return arg;
}

}  // namespace

TEST_CASE("kmeans on four 1-D points matches the best 2-partition") {
  const auto e = points_1d({0.0, 0.1, 5.0, 5.1});
  const auto r = kmeans_cluster(e, 2, 0);
  auto c = r.centroids;
  std::sort(c.begin(), c.end());
  CHECK(c[0][0] == doctest::Approx(0.05));
  CHECK(c[1][0] == doctest::Approx(5.05));
  CHECK(r.sse == doctest::Approx(0.01));
  CHECK(r.sse == doctest::Approx(best_two_partition_sse(e)));
}

TEST_CASE("kmeans returns a Lloyd fixed point no better than the 2-partition optimum") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto rng = make_rng(s, "test.kmeans");
    EmbeddingSet e;
    for (int i = 0; i < 9; ++i) {
      e.vectors.push_back({gaussian(rng) + (i < 4 ? 3.0 : 0.0), gaussian(rng)});
      e.labels.push_back("x");
    }
    const auto r = kmeans_cluster(e, 2, s);
    CHECK(r.sse >= best_two_partition_sse(e) - 1e-9);
    double sse = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      std::vector<double> mean(2, 0.0);
      std::size_t cnt = 0;
      for (std::size_t i = 0; i < e.size(); ++i)
        if (r.assignments[i] == c) ++cnt, mean[0] += e.vectors[i][0], mean[1] += e.vectors[i][1];
      REQUIRE(cnt > 0);
      CHECK(r.centroids[c][0] == doctest::Approx(mean[0] / cnt));
      CHECK(r.centroids[c][1] == doctest::Approx(mean[1] / cnt));
    }
    for (std::size_t i = 0; i < e.size(); ++i) {
      auto d = [&](std::size_t c) {
        return std::pow(e.vectors[i][0] - r.centroids[c][0], 2) + std::pow(e.vectors[i][1] - r.centroids[c][1], 2);
      };
      CHECK(d(r.assignments[i]) <= d(1 - r.assignments[i]) + 1e-12);
      sse += d(r.assignments[i]);
    }
    CHECK(r.sse == doctest::Approx(sse));
    CHECK(kmeans_cluster(e, 2, s).assignments == r.assignments);
  }
}

TEST_CASE("kmeans degenerate k") {
  const auto e = points_1d({1.0, 2.0, 6.0});
  const auto one = kmeans_cluster(e, 1, 3);
  CHECK(one.centroids[0][0] == doctest::Approx(3.0));
  CHECK(kmeans_cluster(e, 3, 3).sse == doctest::Approx(0.0));
  CHECK_THROWS_AS(kmeans_cluster(e, 4, 3), ValidationError);
}

TEST_CASE("kmeans SSE never increases across iterations") {
  const auto e = blobs({{0, 0}, {3, 1}, {1, 4}}, 10, 0.8);
  const auto r = kmeans_cluster(e, 3, 11);
  for (std::size_t i = 1; i < r.sse_trace.size(); ++i) CHECK(r.sse_trace[i] <= r.sse_trace[i - 1] + 1e-12);
}

TEST_CASE("elbow picks the knee of the SSE curve") {
  const auto two = blobs({{0, 0}, {10, 10}}, 6, 0.1);
  const auto r2 = elbow_select_k(two, 6, 0);
  CHECK(r2.k_star == 2);
  CHECK(r2.k_star == knee(r2.sse));
  CHECK(r2.sse[1] == doctest::Approx(best_two_partition_sse(blobs({{0, 0}, {10, 10}}, 6, 0.1))));

  const auto three = blobs({{0, 0}, {10, 0}, {5, 8.66}}, 5, 0.1);
  const auto r3 = elbow_select_k(three, 6, 0);
  CHECK(r3.k_star == 3);
  CHECK(r3.k_star == knee(r3.sse));
}

TEST_CASE("elbow on identical points ties to k=2") {
  EmbeddingSet e;
  for (int i = 0; i < 6; ++i) e.vectors.push_back({1.0, 1.0}), e.labels.push_back("same");
  const auto r = elbow_select_k(e, 5, 0);
  for (double s : r.sse) CHECK(s == doctest::Approx(0.0));
  CHECK(r.k_star == 2);
}

TEST_CASE("association matrix from records") {
  const ConceptVocabulary v = ntu74_vocabulary();
  const std::vector<std::string> actions = {"Jump"};
  const auto m = build_association_matrix(v, actions, {{"Jump", {"leg_squat"}}, {"Jump", {"leg_jump"}}});
  CHECK(m.rows[0][v.index_of("leg_squat")] == 1);
  CHECK(m.rows[0][v.index_of("leg_jump")] == 1);
  CHECK(m.row_weight(0) == 2);

  const auto dup = build_association_matrix(v, actions, {{"Jump", {"leg_jump"}}, {"Jump", {"leg_jump"}}});
  CHECK(dup.row_weight(0) == 1);

  CHECK_THROWS_AS(build_association_matrix(v, {"Jump", "Sit"}, {{"Jump", {"leg_jump"}}}), ValidationError);
  CHECK_THROWS_AS(build_association_matrix(v, actions, {{"Jump", {"no_such_concept"}}}), ValidationError);
}

TEST_CASE("signature uniqueness") {
  AssociationMatrix m;
  m.actions = {"a", "b", "c"};
  m.concepts = {"x", "y", "z"};
  m.rows = {{1, 0, 1}, {1, 0, 1}, {1, 1, 1}};
  const auto d = check_signature_uniqueness(m);
  REQUIRE(d.size() == 1);
  CHECK(d[0] == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK_THROWS_AS(require_unique_signatures(m), ValidationError);
  m.rows[1][1] = 1;
  m.rows[2][0] = 0;
  CHECK(check_signature_uniqueness(m).empty());
}

TEST_CASE("bundled ntu74 records give distinct signatures, including opposing-direction pairs") {
  const auto v = ntu74_vocabulary();
  const auto rf = ntu74_records();
  const auto m = build_association_matrix(v, rf.actions, rf.records);
  CHECK(check_signature_uniqueness(m).empty());
}

TEST_CASE("fixture vocabularies have the documented composition") {
  const auto n = ntu74_vocabulary();
  CHECK(n.size() == 74);
  CHECK(n.count(Category::Spatial) == 52);
  CHECK(n.count(Category::Temporal) == 21);
  CHECK(n.count(Category::Interaction) == 1);
  const auto d = desk67_vocabulary();
  CHECK(d.size() == 67);
  CHECK(d.count(Category::Spatial) == 51);
  CHECK(d.count(Category::Temporal) == 15);
  CHECK(d.count(Category::Interaction) == 1);
  CHECK_THROWS_AS(fixture_vocabulary("nope"), ValidationError);
}

TEST_CASE("vocabulary validation and round trip") {
  Json j = vocabulary_to_json(desk67_vocabulary());
  CHECK(vocabulary_from_json(j) == desk67_vocabulary());
  j["concepts"][3]["name"] = j["concepts"][1]["name"];
  const std::string dup = j["concepts"][1]["name"];
  try {
    vocabulary_from_json(j);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(dup) != std::string::npos);
  }
}

TEST_CASE("planted matrix respects density floor and pairwise distance") {
  const auto v = planted_vocabulary(20);
  CHECK(v.size() == 20);
  const auto m = planted_matrix(v, 10, 0.3, 3, 42);
  m.validate();
  for (std::size_t a = 0; a < m.num_actions(); ++a) {
    CHECK(m.row_weight(a) >= 1);
    for (std::size_t b = a + 1; b < m.num_actions(); ++b) {
      std::size_t dist = 0;
      for (std::size_t c = 0; c < 20; ++c) dist += m.rows[a][c] != m.rows[b][c];
      CHECK(dist >= 3);
    }
  }
  CHECK(matrix_from_json(matrix_to_json(m)) == m);
  CHECK(planted_matrix(v, 10, 0.3, 3, 42) == m);
}
