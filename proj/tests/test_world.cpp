#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ruleforge/decoder.hpp"
#include "ruleforge/world.hpp"

using namespace ruleforge;

namespace {

WorldConfig small_config(double noise, double flip) {
  WorldConfig c;
  c.frames = 6;
  c.joints = 8;
  c.channels = 10;
  c.text_dim = 4;
  c.noise_std = noise;
  c.flip_prob = flip;
  c.vocabulary = planted_vocabulary(8);
  c.matrix = planted_matrix(c.vocabulary, 5, 0.4, 2, 9);
  return c;
}

// Solves A x = b (square, full rank) by Gaussian elimination with pivoting.
std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t k = col; k < n; ++k) a[r][k] -= f * a[col][k];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= a[i][i];
  return b;
}

}  // namespace

TEST_CASE("spatial concept adds its basis vector at its part's joints only") {
  const World w = generate_world(small_config(0, 0), 1);
  const auto& vocab = w.config.vocabulary;
  const std::size_t c = vocab.spatial_ids().front();
  std::vector<std::uint8_t> bits(vocab.size(), 0);
  bits[c] = 1;
  const auto f = synthesize(w, bits);
  const auto& cfg = w.config;
  for (std::size_t v = 0; v < cfg.joints; ++v)
    for (std::size_t d = 0; d < cfg.channels; ++d) {
      double mean = 0.0;
      for (std::size_t t = 0; t < cfg.frames; ++t) mean += f[(t * cfg.joints + v) * cfg.channels + d];
      mean /= static_cast<double>(cfg.frames);
      const double expect = w.part_map[v] == vocab[c].part ? w.spatial_basis(c, d) : 0.0;
      CHECK(mean == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("temporal concept trace equals its signal") {
  const World w = generate_world(small_config(0, 0), 2);
  const auto& vocab = w.config.vocabulary;
  const std::size_t c = vocab.sequence_ids().front();
  std::vector<std::uint8_t> bits(vocab.size(), 0);
  bits[c] = 1;
  const auto f = synthesize(w, bits);
  const auto& cfg = w.config;
  const Decoupled x = decouple(f, cfg.frames, cfg.joints, cfg.channels);
  for (std::size_t t = 0; t < cfg.frames; ++t)
    for (std::size_t d = 0; d < cfg.channels; ++d)
      CHECK(x.temporal(t, d) == doctest::Approx(w.sequence_signal[c](t, d)).epsilon(1e-12));
}

TEST_CASE("noiseless world: least-squares decode recovers every concept vector") {
  const World w = generate_world(small_config(0, 0), 3);
  const std::size_t C = w.config.num_concepts();
  std::vector<std::vector<double>> basis;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<std::uint8_t> bits(C, 0);
    bits[c] = 1;
    basis.push_back(synthesize(w, bits));
  }
  std::vector<std::vector<double>> gram(C, std::vector<double>(C));
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = 0; j < C; ++j) gram[i][j] = dot(basis[i], basis[j]);

  const FeatureBatch b = sample_batch(w, 40, 17);
  for (std::size_t s = 0; s < b.size(); ++s) {
    std::vector<double> rhs(C);
    for (std::size_t i = 0; i < C; ++i) rhs[i] = dot(basis[i], b.sample(s));
    const auto x = solve(gram, rhs);
    for (std::size_t i = 0; i < C; ++i) CHECK(x[i] == doctest::Approx(b.true_concepts[s][i]).epsilon(1e-9));
    CHECK(b.true_concepts[s] == w.config.matrix.rows[b.labels[s]]);
  }
}

TEST_CASE("empirical flip rate matches flip_prob") {
  const World w = generate_world(small_config(0.0, 0.1), 4);
  const FeatureBatch b = sample_batch(w, 10000, 5);
  std::size_t flips = 0, total = 0;
  for (std::size_t s = 0; s < b.size(); ++s)
    for (std::size_t c = 0; c < w.config.num_concepts(); ++c) {
      flips += b.true_concepts[s][c] != w.config.matrix.rows[b.labels[s]][c];
      ++total;
    }
  CHECK(std::abs(static_cast<double>(flips) / static_cast<double>(total) - 0.1) < 0.01);
}

TEST_CASE("world and batches are bitwise reproducible") {
  const auto cfg = small_config(0.1, 0.05);
  const World a = generate_world(cfg, 8), b = generate_world(cfg, 8);
  CHECK(a.spatial_basis.v == b.spatial_basis.v);
  CHECK(a.text_embeddings.v == b.text_embeddings.v);
  const auto x = sample_batch(a, 7, 1), y = sample_batch(b, 7, 1);
  CHECK(x.features == y.features);
  CHECK(x.labels == y.labels);
}

TEST_CASE("single-sample batch shapes") {
  const World w = generate_world(small_config(0.1, 0.05), 1);
  const FeatureBatch b = sample_batch(w, 1, 2);
  CHECK(b.size() == 1);
  CHECK(b.features.size() == w.config.frames * w.config.joints * w.config.channels);
  CHECK(b.true_concepts.size() == 1);
  CHECK(b.true_concepts[0].size() == w.config.num_concepts());
}

TEST_CASE("split files round-trip at float32 precision") {
  const World w = generate_world(small_config(0.1, 0.05), 1);
  const FeatureBatch b = sample_batch(w, 5, 2);
  const auto dir = std::filesystem::temp_directory_path() / "ruleforge_test_split";
  std::filesystem::create_directories(dir);
  save_split(dir, "train", b);
  const FeatureBatch r = load_split(dir, "train");
  CHECK(r.labels == b.labels);
  CHECK(r.true_concepts == b.true_concepts);
  REQUIRE(r.features.size() == b.features.size());
  for (std::size_t i = 0; i < b.features.size(); ++i)
    CHECK(r.features[i] == static_cast<double>(static_cast<float>(b.features[i])));
  std::filesystem::remove_all(dir);
}
