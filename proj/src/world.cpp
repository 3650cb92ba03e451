#include "ruleforge/world.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ruleforge/errors.hpp"
#include "ruleforge/json_io.hpp"
#include "ruleforge/rng.hpp"

namespace ruleforge {

static_assert(std::endian::native == std::endian::little, "float blobs assume little-endian");

std::vector<Part> default_part_map(std::size_t joints) {
  if (joints < kBodyParts.size())
    throw ValidationError("need at least 6 joints to cover every body part");
  constexpr std::array<double, 6> weights = {2, 4, 4, 2, 4, 4};
  std::array<std::size_t, 6> counts{};
  std::size_t assigned = 0;
  for (std::size_t p = 0; p < 6; ++p) {
    counts[p] = std::max<std::size_t>(1, static_cast<std::size_t>(joints * weights[p] / 20.0));
    assigned += counts[p];
  }
  for (std::size_t p = 0; assigned < joints; p = (p + 1) % 6, ++assigned) ++counts[p];
  for (std::size_t p = 5; assigned > joints; p = (p + 5) % 6)
    if (counts[p] > 1) {
      --counts[p];
      --assigned;
    }
  std::vector<Part> map;
  for (std::size_t p = 0; p < 6; ++p) map.insert(map.end(), counts[p], kBodyParts[p]);
  return map;
}

void WorldConfig::validate() const {
  if (frames < 1 || joints < 1 || channels < 1 || text_dim < 1)
    throw ValidationError("world: T, V, D and text_dim must be >= 1");
  if (channels < 8) throw ValidationError("world: D must be >= 8 to embed concepts");
  if (!(noise_std >= 0.0)) throw ValidationError("world: noise_std must be >= 0");
  if (!(flip_prob >= 0.0 && flip_prob < 0.5))
    throw ValidationError("world: flip_prob must lie in [0, 0.5)");
  if (vocabulary.size() == 0) throw ValidationError("world: empty vocabulary");
  matrix.validate();
  if (matrix.num_concepts() != vocabulary.size())
    throw ValidationError("world: matrix concept count differs from vocabulary");
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (matrix.concepts[i] != vocabulary[i].name)
      throw ValidationError("world: matrix concept " + std::to_string(i) + " is '" +
                            matrix.concepts[i] + "', vocabulary has '" + vocabulary[i].name + "'");
  if (!part_map.empty() && part_map.size() != joints)
    throw ValidationError("world: part_map must cover all joints");
}

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n2 = 0.0;
  for (auto& x : v) {
    x = gaussian(rng);
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

}  // namespace

World generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  World w;
  w.config = config;
  w.part_map = config.part_map.empty() ? default_part_map(config.joints) : config.part_map;
  for (const auto& c : config.vocabulary.concepts()) {
    if (c.category != Category::Spatial) continue;
    if (std::find(w.part_map.begin(), w.part_map.end(), c.part) == w.part_map.end())
      throw ValidationError("world: no joint carries part '" + std::string(to_string(c.part)) +
                            "' needed by concept '" + c.name + "'");
  }

  const std::size_t C = config.num_concepts(), D = config.channels, T = config.frames;
  auto rng = make_rng(seed, "world");
  w.spatial_basis = Mat(C, D);
  w.sequence_signal.assign(C, Mat());

  const auto seq_ids = config.vocabulary.sequence_ids();
  for (const auto& c : config.vocabulary.concepts()) {
    if (c.category != Category::Spatial) continue;
    auto u = random_unit(rng, D);
    std::copy(u.begin(), u.end(), w.spatial_basis.row(c.id).begin());
  }
  // Each sequence concept is a localized bump in time along its own direction,
  // centred at evenly spread frames, with the time mean removed exactly.
  const double width = std::max(0.75, 0.5 * static_cast<double>(T) / std::max<std::size_t>(seq_ids.size(), 1));
  for (std::size_t k = 0; k < seq_ids.size(); ++k) {
    const auto dir = random_unit(rng, D);
    const double centre = (static_cast<double>(k) + 0.5) * static_cast<double>(T) /
                          static_cast<double>(seq_ids.size());
    std::vector<double> s(T);
    double mean = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double z = (static_cast<double>(t) - centre) / width;
      s[t] = 2.0 * std::exp(-0.5 * z * z);
      mean += s[t];
    }
    mean /= static_cast<double>(T);
    Mat sig(T, D);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) sig(t, d) = (s[t] - mean) * dir[d];
    w.sequence_signal[seq_ids[k]] = std::move(sig);
  }

  w.text_embeddings = Mat(config.num_actions(), config.text_dim);
  for (std::size_t a = 0; a < config.num_actions(); ++a) {
    auto e = random_unit(rng, config.text_dim);
    std::copy(e.begin(), e.end(), w.text_embeddings.row(a).begin());
  }
  return w;
}

std::vector<double> synthesize(const World& world, const std::vector<std::uint8_t>& concepts) {
  const auto& cfg = world.config;
  const std::size_t T = cfg.frames, V = cfg.joints, D = cfg.channels;
  std::vector<double> f(T * V * D, 0.0);
  for (std::size_t c = 0; c < concepts.size(); ++c) {
    if (!concepts[c]) continue;
    const auto& cc = cfg.vocabulary[c];
    if (cc.category == Category::Spatial) {
      auto u = world.spatial_basis.row(c);
      for (std::size_t v = 0; v < V; ++v) {
        if (world.part_map[v] != cc.part) continue;
        for (std::size_t t = 0; t < T; ++t) {
          double* dst = f.data() + (t * V + v) * D;
          for (std::size_t d = 0; d < D; ++d) dst[d] += u[d];
        }
      }
    } else {
      const Mat& sig = world.sequence_signal[c];
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < V; ++v) {
          double* dst = f.data() + (t * V + v) * D;
          for (std::size_t d = 0; d < D; ++d) dst[d] += sig(t, d);
        }
    }
  }
  return f;
}

FeatureBatch sample_batch(const World& world, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample_batch: n must be >= 1");
  const auto& cfg = world.config;
  FeatureBatch b;
  b.frames = cfg.frames;
  b.joints = cfg.joints;
  b.channels = cfg.channels;
  b.text_embeddings = world.text_embeddings;
  b.features.reserve(n * b.sample_stride());
  auto rng = make_rng(seed, "samples");
  std::uniform_int_distribution<std::size_t> pick(0, cfg.num_actions() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = pick(rng);
    auto c = cfg.matrix.rows[a];
    for (auto& bit : c)
      if (uniform01(rng) < cfg.flip_prob) bit ^= 1;
    auto f = synthesize(world, c);
    if (cfg.noise_std > 0.0)
      for (auto& x : f) x += gaussian(rng, cfg.noise_std);
    b.features.insert(b.features.end(), f.begin(), f.end());
    b.labels.push_back(a);
    b.true_concepts.push_back(std::move(c));
  }
  return b;
}

void save_split(const std::filesystem::path& dir, const std::string& split,
                const FeatureBatch& batch) {
  std::vector<char> bytes(batch.features.size() * sizeof(float));
  for (std::size_t i = 0; i < batch.features.size(); ++i) {
    const float x = static_cast<float>(batch.features[i]);
    std::memcpy(bytes.data() + i * sizeof(float), &x, sizeof(float));
  }
  write_bytes_atomic(dir / (split + ".bin"), bytes);

  Json concepts = Json::array();
  for (const auto& c : batch.true_concepts) {
    Json row = Json::array();
    for (auto x : c) row.push_back(static_cast<int>(x));
    concepts.push_back(row);
  }
  Json header = {{"schema_version", 1},
                 {"shape", {batch.size(), batch.frames, batch.joints, batch.channels}},
                 {"dtype", "float32-le"},
                 {"blob", split + ".bin"},
                 {"labels", batch.labels},
                 {"true_concepts", concepts},
                 {"text_embeddings", mat_to_json(batch.text_embeddings)}};
  write_json(dir / (split + ".json"), header);
}

FeatureBatch load_split(const std::filesystem::path& dir, const std::string& split) {
  const Json h = read_json(dir / (split + ".json"));
  if (h.value("schema_version", 0) != 1)
    throw ValidationError(split + ".json: schema_version must be 1");
  const auto shape = h.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 4) throw ValidationError(split + ".json: shape must have 4 entries");
  FeatureBatch b;
  b.frames = shape[1];
  b.joints = shape[2];
  b.channels = shape[3];
  b.labels = h.at("labels").get<std::vector<std::size_t>>();
  for (const auto& row : h.at("true_concepts"))
    b.true_concepts.push_back(row.get<std::vector<std::uint8_t>>());
  b.text_embeddings = mat_from_json(h.at("text_embeddings"));
  if (b.labels.size() != shape[0] || b.true_concepts.size() != shape[0])
    throw ValidationError(split + ".json: label/concept count differs from shape");
  for (auto l : b.labels)
    if (l >= b.text_embeddings.rows) throw ValidationError(split + ".json: label out of range");

  const auto blob = dir / h.at("blob").get<std::string>();
  std::ifstream in(blob, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + blob.string());
  const std::size_t count = shape[0] * shape[1] * shape[2] * shape[3];
  std::vector<float> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw ValidationError(blob.string() + ": truncated feature blob");
  b.features.assign(raw.begin(), raw.end());
  return b;
}

}  // namespace ruleforge
