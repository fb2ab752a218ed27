#include "mixloc/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "mixloc/io.hpp"
#include "mixloc/rng.hpp"

namespace mixloc::gen {
namespace {

constexpr std::uint64_t kVisualTag = 0x7669735f;  // rng stream tags
constexpr std::uint64_t kAudioTag = 0x6175645f;

void check_spec(const WorldSpec& s) {
  if (s.num_classes < 2) throw std::invalid_argument("make_world: num_classes must be >= 2");
  if (s.grid_size < 2) throw std::invalid_argument("make_world: grid_size must be >= 2");
  if (s.visual_dim == 0 || s.audio_dim == 0) {
    throw std::invalid_argument("make_world: feature dimensions must be positive");
  }
  if (s.source_extent == 0 || s.source_extent > s.grid_size * s.grid_size) {
    throw std::invalid_argument("make_world: source_extent must be in [1, g^2]");
  }
  if (s.visual_noise_sigma < 0 || s.audio_noise_sigma < 0 || s.shift_noise_sigma < 0) {
    throw std::invalid_argument("make_world: noise sigmas must be nonnegative");
  }
  if (s.num_classes > std::min(s.visual_dim, s.audio_dim)) {
    throw std::invalid_argument("make_world: cannot orthonormalize " +
                                std::to_string(s.num_classes) + " signatures in dimension " +
                                std::to_string(std::min(s.visual_dim, s.audio_dim)));
  }
}

// Random rows orthonormalized by Gram-Schmidt (two projection passes for
// numerical cleanliness; dimensions here are small).
Array orthonormal_signatures(std::size_t n, std::size_t dim, Rng& rng) {
  Array sig({n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    while (true) {
      for (std::size_t d = 0; d < dim; ++d) sig.at(i, d) = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          double proj = 0.0;
          for (std::size_t d = 0; d < dim; ++d) proj += sig.at(i, d) * sig.at(j, d);
          for (std::size_t d = 0; d < dim; ++d) sig.at(i, d) -= proj * sig.at(j, d);
        }
      }
      norm = 0.0;
      for (std::size_t d = 0; d < dim; ++d) norm += sig.at(i, d) * sig.at(i, d);
      norm = std::sqrt(norm);
      if (norm > 1e-8) break;  // essentially never retried for gaussian draws
    }
    for (std::size_t d = 0; d < dim; ++d) sig.at(i, d) /= norm;
  }
  return sig;
}

nlohmann::json spec_to_json(const WorldSpec& s) {
  return nlohmann::json{{"num_classes", s.num_classes},
                        {"visual_dim", s.visual_dim},
                        {"audio_dim", s.audio_dim},
                        {"grid_size", s.grid_size},
                        {"source_extent", s.source_extent},
                        {"visual_noise_sigma", s.visual_noise_sigma},
                        {"audio_noise_sigma", s.audio_noise_sigma},
                        {"shift_noise_sigma", s.shift_noise_sigma},
                        {"seed", s.seed}};
}

}  // namespace

World make_world(const WorldSpec& spec) {
  check_spec(spec);
  Rng vis_rng(mix_seed(spec.seed, kVisualTag));
  Rng aud_rng(mix_seed(spec.seed, kAudioTag));
  World w;
  w.spec = spec;
  w.visual_signatures = orthonormal_signatures(spec.num_classes, spec.visual_dim, vis_rng);
  w.audio_signatures = orthonormal_signatures(spec.num_classes, spec.audio_dim, aud_rng);
  return w;
}

Scene sample_scene(const World& world, std::size_t class_id, std::uint64_t seed) {
  const WorldSpec& s = world.spec;
  if (class_id >= s.num_classes) {
    throw std::invalid_argument("sample_scene: class_id " + std::to_string(class_id) +
                                " out of range, world has " + std::to_string(s.num_classes) +
                                " classes");
  }
  Rng rng(mix_seed(seed, class_id));
  const std::size_t g = s.grid_size;

  // Square-ish contiguous block of source_extent cells, filled row-major.
  const std::size_t bw = std::min(
      g, static_cast<std::size_t>(std::ceil(std::sqrt(double(s.source_extent)))));
  const std::size_t bh = (s.source_extent + bw - 1) / bw;
  const std::size_t r0 = rng.index(g - bh + 1);
  const std::size_t c0 = rng.index(g - bw + 1);

  Scene scene;
  scene.class_id = class_id;
  scene.mask = Array({g, g});
  scene.regions = Array({g * g, s.visual_dim});
  for (std::size_t r = 0; r < g * g; ++r)
    for (std::size_t d = 0; d < s.visual_dim; ++d)
      scene.regions.at(r, d) = s.visual_noise_sigma * rng.normal();
  for (std::size_t cell = 0; cell < s.source_extent; ++cell) {
    const std::size_t rr = r0 + cell / bw;
    const std::size_t cc = c0 + cell % bw;
    scene.mask.at(rr, cc) = 1.0;
    for (std::size_t d = 0; d < s.visual_dim; ++d)
      scene.regions.at(rr * g + cc, d) += world.visual_signatures.at(class_id, d);
  }

  scene.audio = Array({s.audio_dim});
  for (std::size_t d = 0; d < s.audio_dim; ++d)
    scene.audio[d] = world.audio_signatures.at(class_id, d) + s.audio_noise_sigma * rng.normal();
  return scene;
}

Mixture sample_mixture(const World& world, std::size_t k, std::uint64_t seed) {
  const WorldSpec& s = world.spec;
  if (k < 2) throw std::invalid_argument("sample_mixture: k must be >= 2");
  if (k > s.num_classes) {
    throw std::invalid_argument("sample_mixture: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(s.num_classes) + " classes");
  }
  Rng rng(seed);

  // Partial Fisher-Yates draw of k distinct classes.
  std::vector<std::size_t> classes(s.num_classes);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(classes[i], classes[i + rng.index(s.num_classes - i)]);
  }

  Mixture mix;
  mix.scenes.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    mix.scenes.push_back(sample_scene(world, classes[i], rng.next()));
  }

  Array base({s.audio_dim});
  for (const Scene& scene : mix.scenes)
    for (std::size_t d = 0; d < s.audio_dim; ++d)
      base[d] += world.audio_signatures.at(scene.class_id, d);

  mix.mixed_audio = Array({s.audio_dim});
  mix.shifted_mixed_audio = Array({s.audio_dim});
  for (std::size_t d = 0; d < s.audio_dim; ++d)
    mix.mixed_audio[d] = base[d] + s.audio_noise_sigma * rng.normal();
  for (std::size_t d = 0; d < s.audio_dim; ++d)
    mix.shifted_mixed_audio[d] = base[d] + s.shift_noise_sigma * rng.normal();
  return mix;
}

Manifest dataset_manifest(SplitSizes sizes, std::uint64_t seed) {
  Manifest m;
  m.seed = seed;
  std::size_t index = 0;
  auto fill = [&](std::vector<ExampleRef>& split, std::size_t count) {
    split.reserve(count);
    for (std::size_t i = 0; i < count; ++i, ++index) {
      split.push_back(ExampleRef{index, mix_seed(seed, index)});
    }
  };
  fill(m.train, sizes.train);
  fill(m.val, sizes.val);
  fill(m.test, sizes.test);
  return m;
}

const std::vector<ExampleRef>& manifest_split(const Manifest& m, std::string_view name) {
  if (name == "train") return m.train;
  if (name == "val") return m.val;
  if (name == "test") return m.test;
  throw std::invalid_argument("manifest_split: unknown split '" + std::string(name) +
                              "' (expected train, val or test)");
}

void export_dataset(const World& world, const Manifest& manifest, std::size_t k,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "mixloc-dataset-v1";
  meta["world"] = spec_to_json(world.spec);
  meta["k"] = k;
  meta["manifest_seed"] = manifest.seed;

  for (const char* split : {"train", "val", "test"}) {
    nlohmann::json entries = nlohmann::json::array();
    for (const ExampleRef& ref : manifest_split(manifest, split)) {
      Mixture mix = sample_mixture(world, k, ref.seed);
      std::string file = "example_" + std::to_string(ref.index) + ".bin";

      // Per slot: regions, mask, solo audio; then the two mixture vectors.
      std::vector<Array> arrays;
      arrays.reserve(3 * k + 2);
      nlohmann::json class_ids = nlohmann::json::array();
      for (const Scene& scene : mix.scenes) {
        arrays.push_back(scene.regions);
        arrays.push_back(scene.mask);
        arrays.push_back(scene.audio);
        class_ids.push_back(scene.class_id);
      }
      arrays.push_back(mix.mixed_audio);
      arrays.push_back(mix.shifted_mixed_audio);
      io::write_arrays(dir / file, arrays);

      entries.push_back(nlohmann::json{{"index", ref.index},
                                       {"seed", ref.seed},
                                       {"file", file},
                                       {"class_ids", class_ids}});
    }
    meta["splits"][split] = std::move(entries);
  }
  io::write_text_file(dir / "manifest.json", meta.dump(2) + "\n");
}

}  // namespace mixloc::gen
