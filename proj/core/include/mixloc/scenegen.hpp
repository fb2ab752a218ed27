#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "mixloc/array.hpp"

namespace mixloc::gen {

// Parameters of a synthetic audio-visual world. Each class owns a fixed
// visual signature and a fixed audio signature; scenes place the visual
// signature somewhere on a grid and mixtures sum audio signatures.
struct WorldSpec {
  std::size_t num_classes = 8;
  std::size_t visual_dim = 32;
  std::size_t audio_dim = 32;
  std::size_t grid_size = 8;
  std::size_t source_extent = 4;
  double visual_noise_sigma = 0.1;
  double audio_noise_sigma = 0.1;
  double shift_noise_sigma = 0.1;
  std::uint64_t seed = 0;

  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

struct World {
  WorldSpec spec;
  Array visual_signatures;  // num_classes x D_v, orthonormal rows
  Array audio_signatures;   // num_classes x D_a, orthonormal rows
};

// One sounding object: its grid of region features, its (noisy) solo audio
// and the ground-truth mask of the regions it occupies.
struct Scene {
  Array regions;  // g^2 x D_v
  Array audio;    // D_a
  std::size_t class_id = 0;
  Array mask;     // g x g, entries 0 or 1
};

// k scenes of distinct classes plus their summed audio. The shifted variant
// re-perturbs the same signature sum with an independent noise draw.
struct Mixture {
  std::vector<Scene> scenes;
  Array mixed_audio;          // D_a
  Array shifted_mixed_audio;  // D_a
};

World make_world(const WorldSpec& spec);
Scene sample_scene(const World& world, std::size_t class_id, std::uint64_t seed);
Mixture sample_mixture(const World& world, std::size_t k, std::uint64_t seed);

// Deterministic split bookkeeping. Every example carries its own seed so it
// can be regenerated in isolation; split index ranges never overlap.
struct ExampleRef {
  std::size_t index = 0;
  std::uint64_t seed = 0;
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<ExampleRef> train;
  std::vector<ExampleRef> val;
  std::vector<ExampleRef> test;
};

Manifest dataset_manifest(SplitSizes sizes, std::uint64_t seed);
const std::vector<ExampleRef>& manifest_split(const Manifest& m, std::string_view name);

// Writes one binary file per mixture (per-slot regions, mask and solo audio,
// then the mixed and shifted audio) plus manifest.json describing the world,
// the splits and every file.
void export_dataset(const World& world, const Manifest& manifest, std::size_t k,
                    const std::filesystem::path& dir);

}  // namespace mixloc::gen
