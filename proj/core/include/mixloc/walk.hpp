#pragma once

#include <optional>
#include <span>
#include <vector>

#include "mixloc/graph.hpp"

namespace mixloc::walk {

enum class Entity { Image, Audio };
enum class NormAxis { Rows, Columns };

// Raw pairwise similarities between row entities and column entities.
// Entries lie in [-1, 1] when both embedding sets are unit norm.
struct SimilarityMatrix {
  Array phi;
  Entity row_entity = Entity::Image;
  Entity col_entity = Entity::Audio;
};

// Temperature-softmax similarities read as random-walk probabilities.
// `normalized_over` names the axis of the stored matrix whose slices sum
// to one (both builders below store row-stochastic matrices).
struct TransitionMatrix {
  Array probs;
  NormAxis normalized_over = NormAxis::Rows;
  double tau = 0.0;
};

double max_stochastic_error(const TransitionMatrix& t);

// --- plain evaluation path ---

// Whole-image similarity: max over regions of region . audio.
double similarity_phi(const Array& image_embeddings, const Array& audio_embedding);

// Per-region dot products reshaped to (h, w); no thresholding.
Array localization_map(const Array& image_embeddings, const Array& audio_embedding,
                       std::size_t h, std::size_t w);

// phi(i, j) between every image grid and every audio row.
SimilarityMatrix similarity_matrix(std::span<const Array> image_grids, const Array& audio_rows);

// Walk from each image over the audio nodes (row softmax of phi / tau).
TransitionMatrix image_to_sound(const Array& phi, double tau);
// Walk from each audio node over the images: column softmax of phi / tau,
// transposed, so row j holds where sound j goes.
TransitionMatrix sound_to_image(const Array& phi, double tau);

// --- differentiable path ---

ad::Var phi_matrix(std::span<const ad::Var> image_grids, ad::Var audio_rows);
ad::Var image_to_sound(ad::Var phi, double tau);
ad::Var sound_to_image(ad::Var phi, double tau);

// One mixture as graph handles: k image grids, the k audio embeddings from
// the mixed audio, optionally embeddings of the shifted mixed audio and a
// second view of every image.
struct MixtureVars {
  std::vector<ad::Var> images;
  ad::Var audio;
  std::optional<ad::Var> shifted_audio;
  std::vector<ad::Var> second_views;
};

// InfoNCE over a batch of n single-source (image, audio) pairs.
ad::Var loss_correspondence(std::span<const ad::Var> image_grids, ad::Var audio_rows,
                            double tau);

// Sound -> image -> sound return probability penalty. The return leg uses
// the shifted-audio transition matrix when use_shifted is set.
ad::Var loss_cycle(const MixtureVars& mix, double tau, bool use_shifted);
ad::Var cycle_loss_from_phi(ad::Var phi_out, ad::Var phi_return, double tau);

// Image -> sound -> image variant; the walk returns to a second view of
// each image.
ad::Var loss_image_cycle(const MixtureVars& mix, double tau);
ad::Var image_cycle_loss_from_phi(ad::Var phi_out, ad::Var phi_back, double tau);

// Batch-level InfoNCE where each example contributes its k mixture
// embeddings to the positives and the whole batch to the negatives.
ad::Var loss_mixed_correspondence(std::span<const MixtureVars> batch, double tau);

// Best-bijection similarity with hard assignment; gradient flows only
// through the winning pairing, ties resolved to the identity pairing.
ad::Var loss_permutation_invariant(const MixtureVars& mix);
ad::Var pit_loss_from_phi(ad::Var phi);

inline constexpr std::size_t kMaxPairingEnumeration = 8;

}  // namespace mixloc::walk
