#include "mixloc/walk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mixloc/ops.hpp"

namespace mixloc::walk {
namespace {

Array as_row(const Array& audio_embedding) {
  if (audio_embedding.rank() == 1) {
    return Array({1, audio_embedding.numel()},
                 {audio_embedding.data().begin(), audio_embedding.data().end()});
  }
  return audio_embedding;
}

void check_embed_dims(const Array& image_embeddings, const Array& audio, const char* where) {
  if (image_embeddings.cols() != audio.cols()) {
    throw std::invalid_argument(std::string(where) + ": embedding width mismatch, image " +
                                shape_str(image_embeddings.shape()) + " vs audio " +
                                shape_str(audio.shape()));
  }
}

// Rows of phi for one image grid: max-pooled dot products against every
// audio row. Shared by the plain and graph builders via the same kernels.
Array phi_row_kernel(const Array& grid, const Array& audio_rows) {
  return max_rows(matmul(audio_rows, transpose(grid)));
}

void check_square_phi(const Array& phi, const char* where) {
  if (phi.rank() != 2 || phi.rows() != phi.cols()) {
    throw std::invalid_argument(std::string(where) + ": phi must be square, got " +
                                shape_str(phi.shape()));
  }
}

// Best bijection between rows (images) and columns (sounds) of phi by total
// similarity. Returns perm with perm[i] = matched column of row i; ties keep
// the identity (enumeration starts there and only a strictly better score
// replaces it).
std::vector<std::size_t> best_pairing(const Array& phi) {
  const std::size_t k = phi.rows();
  std::vector<std::size_t> perm(k), best(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  best = perm;
  double best_score = 0.0;
  for (std::size_t i = 0; i < k; ++i) best_score += phi.at(i, i);
  while (std::next_permutation(perm.begin(), perm.end())) {
    double score = 0.0;
    for (std::size_t i = 0; i < k; ++i) score += phi.at(i, perm[i]);
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  }
  return best;
}

}  // namespace

double max_stochastic_error(const TransitionMatrix& t) {
  const Array& p = t.probs;
  double worst = 0.0;
  if (t.normalized_over == NormAxis::Rows) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  } else {
    for (std::size_t c = 0; c < p.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < p.rows(); ++r) s += p.at(r, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  return worst;
}

double similarity_phi(const Array& image_embeddings, const Array& audio_embedding) {
  Array audio = as_row(audio_embedding);
  check_embed_dims(image_embeddings, audio, "similarity_phi");
  return phi_row_kernel(image_embeddings, audio)[0];
}

Array localization_map(const Array& image_embeddings, const Array& audio_embedding,
                       std::size_t h, std::size_t w) {
  Array audio = as_row(audio_embedding);
  check_embed_dims(image_embeddings, audio, "localization_map");
  if (image_embeddings.rows() != h * w) {
    throw std::invalid_argument("localization_map: grid " + std::to_string(h) + "x" +
                                std::to_string(w) + " needs " + std::to_string(h * w) +
                                " regions, got " + std::to_string(image_embeddings.rows()));
  }
  Array dots = matmul(image_embeddings, transpose(audio));  // (h*w) x 1
  return Array({h, w}, {dots.data().begin(), dots.data().end()});
}

SimilarityMatrix similarity_matrix(std::span<const Array> image_grids, const Array& audio_rows) {
  if (image_grids.empty()) throw std::invalid_argument("similarity_matrix: no image grids");
  Array audio = as_row(audio_rows);
  const std::size_t p = image_grids.size();
  const std::size_t q = audio.rows();
  Array phi({p, q});
  for (std::size_t i = 0; i < p; ++i) {
    check_embed_dims(image_grids[i], audio, "similarity_matrix");
    Array row = phi_row_kernel(image_grids[i], audio);
    for (std::size_t j = 0; j < q; ++j) phi.at(i, j) = row[j];
  }
  return SimilarityMatrix{std::move(phi), Entity::Image, Entity::Audio};
}

TransitionMatrix image_to_sound(const Array& phi, double tau) {
  return TransitionMatrix{softmax_rows(phi, tau), NormAxis::Rows, tau};
}

TransitionMatrix sound_to_image(const Array& phi, double tau) {
  // Column softmax then transpose, stored sound-major so rows sum to one.
  return TransitionMatrix{softmax_rows(transpose(phi), tau), NormAxis::Rows, tau};
}

ad::Var phi_matrix(std::span<const ad::Var> image_grids, ad::Var audio_rows) {
  if (image_grids.empty()) throw std::invalid_argument("phi_matrix: no image grids");
  std::vector<ad::Var> rows;
  rows.reserve(image_grids.size());
  for (ad::Var grid : image_grids) {
    rows.push_back(ad::max_rows(ad::matmul(audio_rows, ad::transpose(grid))));
  }
  return ad::concat_rows(rows);
}

ad::Var image_to_sound(ad::Var phi, double tau) { return ad::softmax_rows(phi, tau); }

ad::Var sound_to_image(ad::Var phi, double tau) {
  return ad::softmax_rows(ad::transpose(phi), tau);
}

ad::Var loss_correspondence(std::span<const ad::Var> image_grids, ad::Var audio_rows,
                            double tau) {
  const std::size_t n = image_grids.size();
  if (n < 2) {
    throw std::invalid_argument("loss_correspondence: need at least 2 pairs, got " +
                                std::to_string(n));
  }
  if (audio_rows.value().rows() != n) {
    throw std::invalid_argument("loss_correspondence: " + std::to_string(n) + " images vs " +
                                std::to_string(audio_rows.value().rows()) + " audio rows");
  }
  ad::Var phi = phi_matrix(image_grids, audio_rows);
  return ad::scale(ad::trace_log(image_to_sound(phi, tau)), -1.0 / double(n));
}

ad::Var cycle_loss_from_phi(ad::Var phi_out, ad::Var phi_return, double tau) {
  check_square_phi(phi_out.value(), "cycle_loss_from_phi");
  check_square_phi(phi_return.value(), "cycle_loss_from_phi");
  const std::size_t k = phi_out.value().rows();
  ad::Var round_trip = ad::matmul(sound_to_image(phi_out, tau), image_to_sound(phi_return, tau));
  return ad::scale(ad::trace_log(round_trip), -1.0 / double(k));
}

ad::Var loss_cycle(const MixtureVars& mix, double tau, bool use_shifted) {
  const std::size_t k = mix.images.size();
  if (k < 2) {
    throw std::invalid_argument("loss_cycle: mixture needs k >= 2 sources, got " +
                                std::to_string(k));
  }
  if (mix.audio.value().rows() != k) {
    throw std::invalid_argument("loss_cycle: " + std::to_string(k) + " images vs " +
                                std::to_string(mix.audio.value().rows()) + " audio embeddings");
  }
  if (use_shifted && !mix.shifted_audio) {
    throw std::invalid_argument("loss_cycle: shifted return leg requested but mixture has no "
                                "shifted-audio embeddings");
  }
  ad::Var phi_out = phi_matrix(mix.images, mix.audio);
  ad::Var phi_return = use_shifted ? phi_matrix(mix.images, *mix.shifted_audio) : phi_out;
  return cycle_loss_from_phi(phi_out, phi_return, tau);
}

ad::Var image_cycle_loss_from_phi(ad::Var phi_out, ad::Var phi_back, double tau) {
  check_square_phi(phi_out.value(), "image_cycle_loss_from_phi");
  check_square_phi(phi_back.value(), "image_cycle_loss_from_phi");
  const std::size_t k = phi_out.value().rows();
  ad::Var round_trip = ad::matmul(image_to_sound(phi_out, tau), sound_to_image(phi_back, tau));
  return ad::scale(ad::trace_log(round_trip), -1.0 / double(k));
}

ad::Var loss_image_cycle(const MixtureVars& mix, double tau) {
  const std::size_t k = mix.images.size();
  if (k < 2) {
    throw std::invalid_argument("loss_image_cycle: mixture needs k >= 2 sources, got " +
                                std::to_string(k));
  }
  if (mix.second_views.size() != k) {
    throw std::invalid_argument("loss_image_cycle: needs a second view per image, got " +
                                std::to_string(mix.second_views.size()) + " of " +
                                std::to_string(k));
  }
  ad::Var phi_out = phi_matrix(mix.images, mix.audio);
  ad::Var phi_back = phi_matrix(mix.second_views, mix.audio);
  return image_cycle_loss_from_phi(phi_out, phi_back, tau);
}

ad::Var loss_mixed_correspondence(std::span<const MixtureVars> batch, double tau) {
  const std::size_t n = batch.size();
  if (n < 2) {
    throw std::invalid_argument("loss_mixed_correspondence: need at least 2 mixtures, got " +
                                std::to_string(n));
  }
  if (tau <= 0.0) {
    throw std::invalid_argument("loss_mixed_correspondence: tau must be positive, got " +
                                std::to_string(tau));
  }
  const std::size_t k = batch[0].images.size();
  ad::Graph* g = batch[0].audio.graph;
  std::vector<ad::Var> union_grids;
  std::vector<ad::Var> audio_parts;
  union_grids.reserve(n);
  audio_parts.reserve(n);
  for (const MixtureVars& mix : batch) {
    if (mix.images.size() != k || mix.audio.value().rows() != k) {
      throw std::invalid_argument("loss_mixed_correspondence: all mixtures must share k");
    }
    union_grids.push_back(mix.images.size() == 1 ? mix.images[0]
                                                 : ad::concat_rows(mix.images));
    audio_parts.push_back(mix.audio);
  }
  ad::Var all_audio = ad::concat_rows(audio_parts);  // (n*k) x C
  ad::Var phi = phi_matrix(union_grids, all_audio);  // n x (n*k)

  // Detached per-row shift for a stable exp; it cancels between numerator
  // and denominator so value and gradient are unchanged.
  Array shift({n, n * k});
  const Array& raw = phi.value();
  for (std::size_t i = 0; i < n; ++i) {
    double m = raw.at(i, 0);
    for (std::size_t j = 1; j < n * k; ++j) m = std::max(m, raw.at(i, j));
    for (std::size_t j = 0; j < n * k; ++j) shift.at(i, j) = m;
  }
  ad::Var weights = ad::exp(ad::scale(ad::subtract(phi, g->constant(std::move(shift))),
                                      1.0 / tau));

  // weights * selector groups the k columns of each example; weights * ones
  // is the full-batch denominator.
  Array selector({n * k, n});
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t t = 0; t < k; ++t) selector.at(j * k + t, j) = 1.0;
  ad::Var grouped = ad::matmul(weights, g->constant(std::move(selector)));       // n x n
  ad::Var denom = ad::matmul(weights, g->constant(Array::full({n * k, 1}, 1.0)));  // n x 1
  ad::Var log_diag = ad::trace_log(grouped);
  ad::Var log_denom = ad::sum_all(ad::log(denom));
  return ad::scale(ad::subtract(log_diag, log_denom), -1.0 / double(n));
}

ad::Var pit_loss_from_phi(ad::Var phi) {
  check_square_phi(phi.value(), "pit_loss_from_phi");
  const std::size_t k = phi.value().rows();
  if (k < 2) {
    throw std::invalid_argument("pit_loss_from_phi: needs k >= 2, got " + std::to_string(k));
  }
  if (k > kMaxPairingEnumeration) {
    throw std::invalid_argument("pit_loss_from_phi: k = " + std::to_string(k) +
                                " exceeds the pairing enumeration cap of " +
                                std::to_string(kMaxPairingEnumeration));
  }
  std::vector<std::size_t> pairing = best_pairing(phi.value());
  Array mask({k, k});
  for (std::size_t i = 0; i < k; ++i) mask.at(i, pairing[i]) = 1.0;
  ad::Var picked = ad::multiply(phi, phi.graph->constant(std::move(mask)));
  return ad::scale(ad::sum_all(picked), -1.0);
}

ad::Var loss_permutation_invariant(const MixtureVars& mix) {
  const std::size_t k = mix.images.size();
  if (k < 2) {
    throw std::invalid_argument("loss_permutation_invariant: mixture needs k >= 2, got " +
                                std::to_string(k));
  }
  if (mix.audio.value().rows() != k) {
    throw std::invalid_argument("loss_permutation_invariant: " + std::to_string(k) +
                                " images vs " + std::to_string(mix.audio.value().rows()) +
                                " audio embeddings");
  }
  return pit_loss_from_phi(phi_matrix(mix.images, mix.audio));
}

}  // namespace mixloc::walk
