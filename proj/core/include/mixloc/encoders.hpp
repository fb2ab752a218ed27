#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixloc/graph.hpp"
#include "mixloc/ops.hpp"

namespace mixloc::enc {

inline constexpr double kNormEps = 1e-8;

struct EncoderDims {
  std::size_t visual_dim = 32;   // region feature width
  std::size_t audio_dim = 32;    // audio feature width
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;    // shared embedding width
  std::size_t heads = 2;         // audio embeddings per mixture
  std::size_t image_layers = 2;  // affine layers in the image encoder
  std::size_t trunk_layers = 1;  // affine layers in the shared audio trunk
};

// Affine stack mapping region features to unit-norm embeddings. Layer i maps
// weights[i].rows() -> weights[i].cols(); tanh between layers, none after the
// last, then row-wise l2 normalization.
struct ImageEncoderParams {
  std::vector<Array> weights;
  std::vector<Array> biases;
};

// Shared trunk (tanh after every layer) followed by one affine head per
// audio embedding; each head row is l2 normalized.
struct AudioEncoderParams {
  std::vector<Array> trunk_weights;
  std::vector<Array> trunk_biases;
  std::vector<Array> head_weights;
  std::vector<Array> head_biases;
  std::size_t heads() const { return head_weights.size(); }
};

struct EncoderParams {
  ImageEncoderParams image;
  AudioEncoderParams audio;
};

// Unit-norm region embeddings with their grid geometry (m == grid * grid).
struct EmbeddingGrid {
  Array embeddings;  // m x C
  std::size_t grid = 0;
};

// Parameters drawn uniformly from [-scale, scale]; the same seed always
// produces the same arrays. scale == 0 gives all-zero (degenerate) params.
EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims, double scale);

// Enumerates every parameter array in a fixed canonical order. The order is
// the contract shared by the optimizer, the checkpoint layout and gradient
// collection.
template <typename Params, typename Fn>
void for_each_param(Params&& p, Fn&& fn) {
  for (std::size_t i = 0; i < p.image.weights.size(); ++i) {
    fn("image.w" + std::to_string(i), p.image.weights[i]);
    fn("image.b" + std::to_string(i), p.image.biases[i]);
  }
  for (std::size_t i = 0; i < p.audio.trunk_weights.size(); ++i) {
    fn("audio.trunk_w" + std::to_string(i), p.audio.trunk_weights[i]);
    fn("audio.trunk_b" + std::to_string(i), p.audio.trunk_biases[i]);
  }
  for (std::size_t i = 0; i < p.audio.head_weights.size(); ++i) {
    fn("audio.head_w" + std::to_string(i), p.audio.head_weights[i]);
    fn("audio.head_b" + std::to_string(i), p.audio.head_biases[i]);
  }
}

// Graph-side handles for one training step. Parameter nodes are inserted in
// the same canonical order as for_each_param.
struct EncoderVars {
  std::vector<ad::Var> image_weights, image_biases;
  std::vector<ad::Var> trunk_weights, trunk_biases;
  std::vector<ad::Var> head_weights, head_biases;
  std::vector<ad::Var> all;  // canonical order, aligned with for_each_param
};

EncoderVars insert_params(ad::Graph& g, const EncoderParams& params);

// regions: m x D_v constant -> m x C unit-norm embeddings.
ad::Var encode_image(const EncoderVars& vars, ad::Var regions);
ad::Var encode_image(ad::Graph& g, const EncoderVars& vars, const Array& regions);

// mixture features: D_a (or 1 x D_a) -> k x C, row j from head j.
ad::Var encode_audio(ad::Graph& g, const EncoderVars& vars, const Array& features);

// Collapses k head rows into one unit-norm summary row (their mean,
// renormalized). Single-source losses need one embedding per clip.
ad::Var mean_head_embedding(ad::Graph& g, ad::Var heads);

// Plain evaluation paths; same arithmetic via a scratch graph.
Array encode_image_eval(const EncoderParams& params, const Array& regions);
Array encode_audio_eval(const EncoderParams& params, const Array& features);

}  // namespace mixloc::enc
