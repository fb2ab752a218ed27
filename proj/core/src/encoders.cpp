#include "mixloc/encoders.hpp"

#include <stdexcept>

#include "mixloc/rng.hpp"

namespace mixloc::enc {

namespace {

Array draw_uniform(Rng& rng, std::vector<std::size_t> shape, double scale) {
  Array a(std::move(shape));
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-scale, scale);
  return a;
}

void check_input_dim(const Array& x, std::size_t expected, const char* what) {
  if (x.cols() != expected) {
    throw std::invalid_argument(std::string(what) + ": expected feature dimension " +
                                std::to_string(expected) + ", got " + std::to_string(x.cols()));
  }
}

}  // namespace

EncoderParams init_params(std::uint64_t seed, const EncoderDims& dims, double scale) {
  if (dims.visual_dim < 1 || dims.audio_dim < 1 || dims.hidden_dim < 1 || dims.embed_dim < 1 ||
      dims.heads < 1 || dims.image_layers < 1 || dims.trunk_layers < 1) {
    throw std::invalid_argument("init_params: all dimensions must be >= 1");
  }
  if (scale < 0.0) throw std::invalid_argument("init_params: scale must be nonnegative");

  Rng rng(mix_seed(seed, 0x70617261));  // params stream

  EncoderParams p;
  // image: visual_dim -> hidden ... -> embed_dim
  std::vector<std::size_t> widths{dims.visual_dim};
  for (std::size_t i = 0; i + 1 < dims.image_layers; ++i) widths.push_back(dims.hidden_dim);
  widths.push_back(dims.embed_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    p.image.weights.push_back(draw_uniform(rng, {widths[i], widths[i + 1]}, scale));
    p.image.biases.push_back(draw_uniform(rng, {widths[i + 1]}, scale));
  }
  // audio trunk: audio_dim -> hidden ... -> hidden
  std::size_t in = dims.audio_dim;
  for (std::size_t i = 0; i < dims.trunk_layers; ++i) {
    p.audio.trunk_weights.push_back(draw_uniform(rng, {in, dims.hidden_dim}, scale));
    p.audio.trunk_biases.push_back(draw_uniform(rng, {dims.hidden_dim}, scale));
    in = dims.hidden_dim;
  }
  for (std::size_t h = 0; h < dims.heads; ++h) {
    p.audio.head_weights.push_back(draw_uniform(rng, {dims.hidden_dim, dims.embed_dim}, scale));
    p.audio.head_biases.push_back(draw_uniform(rng, {dims.embed_dim}, scale));
  }
  return p;
}

EncoderVars insert_params(ad::Graph& g, const EncoderParams& params) {
  EncoderVars v;
  for_each_param(params, [&](const std::string&, const Array& a) {
    v.all.push_back(g.parameter(a));
  });
  std::size_t idx = 0;
  for (std::size_t i = 0; i < params.image.weights.size(); ++i) {
    v.image_weights.push_back(v.all[idx++]);
    v.image_biases.push_back(v.all[idx++]);
  }
  for (std::size_t i = 0; i < params.audio.trunk_weights.size(); ++i) {
    v.trunk_weights.push_back(v.all[idx++]);
    v.trunk_biases.push_back(v.all[idx++]);
  }
  for (std::size_t i = 0; i < params.audio.head_weights.size(); ++i) {
    v.head_weights.push_back(v.all[idx++]);
    v.head_biases.push_back(v.all[idx++]);
  }
  return v;
}

ad::Var encode_image(const EncoderVars& vars, ad::Var regions) {
  check_input_dim(regions.value(), vars.image_weights[0].value().rows(), "encode_image");
  ad::Var h = regions;
  for (std::size_t i = 0; i < vars.image_weights.size(); ++i) {
    h = ad::affine(h, vars.image_weights[i], vars.image_biases[i]);
    if (i + 1 < vars.image_weights.size()) h = ad::tanh(h);
  }
  return ad::l2_normalize_rows(h, kNormEps);
}

ad::Var encode_image(ad::Graph& g, const EncoderVars& vars, const Array& regions) {
  return encode_image(vars, g.constant(regions));
}

ad::Var encode_audio(ad::Graph& g, const EncoderVars& vars, const Array& features) {
  Array row = features;
  if (row.rank() == 1) row = Array({1, row.numel()}, std::vector<double>(row.data().begin(), row.data().end()));
  check_input_dim(row, vars.trunk_weights[0].value().rows(), "encode_audio");
  ad::Var h = g.constant(row);
  for (std::size_t i = 0; i < vars.trunk_weights.size(); ++i) {
    h = ad::tanh(ad::affine(h, vars.trunk_weights[i], vars.trunk_biases[i]));
  }
  std::vector<ad::Var> heads;
  heads.reserve(vars.head_weights.size());
  for (std::size_t j = 0; j < vars.head_weights.size(); ++j) {
    heads.push_back(ad::affine(h, vars.head_weights[j], vars.head_biases[j]));
  }
  return ad::l2_normalize_rows(ad::concat_rows(heads), kNormEps);
}

ad::Var mean_head_embedding(ad::Graph& g, ad::Var heads) {
  const std::size_t k = heads.value().rows();
  return ad::l2_normalize_rows(
      ad::matmul(g.constant(Array::full({1, k}, 1.0 / double(k))), heads), kNormEps);
}

Array encode_image_eval(const EncoderParams& params, const Array& regions) {
  ad::Graph g;
  EncoderVars vars = insert_params(g, params);
  return encode_image(g, vars, regions).value();
}

Array encode_audio_eval(const EncoderParams& params, const Array& features) {
  ad::Graph g;
  EncoderVars vars = insert_params(g, params);
  return encode_audio(g, vars, features).value();
}

}  // namespace mixloc::enc
