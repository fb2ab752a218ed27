#include "mixloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "mixloc/io.hpp"
#include "mixloc/ops.hpp"
#include "mixloc/rng.hpp"
#include "mixloc/walk.hpp"

namespace mixloc::train {
namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string> kLossNames = {"cyc", "isi", "mixed_corresp", "pit", "corresp"};

bool known_loss(const std::string& name) {
  return std::find(kLossNames.begin(), kLossNames.end(), name) != kLossNames.end();
}

void check_config(const TrainConfig& c) {
  if (c.tau <= 0) throw std::invalid_argument("config: tau must be positive");
  if (c.learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be positive");
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.steps < 1) throw std::invalid_argument("config: steps must be >= 1");
  if (c.embed_dim < 1 || c.hidden_dim < 1) {
    throw std::invalid_argument("config: embed_dim and hidden_dim must be >= 1");
  }
  if (c.k < 1) throw std::invalid_argument("config: k must be >= 1");

  std::vector<std::pair<std::string, double>> parts = c.loss_weights;
  if (parts.empty()) parts.emplace_back(c.loss, 1.0);
  bool any_positive = false;
  for (const auto& [name, weight] : parts) {
    if (!known_loss(name)) {
      throw std::invalid_argument("config: unknown loss '" + name + "'");
    }
    if (weight < 0) throw std::invalid_argument("config: loss weight for '" + name +
                                                "' must be nonnegative");
    any_positive = any_positive || weight > 0;
    const bool needs_mixtures = name != "corresp";
    if (needs_mixtures && c.k < 2) {
      throw std::invalid_argument("config: loss '" + name + "' needs k >= 2");
    }
    const bool needs_batch_negatives = name == "corresp" || name == "mixed_corresp";
    if (needs_batch_negatives && c.batch_size < 2) {
      throw std::invalid_argument("config: loss '" + name + "' needs batch_size >= 2");
    }
  }
  if (!any_positive) throw std::invalid_argument("config: all loss weights are zero");
  if (c.k > c.world.num_classes) {
    throw std::invalid_argument("config: k exceeds the number of world classes");
  }
  if (c.corresp_pretrain_steps > 0 && c.batch_size < 2) {
    throw std::invalid_argument("config: correspondence pretraining needs batch_size >= 2");
  }
}

// --- JSON <-> config ---

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

gen::WorldSpec world_from_json(const json& j, std::uint64_t fallback_seed) {
  gen::WorldSpec w;
  w.seed = fallback_seed;
  static const std::vector<std::string> keys = {
      "num_classes",        "visual_dim",        "audio_dim",
      "grid_size",          "source_extent",     "visual_noise_sigma",
      "audio_noise_sigma",  "shift_noise_sigma", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw std::invalid_argument("config: unknown world key '" + key + "'");
    }
  }
  read_field(j, "num_classes", w.num_classes);
  read_field(j, "visual_dim", w.visual_dim);
  read_field(j, "audio_dim", w.audio_dim);
  read_field(j, "grid_size", w.grid_size);
  read_field(j, "source_extent", w.source_extent);
  read_field(j, "visual_noise_sigma", w.visual_noise_sigma);
  read_field(j, "audio_noise_sigma", w.audio_noise_sigma);
  read_field(j, "shift_noise_sigma", w.shift_noise_sigma);
  read_field(j, "seed", w.seed);
  return w;
}

json world_to_json(const gen::WorldSpec& w) {
  return json{{"num_classes", w.num_classes},
              {"visual_dim", w.visual_dim},
              {"audio_dim", w.audio_dim},
              {"grid_size", w.grid_size},
              {"source_extent", w.source_extent},
              {"visual_noise_sigma", w.visual_noise_sigma},
              {"audio_noise_sigma", w.audio_noise_sigma},
              {"shift_noise_sigma", w.shift_noise_sigma},
              {"seed", w.seed}};
}

TrainConfig config_from_parsed(const json& j) {
  static const std::vector<std::string> keys = {
      "loss",        "loss_weights", "tau",       "k",          "embed_dim",
      "hidden_dim",  "image_layers", "trunk_layers", "learning_rate", "batch_size",
      "steps",       "seed",         "use_shifted",  "init_scale",    "eval_every",
      "corresp_pretrain_steps",      "world",        "splits"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  TrainConfig c;
  read_field(j, "loss", c.loss);
  read_field(j, "tau", c.tau);
  read_field(j, "k", c.k);
  read_field(j, "embed_dim", c.embed_dim);
  read_field(j, "hidden_dim", c.hidden_dim);
  read_field(j, "image_layers", c.image_layers);
  read_field(j, "trunk_layers", c.trunk_layers);
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "steps", c.steps);
  read_field(j, "seed", c.seed);
  read_field(j, "use_shifted", c.use_shifted);
  read_field(j, "init_scale", c.init_scale);
  read_field(j, "eval_every", c.eval_every);
  read_field(j, "corresp_pretrain_steps", c.corresp_pretrain_steps);
  if (j.contains("loss_weights")) {
    for (const auto& [name, weight] : j.at("loss_weights").items()) {
      c.loss_weights.emplace_back(name, weight.get<double>());
    }
  }
  c.world = world_from_json(j.contains("world") ? j.at("world") : json::object(), c.seed);
  if (j.contains("splits")) {
    const json& s = j.at("splits");
    read_field(s, "train", c.splits.train);
    read_field(s, "val", c.splits.val);
    read_field(s, "test", c.splits.test);
  }
  check_config(c);
  return c;
}

std::vector<std::pair<std::string, double>> loss_parts(const TrainConfig& c) {
  if (!c.loss_weights.empty()) return c.loss_weights;
  return {{c.loss, 1.0}};
}

json config_json(const TrainConfig& c) {
  json j;
  j["loss"] = c.loss;
  if (!c.loss_weights.empty()) {
    json w;
    for (const auto& [name, weight] : c.loss_weights) w[name] = weight;
    j["loss_weights"] = std::move(w);
  }
  j["tau"] = c.tau;
  j["k"] = c.k;
  j["embed_dim"] = c.embed_dim;
  j["hidden_dim"] = c.hidden_dim;
  j["image_layers"] = c.image_layers;
  j["trunk_layers"] = c.trunk_layers;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["seed"] = c.seed;
  j["use_shifted"] = c.use_shifted;
  j["init_scale"] = c.init_scale;
  j["eval_every"] = c.eval_every;
  j["corresp_pretrain_steps"] = c.corresp_pretrain_steps;
  j["world"] = world_to_json(c.world);
  j["splits"] = json{{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}};
  return j;
}

// --- data plumbing ---

constexpr std::uint64_t kSecondViewTag = 0x76696577;  // per-slot second views
constexpr std::uint64_t kSoloTag = 0x736f6c6f;        // single-source pairs

// Solo (image, audio) pair for correspondence batches; independent of k.
gen::Scene solo_scene(const gen::World& world, std::uint64_t seed) {
  Rng rng(mix_seed(seed, kSoloTag));
  const std::size_t class_id = rng.index(world.spec.num_classes);
  return gen::sample_scene(world, class_id, rng.next());
}

struct BatchData {
  std::vector<gen::Mixture> mixtures;
  std::vector<std::vector<gen::Scene>> second_views;  // per mixture, per slot
  std::vector<gen::Scene> solos;
};

struct BatchVars {
  std::vector<walk::MixtureVars> mixtures;
  std::vector<ad::Var> solo_grids;
  std::vector<ad::Var> solo_audio_rows;
};

// Encodes every region grid of the step in one stacked pass, then slices the
// result back apart. Row-local ops make this bit-identical to per-grid
// encoding while amortizing the matmuls.
BatchVars encode_batch(ad::Graph& g, const enc::EncoderVars& vars, const BatchData& data,
                       bool need_shifted, std::size_t grid) {
  const std::size_t m = grid * grid;
  std::vector<const Array*> stack;
  for (const gen::Mixture& mix : data.mixtures)
    for (const gen::Scene& scene : mix.scenes) stack.push_back(&scene.regions);
  for (const std::vector<gen::Scene>& views : data.second_views)
    for (const gen::Scene& scene : views) stack.push_back(&scene.regions);
  for (const gen::Scene& scene : data.solos) stack.push_back(&scene.regions);

  ad::Var encoded = enc::encode_image(g, vars, concat_rows(stack));
  std::size_t row = 0;
  auto next_grid = [&]() {
    ad::Var slice = ad::slice_rows(encoded, row, m);
    row += m;
    return slice;
  };

  BatchVars out;
  for (const gen::Mixture& mix : data.mixtures) {
    walk::MixtureVars mv;
    for (std::size_t s = 0; s < mix.scenes.size(); ++s) mv.images.push_back(next_grid());
    out.mixtures.push_back(std::move(mv));
  }
  for (std::size_t i = 0; i < data.second_views.size(); ++i) {
    for (std::size_t s = 0; s < data.second_views[i].size(); ++s) {
      out.mixtures[i].second_views.push_back(next_grid());
    }
  }
  for (std::size_t i = 0; i < data.solos.size(); ++i) out.solo_grids.push_back(next_grid());

  for (std::size_t i = 0; i < data.mixtures.size(); ++i) {
    out.mixtures[i].audio = enc::encode_audio(g, vars, data.mixtures[i].mixed_audio);
    if (need_shifted) {
      out.mixtures[i].shifted_audio =
          enc::encode_audio(g, vars, data.mixtures[i].shifted_mixed_audio);
    }
  }
  for (const gen::Scene& scene : data.solos) {
    out.solo_audio_rows.push_back(
        enc::mean_head_embedding(g, enc::encode_audio(g, vars, scene.audio)));
  }
  return out;
}

ad::Var mean_over(const std::vector<ad::Var>& terms) {
  ad::Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / double(terms.size()));
}

ad::Var build_loss(const TrainConfig& c, const std::string& name, const BatchVars& batch) {
  if (name == "corresp") {
    return walk::loss_correspondence(batch.solo_grids, ad::concat_rows(batch.solo_audio_rows),
                                     c.tau);
  }
  if (name == "mixed_corresp") {
    return walk::loss_mixed_correspondence(batch.mixtures, c.tau);
  }
  std::vector<ad::Var> terms;
  terms.reserve(batch.mixtures.size());
  for (const walk::MixtureVars& mix : batch.mixtures) {
    if (name == "cyc") {
      terms.push_back(walk::loss_cycle(mix, c.tau, c.use_shifted));
    } else if (name == "isi") {
      terms.push_back(walk::loss_image_cycle(mix, c.tau));
    } else {
      terms.push_back(walk::loss_permutation_invariant(mix));
    }
  }
  return mean_over(terms);
}

// --- evaluation helpers ---

double map_cosine(const Array& a, const Array& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa < 1e-24 || bb < 1e-24) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double mean_pairwise_cosine(std::span<const Array> maps) {
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t j = i + 1; j < maps.size(); ++j) {
      total += map_cosine(maps[i], maps[j]);
      ++pairs;
    }
  }
  return pairs ? total / double(pairs) : 0.0;
}

// Everything evaluate() needs from one example, computed in parallel and
// merged in manifest order.
struct SampleEval {
  metrics::EvalSample multi;       // canvas maps + per-class canvas masks
  double class_iou = 0.0;          // class-aware IoU of `multi`
  double single_ap = 0.0;          // mean-map AP on the solo scene
  double single_iou = 0.0;
  double cosine_mixed = 0.0;       // head map agreement, mixture audio
  double cosine_unmixed = 0.0;     // head map agreement, solo audio
};

SampleEval eval_one(const enc::EncoderParams& params, const gen::World& world, std::size_t k,
                    std::uint64_t seed) {
  const std::size_t g = world.spec.grid_size;
  const gen::Mixture mix = gen::sample_mixture(world, k, seed);

  std::vector<Array> grids;  // unit-norm region embeddings per scene
  grids.reserve(k);
  for (const gen::Scene& scene : mix.scenes)
    grids.push_back(enc::encode_image_eval(params, scene.regions));
  const Array audio = enc::encode_audio_eval(params, mix.mixed_audio);

  SampleEval out;
  // Stack the k per-scene maps of each head into one (k*g) x g canvas.
  for (std::size_t h = 0; h < k; ++h) {
    Array canvas({k * g, g});
    const Array head({1, audio.cols()},
                     {audio.data().begin() + h * audio.cols(),
                      audio.data().begin() + (h + 1) * audio.cols()});
    for (std::size_t s = 0; s < k; ++s) {
      const Array block = walk::localization_map(grids[s], head, g, g);
      std::copy(block.data().begin(), block.data().end(),
                canvas.data().begin() + s * g * g);
    }
    out.multi.maps.push_back(std::move(canvas));
  }
  for (std::size_t s = 0; s < k; ++s) {
    Array mask({k * g, g});
    std::copy(mix.scenes[s].mask.data().begin(), mix.scenes[s].mask.data().end(),
              mask.data().begin() + s * g * g);
    out.multi.masks.push_back(metrics::MaskEntry{mix.scenes[s].class_id, std::move(mask), true});
  }
  out.class_iou = metrics::class_aware_iou(out.multi, kBinarizeThreshold);
  out.cosine_mixed = mean_pairwise_cosine(out.multi.maps);

  // Single-source protocol on the first scene's solo audio.
  const gen::Scene& solo = mix.scenes[0];
  const Array solo_audio = enc::encode_audio_eval(params, solo.audio);
  std::vector<Array> head_maps;
  Array mean_map({g, g});
  for (std::size_t h = 0; h < k; ++h) {
    const Array head({1, solo_audio.cols()},
                     {solo_audio.data().begin() + h * solo_audio.cols(),
                      solo_audio.data().begin() + (h + 1) * solo_audio.cols()});
    head_maps.push_back(walk::localization_map(grids[0], head, g, g));
    for (std::size_t i = 0; i < mean_map.numel(); ++i) mean_map[i] += head_maps.back()[i];
  }
  for (std::size_t i = 0; i < mean_map.numel(); ++i) mean_map[i] /= double(k);
  out.cosine_unmixed = mean_pairwise_cosine(head_maps);
  out.single_ap = metrics::pixel_ap(mean_map, solo.mask);
  out.single_iou =
      metrics::iou_at(metrics::normalize_map(mean_map), solo.mask, kBinarizeThreshold);
  return out;
}

json optimizer_to_json(const OptimizerState& opt) {
  return json{{"learning_rate", opt.learning_rate},
              {"beta1", opt.beta1},
              {"beta2", opt.beta2},
              {"epsilon", opt.epsilon},
              {"step", opt.step}};
}

}  // namespace

TrainConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_parsed(j);
}

std::string config_to_json(const TrainConfig& c) { return config_json(c).dump(2) + "\n"; }

TrainConfig load_config_file(const std::filesystem::path& path) {
  return config_from_json(io::read_text_file(path));
}

enc::EncoderDims encoder_dims(const TrainConfig& c) {
  enc::EncoderDims d;
  d.visual_dim = c.world.visual_dim;
  d.audio_dim = c.world.audio_dim;
  d.hidden_dim = c.hidden_dim;
  d.embed_dim = c.embed_dim;
  d.heads = c.k;
  d.image_layers = c.image_layers;
  d.trunk_layers = c.trunk_layers;
  return d;
}

gen::SplitSizes effective_splits(const TrainConfig& c) {
  gen::SplitSizes s = c.splits;
  if (s.train == 0) s.train = c.steps * c.batch_size;
  return s;
}

gen::Manifest manifest_for(const TrainConfig& c) {
  return gen::dataset_manifest(effective_splits(c), c.seed);
}

OptimizerState make_optimizer(const enc::EncoderParams& params, double learning_rate) {
  OptimizerState opt;
  opt.learning_rate = learning_rate;
  enc::for_each_param(params, [&](const std::string&, const Array& a) {
    opt.first_moment.push_back(Array::zeros(a.shape()));
    opt.second_moment.push_back(Array::zeros(a.shape()));
  });
  return opt;
}

void adam_update_inplace(Array& param, const Array& grad, Array& m, Array& v,
                         std::size_t step, double lr, double beta1, double beta2, double eps) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
    throw std::invalid_argument("adam_update_inplace: shape mismatch, param " +
                                shape_str(param.shape()) + " vs grad " +
                                shape_str(grad.shape()));
  }
  const double bc1 = 1.0 - std::pow(beta1, double(step));
  const double bc2 = 1.0 - std::pow(beta2, double(step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

void adam_step(enc::EncoderParams& params, const ad::GradientMap& grads, OptimizerState& state) {
  std::size_t count = 0;
  enc::for_each_param(params, [&](const std::string&, const Array&) { ++count; });
  if (grads.size() != count || state.first_moment.size() != count) {
    throw std::invalid_argument("adam_step: gradient map covers " +
                                std::to_string(grads.size()) + " tensors, expected " +
                                std::to_string(count));
  }
  ++state.step;
  std::size_t i = 0;
  auto it = grads.begin();
  enc::for_each_param(params, [&](const std::string&, Array& p) {
    adam_update_inplace(p, it->second, state.first_moment[i], state.second_moment[i],
                        state.step, state.learning_rate, state.beta1, state.beta2,
                        state.epsilon);
    ++i;
    ++it;
  });
}

Checkpoint train(const TrainConfig& config, const ProgressFn& progress) {
  check_config(config);
  const gen::World world = gen::make_world(config.world);
  const gen::Manifest manifest = manifest_for(config);
  const std::size_t train_size = manifest.train.size();

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.params = enc::init_params(config.seed, encoder_dims(config), config.init_scale);
  ckpt.opt = make_optimizer(ckpt.params, config.learning_rate);
  ckpt.loss_history.reserve(config.steps);

  const std::vector<std::pair<std::string, double>> parts = loss_parts(config);
  bool wants_mixtures = false;
  bool wants_solos = config.corresp_pretrain_steps > 0;
  bool wants_views = false;
  bool wants_shifted = false;
  for (const auto& [name, weight] : parts) {
    wants_mixtures = wants_mixtures || name != "corresp";
    wants_solos = wants_solos || name == "corresp";
    wants_views = wants_views || name == "isi";
    wants_shifted = wants_shifted || (name == "cyc" && config.use_shifted);
  }

  for (std::size_t step = 1; step <= config.steps; ++step) {
    const bool pretrain = step <= config.corresp_pretrain_steps;

    BatchData data;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t idx = ((step - 1) * config.batch_size + b) % train_size;
      const gen::ExampleRef& ref = manifest.train[idx];
      if (wants_mixtures && !pretrain) {
        gen::Mixture mix = gen::sample_mixture(world, config.k, ref.seed);
        if (wants_views) {
          std::vector<gen::Scene> views;
          for (std::size_t s = 0; s < mix.scenes.size(); ++s) {
            views.push_back(gen::sample_scene(world, mix.scenes[s].class_id,
                                              mix_seed(ref.seed, kSecondViewTag + s)));
          }
          data.second_views.push_back(std::move(views));
        }
        data.mixtures.push_back(std::move(mix));
      }
      if (wants_solos || pretrain) data.solos.push_back(solo_scene(world, ref.seed));
    }

    ad::Graph g;
    enc::EncoderVars vars = enc::insert_params(g, ckpt.params);
    BatchVars batch = encode_batch(g, vars, data, wants_shifted, world.spec.grid_size);

    ad::Var total{};
    bool have_total = false;
    if (pretrain) {
      total = build_loss(config, "corresp", batch);
      have_total = true;
    } else {
      for (const auto& [name, weight] : parts) {
        if (weight == 0) continue;
        ad::Var term = ad::scale(build_loss(config, name, batch), weight);
        total = have_total ? ad::add(total, term) : term;
        have_total = true;
      }
    }

    const double loss_value = total.value()[0];
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }
    ckpt.loss_history.push_back(loss_value);

    ad::GradientMap grads = g.backward(total);
    adam_step(ckpt.params, grads, ckpt.opt);
    ckpt.step = step;

    if (progress) progress(step, loss_value);
    if (config.eval_every > 0 && step % config.eval_every == 0) {
      metrics::MetricReport report = evaluate(ckpt, world, manifest.val);
      EvalPoint point;
      point.step = step;
      point.values = report.values();
      ckpt.eval_history.push_back(std::move(point));
    }
  }
  return ckpt;
}

metrics::MetricReport evaluate(const Checkpoint& ckpt, const gen::World& world,
                               std::span<const gen::ExampleRef> refs) {
  if (!(world.spec == ckpt.config.world)) {
    throw std::invalid_argument("evaluate: world spec does not match the checkpoint");
  }
  if (refs.empty()) throw std::invalid_argument("evaluate: no examples");
  const std::size_t n = refs.size();

  std::vector<SampleEval> results(n);
  const std::size_t threads = std::min(thread_count(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      results[i] = eval_one(ckpt.params, world, ckpt.config.k, refs[i].seed);
    }
  } else {
    std::vector<std::thread> pool;
    std::size_t begin = 0;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t end = begin + (n - begin) / (threads - t);
      pool.emplace_back([&, begin, end] {
        for (std::size_t i = begin; i < end; ++i) {
          results[i] = eval_one(ckpt.params, world, ckpt.config.k, refs[i].seed);
        }
      });
      begin = end;
    }
    for (std::thread& th : pool) th.join();
  }

  // Aggregation is sequential and in manifest order regardless of threads.
  std::vector<metrics::EvalSample> samples;
  std::vector<double> class_ious, single_aps, single_ious;
  double piap_total = 0.0, cos_mixed = 0.0, cos_unmixed = 0.0;
  samples.reserve(n);
  for (SampleEval& r : results) {
    piap_total += metrics::piap(r.multi);
    class_ious.push_back(r.class_iou);
    single_aps.push_back(r.single_ap);
    single_ious.push_back(r.single_iou);
    cos_mixed += r.cosine_mixed;
    cos_unmixed += r.cosine_unmixed;
    samples.push_back(std::move(r.multi));
  }

  metrics::MetricReport report;
  report.sample_count = n;
  report.map_threshold = kBinarizeThreshold;
  report.add("cap", metrics::cap(samples));
  report.add("piap", piap_total / double(n));
  report.add("auc", metrics::auc_iou(class_ious));
  report.add("ciou@0.30", metrics::ciou_at(samples, kCiouSuccessThreshold, kBinarizeThreshold));
  double ap_total = 0.0, iou_total = 0.0;
  for (double v : single_aps) ap_total += v;
  for (double v : single_ious) iou_total += v;
  report.add("single_ap", ap_total / double(n));
  report.add("single_iou@0.40", iou_total / double(n));
  report.add("single_auc", metrics::auc_iou(single_ious));
  report.add_diagnostic("head_cosine_mixed", cos_mixed / double(n));
  report.add_diagnostic("head_cosine_unmixed", cos_unmixed / double(n));
  return report;
}

metrics::MetricReport evaluate_split(const Checkpoint& ckpt, std::string_view split) {
  const gen::World world = gen::make_world(ckpt.config.world);
  const gen::Manifest manifest = manifest_for(ckpt.config);
  return evaluate(ckpt, world, gen::manifest_split(manifest, split));
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& prefix) {
  std::filesystem::path json_path = prefix;
  json_path += ".json";
  std::filesystem::path bin_path = prefix;
  bin_path += ".bin";

  json j;
  j["format"] = "mixloc-checkpoint-v1";
  j["step"] = ckpt.step;
  j["config"] = config_json(ckpt.config);
  j["optimizer"] = optimizer_to_json(ckpt.opt);
  j["loss_history"] = ckpt.loss_history;
  json evals = json::array();
  for (const EvalPoint& p : ckpt.eval_history) {
    json values;
    for (const auto& [name, value] : p.values) values[name] = value;
    evals.push_back(json{{"step", p.step}, {"values", std::move(values)}});
  }
  j["eval_history"] = std::move(evals);
  j["arrays_file"] = bin_path.filename().string();
  io::write_text_file(json_path, j.dump(2) + "\n");

  std::vector<Array> arrays;
  enc::for_each_param(ckpt.params, [&](const std::string&, const Array& a) {
    arrays.push_back(a);
  });
  arrays.insert(arrays.end(), ckpt.opt.first_moment.begin(), ckpt.opt.first_moment.end());
  arrays.insert(arrays.end(), ckpt.opt.second_moment.begin(), ckpt.opt.second_moment.end());
  io::write_arrays(bin_path, arrays);
}

Checkpoint load_checkpoint(const std::filesystem::path& prefix) {
  std::filesystem::path json_path = prefix;
  if (json_path.extension() != ".json") json_path += ".json";
  const json j = json::parse(io::read_text_file(json_path));
  if (!j.contains("format") || j.at("format") != "mixloc-checkpoint-v1") {
    throw std::runtime_error("load_checkpoint: " + json_path.string() +
                             " is not a checkpoint file");
  }

  Checkpoint ckpt;
  ckpt.config = config_from_parsed(j.at("config"));
  ckpt.step = j.at("step").get<std::size_t>();
  ckpt.loss_history = j.at("loss_history").get<std::vector<double>>();
  for (const json& p : j.at("eval_history")) {
    EvalPoint point;
    point.step = p.at("step").get<std::size_t>();
    for (const auto& [name, value] : p.at("values").items()) {
      point.values.emplace_back(name, value.get<double>());
    }
    ckpt.eval_history.push_back(std::move(point));
  }

  // Rebuild the parameter skeleton, then fill every tensor from the binary
  // payload in canonical order.
  ckpt.params = enc::init_params(0, encoder_dims(ckpt.config), 0.0);
  const json& opt = j.at("optimizer");
  ckpt.opt.learning_rate = opt.at("learning_rate").get<double>();
  ckpt.opt.beta1 = opt.at("beta1").get<double>();
  ckpt.opt.beta2 = opt.at("beta2").get<double>();
  ckpt.opt.epsilon = opt.at("epsilon").get<double>();
  ckpt.opt.step = opt.at("step").get<std::size_t>();

  std::filesystem::path bin_path = json_path.parent_path() / j.at("arrays_file").get<std::string>();
  std::vector<Array> arrays = io::read_arrays(bin_path);
  std::size_t count = 0;
  enc::for_each_param(ckpt.params, [&](const std::string&, const Array&) { ++count; });
  if (arrays.size() != 3 * count) {
    throw std::runtime_error("load_checkpoint: " + bin_path.string() + " holds " +
                             std::to_string(arrays.size()) + " arrays, expected " +
                             std::to_string(3 * count));
  }
  std::size_t i = 0;
  enc::for_each_param(ckpt.params, [&](const std::string& name, Array& p) {
    if (!p.same_shape(arrays[i])) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    }
    p = arrays[i];
    ++i;
  });
  ckpt.opt.first_moment.assign(arrays.begin() + i, arrays.begin() + i + count);
  ckpt.opt.second_moment.assign(arrays.begin() + i + count, arrays.end());
  return ckpt;
}

void export_maps(const Checkpoint& ckpt, std::string_view split, std::size_t count,
                 const std::filesystem::path& out_dir) {
  const gen::World world = gen::make_world(ckpt.config.world);
  const gen::Manifest manifest = manifest_for(ckpt.config);
  std::span<const gen::ExampleRef> refs = gen::manifest_split(manifest, split);
  count = std::min(count, refs.size());
  if (count == 0) throw std::invalid_argument("export_maps: no examples to export");
  std::filesystem::create_directories(out_dir);

  for (std::size_t i = 0; i < count; ++i) {
    const SampleEval r = eval_one(ckpt.params, world, ckpt.config.k, refs[i].seed);
    const std::string stem = "example_" + std::to_string(refs[i].index);
    for (std::size_t h = 0; h < r.multi.maps.size(); ++h) {
      const std::string map_stem = stem + "_map_" + std::to_string(h);
      io::write_pgm(out_dir / (map_stem + ".pgm"), r.multi.maps[h]);
      io::write_arrays(out_dir / (map_stem + ".bin"), {r.multi.maps[h]});
    }
    for (std::size_t s = 0; s < r.multi.masks.size(); ++s) {
      const std::string mask_stem =
          stem + "_mask_" + std::to_string(r.multi.masks[s].class_id);
      io::write_pgm(out_dir / (mask_stem + ".pgm"), r.multi.masks[s].mask);
      io::write_arrays(out_dir / (mask_stem + ".bin"), {r.multi.masks[s].mask});
    }
  }
}

std::size_t thread_count() {
  const char* env = std::getenv("MIXLOC_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || value < 1) return 1;
  return static_cast<std::size_t>(value);
}

}  // namespace mixloc::train
