#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mixloc/encoders.hpp"
#include "mixloc/graph.hpp"
#include "mixloc/metrics.hpp"
#include "mixloc/scenegen.hpp"

namespace mixloc::train {

// Full experiment description. Every field has a JSON key of the same name;
// `config_from_json` fills omitted keys from these defaults.
struct TrainConfig {
  std::string loss = "cyc";  // cyc | isi | mixed_corresp | pit | corresp
  // Optional weighted combination; when nonempty it overrides `loss`.
  std::vector<std::pair<std::string, double>> loss_weights;
  double tau = 0.07;
  std::size_t k = 2;           // sources per mixture == audio heads
  std::size_t embed_dim = 16;  // shared embedding width C
  std::size_t hidden_dim = 32;
  std::size_t image_layers = 2;
  std::size_t trunk_layers = 2;
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  bool use_shifted = true;
  double init_scale = 0.08;
  std::size_t eval_every = 0;  // 0 disables mid-run evaluation
  std::size_t corresp_pretrain_steps = 0;
  gen::WorldSpec world;        // world.seed defaults to `seed` when omitted in JSON
  gen::SplitSizes splits{0, 128, 256};  // train 0 = sized to steps * batch_size
};

TrainConfig config_from_json(const std::string& json_text);
std::string config_to_json(const TrainConfig& c);
TrainConfig load_config_file(const std::filesystem::path& path);

enc::EncoderDims encoder_dims(const TrainConfig& c);
gen::SplitSizes effective_splits(const TrainConfig& c);
gen::Manifest manifest_for(const TrainConfig& c);

// Adam with bias correction. Moment arrays follow the canonical parameter
// order of enc::for_each_param.
struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Array> first_moment;
  std::vector<Array> second_moment;
};

OptimizerState make_optimizer(const enc::EncoderParams& params, double learning_rate);

// One-tensor Adam update, exposed so the optimizer arithmetic can be checked
// against a direct scalar iteration.
void adam_update_inplace(Array& param, const Array& grad, Array& m, Array& v,
                         std::size_t step, double lr, double beta1, double beta2, double eps);

void adam_step(enc::EncoderParams& params, const ad::GradientMap& grads, OptimizerState& state);

struct EvalPoint {
  std::size_t step = 0;
  std::vector<std::pair<std::string, double>> values;
};

struct Checkpoint {
  TrainConfig config;
  enc::EncoderParams params;
  OptimizerState opt;
  std::size_t step = 0;
  std::vector<double> loss_history;     // one entry per step
  std::vector<EvalPoint> eval_history;  // at the eval_every cadence
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

// Runs the full loop: sample batch -> encode -> loss -> backward -> Adam.
// Deterministic given the config; throws on a non-finite loss.
Checkpoint train(const TrainConfig& config, const ProgressFn& progress = nullptr);

// Both evaluation protocols over the given examples: mixture maps scored
// with best-pairing CAP / PIAP / CIoU / AUC on the stacked per-source
// canvas, and single-source maps (solo audio, mean over heads) scored with
// AP / IoU / AUC. Head-agreement cosines land in the report diagnostics.
metrics::MetricReport evaluate(const Checkpoint& ckpt, const gen::World& world,
                               std::span<const gen::ExampleRef> refs);
metrics::MetricReport evaluate_split(const Checkpoint& ckpt, std::string_view split);

// <prefix>.json (config, optimizer scalars, histories) + <prefix>.bin
// (parameters then both moment sets, canonical order). Save -> load -> save
// is byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& prefix);
Checkpoint load_checkpoint(const std::filesystem::path& prefix);

// Per example: one PGM + one raw map file per source on the stacked canvas,
// plus the ground-truth masks.
void export_maps(const Checkpoint& ckpt, std::string_view split, std::size_t count,
                 const std::filesystem::path& out_dir);

// MIXLOC_THREADS (>= 1, default 1). Parallel paths merge per-sample results
// in manifest order, so the thread count never changes any output.
std::size_t thread_count();

inline constexpr double kBinarizeThreshold = 0.4;
inline constexpr double kCiouSuccessThreshold = 0.3;

}  // namespace mixloc::train
