#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mixloc/encoders.hpp"
#include "mixloc/graph.hpp"

namespace mixloc::gradcheck {

// Rebuilds the loss on a fresh graph from the given parameter handles. Input
// data must live in the closure so repeated builds differ only in params.
using LossBuilder = std::function<ad::Var(ad::Graph&, const enc::EncoderVars&)>;

struct CheckSettings {
  double step = 1e-5;                  // central-difference half step
  double tolerance = 1e-4;             // relative error bound
  std::size_t coords_per_tensor = 6;   // sampled coordinates per parameter
  std::uint64_t coord_seed = 0;
};

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;  // over near-zero gradient entries
  std::size_t coords_checked = 0;
  bool pass = false;
};

// Compares reverse-mode gradients against central finite differences on a
// seeded random subset of parameter coordinates.
CheckResult check_loss(const std::string& name, const enc::EncoderParams& params,
                       const LossBuilder& build, const CheckSettings& settings = {});

// All five losses through the full encoder stack at probe dimensions,
// `rounds` independently seeded settings each. Settings that sit near a
// max or pairing tie are reseeded, so every check runs at a smooth point.
std::vector<CheckResult> run_standard_checks(std::uint64_t base_seed, std::size_t rounds,
                                             const CheckSettings& settings = {});

}  // namespace mixloc::gradcheck
