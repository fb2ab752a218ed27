#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixloc/array.hpp"

namespace mixloc::metrics {

// Ground truth for one class in a sample. `sounding` is the delta indicator:
// silent classes are excluded from class-aware scores.
struct MaskEntry {
  std::size_t class_id = 0;
  Array mask;  // g x g, entries 0 or 1
  bool sounding = true;
};

// Predicted maps plus per-class ground truth. For class-aligned protocols
// maps[i] corresponds to masks[i]; pairing-based protocols ignore the order.
struct EvalSample {
  std::vector<Array> maps;
  std::vector<MaskEntry> masks;
};

// Min-max to [0,1]; a constant map becomes all zeros so it fails every
// positive threshold.
Array normalize_map(const Array& map);

// Intersection over union of (map >= t) against the mask. Both empty counts
// as a perfect match.
double iou_at(const Array& map, const Array& mask, double t);

// Area under the success-ratio curve: fraction of samples with IoU >= theta,
// theta swept over {0, 0.05, ..., 1}, integrated with the trapezoid rule.
double auc_iou(std::span<const double> ious);

// All-points average precision of score-ranked pixels, ties grouped at a
// shared threshold. Invariant to strictly monotonic rescaling of the scores.
double pixel_ap(const Array& map, const Array& mask);

using PairMetric = std::function<double(const Array& map, const Array& mask)>;

struct PairingResult {
  double score = 0.0;                 // mean metric over the winning bijection
  std::vector<std::size_t> pairing;   // pairing[i] = mask index for map i
};

// Max over all bijections between maps and masks of the mean per-pair metric.
// Ties keep the identity bijection. k' capped at 8.
PairingResult best_pairing_eval(std::span<const Array> maps, std::span<const Array> masks,
                                const PairMetric& metric);
inline constexpr std::size_t kMaxPairingEnumeration = 8;

// Class-aware average precision: per sample, the best-bijection mean AP over
// the sounding classes, averaged over samples.
double cap(std::span<const EvalSample> samples);

// Pixel AP of the mean of all maps against the union of sounding masks.
double piap(const EvalSample& sample);

// Per-sample class-aware IoU: maps are min-max normalized, binarized at
// bin_threshold and matched to the sounding masks by the best bijection; the
// result is the mean IoU over the matched pairs.
double class_aware_iou(const EvalSample& sample, double bin_threshold = 0.4);

// Fraction of samples whose class-aware IoU reaches t.
double ciou_at(std::span<const EvalSample> samples, double t, double bin_threshold = 0.4);

// Named scores from one evaluation run. `values` are bounded metrics;
// `diagnostics` are auxiliary numbers with no [0,1] guarantee.
class MetricReport {
 public:
  void add(const std::string& name, double value);             // enforces [0,1]
  void add_diagnostic(const std::string& name, double value);  // unbounded

  double at(const std::string& name) const;
  bool has(const std::string& name) const;

  const std::vector<std::pair<std::string, double>>& values() const { return values_; }
  const std::vector<std::pair<std::string, double>>& diagnostics() const { return diagnostics_; }

  std::size_t sample_count = 0;
  double map_threshold = 0.4;

 private:
  std::vector<std::pair<std::string, double>> values_;
  std::vector<std::pair<std::string, double>> diagnostics_;
};

void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);

// Samples serialized in the shared binary array layout: per class a map then
// its mask, with a trailing {k} row of sounding flags.
void write_eval_sample(const std::filesystem::path& path, const EvalSample& sample);
EvalSample read_eval_sample(const std::filesystem::path& path);

}  // namespace mixloc::metrics
