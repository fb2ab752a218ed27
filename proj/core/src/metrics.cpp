#include "mixloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "mixloc/io.hpp"

namespace mixloc::metrics {
namespace {

bool mask_on(double v) { return v > 0.5; }

void check_same_grid(const Array& map, const Array& mask, const char* where) {
  if (map.shape() != mask.shape()) {
    throw std::invalid_argument(std::string(where) + ": map " + shape_str(map.shape()) +
                                " vs mask " + shape_str(mask.shape()));
  }
}

std::vector<std::size_t> sounding_indices(const EvalSample& sample) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < sample.masks.size(); ++j) {
    if (sample.masks[j].sounding) idx.push_back(j);
  }
  return idx;
}

}  // namespace

Array normalize_map(const Array& map) {
  double lo = map[0], hi = map[0];
  for (double v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Array out(map.shape());
  if (hi == lo) return out;
  for (std::size_t i = 0; i < map.numel(); ++i) out[i] = (map[i] - lo) / (hi - lo);
  return out;
}

double iou_at(const Array& map, const Array& mask, double t) {
  check_same_grid(map, mask, "iou_at");
  if (t < 0.0 || t > 1.0) {
    throw std::invalid_argument("iou_at: threshold must be in [0,1], got " + std::to_string(t));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const bool pred = map[i] >= t;
    const bool truth = mask_on(mask[i]);
    inter += pred && truth;
    uni += pred || truth;
  }
  if (uni == 0) return 1.0;
  return double(inter) / double(uni);
}

double auc_iou(std::span<const double> ious) {
  if (ious.empty()) throw std::invalid_argument("auc_iou: no IoU values");
  auto success = [&](double theta) {
    std::size_t hits = 0;
    for (double v : ious) hits += v >= theta;
    return double(hits) / double(ious.size());
  };
  double area = 0.0;
  double prev = success(0.0);
  for (int step = 1; step <= 20; ++step) {
    const double cur = success(0.05 * step);
    area += 0.05 * 0.5 * (prev + cur);
    prev = cur;
  }
  return area;
}

double pixel_ap(const Array& map, const Array& mask) {
  check_same_grid(map, mask, "pixel_ap");
  const std::size_t m = map.numel();
  std::size_t npos = 0;
  for (std::size_t i = 0; i < m; ++i) npos += mask_on(mask[i]);
  if (npos == 0) throw std::invalid_argument("pixel_ap: mask has no positive pixels");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });

  // Sweep descending unique scores; each group of tied pixels shares one
  // precision-recall point.
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, pp = 0, i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j < m && map[order[j]] == map[order[i]]) {
      tp += mask_on(mask[order[j]]);
      ++pp;
      ++j;
    }
    const double precision = double(tp) / double(pp);
    const double recall = double(tp) / double(npos);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

PairingResult best_pairing_eval(std::span<const Array> maps, std::span<const Array> masks,
                                const PairMetric& metric) {
  const std::size_t k = maps.size();
  if (k == 0) throw std::invalid_argument("best_pairing_eval: no maps");
  if (k != masks.size()) {
    throw std::invalid_argument("best_pairing_eval: " + std::to_string(k) + " maps vs " +
                                std::to_string(masks.size()) + " masks");
  }
  if (k > kMaxPairingEnumeration) {
    throw std::invalid_argument("best_pairing_eval: k = " + std::to_string(k) +
                                " exceeds the enumeration cap of " +
                                std::to_string(kMaxPairingEnumeration));
  }
  // Metric values are computed once per (map, mask) pair, then every
  // bijection is scored from the table.
  std::vector<double> table(k * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) table[i * k + j] = metric(maps[i], masks[j]);

  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  PairingResult best;
  best.pairing = perm;
  for (std::size_t i = 0; i < k; ++i) best.score += table[i * k + i];
  while (std::next_permutation(perm.begin(), perm.end())) {
    double score = 0.0;
    for (std::size_t i = 0; i < k; ++i) score += table[i * k + perm[i]];
    if (score > best.score) {
      best.score = score;
      best.pairing = perm;
    }
  }
  best.score /= double(k);
  return best;
}

double cap(std::span<const EvalSample> samples) {
  if (samples.empty()) throw std::invalid_argument("cap: no samples");
  double total = 0.0;
  for (const EvalSample& sample : samples) {
    if (sample.maps.size() != sample.masks.size()) {
      throw std::invalid_argument("cap: sample has " + std::to_string(sample.maps.size()) +
                                  " maps for " + std::to_string(sample.masks.size()) +
                                  " classes");
    }
    const std::vector<std::size_t> idx = sounding_indices(sample);
    if (idx.empty()) throw std::invalid_argument("cap: sample has no sounding class");
    std::vector<Array> maps, masks;
    for (std::size_t j : idx) {
      maps.push_back(sample.maps[j]);
      masks.push_back(sample.masks[j].mask);
    }
    total += best_pairing_eval(maps, masks, [](const Array& a, const Array& b) {
               return pixel_ap(a, b);
             }).score;
  }
  return total / double(samples.size());
}

double piap(const EvalSample& sample) {
  if (sample.maps.empty()) throw std::invalid_argument("piap: no maps");
  const std::vector<std::size_t> idx = sounding_indices(sample);
  if (idx.empty()) throw std::invalid_argument("piap: no sounding class");

  Array mean(sample.maps[0].shape());
  for (const Array& map : sample.maps) {
    check_same_grid(map, mean, "piap");
    for (std::size_t i = 0; i < mean.numel(); ++i) mean[i] += map[i];
  }
  for (std::size_t i = 0; i < mean.numel(); ++i) mean[i] /= double(sample.maps.size());

  Array uni(sample.masks[idx[0]].mask.shape());
  for (std::size_t j : idx) {
    const Array& mask = sample.masks[j].mask;
    check_same_grid(mask, uni, "piap");
    for (std::size_t i = 0; i < uni.numel(); ++i) {
      if (mask_on(mask[i])) uni[i] = 1.0;
    }
  }
  return pixel_ap(mean, uni);
}

double class_aware_iou(const EvalSample& sample, double bin_threshold) {
  const std::vector<std::size_t> idx = sounding_indices(sample);
  if (idx.empty()) throw std::invalid_argument("class_aware_iou: sample has no sounding class");
  if (sample.maps.size() != idx.size()) {
    throw std::invalid_argument("class_aware_iou: " + std::to_string(sample.maps.size()) +
                                " maps for " + std::to_string(idx.size()) +
                                " sounding classes");
  }
  std::vector<Array> maps, masks;
  for (const Array& map : sample.maps) maps.push_back(normalize_map(map));
  for (std::size_t j : idx) masks.push_back(sample.masks[j].mask);
  return best_pairing_eval(maps, masks, [&](const Array& a, const Array& b) {
           return iou_at(a, b, bin_threshold);
         }).score;
}

double ciou_at(std::span<const EvalSample> samples, double t, double bin_threshold) {
  if (samples.empty()) throw std::invalid_argument("ciou_at: no samples");
  if (t < 0.0 || t > 1.0) {
    throw std::invalid_argument("ciou_at: threshold must be in [0,1], got " + std::to_string(t));
  }
  std::size_t hits = 0;
  for (const EvalSample& sample : samples) {
    hits += class_aware_iou(sample, bin_threshold) >= t;
  }
  return double(hits) / double(samples.size());
}

void MetricReport::add(const std::string& name, double value) {
  if (!(value >= -1e-12 && value <= 1.0 + 1e-12)) {
    throw std::invalid_argument("MetricReport: metric '" + name + "' = " +
                                std::to_string(value) + " is outside [0,1]");
  }
  values_.emplace_back(name, std::clamp(value, 0.0, 1.0));
}

void MetricReport::add_diagnostic(const std::string& name, double value) {
  diagnostics_.emplace_back(name, value);
}

double MetricReport::at(const std::string& name) const {
  for (const auto& [n, v] : values_)
    if (n == name) return v;
  for (const auto& [n, v] : diagnostics_)
    if (n == name) return v;
  throw std::out_of_range("MetricReport: no metric named '" + name + "'");
}

bool MetricReport::has(const std::string& name) const {
  for (const auto& [n, v] : values_)
    if (n == name) return true;
  for (const auto& [n, v] : diagnostics_)
    if (n == name) return true;
  return false;
}

void write_report_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::vector<std::pair<std::string, double>> rows = report.values();
  rows.insert(rows.end(), report.diagnostics().begin(), report.diagnostics().end());
  rows.emplace_back("sample_count", double(report.sample_count));
  io::write_csv(path, rows);
}

void write_report_json(const std::filesystem::path& path, const MetricReport& report) {
  nlohmann::ordered_json j;
  j["sample_count"] = report.sample_count;
  j["map_threshold"] = report.map_threshold;
  nlohmann::ordered_json vals;
  for (const auto& [n, v] : report.values()) vals[n] = v;
  j["metrics"] = std::move(vals);
  nlohmann::ordered_json diag;
  for (const auto& [n, v] : report.diagnostics()) diag[n] = v;
  j["diagnostics"] = std::move(diag);
  io::write_text_file(path, j.dump(2) + "\n");
}

void write_eval_sample(const std::filesystem::path& path, const EvalSample& sample) {
  if (sample.maps.size() != sample.masks.size()) {
    throw std::invalid_argument("write_eval_sample: maps and masks differ in count");
  }
  std::vector<Array> arrays;
  Array flags({sample.masks.size()});
  for (std::size_t j = 0; j < sample.masks.size(); ++j) {
    arrays.push_back(sample.maps[j]);
    arrays.push_back(sample.masks[j].mask);
    flags[j] = sample.masks[j].sounding ? 1.0 : 0.0;
  }
  arrays.push_back(std::move(flags));
  io::write_arrays(path, arrays);
}

EvalSample read_eval_sample(const std::filesystem::path& path) {
  std::vector<Array> arrays = io::read_arrays(path);
  if (arrays.empty() || arrays.size() % 2 != 1) {
    throw std::runtime_error("read_eval_sample: " + path.string() +
                             " does not hold map/mask pairs plus a flag row");
  }
  const std::size_t k = arrays.size() / 2;
  const Array& flags = arrays.back();
  if (flags.numel() != k) {
    throw std::runtime_error("read_eval_sample: flag row length mismatch in " + path.string());
  }
  EvalSample sample;
  for (std::size_t j = 0; j < k; ++j) {
    sample.maps.push_back(arrays[2 * j]);
    sample.masks.push_back(MaskEntry{j, arrays[2 * j + 1], mask_on(flags[j])});
  }
  return sample;
}

}  // namespace mixloc::metrics
