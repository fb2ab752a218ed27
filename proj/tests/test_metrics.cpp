#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "mixloc/array.hpp"
#include "mixloc/io.hpp"
#include "mixloc/metrics.hpp"
#include "mixloc/rng.hpp"
#include "testutil.hpp"

using mixloc::Array;
using mixloc::Rng;
using testutil::mat;
using testutil::random_array;
using testutil::TempDir;
namespace metrics = mixloc::metrics;

namespace {

// Average precision recomputed from scratch: for every distinct score,
// rescan the whole map to count predictions and hits at that threshold.
// Quadratic, but the arithmetic mirrors the production sweep exactly.
double ap_bruteforce(const Array& map, const Array& mask) {
  std::vector<double> scores(map.data().begin(), map.data().end());
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());

  std::size_t npos = 0;
  for (std::size_t i = 0; i < mask.numel(); ++i) npos += mask[i] > 0.5;

  double ap = 0.0, prev_recall = 0.0;
  for (double t : scores) {
    std::size_t tp = 0, pp = 0;
    for (std::size_t i = 0; i < map.numel(); ++i) {
      if (map[i] >= t) {
        ++pp;
        tp += mask[i] > 0.5;
      }
    }
    const double precision = double(tp) / double(pp);
    const double recall = double(tp) / double(npos);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

Array random_mask(Rng& rng, std::size_t n, std::size_t positives) {
  Array mask({n});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.index(i + 1)]);
  for (std::size_t i = 0; i < positives; ++i) mask[order[i]] = 1.0;
  return mask;
}

metrics::EvalSample two_block_sample() {
  // 2x2 grids; class 0 lives in cell 0, class 1 in cell 1.
  metrics::EvalSample s;
  s.maps = {mat({{1, 0}, {0, 0}}), mat({{0, 1}, {0, 0}})};
  s.masks = {{0, mat({{1, 0}, {0, 0}}), true}, {1, mat({{0, 1}, {0, 0}}), true}};
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("normalize_map") {
  const Array n = metrics::normalize_map(mat({{0, 5}, {10, 2}}));
  CHECK(n.at(0, 0) == 0.0);
  CHECK(n.at(0, 1) == 0.5);
  CHECK(n.at(1, 0) == 1.0);
  CHECK(n.at(1, 1) == 0.2);

  const Array shifted = metrics::normalize_map(mat({{-3, -1}}));
  CHECK(shifted[0] == 0.0);
  CHECK(shifted[1] == 1.0);

  const Array flat = metrics::normalize_map(Array::full({2, 2}, 7.0));
  for (double v : flat.data()) CHECK(v == 0.0);
}

TEST_CASE("iou_at") {
  const Array mask = mat({{1, 1}, {0, 0}});
  CHECK(metrics::iou_at(mat({{1, 1}, {0, 0}}), mask, 0.5) == 1.0);
  CHECK(metrics::iou_at(mat({{1, 0}, {1, 0}}), mask, 0.5) == doctest::Approx(1.0 / 3.0));
  CHECK(metrics::iou_at(mat({{0, 0}, {1, 1}}), mask, 0.5) == 0.0);

  // Empty prediction against an empty mask counts as a perfect match.
  CHECK(metrics::iou_at(Array::zeros({2, 2}), Array::zeros({2, 2}), 0.5) == 1.0);

  CHECK_THROWS_AS(metrics::iou_at(mask, mask, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(metrics::iou_at(mask, mask, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(metrics::iou_at(mask, mat({{1, 0, 0}}), 0.5), std::invalid_argument);
}

TEST_CASE("iou_at is non-increasing when scores live inside the mask") {
  Rng rng(17);
  Array mask({6, 6});
  for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  mask[0] = 1.0;
  Array map({6, 6});
  for (std::size_t i = 0; i < map.numel(); ++i) map[i] = mask[i] * rng.uniform(0.1, 1.0);

  double prev = metrics::iou_at(map, mask, 0.05);
  for (int s = 2; s <= 20; ++s) {
    const double cur = metrics::iou_at(map, mask, 0.05 * s);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("auc_iou") {
  const std::vector<double> ones(10, 1.0);
  CHECK(metrics::auc_iou(ones) == doctest::Approx(1.0).epsilon(1e-12));

  // Zero IoUs only pass the theta=0 gate, leaving a single sliver.
  const std::vector<double> zeros(10, 0.0);
  CHECK(metrics::auc_iou(zeros) == 0.025);

  // One sample at 0.5: full credit up to theta 0.5, half-step after.
  const std::vector<double> mid = {0.5};
  CHECK(metrics::auc_iou(mid) == doctest::Approx(0.525).epsilon(1e-12));

  Rng rng(29);
  std::vector<double> uniform(10000);
  for (double& v : uniform) v = rng.uniform();
  CHECK(std::fabs(metrics::auc_iou(uniform) - 0.5) < 0.02);

  CHECK_THROWS_AS(metrics::auc_iou({}), std::invalid_argument);
}

TEST_CASE("pixel_ap hand values") {
  const Array mask({4}, {1, 0, 1, 0});
  CHECK(metrics::pixel_ap(Array({4}, {0.9, 0.8, 0.7, 0.6}), mask) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // Tied scores share one precision/recall point.
  CHECK(metrics::pixel_ap(Array({4}, {1.0, 0.5, 0.5, 0.0}), Array({4}, {1, 1, 0, 0})) ==
        doctest::Approx(5.0 / 6.0).epsilon(1e-12));

  // Scores equal to the mask rank all positives first.
  CHECK(metrics::pixel_ap(mask, mask) == 1.0);

  // A constant map predicts everything at once: AP equals prevalence.
  CHECK(metrics::pixel_ap(Array::full({4}, 0.3), mask) == 0.5);

  CHECK_THROWS_AS(metrics::pixel_ap(mask, Array::zeros({4})), std::invalid_argument);
}

TEST_CASE("pixel_ap is exactly invariant to monotone rescaling") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Array map = random_array(rng, {25}, 0.0, 1.0);
    const Array mask = random_mask(rng, 25, 6);
    const double base = metrics::pixel_ap(map, mask);

    Array doubled(map.shape()), cubed(map.shape());
    for (std::size_t i = 0; i < map.numel(); ++i) {
      doubled[i] = 2.0 * map[i] - 5.0;
      cubed[i] = map[i] * map[i] * map[i];
    }
    CHECK(metrics::pixel_ap(doubled, mask) == base);
    CHECK(metrics::pixel_ap(cubed, mask) == base);
  }
}

TEST_CASE("pixel_ap equals the brute-force sweep") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    Array map({100});
    for (std::size_t i = 0; i < 100; ++i) {
      // Coarse quantization forces plenty of exact ties.
      map[i] = std::floor(rng.uniform() * 8.0) / 8.0;
    }
    const Array mask = random_mask(rng, 100, 1 + rng.index(40));
    CHECK(metrics::pixel_ap(map, mask) == ap_bruteforce(map, mask));
  }
}

TEST_CASE("best_pairing_eval") {
  const auto overlap = [](const Array& a, const Array& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
  };

  SUBCASE("prefers the crossing when it scores higher") {
    const std::vector<Array> maps = {mat({{0, 1}}), mat({{1, 0}})};
    const std::vector<Array> masks = {mat({{1, 0}}), mat({{0, 1}})};
    const metrics::PairingResult r = metrics::best_pairing_eval(maps, masks, overlap);
    CHECK(r.pairing == std::vector<std::size_t>{1, 0});
    CHECK(r.score == 1.0);
  }
  SUBCASE("ties keep the identity pairing") {
    const std::vector<Array> maps = {mat({{0.5, 0.5}}), mat({{0.5, 0.5}})};
    const std::vector<Array> masks = {mat({{1, 0}}), mat({{0, 1}})};
    const metrics::PairingResult r = metrics::best_pairing_eval(maps, masks, overlap);
    CHECK(r.pairing == std::vector<std::size_t>{0, 1});
    CHECK(r.score == 0.5);
  }
  SUBCASE("single pair") {
    const std::vector<Array> maps = {mat({{2, 0}})};
    const std::vector<Array> masks = {mat({{1, 1}})};
    const metrics::PairingResult r = metrics::best_pairing_eval(maps, masks, overlap);
    CHECK(r.pairing == std::vector<std::size_t>{0});
    CHECK(r.score == 2.0);
  }
  SUBCASE("matches full enumeration for k=3") {
    Rng rng(43);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<Array> maps, masks;
      for (int i = 0; i < 3; ++i) {
        maps.push_back(random_array(rng, {6}, 0.0, 1.0));
        masks.push_back(random_mask(rng, 6, 2));
      }
      const metrics::PairingResult r = metrics::best_pairing_eval(maps, masks, overlap);

      std::vector<std::size_t> perm = {0, 1, 2};
      double best = -1e300;
      std::vector<std::size_t> best_perm;
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < 3; ++i) s += overlap(maps[i], masks[perm[i]]);
        if (s > best) {
          best = s;
          best_perm = perm;
        }
      } while (std::next_permutation(perm.begin(), perm.end()));
      CHECK(r.score == doctest::Approx(best / 3.0).epsilon(1e-12));
      CHECK(r.pairing == best_perm);
    }
  }
  SUBCASE("input validation") {
    const std::vector<Array> maps = {mat({{1, 0}})};
    const std::vector<Array> two_masks = {mat({{1, 0}}), mat({{0, 1}})};
    CHECK_THROWS_AS(metrics::best_pairing_eval({}, {}, overlap), std::invalid_argument);
    CHECK_THROWS_AS(metrics::best_pairing_eval(maps, two_masks, overlap),
                    std::invalid_argument);

    std::vector<Array> nine_maps(9, mat({{1, 0}})), nine_masks(9, mat({{1, 0}}));
    CHECK_THROWS_AS(metrics::best_pairing_eval(nine_maps, nine_masks, overlap),
                    std::invalid_argument);
  }
}

TEST_CASE("cap") {
  SUBCASE("hand example") {
    // Map 0 nails class 0; map 1 is uninformative. Identity pairing gives
    // (1 + 0.25) / 2; the crossing gives (0.25 + 0.25) / 2; cap keeps 0.625.
    metrics::EvalSample s;
    s.maps = {mat({{1, 0}, {0, 0}}), Array::full({2, 2}, 0.5)};
    s.masks = {{0, mat({{1, 0}, {0, 0}}), true}, {1, mat({{0, 1}, {0, 0}}), true}};
    CHECK(metrics::cap(std::vector<metrics::EvalSample>{s}) == 0.625);
  }
  SUBCASE("silent classes are excluded") {
    metrics::EvalSample s = two_block_sample();
    s.maps[1] = Array::full({2, 2}, 0.25);  // garbage map for the silent class
    s.masks[1].sounding = false;
    // Only the (map 1, mask 1) pair could hurt; the silent flag removes it...
    // except maps are class-aligned, so index 1 drops from both sides.
    CHECK(metrics::cap(std::vector<metrics::EvalSample>{s}) == 1.0);
  }
  SUBCASE("averages over samples") {
    metrics::EvalSample good = two_block_sample();
    metrics::EvalSample flat = two_block_sample();
    flat.maps[0] = Array::full({2, 2}, 0.5);
    flat.maps[1] = Array::full({2, 2}, 0.5);
    const double expect_flat = 0.25;  // constant maps score the prevalence
    const std::vector<metrics::EvalSample> samples = {good, flat};
    CHECK(metrics::cap(samples) == doctest::Approx((1.0 + expect_flat) / 2.0).epsilon(1e-12));
  }
  SUBCASE("matches direct per-class arithmetic") {
    Rng rng(47);
    for (int trial = 0; trial < 10; ++trial) {
      metrics::EvalSample s;
      const std::size_t k = 2 + rng.index(2);
      for (std::size_t j = 0; j < k; ++j) {
        Array map = random_array(rng, {9}, 0.0, 1.0);
        s.maps.push_back(map);
        s.masks.push_back({j, random_mask(rng, 9, 1 + rng.index(4)), true});
      }
      // One silent class, but only when two sounding ones remain.
      if (k == 3) s.masks[2].sounding = false;

      std::vector<std::size_t> idx;
      for (std::size_t j = 0; j < k; ++j)
        if (s.masks[j].sounding) idx.push_back(j);
      std::vector<std::size_t> assign(idx.size());
      std::iota(assign.begin(), assign.end(), std::size_t{0});
      double best = -1e300;
      do {
        double sum = 0.0;
        for (std::size_t i = 0; i < idx.size(); ++i)
          sum += metrics::pixel_ap(s.maps[idx[i]], s.masks[idx[assign[i]]].mask);
        best = std::max(best, sum / double(idx.size()));
      } while (std::next_permutation(assign.begin(), assign.end()));

      CHECK(metrics::cap(std::vector<metrics::EvalSample>{s}) ==
            doctest::Approx(best).epsilon(1e-12));
    }
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(metrics::cap({}), std::invalid_argument);
    metrics::EvalSample s = two_block_sample();
    s.masks[0].sounding = false;
    s.masks[1].sounding = false;
    CHECK_THROWS_AS(metrics::cap(std::vector<metrics::EvalSample>{s}), std::invalid_argument);
    s = two_block_sample();
    s.maps.pop_back();
    CHECK_THROWS_AS(metrics::cap(std::vector<metrics::EvalSample>{s}), std::invalid_argument);
  }
}

TEST_CASE("piap") {
  SUBCASE("perfect disjoint maps still hit the union") {
    CHECK(metrics::piap(two_block_sample()) == 1.0);
  }
  SUBCASE("mean of the maps against the union of sounding masks") {
    metrics::EvalSample s = two_block_sample();
    s.masks[1].sounding = false;  // union shrinks to mask 0
    // mean map scores cell 0 and cell 1 equally at 0.5; union = {cell 0}.
    // Tie group of two predictions, one correct: single PR point (1, 0.5).
    CHECK(metrics::piap(s) == 0.5);
  }
  SUBCASE("single map is plain pixel AP") {
    metrics::EvalSample s;
    s.maps = {mat({{0.9, 0.1}, {0.4, 0.2}})};
    s.masks = {{0, mat({{1, 0}, {0, 0}}), true}};
    CHECK(metrics::piap(s) == metrics::pixel_ap(s.maps[0], s.masks[0].mask));
  }
}

TEST_CASE("class_aware_iou and ciou_at") {
  SUBCASE("perfect maps score 1") {
    CHECK(metrics::class_aware_iou(two_block_sample()) == 1.0);
  }
  SUBCASE("disjoint maps score 0") {
    metrics::EvalSample s = two_block_sample();
    s.maps = {mat({{0, 0}, {1, 0}}), mat({{0, 0}, {0, 1}})};
    CHECK(metrics::class_aware_iou(s) == 0.0);
  }
  SUBCASE("hand-counted overlap") {
    // Normalized map 0 covers cells {0, 2}; mask 0 is {0}: IoU 1/2.
    metrics::EvalSample s = two_block_sample();
    s.maps[0] = mat({{1, 0}, {1, 0}});
    CHECK(metrics::class_aware_iou(s) == 0.75);
  }
  SUBCASE("binarization threshold is respected") {
    metrics::EvalSample s = two_block_sample();
    // After min-max the off-cell sits at 0.35: in at 0.3, out at 0.4.
    s.maps[0] = mat({{1, 0.35}, {0, 0}});
    CHECK(metrics::class_aware_iou(s, 0.4) == 1.0);
    CHECK(metrics::class_aware_iou(s, 0.3) == 0.75);
  }
  SUBCASE("maps must match the sounding count") {
    metrics::EvalSample s = two_block_sample();
    s.masks[1].sounding = false;
    CHECK_THROWS_AS(metrics::class_aware_iou(s), std::invalid_argument);
    s.maps.pop_back();
    CHECK(metrics::class_aware_iou(s) == 1.0);
  }
  SUBCASE("ciou_at counts threshold hits") {
    metrics::EvalSample good = two_block_sample();
    metrics::EvalSample bad = two_block_sample();
    bad.maps = {mat({{0, 0}, {1, 0}}), mat({{0, 0}, {0, 1}})};
    const std::vector<metrics::EvalSample> samples = {good, bad};
    CHECK(metrics::ciou_at(samples, 0.3) == 0.5);
    CHECK(metrics::ciou_at(samples, 0.0) == 1.0);
    CHECK_THROWS_AS(metrics::ciou_at(samples, 1.1), std::invalid_argument);
    CHECK_THROWS_AS(metrics::ciou_at({}, 0.3), std::invalid_argument);
  }
}

TEST_CASE("MetricReport") {
  metrics::MetricReport r;
  r.add("cap", 0.75);
  r.add("edge", 1.0 + 1e-13);  // tolerated rounding slop clamps to the bound
  r.add_diagnostic("cosine", -0.4);

  CHECK(r.has("cap"));
  CHECK(r.has("cosine"));  // diagnostics resolve through has/at too
  CHECK(r.at("cosine") == -0.4);
  CHECK(r.at("cap") == 0.75);
  CHECK(r.at("edge") <= 1.0);
  CHECK_THROWS_AS(r.at("missing"), std::out_of_range);
  CHECK_THROWS_AS(r.add("bad", 1.1), std::invalid_argument);
  CHECK_THROWS_AS(r.add("bad", -0.2), std::invalid_argument);
  CHECK(r.values().size() == 2);
  CHECK(r.diagnostics().size() == 1);
}

TEST_CASE("report serialization") {
  TempDir tmp("report");
  metrics::MetricReport r;
  r.sample_count = 12;
  r.map_threshold = 0.4;
  r.add("cap", 0.5);
  r.add("auc", 0.25);
  r.add_diagnostic("head_cosine_mixed", 0.75);

  const auto csv_path = tmp / "report.csv";
  metrics::write_report_csv(csv_path, r);
  const std::string csv = mixloc::io::read_text_file(csv_path);
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("cap,0.5\n") != std::string::npos);
  CHECK(csv.find("auc,0.25\n") != std::string::npos);
  CHECK(csv.find("head_cosine_mixed,0.75\n") != std::string::npos);
  CHECK(csv.find("sample_count,12\n") != std::string::npos);

  const auto json_path = tmp / "report.json";
  metrics::write_report_json(json_path, r);
  const auto j = nlohmann::json::parse(mixloc::io::read_text_file(json_path));
  CHECK(j.at("sample_count") == 12);
  CHECK(j.at("map_threshold") == 0.4);
  CHECK(j.at("metrics").at("cap") == 0.5);
  CHECK(j.at("diagnostics").at("head_cosine_mixed") == 0.75);
}

TEST_CASE("eval sample round trip") {
  TempDir tmp("sample");
  metrics::EvalSample s = two_block_sample();
  s.masks[1].sounding = false;

  const auto path = tmp / "sample.bin";
  metrics::write_eval_sample(path, s);
  const metrics::EvalSample back = metrics::read_eval_sample(path);

  REQUIRE(back.maps.size() == 2);
  REQUIRE(back.masks.size() == 2);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(back.maps[j] == s.maps[j]);
    CHECK(back.masks[j].mask == s.masks[j].mask);
    CHECK(back.masks[j].class_id == j);  // reloaded ids are positional
    CHECK(back.masks[j].sounding == s.masks[j].sounding);
  }

  metrics::EvalSample broken = two_block_sample();
  broken.maps.pop_back();
  CHECK_THROWS_AS(metrics::write_eval_sample(tmp / "broken.bin", broken),
                  std::invalid_argument);
}

TEST_SUITE_END();
