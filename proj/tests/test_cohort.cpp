#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trinet/cohort.hpp"
#include "trinet/commands.hpp"
#include "trinet/error.hpp"

using namespace trinet;
namespace fs = std::filesystem;

namespace {

// Straightforward second implementation of the radiomic statistics.
RadiomicVector reference_radiomics(const Image& img) {
  const std::size_t h = img.height, w = img.width, n = h * w;
  auto px = [&](std::size_t r, std::size_t c) { return static_cast<double>(img.at(r, c)); };
  double sum = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) sum += px(r, c);
  const double mean = sum / double(n);
  double var = 0.0, skew = 0.0, kurt = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double d = px(r, c) - mean;
      var += std::pow(d, 2) / double(n);
      skew += std::pow(d, 3) / double(n);
      kurt += std::pow(d, 4) / double(n);
    }
  RadiomicVector out{};
  out[0] = mean;
  out[1] = var;
  out[2] = var > 0 ? skew / (var * std::sqrt(var)) : 0.0;
  out[3] = var > 0 ? kurt / (var * var) - 3.0 : 0.0;

  double lo = px(0, 0), hi = px(0, 0);
  for (float v : img.pixels) {
    lo = std::min(lo, double(v));
    hi = std::max(hi, double(v));
  }
  std::vector<int> counts(5, 0);
  for (float v : img.pixels) {
    int b = hi > lo ? int(std::floor((v - lo) / (hi - lo) * 5.0)) : 0;
    counts[std::min(b, 4)]++;
  }
  for (int cnt : counts) {
    const double p = double(cnt) / double(n);
    out[4] += p * p;
    if (cnt) out[5] -= p * std::log(p);
  }

  std::vector<double> g;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double gx = c + 1 < w ? px(r, c + 1) - px(r, c) : 0.0;
      const double gy = r + 1 < h ? px(r + 1, c) - px(r, c) : 0.0;
      g.push_back(std::hypot(gx, gy));
    }
  double gs = 0.0;
  for (double v : g) gs += v;
  out[6] = gs / double(n);
  for (double v : g) out[7] += (v - out[6]) * (v - out[6]) / double(n);

  double border = 0.0, center = 0.0;
  int nb = 0, nc = 0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const bool inside = r >= h / 4 && r + h / 4 < h && c >= w / 4 && c + w / 4 < w;
      (inside ? center : border) += px(r, c);
      (inside ? nc : nb)++;
    }
  const double cm = center / nc;
  out[8] = std::abs(cm) > 1e-12 ? (border / nb) / cm : 0.0;
  int fg = 0;
  for (float v : img.pixels) fg += var > 0 && v > mean + std::sqrt(var);
  out[9] = double(fg) / double(n);
  out[10] = lo;
  out[11] = hi;
  return out;
}

Image random_image(Rng& rng, std::size_t side) {
  Image img{side, side, std::vector<float>(side * side)};
  for (float& v : img.pixels) v = static_cast<float>(rng.normal(1.0, 0.5));
  return img;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double image_mean(const Image& img) {
  double s = 0.0;
  for (float v : img.pixels) s += v;
  return s / double(img.pixels.size());
}

}  // namespace

TEST_CASE("empty cohort still writes a valid manifest") {
  CohortSpec spec;
  spec.n_cases = 0;
  spec.n_controls = 0;
  auto data = generate_cohort(spec);
  CHECK(data.patients.empty());
  auto dir = test::scratch_dir("empty_cohort");
  dataset_io::save(dir, data, "0000000000000000");
  CHECK(fs::exists(dir / "manifest.csv"));
  CHECK(dataset_io::load(dir).patients.empty());
}

TEST_CASE("cohort generation is deterministic") {
  CohortSpec spec;
  spec.n_cases = 3;
  spec.n_controls = 3;
  spec.seed = 17;
  auto a = test::scratch_dir("det_a"), b = test::scratch_dir("det_b");
  dataset_io::save(a, generate_cohort(spec), "h");
  dataset_io::save(b, generate_cohort(spec), "h");
  CHECK(directory_digest(a) == directory_digest(b));
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));

  auto back = dataset_io::load(a);
  auto orig = generate_cohort(spec);
  REQUIRE(back.patients.size() == orig.patients.size());
  for (std::size_t i = 0; i < orig.patients.size(); ++i) {
    CHECK(back.patients[i].id == orig.patients[i].id);
    CHECK(back.patients[i].screenings.size() == orig.patients[i].screenings.size());
    CHECK(back.patients[i].screenings[0].views[2].pixels == orig.patients[i].screenings[0].views[2].pixels);
  }
}

TEST_CASE("invalid cohort specs are rejected") {
  CohortSpec spec;
  spec.screening_counts = {0.5, 0.2};
  CHECK_THROWS_AS(generate_cohort(spec), ConfigError);
  spec = {};
  spec.lesion.radius = 0.0;
  CHECK_THROWS_AS(generate_cohort(spec), ConfigError);
}

TEST_CASE("affected side is brighter at the final screening") {
  CohortSpec spec;
  spec.n_cases = 1000;
  spec.n_controls = 0;
  spec.lesion.base_amplitude = 0.5;
  spec.lesion.lead_min_months = 30.0;
  spec.lesion.lead_max_months = 30.0;
  spec.case_dx_max_months = 12.0;
  spec.seed = 3;
  double affected = 0.0, unaffected = 0.0;
  for (std::size_t i = 0; i < spec.n_cases; ++i) {
    const auto p = generate_patient(spec, i);
    REQUIRE(p.diagnosed);
    const auto& last = p.screenings.back();
    const bool left = p.laterality == Laterality::kLeft;
    for (std::size_t v = 0; v < kViews; ++v) {
      (is_left(v) == left ? affected : unaffected) += image_mean(last.views[v]);
    }
  }
  CHECK(affected > unaffected);
}

TEST_CASE("radiomics of a constant image") {
  Image img{8, 8, std::vector<float>(64, 2.5f)};
  auto r = extract_radiomics(img);
  CHECK(r[0] == 2.5);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 0.0);
  CHECK(r[3] == 0.0);
  CHECK(r[6] == 0.0);
  CHECK(r[7] == 0.0);
  CHECK(r[4] == 1.0);
  CHECK(r[5] == 0.0);
}

TEST_CASE("radiomics agree with an independent implementation") {
  Rng rng(50);
  for (int trial = 0; trial < 100; ++trial) {
    auto img = random_image(rng, trial % 2 ? 32 : 13);
    auto got = extract_radiomics(img), want = reference_radiomics(img);
    for (std::size_t i = 0; i < kRadiomicWidth; ++i) {
      CAPTURE(kRadiomicNames[i]);
      CHECK(std::abs(got[i] - want[i]) <= 1e-10);
    }
  }
}

TEST_CASE("training subset is standardized") {
  CohortSpec spec;
  spec.n_cases = 5;
  spec.n_controls = 5;
  auto data = generate_cohort(spec);
  std::vector<const PatientRecord*> all;
  for (const auto& p : data.patients) all.push_back(&p);
  auto stats = compute_norm_stats(all);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto* p : all)
    for (const auto& s : p->screenings)
      for (const auto& img : s.views)
        for (double v : normalize_image(img, stats)) {
          sum += v;
          sq += v * v;
          ++n;
        }
  const double mean = sum / double(n);
  CHECK(std::abs(mean) <= 1e-9);
  CHECK(std::abs(sq / double(n) - mean * mean - 1.0) <= 1e-9);

  const auto& img = data.patients[0].screenings[0].views[0];
  CHECK(normalize_image(img, stats) == normalize_image(img, stats));
  NormStats flat = stats;
  flat.sd = 0.0;
  CHECK_THROWS_AS(normalize_image(img, flat), NumericalError);
}

TEST_CASE("flips") {
  Rng rng(51);
  std::size_t h = 0, v = 0;
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) {
    auto f = draw_flips(rng);
    h += f.horizontal;
    v += f.vertical;
  }
  CHECK(double(h) / draws >= 0.48);
  CHECK(double(h) / draws <= 0.52);
  CHECK(double(v) / draws >= 0.48);
  CHECK(double(v) / draws <= 0.52);

  Image img{2, 3, {1, 2, 3, 4, 5, 6}};
  NormStats id;
  CHECK(normalize_image(img, id, {true, false}) == std::vector<double>{3, 2, 1, 6, 5, 4});
  CHECK(normalize_image(img, id, {false, true}) == std::vector<double>{4, 5, 6, 1, 2, 3});
}

TEST_CASE("stratified split") {
  CohortSpec spec;
  spec.n_cases = 100;
  spec.n_controls = 100;
  auto data = generate_cohort(spec);
  split_cohort(data, {}, 7);
  std::map<std::string, std::pair<int, int>> counts;
  for (const auto& p : data.patients) (p.diagnosed ? counts[p.split].first : counts[p.split].second)++;
  CHECK(counts["train"] == std::pair{60, 60});
  CHECK(counts["val"] == std::pair{20, 20});
  CHECK(counts["test"] == std::pair{20, 20});

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    split_cohort(data, {0.5, 0.3, 0.2}, seed);
    std::set<std::string> seen;
    std::size_t assigned = 0;
    for (const char* s : {"train", "val", "test"}) {
      for (const auto* p : select_split(data, s)) {
        CHECK(seen.insert(p->id).second);
        ++assigned;
      }
    }
    CHECK(assigned == data.patients.size());
  }

  spec.n_cases = 1;
  spec.n_controls = 0;
  auto one = generate_cohort(spec);
  split_cohort(one, {}, 1);
  CHECK_FALSE(one.patients[0].split.empty());

  spec.n_cases = 2;
  spec.n_controls = 10;
  auto tiny = generate_cohort(spec);
  CHECK_THROWS_AS(split_cohort(tiny, {}, 1, 1), ConfigError);
  CHECK_THROWS_AS(split_cohort(tiny, {0.5, 0.5, 0.5}, 1), ConfigError);
}
