#include "trinet/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "trinet/error.hpp"
#include "trinet/io.hpp"

namespace trinet {

std::string to_string(Laterality lat) {
  switch (lat) {
    case Laterality::kNone: return "none";
    case Laterality::kLeft: return "left";
    case Laterality::kRight: return "right";
  }
  return "none";
}

Laterality parse_laterality(const std::string& s) {
  if (s == "none") return Laterality::kNone;
  if (s == "left") return Laterality::kLeft;
  if (s == "right") return Laterality::kRight;
  throw IoError("unknown laterality '" + s + "'");
}

void CohortSpec::validate() const {
  if (screening_counts.empty() || screening_counts.size() > kMaxScreenings) {
    throw ConfigError("screening_counts must have 1..5 entries");
  }
  double total = 0.0;
  for (double p : screening_counts) {
    if (!(p >= 0.0)) throw ConfigError("screening_counts entries must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("screening_counts must sum to 1");
  if (!(interval_mean > 0.0) || !(interval_jitter >= 0.0) || interval_jitter >= interval_mean) {
    throw ConfigError("interval_months needs mean > jitter >= 0");
  }
  if (!(lesion.base_amplitude >= 0.0) || !(lesion.growth_per_year >= 0.0)) {
    throw ConfigError("lesion amplitudes must be non-negative");
  }
  if (!(lesion.radius > 0.0)) throw ConfigError("lesion radius must be positive");
  if (!(lesion.lead_min_months >= 0.0) || lesion.lead_max_months < lesion.lead_min_months) {
    throw ConfigError("lesion lead range is invalid");
  }
  if (!(case_dx_max_months >= 0.0)) throw ConfigError("case_dx_max_months must be >= 0");
  if (!(control_followup_min > 0.0) || control_followup_max < control_followup_min) {
    throw ConfigError("control follow-up range is invalid");
  }
  if (!(noise_sd >= 0.0) || !(asymmetry >= 0.0) || !(population.texture_scale >= 0.0) ||
      !(population.density_sd >= 0.0)) {
    throw ConfigError("noise, asymmetry and texture scale must be non-negative");
  }
  if (!(benign_rate >= 0.0 && benign_rate <= 1.0) || !(benign_amplitude >= 0.0)) {
    throw ConfigError("benign_rate must lie in [0, 1] with non-negative amplitude");
  }
}

std::size_t Dataset::count_cases() const {
  return static_cast<std::size_t>(std::count_if(
      patients.begin(), patients.end(), [](const PatientRecord& p) { return p.diagnosed; }));
}

namespace {

constexpr std::size_t kSide = kImageSide;
using Field = std::vector<double>;

// Smooth random field with unit standard deviation.
Field smooth_field(Rng& rng) {
  Field f(kSide * kSide, 0.0);
  for (int j = 0; j < 8; ++j) {
    const double amp = rng.normal();
    const double cr = rng.uniform(0.0, kSide);
    const double cc = rng.uniform(0.0, kSide);
    const double s = rng.uniform(2.0, 6.0);
    for (std::size_t r = 0; r < kSide; ++r) {
      for (std::size_t c = 0; c < kSide; ++c) {
        const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        f[r * kSide + c] += amp * std::exp(-d2 / (2.0 * s * s));
      }
    }
  }
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= f.size();
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / f.size());
  for (double& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return f;
}

Field mirror(const Field& f) {
  Field out(f.size());
  for (std::size_t r = 0; r < kSide; ++r) {
    for (std::size_t c = 0; c < kSide; ++c) out[r * kSide + c] = f[r * kSide + (kSide - 1 - c)];
  }
  return out;
}

void add_blob(Field& f, double amp, double row, double col, double radius) {
  for (std::size_t r = 0; r < kSide; ++r) {
    for (std::size_t c = 0; c < kSide; ++c) {
      const double d2 = (r - row) * (r - row) + (c - col) * (c - col);
      f[r * kSide + c] += amp * std::exp(-d2 / (2.0 * radius * radius));
    }
  }
}

struct Spot {
  double row = 0.0;
  double col = 0.0;
};

Spot draw_spot(Rng& rng) { return {rng.uniform(8.0, 24.0), rng.uniform(8.0, 24.0)}; }

std::string patient_id(const CohortSpec& spec, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return spec.id_prefix + buf;
}

}  // namespace

PatientRecord generate_patient(const CohortSpec& spec, std::size_t index) {
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  PatientRecord p;
  p.id = patient_id(spec, index);
  p.diagnosed = index < spec.n_cases;

  const std::size_t s = rng.categorical(spec.screening_counts) + 1;
  std::vector<int> months(s, 0);
  const auto lo = static_cast<std::int64_t>(std::llround(spec.interval_mean - spec.interval_jitter));
  const auto hi = static_cast<std::int64_t>(std::llround(spec.interval_mean + spec.interval_jitter));
  for (std::size_t i = 1; i < s; ++i) months[i] = months[i - 1] + static_cast<int>(rng.integer(lo, hi));
  const double last = months.back();

  // Anatomy per projection (CC = 0, MLO = 1), mirrored across sides.
  std::array<Field, kViews> anatomy;
  for (std::size_t proj = 0; proj < 2; ++proj) {
    Field left = smooth_field(rng);
    Field right = mirror(left);
    Field left_own = smooth_field(rng);
    Field right_own = smooth_field(rng);
    for (std::size_t i = 0; i < left.size(); ++i) {
      left[i] += spec.asymmetry * left_own[i];
      right[i] += spec.asymmetry * right_own[i];
    }
    anatomy[proj] = std::move(left);
    anatomy[2 + proj] = std::move(right);
  }

  double onset = 0.0;
  std::array<bool, kViews> lesion_view{};
  std::array<Spot, kViews> lesion_spot{};
  if (p.diagnosed) {
    p.laterality = rng.bernoulli(0.5) ? Laterality::kLeft : Laterality::kRight;
    p.outcome_months = last + static_cast<double>(rng.integer(0, std::llround(spec.case_dx_max_months)));
    onset = p.outcome_months - rng.uniform(spec.lesion.lead_min_months, spec.lesion.lead_max_months);
    const std::size_t side = p.laterality == Laterality::kLeft ? 0 : 2;
    const std::size_t only = static_cast<std::size_t>(rng.integer(0, 1));
    for (std::size_t proj = 0; proj < 2; ++proj) {
      lesion_spot[side + proj] = draw_spot(rng);
      lesion_view[side + proj] = !spec.single_view_signal || proj == only;
    }
  } else {
    p.outcome_months =
        last + std::round(rng.uniform(spec.control_followup_min, spec.control_followup_max));
  }

  // Own stream so the density draw leaves the other draws unchanged.
  Rng density_rng(derive_seed(derive_seed(spec.seed, static_cast<std::uint64_t>(index)), "density"));
  const double bg = spec.population.background_mean +
                    (spec.population.density_sd > 0.0 ? density_rng.normal(0.0, spec.population.density_sd) : 0.0);
  const double tex = spec.population.texture_scale;
  for (std::size_t i = 0; i < s; ++i) {
    Screening sc;
    sc.months_from_first = months[i];
    std::array<Field, kViews> img;
    for (std::size_t v = 0; v < kViews; ++v) {
      img[v] = Field(kSide * kSide);
      for (std::size_t k = 0; k < img[v].size(); ++k) {
        img[v][k] = bg + tex * anatomy[v][k] + rng.normal(0.0, spec.noise_sd);
      }
    }
    if (p.diagnosed && months[i] >= onset) {
      const double amp = spec.lesion.base_amplitude +
                         spec.lesion.growth_per_year * (months[i] - onset) / 12.0;
      for (std::size_t v = 0; v < kViews; ++v) {
        if (lesion_view[v]) add_blob(img[v], amp, lesion_spot[v].row, lesion_spot[v].col, spec.lesion.radius);
      }
    }
    if (i + 1 < s && rng.bernoulli(spec.benign_rate)) {
      const auto v = static_cast<std::size_t>(rng.integer(0, kViews - 1));
      const Spot spot = draw_spot(rng);
      add_blob(img[v], spec.benign_amplitude * rng.uniform(0.5, 1.0), spot.row, spot.col,
               spec.lesion.radius);
    }
    for (std::size_t v = 0; v < kViews; ++v) {
      sc.views[v].height = kSide;
      sc.views[v].width = kSide;
      sc.views[v].pixels.assign(img[v].begin(), img[v].end());
    }
    p.screenings.push_back(std::move(sc));
  }
  compute_radiomics(p);
  return p;
}

Dataset generate_cohort(const CohortSpec& spec) {
  spec.validate();
  Dataset d;
  const std::size_t n = spec.n_cases + spec.n_controls;
  d.patients.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.patients.push_back(generate_patient(spec, i));
  return d;
}

// ---------------------------------------------------------------------------

const std::array<const char*, kRadiomicWidth> kRadiomicNames = {
    "mean",      "variance",      "skewness",        "kurtosis",
    "hist_energy", "hist_entropy", "grad_mean",      "grad_variance",
    "border_center_ratio", "foreground_fraction", "min", "max"};

RadiomicVector extract_radiomics(const Image& image) {
  RadiomicVector out{};
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  const std::size_t n = h * w;
  if (n == 0) return out;
  std::vector<double> x(image.pixels.begin(), image.pixels.end());

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  out[0] = mean;
  out[1] = m2;
  out[2] = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  out[3] = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;

  const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  std::array<double, 5> bins{};
  for (double v : x) {
    std::size_t b = mx > mn ? static_cast<std::size_t>((v - mn) / (mx - mn) * 5.0) : 0;
    bins[std::min<std::size_t>(b, 4)] += 1.0;
  }
  double energy = 0.0, entropy = 0.0;
  for (double c : bins) {
    const double p = c / n;
    energy += p * p;
    if (p > 0.0) entropy -= p * std::log(p);
  }
  out[4] = energy;
  out[5] = entropy;

  // Forward differences; zero beyond the last row / column.
  std::vector<double> g(n);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double gx = c + 1 < w ? x[r * w + c + 1] - x[r * w + c] : 0.0;
      const double gy = r + 1 < h ? x[(r + 1) * w + c] - x[r * w + c] : 0.0;
      g[r * w + c] = std::sqrt(gx * gx + gy * gy);
    }
  }
  double gm = 0.0;
  for (double v : g) gm += v;
  gm /= n;
  double gv = 0.0;
  for (double v : g) gv += (v - gm) * (v - gm);
  out[6] = gm;
  out[7] = gv / n;

  // Border = outer quarter on every side.
  const std::size_t br = h / 4;
  const std::size_t bc = w / 4;
  double border = 0.0, center = 0.0;
  std::size_t nb = 0, nc = 0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const bool inner = r >= br && r < h - br && c >= bc && c < w - bc;
      if (inner) {
        center += x[r * w + c];
        ++nc;
      } else {
        border += x[r * w + c];
        ++nb;
      }
    }
  }
  border = nb ? border / nb : 0.0;
  center = nc ? center / nc : 0.0;
  out[8] = std::abs(center) > 1e-12 ? border / center : 0.0;

  const double thr = mean + std::sqrt(m2);
  std::size_t fg = 0;
  for (double v : x) fg += v > thr;
  out[9] = m2 > 0.0 ? static_cast<double>(fg) / n : 0.0;
  out[10] = mn;
  out[11] = mx;
  return out;
}

void compute_radiomics(PatientRecord& record) {
  record.radiomics.clear();
  for (const auto& sc : record.screenings) {
    std::array<RadiomicVector, kViews> r;
    for (std::size_t v = 0; v < kViews; ++v) r[v] = extract_radiomics(sc.views[v]);
    record.radiomics.push_back(r);
  }
}

// ---------------------------------------------------------------------------

namespace {

std::array<std::size_t, 3> largest_remainder(std::size_t n, const std::array<double, 3>& f) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(counts[i]);
    used += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; used < n; ++k, ++used) counts[order[k % 3]] += 1;
  return counts;
}

}  // namespace

void split_cohort(Dataset& data, const SplitFractions& fractions, std::uint64_t seed,
                  std::size_t min_cases_per_split) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double x : f) {
    if (!(x >= 0.0)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  static const std::array<const char*, 3> names = {"train", "val", "test"};
  Rng rng(derive_seed(seed, "split"));
  for (bool cls : {true, false}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.patients.size(); ++i) {
      if (data.patients[i].diagnosed == cls) idx.push_back(i);
    }
    rng.shuffle(idx);
    const auto counts = largest_remainder(idx.size(), f);
    if (cls && min_cases_per_split > 0) {
      for (std::size_t s = 0; s < 3; ++s) {
        if (f[s] > 0.0 && counts[s] < min_cases_per_split) {
          throw ConfigError(std::string("split '") + names[s] + "' is too small to hold " +
                            std::to_string(min_cases_per_split) + " case(s)");
        }
      }
    }
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t k = 0; k < counts[s]; ++k) data.patients[idx[pos++]].split = names[s];
    }
  }
}

std::vector<const PatientRecord*> select_split(const Dataset& data, const std::string& split) {
  std::vector<const PatientRecord*> out;
  for (const auto& p : data.patients) {
    if (p.split == split) out.push_back(&p);
  }
  return out;
}

// ---------------------------------------------------------------------------

NormStats compute_norm_stats(const std::vector<const PatientRecord*>& train) {
  NormStats st;
  double sum = 0.0;
  std::size_t n = 0;
  RadiomicVector rsum{};
  std::size_t rn = 0;
  for (const auto* p : train) {
    for (std::size_t i = 0; i < p->screenings.size(); ++i) {
      for (std::size_t v = 0; v < kViews; ++v) {
        for (float x : p->screenings[i].views[v].pixels) sum += x;
        n += p->screenings[i].views[v].pixels.size();
        for (std::size_t k = 0; k < kRadiomicWidth; ++k) rsum[k] += p->radiomics[i][v][k];
        ++rn;
      }
    }
  }
  if (n == 0) throw ContractError("normalization needs a non-empty training subset");
  st.mean = sum / n;
  double ss = 0.0;
  RadiomicVector rss{};
  for (std::size_t k = 0; k < kRadiomicWidth; ++k) st.radiomic_mean[k] = rsum[k] / rn;
  for (const auto* p : train) {
    for (std::size_t i = 0; i < p->screenings.size(); ++i) {
      for (std::size_t v = 0; v < kViews; ++v) {
        for (float x : p->screenings[i].views[v].pixels) ss += (x - st.mean) * (x - st.mean);
        for (std::size_t k = 0; k < kRadiomicWidth; ++k) {
          const double d = p->radiomics[i][v][k] - st.radiomic_mean[k];
          rss[k] += d * d;
        }
      }
    }
  }
  st.sd = std::sqrt(ss / n);
  if (!(st.sd > 0.0)) throw NumericalError("training images have zero variance");
  for (std::size_t k = 0; k < kRadiomicWidth; ++k) {
    const double sd = std::sqrt(rss[k] / rn);
    // A constant radiomic feature carries nothing; leave it centered only.
    st.radiomic_sd[k] = sd > 0.0 ? sd : 1.0;
  }
  return st;
}

FlipDraw draw_flips(Rng& rng) {
  FlipDraw f;
  f.horizontal = rng.bernoulli(0.5);
  f.vertical = rng.bernoulli(0.5);
  return f;
}

std::vector<double> normalize_image(const Image& image, const NormStats& stats, FlipDraw flips) {
  if (!(stats.sd > 0.0)) throw NumericalError("normalization standard deviation is zero");
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  std::vector<double> out(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t sr = flips.vertical ? h - 1 - r : r;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t sc = flips.horizontal ? w - 1 - c : c;
      out[r * w + c] = (static_cast<double>(image.pixels[sr * w + sc]) - stats.mean) / stats.sd;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace dataset_io {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

std::string image_name(const std::string& pid, std::size_t screening, std::size_t view) {
  return "images/" + pid + "_s" + std::to_string(screening) + "_" + kViewNames[view] + ".trimg";
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& image) {
  static_assert(sizeof(float) == 4);
  std::string bytes(kImageMagic);
  put_u32(bytes, static_cast<std::uint32_t>(image.height));
  put_u32(bytes, static_cast<std::uint32_t>(image.width));
  for (float f : image.pixels) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(bytes, bits);
  }
  io::write_atomic(path, bytes);
}

Image read_image(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const std::size_t head = kImageMagic.size() + 8;
  if (bytes.size() < head || bytes.compare(0, kImageMagic.size(), kImageMagic) != 0) {
    throw IoError("not a TRIMG01 image: " + path.string());
  }
  Image img;
  img.height = get_u32(bytes, kImageMagic.size());
  img.width = get_u32(bytes, kImageMagic.size() + 4);
  const std::size_t n = img.height * img.width;
  if (bytes.size() != head + 4 * n) throw IoError("truncated image " + path.string());
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(bytes, head + 4 * i);
    std::memcpy(&img.pixels[i], &bits, 4);
  }
  return img;
}

void save(const std::filesystem::path& dir, const Dataset& data, const std::string& config_hash) {
  std::filesystem::create_directories(dir / "images");
  io::CsvTable manifest;
  manifest.header = {"patient_id", "split", "screening_index", "months_from_first",
                     "outcome_months", "outcome_type", "laterality",
                     "image_LCC", "image_LMLO", "image_RCC", "image_RMLO"};
  io::CsvTable rad;
  rad.header = {"patient_id", "screening_index", "view"};
  for (const char* name : kRadiomicNames) rad.header.emplace_back(name);
  for (const auto& p : data.patients) {
    for (std::size_t i = 0; i < p.screenings.size(); ++i) {
      std::vector<std::string> row = {p.id, p.split, std::to_string(i),
                                      std::to_string(p.screenings[i].months_from_first),
                                      io::format_double(p.outcome_months),
                                      p.diagnosed ? "case" : "control", to_string(p.laterality)};
      for (std::size_t v = 0; v < kViews; ++v) {
        const std::string ref = image_name(p.id, i, v);
        write_image(dir / ref, p.screenings[i].views[v]);
        row.push_back(ref);
        std::vector<std::string> rrow = {p.id, std::to_string(i), kViewNames[v]};
        for (double x : p.radiomics[i][v]) rrow.push_back(io::format_double(x));
        rad.rows.push_back(std::move(rrow));
      }
      manifest.rows.push_back(std::move(row));
    }
  }
  io::write_csv(dir / "radiomics.csv", rad, config_hash);
  io::write_csv(dir / "manifest.csv", manifest, config_hash);
}

Dataset load(const std::filesystem::path& dir) {
  const auto manifest = io::read_csv(dir / "manifest.csv");
  const auto rad = io::read_csv(dir / "radiomics.csv");
  const std::size_t c_pid = manifest.column("patient_id");
  const std::size_t c_split = manifest.column("split");
  const std::size_t c_idx = manifest.column("screening_index");
  const std::size_t c_month = manifest.column("months_from_first");
  const std::size_t c_out = manifest.column("outcome_months");
  const std::size_t c_type = manifest.column("outcome_type");
  const std::size_t c_lat = manifest.column("laterality");
  std::array<std::size_t, kViews> c_img;
  for (std::size_t v = 0; v < kViews; ++v) c_img[v] = manifest.column(std::string("image_") + kViewNames[v]);

  Dataset data;
  std::map<std::string, std::size_t> index;
  for (const auto& row : manifest.rows) {
    const std::string& pid = row[c_pid];
    auto it = index.find(pid);
    if (it == index.end()) {
      it = index.emplace(pid, data.patients.size()).first;
      PatientRecord p;
      p.id = pid;
      p.split = row[c_split];
      p.diagnosed = row[c_type] == "case";
      if (!p.diagnosed && row[c_type] != "control") throw IoError("bad outcome_type for " + pid);
      p.outcome_months = std::stod(row[c_out]);
      p.laterality = parse_laterality(row[c_lat]);
      data.patients.push_back(std::move(p));
    }
    PatientRecord& p = data.patients[it->second];
    const std::size_t si = std::stoul(row[c_idx]);
    if (si != p.screenings.size()) throw IoError("screenings out of order for " + pid);
    Screening sc;
    sc.months_from_first = std::stoi(row[c_month]);
    for (std::size_t v = 0; v < kViews; ++v) sc.views[v] = read_image(dir / row[c_img[v]]);
    p.screenings.push_back(std::move(sc));
  }
  for (auto& p : data.patients) {
    p.radiomics.assign(p.screenings.size(), {});
  }
  std::vector<std::vector<std::array<bool, kViews>>> seen(data.patients.size());
  for (std::size_t i = 0; i < data.patients.size(); ++i) {
    seen[i].assign(data.patients[i].screenings.size(), {});
  }
  const std::size_t r_pid = rad.column("patient_id");
  const std::size_t r_idx = rad.column("screening_index");
  const std::size_t r_view = rad.column("view");
  for (const auto& row : rad.rows) {
    auto it = index.find(row[r_pid]);
    if (it == index.end()) throw IoError("radiomics for unknown patient " + row[r_pid]);
    const std::size_t si = std::stoul(row[r_idx]);
    std::size_t v = kViews;
    for (std::size_t k = 0; k < kViews; ++k) {
      if (row[r_view] == kViewNames[k]) v = k;
    }
    auto& p = data.patients[it->second];
    if (si >= p.screenings.size() || v == kViews) throw IoError("bad radiomics key for " + p.id);
    for (std::size_t k = 0; k < kRadiomicWidth; ++k) {
      p.radiomics[si][v][k] = std::stod(row[rad.column(kRadiomicNames[k])]);
    }
    seen[it->second][si][v] = true;
  }
  for (std::size_t i = 0; i < data.patients.size(); ++i) {
    for (const auto& s : seen[i]) {
      for (bool b : s) {
        if (!b) throw IoError("radiomics.csv is missing entries for " + data.patients[i].id);
      }
    }
  }
  return data;
}

}  // namespace dataset_io

}  // namespace trinet
