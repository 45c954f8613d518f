#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trinet/radmil.hpp"
#include "trinet/rng.hpp"

namespace trinet {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kRadiomicWidth = 12;
inline constexpr std::size_t kMaxScreenings = 5;

enum class Laterality { kNone, kLeft, kRight };
std::string to_string(Laterality lat);
Laterality parse_laterality(const std::string& s);

struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // row-major

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }
};

struct Screening {
  int months_from_first = 0;
  std::array<Image, kViews> views;  // View order
};

struct PatientRecord {
  std::string id;
  std::string split;  // "train", "val", "test" or empty
  std::vector<Screening> screenings;
  bool diagnosed = false;
  // Months from the first screening to diagnosis (cases) or to the end of
  // follow-up (controls).
  double outcome_months = 0.0;
  Laterality laterality = Laterality::kNone;
  // Radiomic vectors per screening and view (raw, un-normalized).
  std::vector<std::array<std::array<double, kRadiomicWidth>, kViews>> radiomics;
};

struct LesionSpec {
  double base_amplitude = 0.45;
  double growth_per_year = 0.45;
  double radius = 2.0;
  double lead_min_months = 18.0;  // onset precedes diagnosis by a uniform lead
  double lead_max_months = 48.0;
};

struct PopulationSpec {
  double background_mean = 1.0;
  double texture_scale = 0.3;
  // Per-patient intensity offset shared by all views and screenings.
  double density_sd = 0.0;
};

struct CohortSpec {
  std::size_t n_cases = 100;
  std::size_t n_controls = 100;
  std::vector<double> screening_counts = {0.30, 0.25, 0.20, 0.15, 0.10};
  double interval_mean = 12.0;
  double interval_jitter = 3.0;
  double case_dx_max_months = 24.0;  // diagnosis 0..max months after the last screening
  double control_followup_min = 24.0;
  double control_followup_max = 84.0;
  LesionSpec lesion;
  PopulationSpec population;
  double noise_sd = 0.1;
  double asymmetry = 0.15;  // independent texture share between sides
  // Per prior screening, chance of a transient benign blob that has resolved
  // by the next screening.
  double benign_rate = 0.35;
  double benign_amplitude = 0.8;
  // Lesion drawn in one projection of the affected side only.
  bool single_view_signal = false;
  std::string id_prefix = "P";
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<PatientRecord> patients;

  std::size_t count_cases() const;
};

// Deterministic given spec (each patient seeded from (seed, index)).
Dataset generate_cohort(const CohortSpec& spec);
PatientRecord generate_patient(const CohortSpec& spec, std::size_t index);

// mean, variance, skewness, excess kurtosis, 5-bin histogram energy, 5-bin
// histogram entropy, gradient-magnitude mean, gradient-magnitude variance,
// border/center intensity ratio, foreground fraction (> mean + sd), min, max.
using RadiomicVector = std::array<double, kRadiomicWidth>;
RadiomicVector extract_radiomics(const Image& image);
extern const std::array<const char*, kRadiomicWidth> kRadiomicNames;
void compute_radiomics(PatientRecord& record);

// Stratified patient-level split by largest remainder. Fractions are
// train/val/test. When min_cases_per_split > 0, a split with positive
// fraction receiving fewer cases is an error.
struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};
void split_cohort(Dataset& data, const SplitFractions& fractions, std::uint64_t seed,
                  std::size_t min_cases_per_split = 0);
std::vector<const PatientRecord*> select_split(const Dataset& data, const std::string& split);

// ---- normalization and augmentation ----
struct NormStats {
  double mean = 0.0;
  double sd = 1.0;
  RadiomicVector radiomic_mean{};
  RadiomicVector radiomic_sd{};
};
// Pixel and radiomic statistics over every screening of the given patients.
NormStats compute_norm_stats(const std::vector<const PatientRecord*>& train);

struct FlipDraw {
  bool horizontal = false;
  bool vertical = false;
};
FlipDraw draw_flips(Rng& rng);
// (x - mean) / sd, then the flips; returns a [rows, cols] row-major buffer.
std::vector<double> normalize_image(const Image& image, const NormStats& stats,
                                    FlipDraw flips = {});

// ---- on-disk format ----
namespace dataset_io {
inline constexpr std::string_view kImageMagic = "TRIMG01";
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);
// Writes manifest.csv, radiomics.csv and images/ under `dir`.
void save(const std::filesystem::path& dir, const Dataset& data, const std::string& config_hash);
Dataset load(const std::filesystem::path& dir);
}  // namespace dataset_io

}  // namespace trinet
