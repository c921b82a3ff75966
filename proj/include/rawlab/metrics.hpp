// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "rawlab/raw.hpp"

namespace rawlab::metrics {

using raw::PackedRaw;

/// 10 * log10(1 / MSE) over all four channels, peak 1.0. Identical inputs
/// give +infinity.
double psnr(const PackedRaw& a, const PackedRaw& b);

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Mean structural similarity: 11x11 gaussian window (sigma 1.5) evaluated
/// at every fully covered position of each channel, then averaged over the
/// four channels. Unit dynamic range.
double ssim(const PackedRaw& a, const PackedRaw& b);

/// Normalized 11x11 gaussian window, row-major.
std::vector<double> ssim_window();

struct ImageScore {
  std::string name;
  double psnr = 0.0;  // +inf for identical images
  double ssim = 0.0;
};

struct EvalError {
  std::string name;
  std::string message;
};

struct MetricReport {
  std::vector<ImageScore> per_image;
  std::vector<EvalError> errors;
  double mean_psnr = std::numeric_limits<double>::quiet_NaN();
  double mean_ssim = std::numeric_limits<double>::quiet_NaN();

  /// Recomputes the means from per_image (NaN when empty).
  void finalize();
};

/// Scores every `.npy` present in both directories, in filename order.
/// Files missing a counterpart, unreadable, or of mismatched shape are
/// listed under `errors` and excluded from the means.
MetricReport evaluate_dir(const std::filesystem::path& pred, const std::filesystem::path& gt);

// JSON form: infinite PSNR values are written as null with a companion
// `*_infinite: true` flag, never as a sentinel number.
void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// Structural check of a report document against the published schema
/// (schemas/metric_report.schema.json). Returns the list of violations.
std::vector<std::string> validate_report_json(const nlohmann::json& j);

/// One row per image: name,psnr,ssim (psnr "inf" when infinite).
std::string to_csv(const MetricReport& r);

}  // namespace rawlab::metrics
