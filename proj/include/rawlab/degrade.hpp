// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rawlab/raw.hpp"
#include "rawlab/rng.hpp"

namespace rawlab::degrade {

using raw::PackedRaw;

// ---------------------------------------------------------------------------
// Noise

enum class NoiseKind { ShotRead, HeteroGaussian };

/// Sampling ranges. The base ranges are the stock pipeline's; the extended
/// ones widen the shot-noise upper bound to 10^-2 and the heteroscedastic
/// ranges to sigma1 in (5e-3, 1e-1), sigma2 in (1e-3, 5e-2).
struct NoiseRanges {
  double log_min_shot = -4.0;
  double log_max_shot = -3.0;
  double log_min_read = -6.0;
  double log_max_read = -4.0;
  double sigma1_min = 5e-3;
  double sigma1_max = 5e-2;
  double sigma2_min = 1e-3;
  double sigma2_max = 1e-2;

  static NoiseRanges base() { return {}; }
  static NoiseRanges extended();
};

/// Either a Gaussian approximation of Poisson-Gaussian noise with variance
/// lambda_shot * x + lambda_read, or heteroscedastic Gaussian noise with
/// standard deviation sigma1 * x + sigma2.
struct NoiseProfile {
  NoiseKind kind = NoiseKind::ShotRead;
  double lambda_shot = 0.0;
  double lambda_read = 0.0;
  double sigma1 = 0.0;
  double sigma2 = 0.0;

  void validate() const;
  /// Analytic per-pixel variance at clean intensity x.
  double variance(double x) const;
};

NoiseProfile sample_noise_profile(Rng& rng, bool extended);

/// Adds noise and clamps to [0, 1]. Pixels are visited channel by channel in
/// raster order, one normal draw each.
PackedRaw apply_noise(const PackedRaw& p, const NoiseProfile& profile, Rng& rng);
/// Same draws as apply_noise without the final clamp.
PackedRaw apply_noise_unclamped(const PackedRaw& p, const NoiseProfile& profile, Rng& rng);

// ---------------------------------------------------------------------------
// Blur

enum class KernelKind { IsoGaussian, AnisoGaussian, Motion };

constexpr int kMinKernelSize = 5;
constexpr int kMaxKernelSize = 25;
constexpr double kMinBlurSigma = 0.3;
constexpr double kMaxBlurSigma = 4.0;

/// Normalized point spread function plus the parameters that generated it.
struct BlurKernel {
  KernelKind kind = KernelKind::IsoGaussian;
  int size = 1;
  std::vector<float> taps{1.0f};  // size x size, row-major
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double theta = 0.0;   // rotation of the gaussian's principal axis, radians
  double length = 0.0;  // motion segment length, pixels
  double angle = 0.0;   // motion direction, radians

  float at(int r, int c) const { return taps[static_cast<std::size_t>(r * size + c)]; }
  /// Odd size, non-negative taps summing to 1 within 1e-6.
  void validate() const;
};

/// Size used for a gaussian of the given spread: 2*ceil(3*sigma)+1 clamped to [5, 25].
int gaussian_kernel_size(double sigma);
BlurKernel make_gaussian_kernel(int size, double sigma_x, double sigma_y, double theta);
BlurKernel make_motion_kernel(int size, double length, double angle);
BlurKernel generate_kernel(Rng& rng, KernelKind kind);

/// Correlates each channel with the kernel (no flip), replicate padding.
PackedRaw apply_blur(const PackedRaw& p, const BlurKernel& kernel);

// ---------------------------------------------------------------------------
// Downsampling

enum class DownsampleMethod { None, AvgPool2, Bicubic2, FootprintBicubic2 };

/// 2x reduction of every channel.
///  - AvgPool2: mean of each 2x2 block.
///  - Bicubic2: image-resize style bicubic (a = -0.5) with the kernel
///    stretched by the scale factor for antialiasing, half-pixel centers.
///  - FootprintBicubic2: 4x4-tap bicubic evaluated at the center of each
///    output pixel's 2x2 input footprint, (2i + 0.5, 2j + 0.5).
/// Boundaries are replicated. None returns the input unchanged.
PackedRaw downsample(const PackedRaw& p, DownsampleMethod method);

/// Catmull-Rom style cubic convolution kernel with a = -0.5.
double cubic_weight(double x);

// ---------------------------------------------------------------------------
// Degradation levels

enum class Level { L1, L2, L3 };
enum class Task { Restoration, Sr2x };

constexpr double kL2BlurProbability = 0.3;
constexpr double kL2NoiseProbability = 0.5;

/// Everything sampled while degrading one image. Replaying a recipe
/// reproduces the degraded output bit for bit.
struct DegradationRecipe {
  std::uint64_t seed = 0;
  Level level = Level::L1;
  Task task = Task::Restoration;
  std::optional<BlurKernel> blur;
  std::optional<NoiseProfile> noise;
  std::uint64_t noise_seed = 0;
  bool extended_noise = false;
  DownsampleMethod downsample = DownsampleMethod::None;
};

struct DegradeOptions {
  DownsampleMethod sr_method = DownsampleMethod::AvgPool2;
  bool extended_noise = false;
};

struct Degraded {
  PackedRaw image;
  DegradationRecipe recipe;
};

/// L1: noise only. L2: blur with probability 0.3 and noise with probability
/// 0.5, drawn independently. L3: blur and noise. Blur runs first, then the
/// 2x reduction for the SR task, then noise.
Degraded degrade_level(const PackedRaw& p, Level level, std::uint64_t seed, Task task,
                       const DegradeOptions& options = {});

PackedRaw replay(const PackedRaw& p, const DegradationRecipe& recipe);

// String forms used in JSON and on the command line.
std::string to_string(NoiseKind k);
std::string to_string(KernelKind k);
std::string to_string(DownsampleMethod m);
std::string to_string(Level l);
std::string to_string(Task t);
DownsampleMethod parse_downsample(const std::string& s);

void to_json(nlohmann::json& j, const NoiseProfile& p);
void from_json(const nlohmann::json& j, NoiseProfile& p);
void to_json(nlohmann::json& j, const BlurKernel& k);
void from_json(const nlohmann::json& j, BlurKernel& k);
void to_json(nlohmann::json& j, const DegradationRecipe& r);
void from_json(const nlohmann::json& j, DegradationRecipe& r);

}  // namespace rawlab::degrade
