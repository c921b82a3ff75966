// SPDX-License-Identifier: Apache-2.0
#include "rawlab/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "rawlab/error.hpp"

namespace rawlab::degrade {
namespace {

using raw::kPackedChannels;

// Salt for the noise realization stream, kept apart from the parameter
// stream so a recipe can be replayed without re-running the sampling logic.
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (static_cast<std::size_t>(i) >= n) return n - 1;
  return static_cast<std::size_t>(i);
}

BlurKernel normalized(BlurKernel k, const std::vector<double>& raw_taps) {
  double sum = 0.0;
  for (double t : raw_taps) sum += t;
  k.taps.resize(raw_taps.size());
  for (std::size_t i = 0; i < raw_taps.size(); ++i)
    k.taps[i] = static_cast<float>(raw_taps[i] / sum);
  return k;
}

// Separable resampling filter: for each output index, the first input index
// and the weights applied to consecutive inputs (clamped at the borders).
struct Taps1D {
  std::vector<long> first;
  std::vector<std::vector<double>> weights;
};

Taps1D footprint_taps(std::size_t out_len) {
  Taps1D t;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double center = 2.0 * static_cast<double>(i) + 0.5;
    const long base = static_cast<long>(std::floor(center)) - 1;
    std::vector<double> w(4);
    for (int m = 0; m < 4; ++m) w[m] = cubic_weight(center - static_cast<double>(base + m));
    t.first.push_back(base);
    t.weights.push_back(std::move(w));
  }
  return t;
}

Taps1D antialiased_taps(std::size_t out_len) {
  constexpr double kScale = 2.0;
  constexpr double kSupport = 2.0 * kScale;
  Taps1D t;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double center = kScale * static_cast<double>(i) + 0.5 * (kScale - 1.0);
    const long lo = static_cast<long>(std::floor(center - kSupport)) + 1;
    const long hi = static_cast<long>(std::ceil(center + kSupport)) - 1;
    std::vector<double> w;
    double sum = 0.0;
    for (long x = lo; x <= hi; ++x) {
      const double v = cubic_weight((center - static_cast<double>(x)) / kScale);
      w.push_back(v);
      sum += v;
    }
    for (double& v : w) v /= sum;
    t.first.push_back(lo);
    t.weights.push_back(std::move(w));
  }
  return t;
}

PackedRaw resample_separable(const PackedRaw& p, const Taps1D& rows, const Taps1D& cols) {
  const std::size_t oh = rows.first.size();
  const std::size_t ow = cols.first.size();
  PackedRaw out(oh, ow);
  std::vector<double> tmp(kPackedChannels * p.height * ow);
  // Horizontal pass into tmp (height x ow per channel), then vertical.
#pragma omp parallel for schedule(static)
  for (long cy = 0; cy < static_cast<long>(kPackedChannels * p.height); ++cy) {
    const std::size_t c = static_cast<std::size_t>(cy) / p.height;
    const std::size_t y = static_cast<std::size_t>(cy) % p.height;
    const float* src = p.plane(c) + y * p.width;
    double* dst = &tmp[static_cast<std::size_t>(cy) * ow];
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      const auto& w = cols.weights[j];
      for (std::size_t m = 0; m < w.size(); ++m)
        acc += w[m] * src[clamp_index(cols.first[j] + static_cast<long>(m), p.width)];
      dst[j] = acc;
    }
  }
#pragma omp parallel for schedule(static)
  for (long ci = 0; ci < static_cast<long>(kPackedChannels * oh); ++ci) {
    const std::size_t c = static_cast<std::size_t>(ci) / oh;
    const std::size_t i = static_cast<std::size_t>(ci) % oh;
    const auto& w = rows.weights[i];
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < w.size(); ++m) {
        const std::size_t y = clamp_index(rows.first[i] + static_cast<long>(m), p.height);
        acc += w[m] * tmp[(c * p.height + y) * ow + j];
      }
      out.at(c, i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

PackedRaw avgpool2(const PackedRaw& p) {
  PackedRaw out(p.height / 2, p.width / 2);
  for (std::size_t c = 0; c < kPackedChannels; ++c)
    for (std::size_t i = 0; i < out.height; ++i)
      for (std::size_t j = 0; j < out.width; ++j) {
        const double s = static_cast<double>(p.at(c, 2 * i, 2 * j)) + p.at(c, 2 * i, 2 * j + 1) +
                         p.at(c, 2 * i + 1, 2 * j) + p.at(c, 2 * i + 1, 2 * j + 1);
        out.at(c, i, j) = static_cast<float>(0.25 * s);
      }
  return out;
}

PackedRaw add_noise(const PackedRaw& p, const NoiseProfile& profile, Rng& rng, bool clamp) {
  profile.validate();
  PackedRaw out = p;
  for (float& v : out.data) {
    const double x = v;
    const double stddev = std::sqrt(profile.variance(x));
    double y = x + stddev * rng.normal();
    if (clamp) y = std::clamp(y, 0.0, 1.0);
    v = static_cast<float>(y);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Noise

NoiseRanges NoiseRanges::extended() {
  NoiseRanges r;
  r.log_max_shot = -2.0;
  r.sigma1_max = 1e-1;
  r.sigma2_max = 5e-2;
  return r;
}

void NoiseProfile::validate() const {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  if (kind == NoiseKind::ShotRead) {
    if (!ok(lambda_shot) || !ok(lambda_read))
      fail(ErrorKind::Argument, "shot/read noise parameters must be finite and >= 0");
  } else {
    if (!ok(sigma1) || !ok(sigma2))
      fail(ErrorKind::Argument, "heteroscedastic noise parameters must be finite and >= 0");
  }
}

double NoiseProfile::variance(double x) const {
  if (kind == NoiseKind::ShotRead) return std::max(0.0, lambda_shot * x + lambda_read);
  const double s = std::max(0.0, sigma1 * x + sigma2);
  return s * s;
}

NoiseProfile sample_noise_profile(Rng& rng, bool extended) {
  const NoiseRanges r = extended ? NoiseRanges::extended() : NoiseRanges::base();
  NoiseProfile p;
  if (rng.bernoulli(0.5)) {
    p.kind = NoiseKind::ShotRead;
    p.lambda_shot = std::pow(10.0, rng.uniform(r.log_min_shot, r.log_max_shot));
    p.lambda_read = std::pow(10.0, rng.uniform(r.log_min_read, r.log_max_read));
  } else {
    p.kind = NoiseKind::HeteroGaussian;
    p.sigma1 = rng.uniform(r.sigma1_min, r.sigma1_max);
    p.sigma2 = rng.uniform(r.sigma2_min, r.sigma2_max);
  }
  return p;
}

PackedRaw apply_noise(const PackedRaw& p, const NoiseProfile& profile, Rng& rng) {
  return add_noise(p, profile, rng, true);
}

PackedRaw apply_noise_unclamped(const PackedRaw& p, const NoiseProfile& profile, Rng& rng) {
  return add_noise(p, profile, rng, false);
}

// ---------------------------------------------------------------------------
// Blur

void BlurKernel::validate() const {
  if (size < 1 || size % 2 == 0) fail(ErrorKind::Argument, "kernel size must be odd");
  if (taps.size() != static_cast<std::size_t>(size * size))
    fail(ErrorKind::Argument, "kernel tap count does not match its size");
  double sum = 0.0;
  for (float t : taps) {
    if (!(t >= 0.0f)) fail(ErrorKind::Argument, "kernel taps must be non-negative");
    sum += t;
  }
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorKind::Argument, "kernel taps must sum to 1");
}

int gaussian_kernel_size(double sigma) {
  const int k = 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
  return std::clamp(k, kMinKernelSize, kMaxKernelSize);
}

BlurKernel make_gaussian_kernel(int size, double sigma_x, double sigma_y, double theta) {
  if (size < 1 || size % 2 == 0) fail(ErrorKind::Argument, "kernel size must be odd");
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) fail(ErrorKind::Argument, "sigma must be positive");
  BlurKernel k;
  k.kind = (sigma_x == sigma_y) ? KernelKind::IsoGaussian : KernelKind::AnisoGaussian;
  k.size = size;
  k.sigma_x = sigma_x;
  k.sigma_y = sigma_y;
  k.theta = theta;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const int r = size / 2;
  std::vector<double> raw_taps(static_cast<std::size_t>(size * size));
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) {
      const double u = c * x + s * y;
      const double v = -s * x + c * y;
      const double e = u * u / (sigma_x * sigma_x) + v * v / (sigma_y * sigma_y);
      raw_taps[static_cast<std::size_t>((y + r) * size + (x + r))] = std::exp(-0.5 * e);
    }
  return normalized(std::move(k), raw_taps);
}

BlurKernel make_motion_kernel(int size, double length, double angle) {
  if (size < 1 || size % 2 == 0) fail(ErrorKind::Argument, "kernel size must be odd");
  if (!(length >= 0.0)) fail(ErrorKind::Argument, "motion length must be >= 0");
  BlurKernel k;
  k.kind = KernelKind::Motion;
  k.size = size;
  k.length = length;
  k.angle = angle;
  std::vector<double> raw_taps(static_cast<std::size_t>(size * size), 0.0);
  const double center = 0.5 * (size - 1);
  const int samples = std::max(2, static_cast<int>(std::ceil(length * 8.0)) + 1);
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  for (int n = 0; n < samples; ++n) {
    const double t = length * (static_cast<double>(n) / (samples - 1) - 0.5);
    const double px = center + t * dx;
    const double py = center + t * dy;
    const int x0 = static_cast<int>(std::floor(px));
    const int y0 = static_cast<int>(std::floor(py));
    const double fx = px - x0;
    const double fy = py - y0;
    const std::array<std::array<double, 3>, 4> splat{{{0, 0, (1 - fy) * (1 - fx)},
                                                      {0, 1, (1 - fy) * fx},
                                                      {1, 0, fy * (1 - fx)},
                                                      {1, 1, fy * fx}}};
    for (const auto& [oy, ox, w] : splat) {
      const int yy = y0 + static_cast<int>(oy);
      const int xx = x0 + static_cast<int>(ox);
      if (yy < 0 || yy >= size || xx < 0 || xx >= size) continue;
      raw_taps[static_cast<std::size_t>(yy * size + xx)] += w;
    }
  }
  // A zero-length segment still lands on the center tap.
  return normalized(std::move(k), raw_taps);
}

BlurKernel generate_kernel(Rng& rng, KernelKind kind) {
  switch (kind) {
    case KernelKind::IsoGaussian: {
      const double sigma = rng.uniform(kMinBlurSigma, kMaxBlurSigma);
      BlurKernel k = make_gaussian_kernel(gaussian_kernel_size(sigma), sigma, sigma, 0.0);
      k.kind = KernelKind::IsoGaussian;
      return k;
    }
    case KernelKind::AnisoGaussian: {
      const double sx = rng.uniform(kMinBlurSigma, kMaxBlurSigma);
      const double sy = rng.uniform(kMinBlurSigma, kMaxBlurSigma);
      const double theta = rng.uniform(0.0, std::numbers::pi);
      BlurKernel k = make_gaussian_kernel(gaussian_kernel_size(std::max(sx, sy)), sx, sy, theta);
      k.kind = KernelKind::AnisoGaussian;
      return k;
    }
    case KernelKind::Motion: {
      const int size = 2 * rng.uniform_int(kMinKernelSize / 2, kMaxKernelSize / 2) + 1;
      const double length = rng.uniform(3.0, static_cast<double>(size));
      const double angle = rng.uniform(0.0, std::numbers::pi);
      return make_motion_kernel(size, length, angle);
    }
  }
  fail(ErrorKind::Argument, "unknown kernel kind");
}

PackedRaw apply_blur(const PackedRaw& p, const BlurKernel& kernel) {
  kernel.validate();
  const auto k = static_cast<std::size_t>(kernel.size);
  if (k > p.height || k > p.width)
    fail(ErrorKind::Argument, "blur kernel larger than image");
  const std::size_t r = k / 2;
  const std::size_t pw = p.width + 2 * r;
  const std::size_t ph = p.height + 2 * r;

  std::vector<float> padded(kPackedChannels * ph * pw);
  for (std::size_t c = 0; c < kPackedChannels; ++c)
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = clamp_index(static_cast<long>(y) - static_cast<long>(r), p.height);
      float* row = &padded[(c * ph + y) * pw];
      for (std::size_t x = 0; x < pw; ++x)
        row[x] = p.at(c, sy, clamp_index(static_cast<long>(x) - static_cast<long>(r), p.width));
    }

  PackedRaw out(p.height, p.width);
#pragma omp parallel for schedule(static)
  for (long cy = 0; cy < static_cast<long>(kPackedChannels * p.height); ++cy) {
    const std::size_t c = static_cast<std::size_t>(cy) / p.height;
    const std::size_t y = static_cast<std::size_t>(cy) % p.height;
    float* dst = &out.at(c, y, 0);
    for (std::size_t u = 0; u < k; ++u) {
      const float* src = &padded[(c * ph + y + u) * pw];
      for (std::size_t v = 0; v < k; ++v) {
        const float w = kernel.taps[u * k + v];
        if (w == 0.0f) continue;
        const float* s = src + v;
        for (std::size_t x = 0; x < p.width; ++x) dst[x] += w * s[x];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Downsampling

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

PackedRaw downsample(const PackedRaw& p, DownsampleMethod method) {
  if (method == DownsampleMethod::None) return p;
  if (p.height == 0 || p.width == 0 || p.height % 2 != 0 || p.width % 2 != 0)
    fail(ErrorKind::Dimension, "downsampling needs even packed dimensions");
  switch (method) {
    case DownsampleMethod::AvgPool2:
      return avgpool2(p);
    case DownsampleMethod::Bicubic2:
      return resample_separable(p, antialiased_taps(p.height / 2), antialiased_taps(p.width / 2));
    case DownsampleMethod::FootprintBicubic2:
      return resample_separable(p, footprint_taps(p.height / 2), footprint_taps(p.width / 2));
    case DownsampleMethod::None:
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Levels

Degraded degrade_level(const PackedRaw& p, Level level, std::uint64_t seed, Task task,
                       const DegradeOptions& options) {
  Rng rng(seed);
  DegradationRecipe recipe;
  recipe.seed = seed;
  recipe.level = level;
  recipe.task = task;
  recipe.extended_noise = options.extended_noise;
  recipe.noise_seed = Rng::derive_seed(seed, kNoiseStream);
  recipe.downsample = task == Task::Sr2x ? options.sr_method : DownsampleMethod::None;
  if (task == Task::Sr2x && options.sr_method == DownsampleMethod::None)
    fail(ErrorKind::Argument, "the sr2x task needs a downsampling method");

  bool blur = false;
  bool noise = false;
  switch (level) {
    case Level::L1:
      noise = true;
      break;
    case Level::L2:
      blur = rng.bernoulli(kL2BlurProbability);
      noise = rng.bernoulli(kL2NoiseProbability);
      break;
    case Level::L3:
      blur = noise = true;
      break;
  }
  if (blur) {
    const auto kind = static_cast<KernelKind>(rng.uniform_int(0, 2));
    recipe.blur = generate_kernel(rng, kind);
  }
  if (noise) recipe.noise = sample_noise_profile(rng, options.extended_noise);

  return {replay(p, recipe), recipe};
}

PackedRaw replay(const PackedRaw& p, const DegradationRecipe& recipe) {
  if (recipe.level == Level::L1 && recipe.blur)
    fail(ErrorKind::Argument, "level 1 recipes cannot contain blur");
  if (recipe.level == Level::L3 && (!recipe.blur || !recipe.noise))
    fail(ErrorKind::Argument, "level 3 recipes need both blur and noise");
  PackedRaw y = recipe.blur ? apply_blur(p, *recipe.blur) : p;
  y = downsample(y, recipe.downsample);
  if (recipe.noise) {
    Rng noise_rng(recipe.noise_seed);
    y = apply_noise(y, *recipe.noise, noise_rng);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_string(NoiseKind k) {
  return k == NoiseKind::ShotRead ? "shot_read" : "hetero_gaussian";
}

std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::IsoGaussian: return "iso_gaussian";
    case KernelKind::AnisoGaussian: return "aniso_gaussian";
    case KernelKind::Motion: return "motion";
  }
  return "?";
}

std::string to_string(DownsampleMethod m) {
  switch (m) {
    case DownsampleMethod::None: return "none";
    case DownsampleMethod::AvgPool2: return "avgpool2";
    case DownsampleMethod::Bicubic2: return "bicubic2";
    case DownsampleMethod::FootprintBicubic2: return "footprint_bicubic2";
  }
  return "?";
}

std::string to_string(Level l) {
  switch (l) {
    case Level::L1: return "L1";
    case Level::L2: return "L2";
    case Level::L3: return "L3";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::Restoration ? "restoration" : "sr2x"; }

DownsampleMethod parse_downsample(const std::string& s) {
  for (auto m : {DownsampleMethod::None, DownsampleMethod::AvgPool2, DownsampleMethod::Bicubic2,
                 DownsampleMethod::FootprintBicubic2})
    if (to_string(m) == s) return m;
  fail(ErrorKind::Argument, "unknown downsample method '" + s + "'");
}

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const E (&values)[N], const char* what) {
  for (E v : values)
    if (to_string(v) == s) return v;
  fail(ErrorKind::Format, std::string("unknown ") + what + " '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const NoiseProfile& p) {
  j = {{"kind", to_string(p.kind)}};
  if (p.kind == NoiseKind::ShotRead) {
    j["lambda_shot"] = p.lambda_shot;
    j["lambda_read"] = p.lambda_read;
  } else {
    j["sigma1"] = p.sigma1;
    j["sigma2"] = p.sigma2;
  }
}

void from_json(const nlohmann::json& j, NoiseProfile& p) {
  static constexpr NoiseKind kinds[] = {NoiseKind::ShotRead, NoiseKind::HeteroGaussian};
  p = NoiseProfile{};
  p.kind = parse_enum(j.at("kind").get<std::string>(), kinds, "noise kind");
  if (p.kind == NoiseKind::ShotRead) {
    p.lambda_shot = j.at("lambda_shot").get<double>();
    p.lambda_read = j.at("lambda_read").get<double>();
  } else {
    p.sigma1 = j.at("sigma1").get<double>();
    p.sigma2 = j.at("sigma2").get<double>();
  }
}

void to_json(nlohmann::json& j, const BlurKernel& k) {
  j = {{"kind", to_string(k.kind)}, {"size", k.size}, {"taps", k.taps}};
  if (k.kind == KernelKind::Motion) {
    j["length"] = k.length;
    j["angle"] = k.angle;
  } else {
    j["sigma_x"] = k.sigma_x;
    j["sigma_y"] = k.sigma_y;
    j["theta"] = k.theta;
  }
}

void from_json(const nlohmann::json& j, BlurKernel& k) {
  static constexpr KernelKind kinds[] = {KernelKind::IsoGaussian, KernelKind::AnisoGaussian,
                                         KernelKind::Motion};
  k = BlurKernel{};
  k.kind = parse_enum(j.at("kind").get<std::string>(), kinds, "kernel kind");
  k.size = j.at("size").get<int>();
  k.taps = j.at("taps").get<std::vector<float>>();
  k.length = j.value("length", 0.0);
  k.angle = j.value("angle", 0.0);
  k.sigma_x = j.value("sigma_x", 0.0);
  k.sigma_y = j.value("sigma_y", 0.0);
  k.theta = j.value("theta", 0.0);
  k.validate();
}

void to_json(nlohmann::json& j, const DegradationRecipe& r) {
  j = {{"seed", r.seed},
       {"level", to_string(r.level)},
       {"task", to_string(r.task)},
       {"blur", r.blur ? nlohmann::json(*r.blur) : nlohmann::json(nullptr)},
       {"noise", r.noise ? nlohmann::json(*r.noise) : nlohmann::json(nullptr)},
       {"noise_seed", r.noise_seed},
       {"extended_noise", r.extended_noise},
       {"downsample", to_string(r.downsample)}};
}

void from_json(const nlohmann::json& j, DegradationRecipe& r) {
  static constexpr Level levels[] = {Level::L1, Level::L2, Level::L3};
  static constexpr Task tasks[] = {Task::Restoration, Task::Sr2x};
  try {
    r = DegradationRecipe{};
    r.seed = j.at("seed").get<std::uint64_t>();
    r.level = parse_enum(j.at("level").get<std::string>(), levels, "level");
    r.task = parse_enum(j.at("task").get<std::string>(), tasks, "task");
    if (!j.at("blur").is_null()) r.blur = j.at("blur").get<BlurKernel>();
    if (!j.at("noise").is_null()) r.noise = j.at("noise").get<NoiseProfile>();
    r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    r.extended_noise = j.value("extended_noise", false);
    r.downsample = parse_downsample(j.at("downsample").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad degradation recipe: ") + e.what());
  }
}

}  // namespace rawlab::degrade
