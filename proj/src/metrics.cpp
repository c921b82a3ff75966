// SPDX-License-Identifier: Apache-2.0
#include "rawlab/metrics.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "rawlab/error.hpp"
#include "rawlab/io.hpp"

namespace rawlab::metrics {
namespace {

using raw::kPackedChannels;

void require_same_shape(const PackedRaw& a, const PackedRaw& b) {
  if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size())
    fail(ErrorKind::Argument, "metric inputs differ in shape: " + std::to_string(a.height) +
                                  "x" + std::to_string(a.width) + " vs " +
                                  std::to_string(b.height) + "x" + std::to_string(b.width));
}

// Valid-mode separable filtering of one plane with the 1-D gaussian.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t h, std::size_t w,
                                 const std::vector<double>& g) {
  const std::size_t k = g.size();
  const std::size_t ow = w - k + 1;
  const std::size_t oh = h - k + 1;
  std::vector<double> tmp(h * ow);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += g[i] * plane[y * w + x + i];
      tmp[y * ow + x] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += g[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

std::vector<double> gaussian_1d() {
  std::vector<double> g(kSsimWindow);
  double sum = 0.0;
  const int r = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - r;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

double channel_ssim(const PackedRaw& a, const PackedRaw& b, std::size_t c,
                    const std::vector<double>& g) {
  const std::size_t h = a.height, w = a.width, n = h * w;
  std::vector<double> pa(n), pb(n), aa(n), bb(n), ab(n);
  const float* xa = a.plane(c);
  const float* xb = b.plane(c);
  for (std::size_t i = 0; i < n; ++i) {
    pa[i] = xa[i];
    pb[i] = xb[i];
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const auto mu_a = filter_valid(pa, h, w, g);
  const auto mu_b = filter_valid(pb, h, w, g);
  const auto e_aa = filter_valid(aa, h, w, g);
  const auto e_bb = filter_valid(bb, h, w, g);
  const auto e_ab = filter_valid(ab, h, w, g);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    sum += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
           ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
  }
  return sum / static_cast<double>(mu_a.size());
}

std::optional<double> finite_or_null(const nlohmann::json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

void put_psnr(nlohmann::json& j, const char* key, double v) {
  const std::string flag = std::string(key) + "_infinite";
  if (std::isinf(v)) {
    j[key] = nullptr;
    j[flag] = true;
  } else {
    j[key] = std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
    j[flag] = false;
  }
}

double get_psnr(const nlohmann::json& j, const char* key) {
  const std::string flag = std::string(key) + "_infinite";
  if (j.value(flag, false)) return std::numeric_limits<double>::infinity();
  return finite_or_null(j.at(key)).value_or(std::numeric_limits<double>::quiet_NaN());
}

}  // namespace

double psnr(const PackedRaw& a, const PackedRaw& b) {
  require_same_shape(a, b);
  if (a.data.empty()) fail(ErrorKind::Argument, "psnr of empty images");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> ssim_window() {
  const auto g = gaussian_1d();
  std::vector<double> w(kSsimWindow * kSsimWindow);
  for (int y = 0; y < kSsimWindow; ++y)
    for (int x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x];
  return w;
}

double ssim(const PackedRaw& a, const PackedRaw& b) {
  require_same_shape(a, b);
  if (a.height < kSsimWindow || a.width < kSsimWindow)
    fail(ErrorKind::Argument, "ssim needs images of at least 11x11 per channel");
  const auto g = gaussian_1d();
  double total = 0.0;
  for (std::size_t c = 0; c < kPackedChannels; ++c) total += channel_ssim(a, b, c, g);
  return total / static_cast<double>(kPackedChannels);
}

void MetricReport::finalize() {
  if (per_image.empty()) {
    mean_psnr = mean_ssim = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double sp = 0.0, ss = 0.0;
  for (const auto& s : per_image) {
    sp += s.psnr;
    ss += s.ssim;
  }
  mean_psnr = sp / static_cast<double>(per_image.size());
  mean_ssim = ss / static_cast<double>(per_image.size());
}

MetricReport evaluate_dir(const std::filesystem::path& pred, const std::filesystem::path& gt) {
  std::map<std::string, std::filesystem::path> pred_files, gt_files;
  for (const auto& p : io::list_files(pred, ".npy")) pred_files[p.filename().string()] = p;
  for (const auto& p : io::list_files(gt, ".npy")) gt_files[p.filename().string()] = p;

  std::set<std::string> names;
  for (const auto& [n, _] : pred_files) names.insert(n);
  for (const auto& [n, _] : gt_files) names.insert(n);
  const std::vector<std::string> ordered(names.begin(), names.end());

  struct Slot {
    std::optional<ImageScore> score;
    std::optional<EvalError> error;
  };
  std::vector<Slot> slots(ordered.size());

#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(ordered.size()); ++i) {
    const std::string& name = ordered[static_cast<std::size_t>(i)];
    Slot& slot = slots[static_cast<std::size_t>(i)];
    const auto pi = pred_files.find(name);
    const auto gi = gt_files.find(name);
    if (pi == pred_files.end()) {
      slot.error = EvalError{name, "missing from prediction directory"};
      continue;
    }
    if (gi == gt_files.end()) {
      slot.error = EvalError{name, "missing from ground-truth directory"};
      continue;
    }
    try {
      const PackedRaw a = raw::read_packed(pi->second);
      const PackedRaw b = raw::read_packed(gi->second);
      slot.score = ImageScore{name, psnr(a, b), ssim(a, b)};
    } catch (const Error& e) {
      slot.error = EvalError{name, e.what()};
    }
  }

  MetricReport report;
  for (auto& s : slots) {
    if (s.score) report.per_image.push_back(std::move(*s.score));
    if (s.error) report.errors.push_back(std::move(*s.error));
  }
  report.finalize();
  return report;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json::object();
  j["domain"] = "raw";
  j["count"] = r.per_image.size();
  nlohmann::json images = nlohmann::json::array();
  for (const auto& s : r.per_image) {
    nlohmann::json e = {{"name", s.name}, {"ssim", s.ssim}};
    put_psnr(e, "psnr", s.psnr);
    images.push_back(std::move(e));
  }
  j["images"] = std::move(images);
  put_psnr(j, "mean_psnr", r.mean_psnr);
  j["mean_ssim"] = std::isnan(r.mean_ssim) ? nlohmann::json(nullptr) : nlohmann::json(r.mean_ssim);
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : r.errors) errors.push_back({{"name", e.name}, {"message", e.message}});
  j["errors"] = std::move(errors);
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r = MetricReport{};
  for (const auto& e : j.at("images"))
    r.per_image.push_back({e.at("name").get<std::string>(), get_psnr(e, "psnr"),
                           e.at("ssim").get<double>()});
  for (const auto& e : j.at("errors"))
    r.errors.push_back({e.at("name").get<std::string>(), e.at("message").get<std::string>()});
  r.mean_psnr = get_psnr(j, "mean_psnr");
  r.mean_ssim = finite_or_null(j.at("mean_ssim")).value_or(std::numeric_limits<double>::quiet_NaN());
}

std::vector<std::string> validate_report_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  auto need = [&](const nlohmann::json& obj, const std::string& where, const char* key,
                  auto&& pred, const char* type) {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(where + ": missing '" + key + "'");
      return;
    }
    if (!pred(obj.at(key))) problems.push_back(where + ": '" + key + "' must be " + type);
  };
  auto is_num_or_null = [](const nlohmann::json& v) { return v.is_number() || v.is_null(); };
  auto is_bool = [](const nlohmann::json& v) { return v.is_boolean(); };
  auto is_str = [](const nlohmann::json& v) { return v.is_string(); };
  auto is_arr = [](const nlohmann::json& v) { return v.is_array(); };
  auto is_count = [](const nlohmann::json& v) { return v.is_number_unsigned(); };

  if (!j.is_object()) return {"report must be an object"};
  need(j, "report", "domain", is_str, "a string");
  need(j, "report", "count", is_count, "a non-negative integer");
  need(j, "report", "images", is_arr, "an array");
  need(j, "report", "errors", is_arr, "an array");
  need(j, "report", "mean_psnr", is_num_or_null, "a number or null");
  need(j, "report", "mean_psnr_infinite", is_bool, "a boolean");
  need(j, "report", "mean_ssim", is_num_or_null, "a number or null");
  if (!problems.empty()) return problems;

  if (j.at("count").get<std::size_t>() != j.at("images").size())
    problems.push_back("report: 'count' disagrees with the number of images");
  for (std::size_t i = 0; i < j.at("images").size(); ++i) {
    const auto& e = j.at("images")[i];
    const std::string where = "images[" + std::to_string(i) + "]";
    need(e, where, "name", is_str, "a string");
    need(e, where, "psnr", is_num_or_null, "a number or null");
    need(e, where, "psnr_infinite", is_bool, "a boolean");
    need(e, where, "ssim", [](const nlohmann::json& v) {
      return v.is_number() && v.get<double>() >= -1.0 && v.get<double>() <= 1.0;
    }, "a number in [-1, 1]");
    if (e.contains("psnr") && e.contains("psnr_infinite") && e.at("psnr_infinite").is_boolean() &&
        e.at("psnr_infinite").get<bool>() != e.at("psnr").is_null())
      problems.push_back(where + ": 'psnr' must be null exactly when 'psnr_infinite' is true");
  }
  for (std::size_t i = 0; i < j.at("errors").size(); ++i) {
    const auto& e = j.at("errors")[i];
    const std::string where = "errors[" + std::to_string(i) + "]";
    need(e, where, "name", is_str, "a string");
    need(e, where, "message", is_str, "a string");
  }
  return problems;
}

std::string to_csv(const MetricReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "name,psnr,ssim\n";
  for (const auto& s : r.per_image) {
    out << s.name << ',';
    if (std::isinf(s.psnr))
      out << "inf";
    else
      out << s.psnr;
    out << ',' << s.ssim << '\n';
  }
  return out.str();
}

}  // namespace rawlab::metrics
