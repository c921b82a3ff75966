// SPDX-License-Identifier: Apache-2.0
#include "rawlab/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <set>

#include "rawlab/degrade.hpp"
#include "rawlab/error.hpp"
#include "rawlab/io.hpp"
#include "rawlab/metrics.hpp"
#include "rawlab/model.hpp"
#include "rawlab/npy.hpp"
#include "rawlab/parallel.hpp"
#include "rawlab/preview.hpp"
#include "rawlab/raw.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace rawlab::cli {
namespace {

struct Global {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string log_level = "info";
};

std::vector<fs::path> npy_inputs(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::Io, "not a directory: " + dir.string());
  auto files = io::list_files(dir, ".npy");
  if (files.empty()) fail(ErrorKind::Argument, "no .npy files in " + dir.string());
  return files;
}

Tensor to_tensor(const raw::PackedRaw& p) { return Tensor({1, 4, p.height, p.width}, p.data); }

raw::PackedRaw to_packed(const Tensor& t) {
  if (t.n() != 1 || t.c() != raw::kPackedChannels) fail(ErrorKind::Shape, "expected a (1, 4, H, W) tensor");
  raw::PackedRaw p(t.h(), t.w());
  p.data = t.storage();
  return p;
}

void write_json(const fs::path& path, const json& j) { io::write_file_atomic(path, j.dump(2) + "\n"); }

// Runs body(i) for every index on the OpenMP team, then rethrows the first
// failure in index order so that errors do not depend on scheduling.
template <typename F>
void for_each_file(std::size_t count, F body) {
  std::vector<std::exception_ptr> errors(count);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// pack / unpack

struct PackArgs {
  fs::path input, out;
  double black = 0.0;
  std::optional<double> white;
  std::optional<int> bit_depth;
};

fs::path meta_sidecar(const fs::path& out) {
  fs::path p = out;
  p.replace_extension(".meta.json");
  return p;
}

int cmd_pack(const PackArgs& a) {
  raw::SensorMeta meta;
  meta.black_level = a.black;
  if (a.bit_depth) {
    meta.bit_depth = *a.bit_depth;
    meta.white_level = a.white.value_or(std::ldexp(1.0, *a.bit_depth) - 1.0);
  } else if (a.white) {
    meta.white_level = *a.white;
    meta.bit_depth = 0;
    for (int bd : {8, 10, 12, 14, 16})
      if (*a.white <= std::ldexp(1.0, bd) - 1.0) {
        meta.bit_depth = bd;
        break;
      }
    if (meta.bit_depth == 0) fail(ErrorKind::Meta, "white level exceeds 16 bits");
  } else {
    fail(ErrorKind::Argument, "either --bit-depth or --white-level is required");
  }
  meta.validate();
  const raw::MosaicImage m = raw::read_mosaic(a.input);
  const raw::PackedRaw p = raw::pack(raw::normalize(m, meta));
  raw::write_packed(a.out, p);
  raw::write_meta(meta_sidecar(a.out), meta);
  spdlog::info("packed {}x{} mosaic into {}x{}x4", m.height, m.width, p.height, p.width);
  return kExitOk;
}

struct UnpackArgs {
  fs::path input, out, meta;
};

int cmd_unpack(const UnpackArgs& a) {
  raw::MosaicImage m = raw::unpack(raw::read_packed(a.input));
  if (!a.meta.empty()) m = raw::denormalize(m, raw::read_meta(a.meta));
  raw::write_mosaic(a.out, m);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// degrade / downsample

struct DegradeArgs {
  fs::path in_dir, out_dir, recipes_out, replay;
  std::string level = "1";
  std::string task = "ir";
  std::string downsample = "avgpool2";
  bool extended_noise = false;
};

degrade::Level parse_level(const std::string& s) {
  if (s == "1" || s == "L1") return degrade::Level::L1;
  if (s == "2" || s == "L2") return degrade::Level::L2;
  if (s == "3" || s == "L3") return degrade::Level::L3;
  fail(ErrorKind::Argument, "level must be 1, 2 or 3");
}

degrade::Task parse_task(const std::string& s) {
  if (s == "ir" || s == "restoration") return degrade::Task::Restoration;
  if (s == "sr2x") return degrade::Task::Sr2x;
  fail(ErrorKind::Argument, "task must be ir or sr2x");
}

int cmd_replay(const DegradeArgs& a) {
  json doc;
  try {
    doc = json::parse(io::read_file(a.replay));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, a.replay.string() + ": " + e.what());
  }
  if (!doc.contains("images") || !doc["images"].is_array())
    fail(ErrorKind::Format, "recipes file has no images array");
  const json& images = doc["images"];
  fs::create_directories(a.out_dir);
  for_each_file(images.size(), [&](std::size_t i) {
    const std::string name = images[i].at("name").get<std::string>();
    const auto recipe = images[i].at("recipe").get<degrade::DegradationRecipe>();
    raw::write_packed(a.out_dir / name, degrade::replay(raw::read_packed(a.in_dir / name), recipe));
  });
  spdlog::info("replayed {} recipes", images.size());
  return kExitOk;
}

int cmd_degrade(const DegradeArgs& a, const Global& g) {
  if (!a.replay.empty()) return cmd_replay(a);
  const auto level = parse_level(a.level);
  const auto task = parse_task(a.task);
  degrade::DegradeOptions options;
  options.sr_method = degrade::parse_downsample(a.downsample);
  options.extended_noise = a.extended_noise;
  const auto files = npy_inputs(a.in_dir);
  fs::create_directories(a.out_dir);

  std::vector<json> entries(files.size());
  for_each_file(files.size(), [&](std::size_t i) {
    const std::uint64_t seed = Rng::derive_seed(g.seed, i);
    const auto result = degrade::degrade_level(raw::read_packed(files[i]), level, seed, task, options);
    raw::write_packed(a.out_dir / files[i].filename(), result.image);
    entries[i] = {{"name", files[i].filename().string()}, {"recipe", result.recipe}};
  });

  const json doc = {{"seed", g.seed},
                    {"level", degrade::to_string(level)},
                    {"task", degrade::to_string(task)},
                    {"extended_noise", a.extended_noise},
                    {"images", entries}};
  const fs::path recipes = a.recipes_out.empty() ? a.out_dir / "recipes.json" : a.recipes_out;
  write_json(recipes, doc);
  spdlog::info("degraded {} images at {}; recipes in {}", files.size(), degrade::to_string(level), recipes.string());
  return kExitOk;
}

struct DownsampleArgs {
  fs::path in_dir, out_dir;
  std::string method = "avgpool2";
};

int cmd_downsample(const DownsampleArgs& a) {
  const auto method = degrade::parse_downsample(a.method);
  if (method == degrade::DownsampleMethod::None) fail(ErrorKind::Argument, "choose a downsampling method");
  const auto files = npy_inputs(a.in_dir);
  fs::create_directories(a.out_dir);
  for_each_file(files.size(), [&](std::size_t i) {
    raw::write_packed(a.out_dir / files[i].filename(), degrade::downsample(raw::read_packed(files[i]), method));
  });
  return kExitOk;
}

// ---------------------------------------------------------------------------
// model-init / infer / fuse

struct ModelInitArgs {
  std::string arch = "rep_sr_small";
  fs::path spec, out_dir;
};

int cmd_model_init(const ModelInitArgs& a, const Global& g) {
  model::ModelSpec spec;
  if (!a.spec.empty()) {
    spec = model::load_spec(a.spec);
  } else if (a.arch == "rep_sr_small") {
    spec = model::rep_sr_small();
  } else if (a.arch == "naf_ir_small") {
    spec = model::naf_ir_small();
  } else {
    fail(ErrorKind::Argument, "unknown architecture '" + a.arch + "'");
  }
  const auto weights = model::init_random(spec, g.seed);
  fs::create_directories(a.out_dir);
  model::save_spec(a.out_dir / model::kSpecFile, spec);
  model::save_manifest(a.out_dir, weights);
  std::printf("%s: %zu parameters\n", spec.name.c_str(), weights.param_count());
  return kExitOk;
}

struct LoadedModel {
  model::ModelSpec spec;
  model::WeightManifest weights;
};

LoadedModel load_model(const fs::path& dir) {
  LoadedModel m{model::load_spec(dir / model::kSpecFile), model::load_manifest(dir)};
  model::check_weights(m.spec, m.weights);
  return m;
}

struct InferArgs {
  fs::path model_dir, in_dir, out_dir;
  int tile = 0;
  int overlap = 16;
};

int cmd_infer(const InferArgs& a) {
  const LoadedModel m = load_model(a.model_dir);
  const model::Network net(m.spec, m.weights);
  const auto files = npy_inputs(a.in_dir);
  fs::create_directories(a.out_dir);
  // Tiles and layers parallelize internally, so files run one after another.
  for (const auto& f : files) {
    const Tensor x = to_tensor(raw::read_packed(f));
    model::validate(m.spec, x.shape());
    const Tensor y = a.tile > 0 ? model::run_tiled(net, x, {a.tile, a.overlap}) : net.run(x);
    raw::write_packed(a.out_dir / f.filename(), to_packed(y));
    spdlog::info("{}: {} -> {}", f.filename().string(), x.shape().str(), y.shape().str());
  }
  return kExitOk;
}

struct FuseArgs {
  fs::path model_dir, out_dir;
  int trials = 100;
  double tol = 1e-5;
};

int cmd_fuse(const FuseArgs& a) {
  const LoadedModel m = load_model(a.model_dir);
  rep::CertifyOptions options;
  options.trials = a.trials;
  options.tolerance = a.tol;
  const model::FusedModel fused = model::fuse_model(m.spec, m.weights, options);

  bool passed = true;
  json records = json::array();
  for (const auto& r : fused.records) {
    passed = passed && r.certificate.passed;
    records.push_back({{"layer", r.layer}, {"fold", r.what}, {"certificate", r.certificate}});
  }

  // End-to-end comparison on one seeded input, as infer would run it.
  const std::size_t side = static_cast<std::size_t>(model::spatial_multiple(m.spec)) * 4;
  const std::size_t probe = std::max<std::size_t>(side, 32);
  Tensor x({1, static_cast<std::size_t>(m.spec.in_channels), probe, probe});
  Rng rng(options.seed);
  for (float& v : x.storage()) v = static_cast<float>(rng.uniform());
  const double model_diff = max_abs_diff(model::Network(m.spec, m.weights).run(x),
                                         model::Network(fused.spec, fused.weights).run(x));

  const std::size_t before = m.weights.param_count();
  const std::size_t after = fused.weights.param_count();
  const json cert = {{"model", m.spec.name},
                     {"trials", a.trials},
                     {"tolerance", a.tol},
                     {"folds", records},
                     {"model_check", {{"input_shape", x.shape().str()}, {"max_abs_diff", model_diff}}},
                     {"params_before", before},
                     {"params_after", after},
                     {"efficient_track_limit", model::kEfficientTrackParams},
                     {"within_efficient_budget", after <= model::kEfficientTrackParams},
                     {"passed", passed}};
  fs::create_directories(a.out_dir);
  write_json(a.out_dir / "certificate.json", cert);
  std::printf("folds: %zu\nparams_before: %zu\nparams_after: %zu\nwithin_efficient_budget: %s\npassed: %s\n",
              fused.records.size(), before, after, after <= model::kEfficientTrackParams ? "true" : "false",
              passed ? "true" : "false");
  if (!passed) {
    spdlog::error("equivalence certification failed; fused weights not written");
    return kExitUsage;
  }
  model::save_spec(a.out_dir / model::kSpecFile, fused.spec);
  model::save_manifest(a.out_dir, fused.weights);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval / preview

struct EvalArgs {
  fs::path pred_dir, gt_dir, report, csv;
};

int cmd_eval(const EvalArgs& a) {
  std::set<std::string> pred, gt;
  for (const auto& f : io::list_files(a.pred_dir, ".npy")) pred.insert(f.filename().string());
  for (const auto& f : io::list_files(a.gt_dir, ".npy")) gt.insert(f.filename().string());
  bool any = false;
  for (const auto& n : pred) any = any || gt.count(n);
  if (!any) fail(ErrorKind::Argument, "no file names shared by the prediction and ground-truth directories");

  const metrics::MetricReport report = metrics::evaluate_dir(a.pred_dir, a.gt_dir);
  if (!a.report.empty()) write_json(a.report, report);
  if (!a.csv.empty()) io::write_file_atomic(a.csv, metrics::to_csv(report));
  for (const auto& e : report.errors) spdlog::warn("{}: {}", e.name, e.message);
  std::printf("images: %zu\nerrors: %zu\nmean_psnr: %.6f\nmean_ssim: %.6f\n", report.per_image.size(),
              report.errors.size(), report.mean_psnr, report.mean_ssim);
  return kExitOk;
}

struct PreviewArgs {
  fs::path input, out;
  double gamma = 2.2;
  std::string wb = "none";
};

int cmd_preview(const PreviewArgs& a) {
  preview::PreviewOptions options;
  options.gamma = a.gamma;
  options.wb = preview::parse_white_balance(a.wb);
  std::size_t h = 0, w = 0;
  const auto rgb = preview::render(raw::read_packed(a.input), options, &h, &w);
  preview::write_ppm(a.out, h, w, rgb);
  return kExitOk;
}

void setup_runtime(const Global& g) {
  spdlog::drop("rawlab");
  auto logger = spdlog::stderr_color_st("rawlab");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const auto level = spdlog::level::from_str(g.log_level);
  if (level == spdlog::level::off && g.log_level != "off")
    fail(ErrorKind::Argument, "unknown log level '" + g.log_level + "'");
  spdlog::set_level(level);

  int threads = g.threads;
  if (threads == 0) {
    if (const char* env = std::getenv("RAWLAB_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        fail(ErrorKind::Argument, "RAWLAB_THREADS must be a positive integer");
      }
    }
  }
  if (threads < 0) fail(ErrorKind::Argument, "thread count must be positive");
  if (threads > 0) set_num_threads(threads);
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"rawlab: RAW-domain restoration toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--threads", g.threads, "Worker threads (default: RAWLAB_THREADS, else all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  PackArgs pack;
  auto* sc = app.add_subcommand("pack", "Normalize a Bayer mosaic and pack it to 4 channels");
  sc->add_option("--input", pack.input, "Mosaic NPY (H, W)")->required();
  sc->add_option("--out", pack.out, "Packed NPY (H/2, W/2, 4)")->required();
  sc->add_option("--black-level", pack.black, "Black level in ADU");
  sc->add_option("--white-level", pack.white, "White level in ADU (default 2^bit_depth - 1)");
  sc->add_option("--bit-depth", pack.bit_depth, "Sensor bit depth");

  UnpackArgs unpack;
  sc = app.add_subcommand("unpack", "Packed image back to a mosaic");
  sc->add_option("--input", unpack.input)->required();
  sc->add_option("--out", unpack.out)->required();
  sc->add_option("--meta", unpack.meta, "Sensor meta JSON; restores ADU values");

  DegradeArgs deg;
  sc = app.add_subcommand("degrade", "Synthesize degraded inputs at a challenge level");
  sc->add_option("--in-dir", deg.in_dir)->required();
  sc->add_option("--out-dir", deg.out_dir)->required();
  sc->add_option("--level", deg.level, "1, 2 or 3");
  sc->add_option("--task", deg.task, "ir or sr2x");
  sc->add_option("--downsample", deg.downsample, "avgpool2, bicubic2 or footprint_bicubic2 (sr2x)");
  sc->add_flag("--extended-noise", deg.extended_noise, "Wider shot/read and sigma ranges");
  sc->add_option("--recipes-out", deg.recipes_out, "Recipes JSON (default <out-dir>/recipes.json)");
  sc->add_option("--replay", deg.replay, "Reapply a recipes JSON instead of sampling");

  DownsampleArgs down;
  sc = app.add_subcommand("downsample", "2x reduction of packed images");
  sc->add_option("--in-dir", down.in_dir)->required();
  sc->add_option("--out-dir", down.out_dir)->required();
  sc->add_option("--method", down.method, "avgpool2, bicubic2 or footprint_bicubic2");

  ModelInitArgs init;
  sc = app.add_subcommand("model-init", "Write a model directory with seeded random weights");
  sc->add_option("--arch", init.arch, "rep_sr_small or naf_ir_small");
  sc->add_option("--spec", init.spec, "Custom model.json instead of --arch");
  sc->add_option("--out-dir", init.out_dir)->required();

  InferArgs infer;
  sc = app.add_subcommand("infer", "Run a model over a directory of packed images");
  sc->add_option("--model-dir", infer.model_dir)->required();
  sc->add_option("--in-dir", infer.in_dir)->required();
  sc->add_option("--out-dir", infer.out_dir)->required();
  sc->add_option("--tile", infer.tile, "Tile side in input pixels (0: whole image)");
  sc->add_option("--tile-overlap", infer.overlap, "Context margin per inner tile edge");

  FuseArgs fuse;
  sc = app.add_subcommand("fuse", "Fold rep blocks and batch norms, with equivalence certificates");
  sc->add_option("--model-dir", fuse.model_dir)->required();
  sc->add_option("--out-dir", fuse.out_dir)->required();
  sc->add_option("--certify-trials", fuse.trials)->check(CLI::PositiveNumber);
  sc->add_option("--tol", fuse.tol)->check(CLI::NonNegativeNumber);

  EvalArgs eval;
  sc = app.add_subcommand("eval", "RAW-domain PSNR and SSIM over matching files");
  sc->add_option("--pred-dir", eval.pred_dir)->required();
  sc->add_option("--gt-dir", eval.gt_dir)->required();
  sc->add_option("--report", eval.report, "Report JSON");
  sc->add_option("--csv", eval.csv, "Per-image CSV");

  PreviewArgs prev;
  sc = app.add_subcommand("preview", "Demosaiced 8-bit PPM for viewing");
  sc->add_option("--in", prev.input)->required();
  sc->add_option("--out", prev.out)->required();
  sc->add_option("--gamma", prev.gamma);
  sc->add_option("--wb", prev.wb, "none or gray-world");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    setup_runtime(g);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "pack") return cmd_pack(pack);
    if (cmd == "unpack") return cmd_unpack(unpack);
    if (cmd == "degrade") return cmd_degrade(deg, g);
    if (cmd == "downsample") return cmd_downsample(down);
    if (cmd == "model-init") return cmd_model_init(init, g);
    if (cmd == "infer") return cmd_infer(infer);
    if (cmd == "fuse") return cmd_fuse(fuse);
    if (cmd == "eval") return cmd_eval(eval);
    if (cmd == "preview") return cmd_preview(prev);
    return kExitUsage;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    spdlog::critical("internal error: {}", e.what());
    return kExitInternal;
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"rawlab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rawlab::cli
