// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "rawlab/error.hpp"
#include "rawlab/model.hpp"
#include "support.hpp"

using namespace rawlab;
using namespace rawlab::model;

namespace {

LayerSpec conv(const std::string& id, int out, int k = 3) {
  LayerSpec l;
  l.id = id;
  l.kind = LayerKind::Conv;
  l.out_channels = out;
  l.kernel = k;
  return l;
}

LayerSpec simple(const std::string& id, LayerKind kind) {
  LayerSpec l;
  l.id = id;
  l.kind = kind;
  return l;
}

ModelSpec tiny_spec() {
  ModelSpec s;
  s.name = "tiny";
  s.layers = {conv("a", 8), simple("g", LayerKind::SimpleGate), conv("b", 4)};
  return s;
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

double sample_std(const std::vector<float>& v) {
  double mean = 0.0, sq = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (float x : v) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("reference architectures validate at their working sizes") {
    const ShapeTrace sr = validate(rep_sr_small(), {1, 4, 64, 64});
    CHECK(sr.output == Shape4{1, 4, 128, 128});
    CHECK(sr.param_count() <= kEfficientTrackParams);
    CHECK(validate(rep_sr_small(), {1, 4, 512, 512}).output == Shape4{1, 4, 1024, 1024});
    CHECK(validate(naf_ir_small(), {1, 4, 512, 512}).output == Shape4{1, 4, 512, 512});
    CHECK(spatial_multiple(rep_sr_small()) == 1);
    CHECK(spatial_multiple(naf_ir_small()) == 16);
    CHECK_THROWS_AS(validate(naf_ir_small(), {1, 4, 40, 40}), Error);
  }

  TEST_CASE("validation errors name the offending layer") {
    ModelSpec odd = tiny_spec();
    odd.layers[0].out_channels = 7;
    CHECK(error_text([&] { validate(odd, {1, 4, 8, 8}); }).find("'g'") != std::string::npos);

    ModelSpec unknown = tiny_spec();
    LayerSpec add = simple("sum", LayerKind::AddFrom);
    add.from = "nowhere";
    unknown.layers.push_back(add);
    CHECK_THROWS_AS(validate(unknown, {1, 4, 8, 8}), Error);

    // Referencing a layer that has not run yet is a cycle.
    ModelSpec forward_ref = tiny_spec();
    add.from = "sum";
    forward_ref.layers.push_back(add);
    CHECK_THROWS_AS(validate(forward_ref, {1, 4, 8, 8}), Error);

    ModelSpec dup = tiny_spec();
    dup.layers[2].id = "a";
    CHECK_THROWS_AS(validate(dup, {1, 4, 8, 8}), Error);

    CHECK_THROWS_AS(validate(tiny_spec(), {1, 3, 8, 8}), Error);

    add.from = kInputId;
    ModelSpec ok = tiny_spec();
    ok.layers.push_back(add);
    CHECK(validate(ok, {1, 4, 8, 8}).output == Shape4{1, 4, 8, 8});
  }

  TEST_CASE("random init is deterministic with He scaling") {
    const ModelSpec spec = rep_sr_small();
    const WeightManifest a = init_random(spec, 3), b = init_random(spec, 3), c = init_random(spec, 4);
    CHECK(a == b);
    CHECK_FALSE(a == c);
    check_weights(spec, a);
    CHECK(a.param_count() == validate(spec, {1, 4, 16, 16}).param_count());

    int checked = 0;
    for (const auto& slot : validate(spec, {1, 4, 16, 16}).params) {
      const WeightTensor& t = a.at(slot.name);
      if (slot.role == ParamRole::Bias || slot.role == ParamRole::Beta || slot.role == ParamRole::Mean) {
        for (float v : t.data) CHECK(v == 0.0f);
      } else if (slot.role == ParamRole::Gamma || slot.role == ParamRole::Var) {
        for (float v : t.data) CHECK(v == 1.0f);
      } else if (slot.role == ParamRole::Weight && t.data.size() >= 5000) {
        const double fan_in = static_cast<double>(slot.shape[1] * slot.shape[2] * slot.shape[3]);
        CHECK(std::abs(sample_std(t.data) / std::sqrt(2.0 / fan_in) - 1.0) <= 0.02);
        ++checked;
      }
    }
    CHECK(checked > 0);

    const WeightManifest naf = init_random(naf_ir_small(), 1);
    CHECK(naf.at("enc0.blk0.n1.weight").data == std::vector<float>(16, 1.0f));
    CHECK(naf.at("enc0.blk0.n1.bias").data == std::vector<float>(16, 0.0f));
  }

  TEST_CASE("weight checks report the missing tensor") {
    const ModelSpec spec = tiny_spec();
    WeightManifest w = init_random(spec, 1);
    w.tensors.erase("b.bias");
    CHECK(error_text([&] { check_weights(spec, w); }).find("missing tensor 'b.bias'") != std::string::npos);
    w = init_random(spec, 1);
    w.tensors["a.weight"].shape = {8, 4, 1, 9};
    CHECK_THROWS_AS(check_weights(spec, w), Error);
    w = init_random(spec, 1);
    w.tensors["extra"] = {{1}, {0.0f}};
    CHECK_THROWS_AS(check_weights(spec, w), Error);
  }

  TEST_CASE("zero weights reduce the SR net to its bilinear path") {
    const ModelSpec spec = rep_sr_small();
    WeightManifest w = init_random(spec, 1);
    for (auto& [name, t] : w.tensors)
      if (name.find("running_var") == std::string::npos) std::fill(t.data.begin(), t.data.end(), 0.0f);
    std::mt19937_64 gen(2);
    const Tensor x = oracle::random_tensor(gen, {1, 4, 12, 10}, 0.0f, 1.0f);
    CHECK(max_abs_diff(Network(spec, w).run(x), nn::bilinear_resize(x, 2.0)) <= 1e-6);
  }

  TEST_CASE("the network matches a hand-composed forward pass") {
    const ModelSpec spec = tiny_spec();
    const WeightManifest w = init_random(spec, 9);
    std::mt19937_64 gen(3);
    const Tensor x = oracle::random_tensor(gen, {2, 4, 6, 5});
    nn::ConvParams a(4, 8, 3), b(4, 4, 3);
    a.weight = w.at("a.weight").data;
    a.bias = w.at("a.bias").data;
    b.weight = w.at("b.weight").data;
    b.bias = w.at("b.bias").data;
    const Tensor expect = nn::conv2d(nn::simple_gate(nn::conv2d(x, a)), b);
    CHECK(max_abs_diff(Network(spec, w).run(x, false), expect) == 0.0);
  }

  TEST_CASE("fused models match the unfused network") {
    const ModelSpec spec = rep_sr_small();
    const WeightManifest w = init_random(spec, 5);
    const FusedModel fused = fuse_model(spec, w);
    CHECK(fused.records.size() == 4);
    for (const auto& r : fused.records) CHECK(r.certificate.passed);
    CHECK(fused.weights.param_count() < w.param_count());
    CHECK(fused.weights.param_count() == validate(fused.spec, {1, 4, 8, 8}).param_count());
    std::mt19937_64 gen(4);
    const Tensor x = oracle::random_tensor(gen, {1, 4, 48, 40}, 0.0f, 1.0f);
    const Tensor ref = Network(spec, w).run(x, false), got = Network(fused.spec, fused.weights).run(x, false);
    double scale = 0.0;
    for (float v : ref.storage()) scale = std::max(scale, std::abs(static_cast<double>(v)));
    // Float rounding grows with the activation range; judge clamped outputs
    // absolutely and raw outputs relative to their magnitude.
    CHECK(max_abs_diff(ref, got) <= 1e-5 * std::max(1.0, scale));
    CHECK(max_abs_diff(nn::clamp(ref, 0.0f, 1.0f), nn::clamp(got, 0.0f, 1.0f)) <= 1e-5);

    // Blocks marked fuse=false are left alone.
    ModelSpec keep = spec;
    for (auto& l : keep.layers)
      if (l.kind == LayerKind::RepBlock) l.fuse = false;
    CHECK(fuse_model(keep, w).records.empty());
  }

  TEST_CASE("tiled inference matches whole-image inference") {
    const ModelSpec spec = rep_sr_small();
    const WeightManifest w = init_random(spec, 6);
    const Network net(spec, w);
    std::mt19937_64 gen(5);
    const Tensor x = oracle::random_tensor(gen, {1, 4, 128, 128}, 0.0f, 1.0f);
    const Tensor whole = net.run(x);
    CHECK(max_abs_diff(run_tiled(net, x, {64, 16}), whole) <= 1e-3);
    CHECK(max_abs_diff(forward(spec, w, x, 64, 16), whole) <= 1e-3);
    CHECK(run_tiled(net, x, {0, 0}) == whole);
    CHECK(run_tiled(net, x, {128, 0}) == whole);
    CHECK_THROWS_AS(run_tiled(net, x, {256, 16}), Error);
    CHECK_THROWS_AS(run_tiled(net, x, {64, 32}), Error);
  }

  TEST_CASE("layer-normalized net runs finite and honours its size multiple") {
    NafConfig cfg;
    cfg.width = 8;
    cfg.enc_blocks = {1, 1};
    cfg.dec_blocks = {1, 1};
    cfg.middle_blocks = 1;
    const ModelSpec spec = naf_ir_small(cfg);
    const Network net(spec, init_random(spec, 2));
    std::mt19937_64 gen(6);
    const Tensor y = net.run(oracle::random_tensor(gen, {1, 4, 32, 32}, 0.0f, 1.0f), false);
    CHECK(y.shape() == Shape4{1, 4, 32, 32});
    for (float v : y.storage()) REQUIRE(std::isfinite(v));
    CHECK_THROWS_AS(net.run(oracle::random_tensor(gen, {1, 4, 30, 32})), Error);
  }

  TEST_CASE("spec and manifest round trip through disk") {
    testing::TempDir dir;
    const ModelSpec spec = rep_sr_small();
    const WeightManifest w = init_random(spec, 8);
    save_spec(dir / kSpecFile, spec);
    save_manifest(dir.path(), w);
    const ModelSpec spec2 = load_spec(dir / kSpecFile);
    nlohmann::json a = spec, b = spec2;
    CHECK(a == b);
    CHECK(load_manifest(dir.path()) == w);

    std::filesystem::remove(dir / "head.weight.npy");
    CHECK(error_text([&] { load_manifest(dir.path()); }).find("head.weight") != std::string::npos);
  }

  TEST_CASE("specs load from JSON") {
    const auto j = nlohmann::json::parse(R"({
      "name": "j", "scale": 1, "in_channels": 4,
      "layers": [{"id": "c", "kind": "conv", "out_channels": 4, "kernel": 3}]})");
    const ModelSpec s = j.get<ModelSpec>();
    CHECK(s.layers.size() == 1);
    CHECK(s.layers[0].kind == LayerKind::Conv);
    CHECK_THROWS_AS(nlohmann::json::parse(R"({"name":"x","layers":[{"id":"c","kind":"warp"}]})").get<ModelSpec>(),
                    Error);
  }
}
