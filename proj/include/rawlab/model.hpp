// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rawlab/nn.hpp"
#include "rawlab/repfuse.hpp"
#include "rawlab/tensor.hpp"

namespace rawlab::model {

enum class LayerKind {
  Conv,
  DwConv,
  PwConv,
  TConv2x,
  Bn,
  LayerNorm,
  Relu,
  Gelu,
  Sigmoid,
  SimpleGate,
  Sca,
  Se,
  PixelShuffle,
  PixelUnshuffle,
  RepBlock,
  AddFrom,
  GlobalResidual,
};

enum class ResidualMode { None, BilinearUp, Identity };

struct BranchSpec {
  rep::BranchKind kind = rep::BranchKind::Conv3x3;
  int kernel = 3;  // conv_bn only
  bool bn = false;
};

/// One entry of the layer list. Only the fields relevant to `kind` are read.
struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int out_channels = 0;  // conv, pw_conv, tconv2x
  int kernel = 3;        // conv, dw_conv, tconv2x
  int stride = 1;        // conv, dw_conv
  int groups = 1;        // conv
  int factor = 2;        // pixel_shuffle, pixel_unshuffle
  int reduction = 4;     // se
  float eps = 1e-5f;     // bn, layer_norm
  std::string from;      // add_from: id of an earlier layer, or "input"
  ResidualMode mode = ResidualMode::None;  // global_residual
  std::vector<BranchSpec> branches;        // rep_block
  bool fuse = true;                        // rep_block: fold at deploy time
};

/// Sequential layer list. Each layer consumes the previous layer's output;
/// add_from and global_residual reach back to earlier outputs or the input.
struct ModelSpec {
  std::string name;
  int scale = 1;
  int in_channels = 4;
  std::vector<LayerSpec> layers;
};

/// Reserved id naming the network input in add_from.
inline constexpr const char* kInputId = "input";

enum class ParamRole { Weight, TransposedWeight, Bias, Gamma, Beta, Mean, Var };

struct ParamSlot {
  std::string name;
  std::vector<std::size_t> shape;
  ParamRole role = ParamRole::Weight;
  std::size_t count() const;
};

struct TraceEntry {
  std::string id;
  LayerKind kind;
  Shape4 shape;
};

struct ShapeTrace {
  std::vector<TraceEntry> layers;
  std::vector<ParamSlot> params;
  Shape4 output;
  std::size_t param_count() const;
};

/// Static channel/shape check from `input` to the output. Throws
/// ErrorKind::Validation naming the first offending layer.
ShapeTrace validate(const ModelSpec& spec, const Shape4& input);
/// Smallest side length multiple the network accepts (from strides and
/// unshuffle factors).
int spatial_multiple(const ModelSpec& spec);

/// Named parameter tensors. On disk: manifest.json plus one `<f4` NPY per
/// tensor in the same directory.
struct WeightTensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

struct WeightManifest {
  std::map<std::string, WeightTensor> tensors;

  std::size_t param_count() const;
  const WeightTensor& at(const std::string& name) const;
  bool operator==(const WeightManifest& o) const;
};

/// He-style init: conv weights ~ N(0, 2 / (fan_in)), zero biases, identity
/// batch norm statistics. Deterministic in `seed`.
WeightManifest init_random(const ModelSpec& spec, std::uint64_t seed);

/// Checks that every slot of the spec has exactly one tensor of the right
/// shape and that no extra tensors are present.
void check_weights(const ModelSpec& spec, const WeightManifest& weights);

/// A spec bound to its weights, ready to run.
class Network {
 public:
  Network(ModelSpec spec, const WeightManifest& weights);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const ModelSpec& spec() const { return spec_; }
  /// Untiled forward pass. With `clamp` the output is limited to [0, 1].
  Tensor run(const Tensor& x, bool clamp = true) const;

  /// Execution state of one input, resumable at global pooling layers.
  struct State {
    Tensor input;
    Tensor cur;
    std::vector<std::optional<Tensor>> saved;
    std::size_t next = 0;
  };
  State start(const Tensor& x) const;
  /// Runs layers until the next sca/se layer, which is left pending (returns
  /// true), or to the end of the network (returns false).
  bool advance(State& s) const;
  /// Executes the pending pooling layer using `pooled` as its (N, C, 1, 1)
  /// channel means.
  void apply_pooled(State& s, const Tensor& pooled) const;

 private:
  struct Layer;
  void store(State& s) const;
  ModelSpec spec_;
  std::vector<Layer> layers_;
  std::vector<int> last_use_;  // index of the last layer reading each output
};

struct TileOptions {
  int tile = 0;     // input-space tile side; 0 disables tiling
  int overlap = 0;  // context margin on each inner tile edge, < tile / 2
  /// Share global pooling statistics across tiles. Each tile contributes the
  /// channel sums over the region it owns, so sca/se layers see whole-image
  /// means. Needs every tile resident at once.
  bool sync_pool = true;
};

/// Tiled forward pass. Neighbouring tiles share 2 * overlap input pixels;
/// across that band the outer half-overlap of each tile is discarded and the
/// rest is cross-faded linearly, so outputs inside a tile's margin never
/// contribute.
Tensor run_tiled(const Network& net, const Tensor& x, const TileOptions& options, bool clamp = true);

Tensor forward(const ModelSpec& spec, const WeightManifest& weights, const Tensor& x,
               std::optional<int> tile = std::nullopt, std::optional<int> overlap = std::nullopt);

// ---------------------------------------------------------------------------
// Reference architectures

struct RepSrConfig {
  int width = 32;
  int blocks = 4;
  int se_reduction = 4;
};

struct NafConfig {
  int width = 16;
  std::vector<int> enc_blocks{2, 2, 4, 8};
  std::vector<int> dec_blocks{2, 2, 2, 2};
  int middle_blocks = 6;
};

/// 2x SR: head conv, rep blocks with ReLU and squeeze-excitation, feature
/// skip, 3x3 conv + pixel shuffle, plus a bilinear upsample of the input.
ModelSpec rep_sr_small(const RepSrConfig& config = {});
/// U-shaped restoration net of NAF blocks (layer norm, simple gate, simple
/// channel attention).
ModelSpec naf_ir_small(const NafConfig& config = {});

constexpr std::size_t kEfficientTrackParams = 200'000;

// ---------------------------------------------------------------------------
// Deploy-time fusion

struct FusionRecord {
  std::string layer;
  std::string what;  // "rep_block", "conv_bn", "bn_pw_conv"
  rep::EquivalenceCertificate certificate;
};

struct FusedModel {
  ModelSpec spec;
  WeightManifest weights;
  std::vector<FusionRecord> records;
};

/// Folds rep blocks (unless marked fuse=false), conv->bn pairs and
/// bn->pw_conv pairs whose intermediate output is not referenced elsewhere.
/// Each fold is certified with `options`.
FusedModel fuse_model(const ModelSpec& spec, const WeightManifest& weights,
                      const rep::CertifyOptions& options = {});

// ---------------------------------------------------------------------------
// Serialization

std::string to_string(LayerKind k);
std::string to_string(ResidualMode m);

void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);

ModelSpec load_spec(const std::filesystem::path& path);
void save_spec(const std::filesystem::path& path, const ModelSpec& spec);
WeightManifest load_manifest(const std::filesystem::path& dir);
void save_manifest(const std::filesystem::path& dir, const WeightManifest& weights);

// A model directory holds model.json (the spec) and the weight manifest.
inline constexpr const char* kSpecFile = "model.json";
inline constexpr const char* kManifestFile = "manifest.json";

}  // namespace rawlab::model
