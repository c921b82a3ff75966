// SPDX-License-Identifier: Apache-2.0
#include "rawlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "rawlab/error.hpp"
#include "rawlab/io.hpp"
#include "rawlab/npy.hpp"
#include "rawlab/rng.hpp"

namespace fs = std::filesystem;

namespace rawlab::model {
namespace {

using nn::BnParams;
using nn::ConvParams;

std::string describe(const LayerSpec& l) { return "layer '" + l.id + "' (" + to_string(l.kind) + ")"; }

[[noreturn]] void reject(const LayerSpec& l, const std::string& msg) {
  fail(ErrorKind::Validation, describe(l) + ": " + msg);
}

std::size_t uz(int v) { return static_cast<std::size_t>(v); }

void conv_slots(std::vector<ParamSlot>& out, const std::string& prefix, int o, int ipg, int k) {
  out.push_back({prefix + ".weight", {uz(o), uz(ipg), uz(k), uz(k)}, ParamRole::Weight});
  out.push_back({prefix + ".bias", {uz(o)}, ParamRole::Bias});
}

void bn_slots(std::vector<ParamSlot>& out, const std::string& prefix, int c) {
  out.push_back({prefix + ".gamma", {uz(c)}, ParamRole::Gamma});
  out.push_back({prefix + ".beta", {uz(c)}, ParamRole::Beta});
  out.push_back({prefix + ".running_mean", {uz(c)}, ParamRole::Mean});
  out.push_back({prefix + ".running_var", {uz(c)}, ParamRole::Var});
}

int branch_kernel(const BranchSpec& b) {
  switch (b.kind) {
    case rep::BranchKind::Identity:
    case rep::BranchKind::Conv1x1: return 1;
    case rep::BranchKind::Conv3x3: return 3;
    case rep::BranchKind::Conv5x5: return 5;
    case rep::BranchKind::ConvBn: return b.kernel;
  }
  return 0;
}

bool branch_has_bn(const BranchSpec& b) { return b.bn || b.kind == rep::BranchKind::ConvBn; }

std::string branch_prefix(const LayerSpec& l, std::size_t k) { return l.id + ".b" + std::to_string(k); }

Shape4 conv_out(const LayerSpec& l, const Shape4& in, int out_c, int k, int stride) {
  const long pad = k / 2;
  const long hn = static_cast<long>(in.h) + 2 * pad - k;
  const long wn = static_cast<long>(in.w) + 2 * pad - k;
  if (hn < 0 || wn < 0) reject(l, "kernel larger than padded input " + in.str());
  if (hn % stride != 0 || wn % stride != 0)
    reject(l, "output size is not an integer for input " + in.str());
  return {in.n, uz(out_c), static_cast<std::size_t>(hn / stride + 1), static_cast<std::size_t>(wn / stride + 1)};
}

// Output shape of one layer plus the parameter slots it owns.
Shape4 step(const LayerSpec& l, const Shape4& cur, const Shape4& input, const Shape4* from_shape,
            std::vector<ParamSlot>& slots) {
  const int c = static_cast<int>(cur.c);
  switch (l.kind) {
    case LayerKind::Conv: {
      if (l.out_channels < 1) reject(l, "out_channels must be >= 1");
      if (l.kernel < 1 || l.kernel % 2 == 0) reject(l, "kernel must be odd");
      if (l.stride < 1) reject(l, "stride must be >= 1");
      if (l.groups < 1 || c % l.groups != 0 || l.out_channels % l.groups != 0)
        reject(l, "channels " + std::to_string(c) + " -> " + std::to_string(l.out_channels) +
                      " not divisible by groups " + std::to_string(l.groups));
      conv_slots(slots, l.id, l.out_channels, c / l.groups, l.kernel);
      return conv_out(l, cur, l.out_channels, l.kernel, l.stride);
    }
    case LayerKind::DwConv:
      if (l.kernel < 1 || l.kernel % 2 == 0) reject(l, "kernel must be odd");
      if (l.stride < 1) reject(l, "stride must be >= 1");
      conv_slots(slots, l.id, c, 1, l.kernel);
      return conv_out(l, cur, c, l.kernel, l.stride);
    case LayerKind::PwConv:
      if (l.out_channels < 1) reject(l, "out_channels must be >= 1");
      conv_slots(slots, l.id, l.out_channels, c, 1);
      return {cur.n, uz(l.out_channels), cur.h, cur.w};
    case LayerKind::TConv2x:
      if (l.out_channels < 1) reject(l, "out_channels must be >= 1");
      if (l.kernel != 2 && l.kernel != 4) reject(l, "kernel must be 2 or 4");
      slots.push_back({l.id + ".weight", {uz(c), uz(l.out_channels), uz(l.kernel), uz(l.kernel)},
                       ParamRole::TransposedWeight});
      slots.push_back({l.id + ".bias", {uz(l.out_channels)}, ParamRole::Bias});
      return {cur.n, uz(l.out_channels), 2 * cur.h, 2 * cur.w};
    case LayerKind::Bn:
      if (!(l.eps >= 0.0f)) reject(l, "eps must be >= 0");
      bn_slots(slots, l.id, c);
      return cur;
    case LayerKind::LayerNorm:
      if (!(l.eps > 0.0f)) reject(l, "eps must be > 0");
      slots.push_back({l.id + ".weight", {uz(c)}, ParamRole::Gamma});
      slots.push_back({l.id + ".bias", {uz(c)}, ParamRole::Beta});
      return cur;
    case LayerKind::Relu:
    case LayerKind::Gelu:
    case LayerKind::Sigmoid:
      return cur;
    case LayerKind::SimpleGate:
      if (c % 2 != 0) reject(l, "needs an even channel count, got " + std::to_string(c));
      return {cur.n, cur.c / 2, cur.h, cur.w};
    case LayerKind::Sca:
      conv_slots(slots, l.id, c, c, 1);
      return cur;
    case LayerKind::Se: {
      if (l.reduction < 1) reject(l, "reduction must be >= 1");
      const int mid = std::max(1, c / l.reduction);
      conv_slots(slots, l.id + ".fc1", mid, c, 1);
      conv_slots(slots, l.id + ".fc2", c, mid, 1);
      return cur;
    }
    case LayerKind::PixelShuffle: {
      if (l.factor < 1) reject(l, "factor must be >= 1");
      const std::size_t rr = uz(l.factor * l.factor);
      if (cur.c % rr != 0)
        reject(l, "channels " + std::to_string(c) + " not divisible by factor^2 = " + std::to_string(rr));
      return {cur.n, cur.c / rr, cur.h * uz(l.factor), cur.w * uz(l.factor)};
    }
    case LayerKind::PixelUnshuffle:
      if (l.factor < 1) reject(l, "factor must be >= 1");
      if (cur.h % uz(l.factor) != 0 || cur.w % uz(l.factor) != 0)
        reject(l, "spatial size " + cur.str() + " not divisible by " + std::to_string(l.factor));
      return {cur.n, cur.c * uz(l.factor * l.factor), cur.h / uz(l.factor), cur.w / uz(l.factor)};
    case LayerKind::RepBlock: {
      if (l.branches.empty()) reject(l, "needs at least one branch");
      if (l.groups < 1 || c % l.groups != 0) reject(l, "channels not divisible by groups");
      for (std::size_t k = 0; k < l.branches.size(); ++k) {
        const BranchSpec& b = l.branches[k];
        const int kk = branch_kernel(b);
        if (kk != 1 && kk != 3 && kk != 5) reject(l, "branch kernels must be 1, 3 or 5");
        const std::string prefix = branch_prefix(l, k);
        if (b.kind != rep::BranchKind::Identity) conv_slots(slots, prefix, c, c / l.groups, kk);
        if (branch_has_bn(b)) bn_slots(slots, prefix + ".bn", c);
      }
      return cur;
    }
    case LayerKind::AddFrom:
      if (!from_shape) reject(l, "'from' must name an earlier layer or 'input', got '" + l.from + "'");
      if (!(*from_shape == cur))
        reject(l, "shape " + cur.str() + " does not match '" + l.from + "' " + from_shape->str());
      return cur;
    case LayerKind::GlobalResidual:
      switch (l.mode) {
        case ResidualMode::None:
          return cur;
        case ResidualMode::Identity:
          if (!(cur == input)) reject(l, "identity residual needs output shape == input shape");
          return cur;
        case ResidualMode::BilinearUp:
          if (cur.c != input.c || cur.n != input.n || cur.h % input.h != 0 || cur.w % input.w != 0 ||
              cur.h / input.h != cur.w / input.w)
            reject(l, "bilinear residual needs an integer upscale of the input, got " + cur.str());
          return cur;
      }
      return cur;
  }
  reject(l, "unknown layer kind");
}

ConvParams conv_from(const WeightManifest& w, const std::string& prefix, int in, int out, int k,
                     int stride, int groups) {
  ConvParams p(in, out, k, stride, k / 2, groups);
  p.weight = w.at(prefix + ".weight").data;
  p.bias = w.at(prefix + ".bias").data;
  p.validate();
  return p;
}

BnParams bn_from(const WeightManifest& w, const std::string& prefix, float eps) {
  BnParams bn;
  bn.gamma = w.at(prefix + ".gamma").data;
  bn.beta = w.at(prefix + ".beta").data;
  bn.running_mean = w.at(prefix + ".running_mean").data;
  bn.running_var = w.at(prefix + ".running_var").data;
  bn.eps = eps;
  bn.validate();
  return bn;
}

void put_conv(WeightManifest& w, const std::string& prefix, const ConvParams& p) {
  w.tensors[prefix + ".weight"] = {{uz(p.out_channels), uz(p.in_per_group()), uz(p.kernel), uz(p.kernel)},
                                   p.weight};
  std::vector<float> bias = p.bias;
  if (bias.empty()) bias.assign(uz(p.out_channels), 0.0f);
  w.tensors[prefix + ".bias"] = {{uz(p.out_channels)}, bias};
}

Shape4 nominal_input(const ModelSpec& spec) {
  const std::size_t side = uz(spatial_multiple(spec)) * 8;
  return {1, uz(spec.in_channels), side, side};
}

rep::RepBranchBlock block_from(const LayerSpec& l, int c, const WeightManifest& w) {
  rep::RepBranchBlock block;
  block.channels = c;
  block.groups = l.groups;
  for (std::size_t k = 0; k < l.branches.size(); ++k) {
    const BranchSpec& b = l.branches[k];
    const std::string prefix = branch_prefix(l, k);
    rep::RepBranch br;
    br.kind = b.kind;
    if (b.kind != rep::BranchKind::Identity)
      br.params = conv_from(w, prefix, c, c, branch_kernel(b), 1, l.groups);
    if (branch_has_bn(b)) br.bn = bn_from(w, prefix + ".bn", l.eps);
    block.branches.push_back(std::move(br));
  }
  return block;
}

}  // namespace

// ---------------------------------------------------------------------------
// Validation

std::size_t ParamSlot::count() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t ShapeTrace::param_count() const {
  std::size_t n = 0;
  for (const auto& s : params) n += s.count();
  return n;
}

ShapeTrace validate(const ModelSpec& spec, const Shape4& input) {
  if (spec.scale < 1) fail(ErrorKind::Validation, "scale must be >= 1");
  if (spec.in_channels < 1) fail(ErrorKind::Validation, "in_channels must be >= 1");
  if (spec.layers.empty()) fail(ErrorKind::Validation, "model has no layers");
  if (input.c != uz(spec.in_channels))
    fail(ErrorKind::Validation, "model expects " + std::to_string(spec.in_channels) +
                                    " input channels, got " + input.str());

  ShapeTrace trace;
  std::map<std::string, std::size_t> index;
  Shape4 cur = input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.id.empty()) fail(ErrorKind::Validation, "layer " + std::to_string(i) + " has no id");
    if (l.id == kInputId || index.count(l.id)) reject(l, "duplicate or reserved id");
    const Shape4* from = nullptr;
    if (l.kind == LayerKind::AddFrom) {
      if (l.from == kInputId) {
        from = &input;
      } else if (auto it = index.find(l.from); it != index.end()) {
        from = &trace.layers[it->second].shape;
      }
    }
    cur = step(l, cur, input, from, trace.params);
    index[l.id] = i;
    trace.layers.push_back({l.id, l.kind, cur});
  }
  const Shape4 expected{input.n, uz(spec.in_channels), input.h * uz(spec.scale), input.w * uz(spec.scale)};
  if (!(cur == expected))
    fail(ErrorKind::Validation, "model output " + cur.str() + " does not match the expected " + expected.str());
  trace.output = cur;
  return trace;
}

int spatial_multiple(const ModelSpec& spec) {
  int m = 1;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::PixelUnshuffle) m *= std::max(1, l.factor);
    if ((l.kind == LayerKind::Conv || l.kind == LayerKind::DwConv) && l.stride > 1) m *= l.stride;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Weights

std::size_t WeightManifest::param_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.data.size();
  return n;
}

const WeightTensor& WeightManifest::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) fail(ErrorKind::Validation, "missing tensor '" + name + "'");
  return it->second;
}

bool WeightManifest::operator==(const WeightManifest& o) const {
  if (tensors.size() != o.tensors.size()) return false;
  for (const auto& [name, t] : tensors) {
    auto it = o.tensors.find(name);
    if (it == o.tensors.end() || it->second.shape != t.shape || it->second.data != t.data) return false;
  }
  return true;
}

WeightManifest init_random(const ModelSpec& spec, std::uint64_t seed) {
  const ShapeTrace trace = validate(spec, nominal_input(spec));
  WeightManifest w;
  for (std::size_t i = 0; i < trace.params.size(); ++i) {
    const ParamSlot& slot = trace.params[i];
    WeightTensor t{slot.shape, std::vector<float>(slot.count(), 0.0f)};
    switch (slot.role) {
      case ParamRole::Weight:
      case ParamRole::TransposedWeight: {
        const double fan_in = static_cast<double>(slot.shape[1] * slot.shape[2] * slot.shape[3]);
        const double stddev = std::sqrt(2.0 / fan_in);
        Rng rng(Rng::derive_seed(seed, i));
        for (float& v : t.data) v = static_cast<float>(stddev * rng.normal());
        break;
      }
      case ParamRole::Gamma:
      case ParamRole::Var:
        std::fill(t.data.begin(), t.data.end(), 1.0f);
        break;
      case ParamRole::Bias:
      case ParamRole::Beta:
      case ParamRole::Mean:
        break;
    }
    w.tensors[slot.name] = std::move(t);
  }
  return w;
}

void check_weights(const ModelSpec& spec, const WeightManifest& weights) {
  const ShapeTrace trace = validate(spec, nominal_input(spec));
  std::set<std::string> expected;
  for (const auto& slot : trace.params) {
    expected.insert(slot.name);
    const WeightTensor& t = weights.at(slot.name);
    if (t.shape != slot.shape || t.data.size() != slot.count())
      fail(ErrorKind::Validation, "tensor '" + slot.name + "' has the wrong shape");
  }
  for (const auto& [name, _] : weights.tensors)
    if (!expected.count(name)) fail(ErrorKind::Validation, "unexpected tensor '" + name + "'");
}

// ---------------------------------------------------------------------------
// Network

struct Network::Layer {
  LayerSpec spec;
  ConvParams conv;
  ConvParams conv2;
  nn::TransposedConvParams tconv;
  BnParams bn;
  std::vector<float> ln_weight, ln_bias;
  rep::RepBranchBlock block;
  int from = -1;  // add_from source layer index, -1 for the network input
};

Network::~Network() = default;
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;

Network::Network(ModelSpec spec, const WeightManifest& weights) : spec_(std::move(spec)) {
  check_weights(spec_, weights);
  const Shape4 input = nominal_input(spec_);
  const ShapeTrace trace = validate(spec_, input);
  std::map<std::string, int> index;
  last_use_.assign(spec_.layers.size(), -1);
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerSpec& l = spec_.layers[i];
    const int c = static_cast<int>(i == 0 ? input.c : trace.layers[i - 1].shape.c);
    Layer layer;
    layer.spec = l;
    switch (l.kind) {
      case LayerKind::Conv:
        layer.conv = conv_from(weights, l.id, c, l.out_channels, l.kernel, l.stride, l.groups);
        break;
      case LayerKind::DwConv:
        layer.conv = conv_from(weights, l.id, c, c, l.kernel, l.stride, c);
        break;
      case LayerKind::PwConv:
        layer.conv = conv_from(weights, l.id, c, l.out_channels, 1, 1, 1);
        break;
      case LayerKind::TConv2x:
        layer.tconv = nn::TransposedConvParams(c, l.out_channels, l.kernel);
        layer.tconv.weight = weights.at(l.id + ".weight").data;
        layer.tconv.bias = weights.at(l.id + ".bias").data;
        layer.tconv.validate();
        break;
      case LayerKind::Bn:
        layer.bn = bn_from(weights, l.id, l.eps);
        break;
      case LayerKind::LayerNorm:
        layer.ln_weight = weights.at(l.id + ".weight").data;
        layer.ln_bias = weights.at(l.id + ".bias").data;
        break;
      case LayerKind::Sca:
        layer.conv = conv_from(weights, l.id, c, c, 1, 1, 1);
        break;
      case LayerKind::Se: {
        const int mid = std::max(1, c / l.reduction);
        layer.conv = conv_from(weights, l.id + ".fc1", c, mid, 1, 1, 1);
        layer.conv2 = conv_from(weights, l.id + ".fc2", mid, c, 1, 1, 1);
        break;
      }
      case LayerKind::RepBlock:
        layer.block = block_from(l, c, weights);
        break;
      case LayerKind::AddFrom:
        if (l.from != kInputId) {
          layer.from = index.at(l.from);
          last_use_[static_cast<std::size_t>(layer.from)] = static_cast<int>(i);
        }
        break;
      default:
        break;
    }
    index[l.id] = static_cast<int>(i);
    layers_.push_back(std::move(layer));
  }
}

Network::State Network::start(const Tensor& x) const {
  validate(spec_, x.shape());
  return State{x, x, std::vector<std::optional<Tensor>>(layers_.size()), 0};
}

void Network::store(State& s) const {
  const std::size_t i = s.next;
  const Layer& layer = layers_[i];
  if (layer.spec.kind == LayerKind::AddFrom && layer.from >= 0 &&
      last_use_[static_cast<std::size_t>(layer.from)] == static_cast<int>(i))
    s.saved[static_cast<std::size_t>(layer.from)].reset();
  if (last_use_[i] > static_cast<int>(i)) s.saved[i] = s.cur;
  ++s.next;
}

bool Network::advance(State& s) const {
  for (; s.next < layers_.size();) {
    const Layer& layer = layers_[s.next];
    const LayerSpec& l = layer.spec;
    Tensor& cur = s.cur;
    switch (l.kind) {
      case LayerKind::Sca:
      case LayerKind::Se: return true;
      case LayerKind::Conv:
      case LayerKind::DwConv:
      case LayerKind::PwConv: cur = nn::conv2d(cur, layer.conv); break;
      case LayerKind::TConv2x: cur = nn::transposed_conv2x(cur, layer.tconv); break;
      case LayerKind::Bn: cur = nn::batchnorm_infer(cur, layer.bn); break;
      case LayerKind::LayerNorm: cur = nn::layer_norm(cur, layer.ln_weight, layer.ln_bias, l.eps); break;
      case LayerKind::Relu: cur = nn::relu(cur); break;
      case LayerKind::Gelu: cur = nn::gelu(cur); break;
      case LayerKind::Sigmoid: cur = nn::sigmoid(cur); break;
      case LayerKind::SimpleGate: cur = nn::simple_gate(cur); break;
      case LayerKind::PixelShuffle: cur = nn::pixel_shuffle(cur, l.factor); break;
      case LayerKind::PixelUnshuffle: cur = nn::pixel_unshuffle(cur, l.factor); break;
      case LayerKind::RepBlock: cur = rep::forward(layer.block, cur); break;
      case LayerKind::AddFrom:
        cur = nn::add(cur, layer.from < 0 ? s.input : *s.saved[static_cast<std::size_t>(layer.from)]);
        break;
      case LayerKind::GlobalResidual:
        if (l.mode == ResidualMode::Identity) {
          cur = nn::add(cur, s.input);
        } else if (l.mode == ResidualMode::BilinearUp) {
          const double factor = static_cast<double>(cur.h()) / static_cast<double>(s.input.h());
          cur = nn::add(cur, nn::bilinear_resize(s.input, factor));
        }
        break;
    }
    store(s);
  }
  return false;
}

void Network::apply_pooled(State& s, const Tensor& pooled) const {
  if (s.next >= layers_.size()) fail(ErrorKind::Argument, "no pending pooling layer");
  const Layer& layer = layers_[s.next];
  if (layer.spec.kind == LayerKind::Sca) {
    s.cur = nn::sca(s.cur, pooled, layer.conv);
  } else if (layer.spec.kind == LayerKind::Se) {
    s.cur = nn::se_block(s.cur, pooled, layer.conv, layer.conv2);
  } else {
    fail(ErrorKind::Argument, "layer '" + layer.spec.id + "' is not a pooling layer");
  }
  store(s);
}

Tensor Network::run(const Tensor& x, bool clamp) const {
  State s = start(x);
  while (advance(s)) apply_pooled(s, nn::global_avg_pool(s.cur));
  return clamp ? nn::clamp(s.cur, 0.0f, 1.0f) : std::move(s.cur);
}

Tensor forward(const ModelSpec& spec, const WeightManifest& weights, const Tensor& x,
               std::optional<int> tile, std::optional<int> overlap) {
  Network net(spec, weights);
  if (!tile) return net.run(x);
  return run_tiled(net, x, TileOptions{*tile, overlap.value_or(0)});
}

// ---------------------------------------------------------------------------
// Reference architectures

namespace {

struct Builder {
  ModelSpec spec;

  LayerSpec& add(const std::string& id, LayerKind kind) {
    LayerSpec l;
    l.id = id;
    l.kind = kind;
    spec.layers.push_back(std::move(l));
    return spec.layers.back();
  }
  const std::string& last() const {
    static const std::string input = kInputId;
    return spec.layers.empty() ? input : spec.layers.back().id;
  }
  void conv(const std::string& id, int out, int k = 3) {
    auto& l = add(id, LayerKind::Conv);
    l.out_channels = out;
    l.kernel = k;
  }
  void pw(const std::string& id, int out) { add(id, LayerKind::PwConv).out_channels = out; }
  void add_from(const std::string& id, const std::string& from) { add(id, LayerKind::AddFrom).from = from; }

  // NAF block: norm, expand, depthwise, gate, channel attention, project;
  // then norm, expand, gate, project. Both halves are residual.
  void naf_block(const std::string& p, int c) {
    const std::string in = last();
    add(p + ".n1", LayerKind::LayerNorm).eps = 1e-6f;
    pw(p + ".pw1", 2 * c);
    add(p + ".dw", LayerKind::DwConv).kernel = 3;
    add(p + ".sg1", LayerKind::SimpleGate);
    add(p + ".sca", LayerKind::Sca);
    pw(p + ".pw2", c);
    add_from(p + ".add1", in);
    add(p + ".n2", LayerKind::LayerNorm).eps = 1e-6f;
    pw(p + ".pw3", 2 * c);
    add(p + ".sg2", LayerKind::SimpleGate);
    pw(p + ".pw4", c);
    add_from(p + ".add2", p + ".add1");
  }
};

}  // namespace

ModelSpec rep_sr_small(const RepSrConfig& cfg) {
  Builder b;
  b.spec.name = "rep_sr_small";
  b.spec.scale = 2;
  b.spec.in_channels = 4;
  b.conv("head", cfg.width);
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::string n = std::to_string(i);
    auto& blk = b.add("rep" + n, LayerKind::RepBlock);
    blk.branches = {{rep::BranchKind::ConvBn, 3, true},
                    {rep::BranchKind::Conv1x1, 1, true},
                    {rep::BranchKind::Identity, 1, true}};
    b.add("act" + n, LayerKind::Relu);
    b.add("att" + n, LayerKind::Se).reduction = cfg.se_reduction;
  }
  b.conv("body", cfg.width);
  b.add_from("skip", "head");
  b.conv("up", 4 * 4);
  b.add("shuffle", LayerKind::PixelShuffle).factor = 2;
  b.add("residual", LayerKind::GlobalResidual).mode = ResidualMode::BilinearUp;
  return b.spec;
}

ModelSpec naf_ir_small(const NafConfig& cfg) {
  if (cfg.enc_blocks.size() != cfg.dec_blocks.size())
    fail(ErrorKind::Argument, "encoder and decoder stage counts differ");
  Builder b;
  b.spec.name = "naf_ir_small";
  b.spec.scale = 1;
  b.spec.in_channels = 4;
  b.conv("intro", cfg.width);
  int c = cfg.width;
  std::vector<std::string> skips;
  for (std::size_t s = 0; s < cfg.enc_blocks.size(); ++s) {
    const std::string stage = "enc" + std::to_string(s);
    for (int k = 0; k < cfg.enc_blocks[s]; ++k) b.naf_block(stage + ".blk" + std::to_string(k), c);
    skips.push_back(b.last());
    b.add(stage + ".down_shuffle", LayerKind::PixelUnshuffle).factor = 2;
    b.pw(stage + ".down", 2 * c);
    c *= 2;
  }
  for (int k = 0; k < cfg.middle_blocks; ++k) b.naf_block("mid.blk" + std::to_string(k), c);
  for (std::size_t s = 0; s < cfg.dec_blocks.size(); ++s) {
    const std::string stage = "dec" + std::to_string(s);
    b.pw(stage + ".up", 2 * c);
    b.add(stage + ".up_shuffle", LayerKind::PixelShuffle).factor = 2;
    c /= 2;
    b.add_from(stage + ".skip", skips[skips.size() - 1 - s]);
    for (int k = 0; k < cfg.dec_blocks[s]; ++k) b.naf_block(stage + ".blk" + std::to_string(k), c);
  }
  b.conv("ending", 4);
  b.add("residual", LayerKind::GlobalResidual).mode = ResidualMode::Identity;
  return b.spec;
}

// ---------------------------------------------------------------------------
// Fusion

FusedModel fuse_model(const ModelSpec& spec, const WeightManifest& weights,
                      const rep::CertifyOptions& options) {
  check_weights(spec, weights);
  const Shape4 input = nominal_input(spec);
  const ShapeTrace trace = validate(spec, input);

  std::set<std::string> referenced;
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::AddFrom) referenced.insert(l.from);

  // Weights of every untouched layer are copied by slot prefix.
  std::map<std::string, std::vector<std::string>> slots_of;
  {
    std::vector<ParamSlot> scratch;
    Shape4 cur = input;
    std::map<std::string, Shape4> seen;
    for (const auto& l : spec.layers) {
      scratch.clear();
      const Shape4* from = nullptr;
      if (l.kind == LayerKind::AddFrom) from = l.from == kInputId ? &input : &seen.at(l.from);
      cur = step(l, cur, input, from, scratch);
      seen[l.id] = cur;
      for (const auto& s : scratch) slots_of[l.id].push_back(s.name);
    }
  }

  FusedModel out;
  out.spec = spec;
  out.spec.layers.clear();
  std::map<std::string, std::string> renamed;

  auto copy_layer = [&](LayerSpec l) {
    for (const auto& name : slots_of[l.id]) out.weights.tensors[name] = weights.at(name);
    if (l.kind == LayerKind::AddFrom) {
      if (auto it = renamed.find(l.from); it != renamed.end()) l.from = it->second;
    }
    out.spec.layers.push_back(std::move(l));
  };

  const auto& layers = spec.layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const int c = static_cast<int>(i == 0 ? input.c : trace.layers[i - 1].shape.c);
    const LayerSpec* next = i + 1 < layers.size() ? &layers[i + 1] : nullptr;
    const bool is_conv = l.kind == LayerKind::Conv || l.kind == LayerKind::DwConv || l.kind == LayerKind::PwConv;

    if (l.kind == LayerKind::RepBlock && l.fuse) {
      const rep::RepBranchBlock block = block_from(l, c, weights);
      const int k = std::max(3, block.receptive_field());
      const ConvParams fused = rep::fuse_branches(block, k);
      LayerSpec conv;
      conv.id = l.id;
      conv.kind = LayerKind::Conv;
      conv.out_channels = c;
      conv.kernel = k;
      conv.groups = l.groups;
      put_conv(out.weights, l.id, fused);
      out.spec.layers.push_back(conv);
      out.records.push_back({l.id, "rep_block", rep::certify(block, fused, options)});
      continue;
    }

    if (is_conv && next && next->kind == LayerKind::Bn && !referenced.count(l.id)) {
      const int k = l.kind == LayerKind::PwConv ? 1 : l.kernel;
      const int oc = l.kind == LayerKind::DwConv ? c : l.out_channels;
      const int groups = l.kind == LayerKind::DwConv ? c : (l.kind == LayerKind::PwConv ? 1 : l.groups);
      const ConvParams conv = conv_from(weights, l.id, c, oc, k, l.stride, groups);
      const BnParams bn = bn_from(weights, next->id, next->eps);
      const ConvParams fused = rep::fuse_conv_bn(conv, bn);
      put_conv(out.weights, l.id, fused);
      out.spec.layers.push_back(l);
      renamed[next->id] = l.id;
      out.records.push_back({l.id, "conv_bn", rep::certify(conv, bn, fused, options)});
      ++i;
      continue;
    }

    if (l.kind == LayerKind::Bn && next && next->kind == LayerKind::PwConv && !referenced.count(l.id)) {
      const BnParams bn = bn_from(weights, l.id, l.eps);
      const ConvParams conv = conv_from(weights, next->id, c, next->out_channels, 1, 1, 1);
      const ConvParams fused = rep::fuse_bn_pointwise(bn, conv);
      put_conv(out.weights, next->id, fused);
      out.spec.layers.push_back(*next);
      renamed[l.id] = next->id;
      auto cert = rep::certify([&](const Tensor& x) { return nn::conv2d(nn::batchnorm_infer(x, bn), conv); },
                               [&](const Tensor& x) { return nn::conv2d(x, fused); }, c, options);
      out.records.push_back({next->id, "bn_pw_conv", cert});
      ++i;
      continue;
    }

    copy_layer(l);
  }
  check_weights(out.spec, out.weights);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DwConv: return "dw_conv";
    case LayerKind::PwConv: return "pw_conv";
    case LayerKind::TConv2x: return "tconv2x";
    case LayerKind::Bn: return "bn";
    case LayerKind::LayerNorm: return "layer_norm";
    case LayerKind::Relu: return "relu";
    case LayerKind::Gelu: return "gelu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::SimpleGate: return "simple_gate";
    case LayerKind::Sca: return "sca";
    case LayerKind::Se: return "se";
    case LayerKind::PixelShuffle: return "pixel_shuffle";
    case LayerKind::PixelUnshuffle: return "pixel_unshuffle";
    case LayerKind::RepBlock: return "rep_block";
    case LayerKind::AddFrom: return "add_from";
    case LayerKind::GlobalResidual: return "global_residual";
  }
  return "?";
}

std::string to_string(ResidualMode m) {
  switch (m) {
    case ResidualMode::None: return "none";
    case ResidualMode::BilinearUp: return "bilinear_up";
    case ResidualMode::Identity: return "identity";
  }
  return "?";
}

namespace {

LayerKind parse_layer_kind(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(LayerKind::GlobalResidual); ++k)
    if (to_string(static_cast<LayerKind>(k)) == s) return static_cast<LayerKind>(k);
  fail(ErrorKind::Validation, "unknown layer kind '" + s + "'");
}

ResidualMode parse_mode(const std::string& s) {
  for (auto m : {ResidualMode::None, ResidualMode::BilinearUp, ResidualMode::Identity})
    if (to_string(m) == s) return m;
  fail(ErrorKind::Validation, "unknown residual mode '" + s + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSpec& s) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : s.layers) {
    nlohmann::json e = {{"id", l.id}, {"kind", to_string(l.kind)}};
    switch (l.kind) {
      case LayerKind::Conv:
        e["out_channels"] = l.out_channels;
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        e["groups"] = l.groups;
        break;
      case LayerKind::DwConv:
        e["kernel"] = l.kernel;
        e["stride"] = l.stride;
        break;
      case LayerKind::PwConv: e["out_channels"] = l.out_channels; break;
      case LayerKind::TConv2x:
        e["out_channels"] = l.out_channels;
        e["kernel"] = l.kernel;
        break;
      case LayerKind::Bn:
      case LayerKind::LayerNorm: e["eps"] = l.eps; break;
      case LayerKind::Se: e["reduction"] = l.reduction; break;
      case LayerKind::PixelShuffle:
      case LayerKind::PixelUnshuffle: e["factor"] = l.factor; break;
      case LayerKind::RepBlock: {
        nlohmann::json br = nlohmann::json::array();
        for (const auto& b : l.branches) {
          nlohmann::json x = {{"kind", rep::to_string(b.kind)}, {"bn", branch_has_bn(b)}};
          if (b.kind == rep::BranchKind::ConvBn) x["kernel"] = b.kernel;
          br.push_back(std::move(x));
        }
        e["branches"] = std::move(br);
        e["groups"] = l.groups;
        e["eps"] = l.eps;
        e["fuse"] = l.fuse;
        break;
      }
      case LayerKind::AddFrom: e["from"] = l.from; break;
      case LayerKind::GlobalResidual: e["mode"] = to_string(l.mode); break;
      default: break;
    }
    layers.push_back(std::move(e));
  }
  j = {{"name", s.name}, {"scale", s.scale}, {"in_channels", s.in_channels}, {"layers", std::move(layers)}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  try {
    s = ModelSpec{};
    s.name = j.value("name", std::string());
    s.scale = j.at("scale").get<int>();
    s.in_channels = j.value("in_channels", 4);
    for (const auto& e : j.at("layers")) {
      LayerSpec l;
      l.id = e.at("id").get<std::string>();
      l.kind = parse_layer_kind(e.at("kind").get<std::string>());
      l.out_channels = e.value("out_channels", 0);
      l.kernel = e.value("kernel", l.kind == LayerKind::TConv2x ? 2 : 3);
      l.stride = e.value("stride", 1);
      l.groups = e.value("groups", 1);
      l.factor = e.value("factor", 2);
      l.reduction = e.value("reduction", 4);
      l.eps = e.value("eps", l.kind == LayerKind::LayerNorm ? 1e-6f : 1e-5f);
      l.from = e.value("from", std::string());
      l.mode = parse_mode(e.value("mode", std::string("none")));
      l.fuse = e.value("fuse", true);
      if (e.contains("branches")) {
        for (const auto& b : e.at("branches")) {
          BranchSpec br;
          br.kind = rep::parse_branch_kind(b.at("kind").get<std::string>());
          br.kernel = b.value("kernel", 3);
          br.bn = b.value("bn", false);
          l.branches.push_back(br);
        }
      }
      s.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, std::string("bad model spec: ") + e.what());
  }
}

ModelSpec load_spec(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, path.string() + ": " + e.what());
  }
  return j.get<ModelSpec>();
}

void save_spec(const fs::path& path, const ModelSpec& spec) {
  io::write_file_atomic(path, nlohmann::json(spec).dump(2) + "\n");
}

WeightManifest load_manifest(const fs::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(dir / kManifestFile));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, (dir / kManifestFile).string() + ": " + e.what());
  }
  WeightManifest w;
  try {
    for (const auto& e : j.at("entries")) {
      const std::string name = e.at("tensor_name").get<std::string>();
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (e.value("dtype", std::string("<f4")) != "<f4")
        fail(ErrorKind::Validation, "tensor '" + name + "' must be <f4");
      const fs::path file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file))
        fail(ErrorKind::Validation, "missing tensor '" + name + "': file " + file.string() + " not found");
      npy::Array a = npy::read(file);
      if (a.shape != shape) fail(ErrorKind::Validation, "tensor '" + name + "' shape disagrees with manifest");
      w.tensors[name] = {shape, std::move(a.data)};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Validation, std::string("bad weight manifest: ") + e.what());
  }
  return w;
}

void save_manifest(const fs::path& dir, const WeightManifest& weights) {
  fs::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : weights.tensors) {
    const std::string file = name + ".npy";
    npy::write(dir / file, t.shape, t.data);
    entries.push_back({{"tensor_name", name}, {"shape", t.shape}, {"dtype", "<f4"}, {"file", file}});
  }
  const nlohmann::json j = {{"format", "rawlab.weights"}, {"version", 1}, {"entries", std::move(entries)}};
  io::write_file_atomic(dir / kManifestFile, j.dump(2) + "\n");
}

}  // namespace rawlab::model
