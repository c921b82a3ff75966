// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <vector>

#include "rawlab/error.hpp"
#include "rawlab/model.hpp"

namespace rawlab::model {
namespace {

// Tile origins along one axis: step tile - 2 * overlap, last tile flush with
// the end of the axis.
std::vector<std::size_t> origins(std::size_t extent, std::size_t tile, std::size_t overlap) {
  std::vector<std::size_t> out{0};
  const std::size_t stride = tile - 2 * overlap;
  while (out.back() + tile < extent) out.push_back(std::min(out.back() + stride, extent - tile));
  return out;
}

// Feather weight at input-space distance d from a tile edge that borders a
// neighbour. Zero across the outer half-overlap, linear over the next
// `overlap` pixels, one beyond.
double feather(double d, double overlap) {
  if (overlap <= 0.0) return 1.0;
  return std::clamp((d - 0.5 * overlap) / overlap, 0.0, 1.0);
}

// Per-output-pixel weights along one axis for a tile at `start` of length
// `tile` (input px) within an axis of `extent`.
std::vector<double> axis_weights(std::size_t start, std::size_t tile, std::size_t extent,
                                 std::size_t scale, std::size_t overlap) {
  const bool lo_edge = start > 0;
  const bool hi_edge = start + tile < extent;
  std::vector<double> w(tile * scale, 1.0);
  const double s = static_cast<double>(scale);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double c = (static_cast<double>(i) + 0.5) / s;  // pixel center, input units
    if (lo_edge) w[i] *= feather(c, static_cast<double>(overlap));
    if (hi_edge) w[i] *= feather(static_cast<double>(tile) - c, static_cast<double>(overlap));
  }
  return w;
}

// Half-open input-space range each tile is responsible for when pooling
// statistics are shared. Neighbours split their overlap at its midpoint.
std::vector<std::pair<std::size_t, std::size_t>> owned(const std::vector<std::size_t>& starts,
                                                       std::size_t tile, std::size_t extent) {
  std::vector<std::pair<std::size_t, std::size_t>> out(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out[i].first = i == 0 ? 0 : (starts[i - 1] + tile + starts[i]) / 2;
    if (i > 0) out[i - 1].second = out[i].first;
  }
  out.back().second = extent;
  return out;
}

struct TileJob {
  std::size_t y0, x0;                      // input-space origin
  std::pair<std::size_t, std::size_t> oy;  // owned rows
  std::pair<std::size_t, std::size_t> ox;  // owned columns
  Network::State state;
};

// Whole-image channel means of the pending pooling layer input, assembled
// from the owned region of every tile.
Tensor shared_means(const std::vector<TileJob>& jobs, std::size_t tile, std::size_t image_h,
                    std::size_t image_w) {
  const Shape4& fs = jobs.front().state.cur.shape();
  // Feature grids are tile / fs.h times coarser than the input.
  auto to_feat = [&](std::size_t v, std::size_t feat) { return v * feat / tile; };
  std::vector<double> sums(fs.c, 0.0);
  for (const auto& job : jobs) {
    const Tensor& f = job.state.cur;
    const std::size_t fy0 = to_feat(job.oy.first, fs.h) - to_feat(job.y0, fs.h);
    const std::size_t fy1 = to_feat(job.oy.second, fs.h) - to_feat(job.y0, fs.h);
    const std::size_t fx0 = to_feat(job.ox.first, fs.w) - to_feat(job.x0, fs.w);
    const std::size_t fx1 = to_feat(job.ox.second, fs.w) - to_feat(job.x0, fs.w);
    for (std::size_t c = 0; c < fs.c; ++c) {
      const float* p = f.plane(0, c);
      double acc = 0.0;
      for (std::size_t y = fy0; y < fy1; ++y)
        for (std::size_t x = fx0; x < fx1; ++x) acc += p[y * fs.w + x];
      sums[c] += acc;
    }
  }
  const double area = static_cast<double>(to_feat(image_h, fs.h) * to_feat(image_w, fs.w));
  Tensor pooled({1, fs.c, 1, 1});
  for (std::size_t c = 0; c < fs.c; ++c) pooled.at(0, c, 0, 0) = static_cast<float>(sums[c] / area);
  return pooled;
}

}  // namespace

Tensor run_tiled(const Network& net, const Tensor& x, const TileOptions& options, bool clamp) {
  const ModelSpec& spec = net.spec();
  if (options.tile <= 0) return net.run(x, clamp);
  if (options.overlap < 0 || 2 * options.overlap >= options.tile)
    fail(ErrorKind::Argument, "tile overlap must satisfy 0 <= overlap < tile / 2");
  const auto tile = static_cast<std::size_t>(options.tile);
  const auto overlap = static_cast<std::size_t>(options.overlap);
  const auto multiple = static_cast<std::size_t>(spatial_multiple(spec));
  if (tile > x.h() || tile > x.w())
    fail(ErrorKind::Argument, "tile " + std::to_string(tile) + " is larger than the image " + x.shape().str());
  if (tile % multiple != 0 || (2 * overlap) % multiple != 0 || x.h() % multiple != 0 || x.w() % multiple != 0)
    fail(ErrorKind::Argument, "tile, 2 * overlap and image sides must be multiples of " + std::to_string(multiple));

  const auto scale = static_cast<std::size_t>(spec.scale);
  const Shape4 out_shape{x.n(), x.c(), x.h() * scale, x.w() * scale};
  std::vector<double> acc(out_shape.count(), 0.0);
  std::vector<double> wsum(out_shape.n * out_shape.plane(), 0.0);

  const auto ys = origins(x.h(), tile, overlap);
  const auto xs = origins(x.w(), tile, overlap);
  const auto own_y = owned(ys, tile, x.h());
  const auto own_x = owned(xs, tile, x.w());

  auto crop = [&](std::size_t n, std::size_t ty, std::size_t tx) {
    Tensor t({1, x.c(), tile, tile});
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t y = 0; y < tile; ++y)
        std::copy_n(x.plane(n, c) + (ty + y) * x.w() + tx, tile, t.plane(0, c) + y * tile);
    return t;
  };

  auto blend = [&](std::size_t n, std::size_t ty, std::size_t tx, const Tensor& out) {
    const auto wy = axis_weights(ty, tile, x.h(), scale, overlap);
    const auto wx = axis_weights(tx, tile, x.w(), scale, overlap);
    const std::size_t ot = tile * scale;
    for (std::size_t y = 0; y < ot; ++y) {
      const std::size_t oy = ty * scale + y;
      for (std::size_t xx = 0; xx < ot; ++xx) {
        const double w = wy[y] * wx[xx];
        if (w == 0.0) continue;
        const std::size_t ox = tx * scale + xx;
        wsum[n * out_shape.plane() + oy * out_shape.w + ox] += w;
        for (std::size_t c = 0; c < out_shape.c; ++c)
          acc[((n * out_shape.c + c) * out_shape.h + oy) * out_shape.w + ox] +=
              w * static_cast<double>(out.at(0, c, y, xx));
      }
    }
  };

  for (std::size_t n = 0; n < x.n(); ++n) {
    if (options.sync_pool) {
      std::vector<TileJob> jobs;
      for (std::size_t i = 0; i < ys.size(); ++i)
        for (std::size_t j = 0; j < xs.size(); ++j)
          jobs.push_back({ys[i], xs[j], own_y[i], own_x[j], net.start(crop(n, ys[i], xs[j]))});
      for (;;) {
        bool pending = false;
        for (auto& job : jobs) pending = net.advance(job.state);
        if (!pending) break;
        const Tensor pooled = shared_means(jobs, tile, x.h(), x.w());
        for (auto& job : jobs) net.apply_pooled(job.state, pooled);
      }
      for (const auto& job : jobs) blend(n, job.y0, job.x0, job.state.cur);
    } else {
      for (std::size_t ty : ys)
        for (std::size_t tx : xs) blend(n, ty, tx, net.run(crop(n, ty, tx), false));
    }
  }

  Tensor result(out_shape);
  for (std::size_t n = 0; n < out_shape.n; ++n)
    for (std::size_t c = 0; c < out_shape.c; ++c)
      for (std::size_t i = 0; i < out_shape.plane(); ++i) {
        float v = static_cast<float>(acc[(n * out_shape.c + c) * out_shape.plane() + i] /
                                     wsum[n * out_shape.plane() + i]);
        if (clamp) v = std::clamp(v, 0.0f, 1.0f);
        result.plane(n, c)[i] = v;
      }
  return result;
}

}  // namespace rawlab::model
