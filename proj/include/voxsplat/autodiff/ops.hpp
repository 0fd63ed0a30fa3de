#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "voxsplat/autodiff/tensor.hpp"

namespace voxsplat::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Products run on owned (fully aligned) copies: Eigen's vectorized kernels
// split work by the address alignment of their operands, so products on
// mapped tensor buffers could round differently from run to run.
inline RowMat owned(const double* p, Eigen::Index rows, Eigen::Index cols) { return ConstMapMat(p, rows, cols); }

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
    const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` aligned to `out`'s rank, zero along broadcast dimensions.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = out.size() - 1 - k;
    strides[o] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

/// Calls fn(out_index, a_index, b_index) over every element of the broadcast result.
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const std::size_t n = numel_of(out);
  if (a == out && b == out) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  if (a == out && numel_of(b) == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, i, std::size_t{0});
    return;
  }
  if (b == out && numel_of(a) == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0}, i);
    return;
  }
  if (a == out && b.size() == 1 && !out.empty() && b[0] == out.back() && b[0] > 1) {
    const std::size_t m = b[0];
    for (std::size_t i = 0; i < n; ++i) fn(i, i, i % m);
    return;
  }
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(out_shape);
  {
    auto o = out.data();
    const auto av = a.data();
    const auto bv = b.data();
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = fwd(av[ia], bv[ib]); });
  }
  if (Tape::any_requires_grad({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, out_shape, da, db]() mutable {
      const auto g = out.grad();
      const auto av = a.data();
      const auto bv = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
          ga[ia] += g[i] * da(av[ia], bv[ib]);
        });
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for_each_broadcast(out_shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
          gb[ib] += g[i] * db(av[ia], bv[ib]);
        });
      }
    });
  }
  return out;
}

/// Elementwise unary op; `deriv(x, y)` gets the input and the forward output.
template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape());
  {
    auto o = out.data();
    const auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(xv[i]);
  }
  if (x.requires_grad()) {
    tape.record({x}, out, [x, out, deriv]() mutable {
      const auto g = out.grad();
      const auto xv = x.data();
      const auto yv = out.data();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return detail::binary(
      t, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return detail::binary(
      t, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return detail::binary(
      t, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(Tape& t, const Tensor& a, const Tensor& b) {
  return detail::binary(
      t, a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor scale(Tape& t, const Tensor& x, double s) {
  return detail::unary(
      t, x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(Tape& t, const Tensor& x, double s) {
  return detail::unary(
      t, x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor square(Tape& t, const Tensor& x) {
  return detail::unary(
      t, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor leaky_relu(Tape& t, const Tensor& x, double slope) {
  return detail::unary(
      t, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

inline double sigmoid_value(double v) {
  const double c = std::clamp(v, -40.0, 40.0);
  return 1.0 / (1.0 + std::exp(-c));
}

/// Logistic function; the input is clamped to [-40, 40] (zero slope outside).
inline Tensor sigmoid(Tape& t, const Tensor& x) {
  return detail::unary(
      t, x, [](double v) { return sigmoid_value(v); },
      [](double v, double y) { return (v < -40.0 || v > 40.0) ? 0.0 : y * (1.0 - y); });
}

inline Tensor exp(Tape& t, const Tensor& x) {
  return detail::unary(
      t, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(Tape& t, const Tensor& x) {
  return detail::unary(
      t, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor abs(Tape& t, const Tensor& x) {
  return detail::unary(
      t, x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// max(x, s) elementwise; the gradient goes to x where x > s.
inline Tensor max_with_scalar(Tape& t, const Tensor& x, double s) {
  return detail::unary(
      t, x, [s](double v) { return std::max(v, s); }, [s](double v, double) { return v > s ? 1.0 : 0.0; });
}

inline Tensor sum(Tape& t, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (x.requires_grad()) {
    t.record({x}, out, [x, out]() mutable {
      const double g = out.grad()[0];
      for (auto& gx : x.grad()) gx += g;
    });
  }
  return out;
}

inline Tensor mean(Tape& t, const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(t, sum(t, x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor reshape(Tape& t, const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape), x.values());
  if (x.requires_grad()) {
    t.record({x}, out, [x, out]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

/// General axis permutation: out.shape[i] = x.shape[axes[i]].
inline Tensor permute(Tape& t, const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch for " + shape_str(x.shape()));
  Shape out_shape(rank);
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * x.shape()[d];
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank) throw ShapeError("permute: axis out of range");
    out_shape[i] = x.shape()[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  std::vector<std::size_t> map(x.numel());
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
      map[i] = src;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out = Tensor::zeros(out_shape);
  auto o = out.data();
  const auto xv = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) o[i] = xv[map[i]];
  if (x.requires_grad()) {
    t.record({x}, out, [x, out, map]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += g[i];
    });
  }
  return out;
}

/// Sub-range [begin, end) along `axis`.
inline Tensor slice(Tape& t, const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: bad range on " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t span_in = x.dim(axis) * inner;
  const std::size_t span_out = (end - begin) * inner;
  Tensor out = Tensor::zeros(out_shape);
  auto o = out.data();
  const auto xv = x.data();
  for (std::size_t a = 0; a < outer; ++a)
    std::copy_n(xv.begin() + a * span_in + begin * inner, span_out, o.begin() + a * span_out);
  if (x.requires_grad()) {
    t.record({x}, out, [x, out, outer, inner, span_in, span_out, begin]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t k = 0; k < span_out; ++k) gx[a * span_in + begin * inner + k] += g[a * span_out + k];
    });
  }
  return out;
}

inline Tensor concat(Tape& t, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat: rank mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
    for (std::size_t d = 0; d < ref.size(); ++d) {
      if (d != axis && p.dim(d) != ref[d]) {
        throw ShapeError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(p.shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t row = out_shape[axis] * inner;
  Tensor out = Tensor::zeros(out_shape);
  auto o = out.data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.dim(axis) * inner;
    const auto pv = p.data();
    for (std::size_t a = 0; a < outer; ++a) std::copy_n(pv.begin() + a * w, w, o.begin() + a * row + off);
    off += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (any) {
    t.record(parts, out, [parts, out, offsets, outer, inner, row, axis]() mutable {
      const auto g = out.grad();
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (!parts[k].requires_grad()) continue;
        auto gp = parts[k].grad();
        const std::size_t w = parts[k].dim(axis) * inner;
        for (std::size_t a = 0; a < outer; ++a)
          for (std::size_t i = 0; i < w; ++i) gp[a * w + i] += g[a * row + offsets[k] + i];
      }
    });
  }
  return out;
}

/// [N, K] x [K, M] -> [N, M].
inline Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
  {
    const detail::RowMat prod = detail::owned(a.data().data(), n, k) * detail::owned(b.data().data(), k, m);
    detail::MapMat(out.data().data(), n, m) = prod;
  }
  if (Tape::any_requires_grad({&a, &b})) {
    t.record({a, b}, out, [a, b, out, n, k, m]() mutable {
      const detail::RowMat g = detail::owned(out.grad().data(), n, m);
      if (a.requires_grad()) {
        const detail::RowMat ga = g * detail::owned(b.data().data(), k, m).transpose();
        detail::MapMat(a.grad().data(), n, k) += ga;
      }
      if (b.requires_grad()) {
        const detail::RowMat gb = detail::owned(a.data().data(), n, k).transpose() * g;
        detail::MapMat(b.grad().data(), k, m) += gb;
      }
    });
  }
  return out;
}

/// 2D convolution by im2col + matmul. x: [N, C, H, W], weight: [O, C, kh, kw],
/// bias: [O] or undefined.
inline Tensor conv2d(Tape& t, const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t pad) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(1) != x.dim(1) || stride == 0) {
    throw ShapeError("conv2d: incompatible input " + shape_str(x.shape()) + " and weight " + shape_str(weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
  }
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
  if (H + 2 * pad < KH || W + 2 * pad < KW) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t HO = (H + 2 * pad - KH) / stride + 1;
  const std::size_t WO = (W + 2 * pad - KW) / stride + 1;
  const std::size_t CK = C * KH * KW;
  const std::size_t P = HO * WO;

  // Source offset into one sample of x for each (col row, output pixel); -1 = padding.
  std::vector<std::int64_t> src(CK * P, -1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < KH; ++ky)
      for (std::size_t kx = 0; kx < KW; ++kx) {
        const std::size_t r = (c * KH + ky) * KW + kx;
        for (std::size_t oy = 0; oy < HO; ++oy)
          for (std::size_t ox = 0; ox < WO; ++ox) {
            const auto iy = static_cast<std::int64_t>(oy * stride + ky) - static_cast<std::int64_t>(pad);
            const auto ix = static_cast<std::int64_t>(ox * stride + kx) - static_cast<std::int64_t>(pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::int64_t>(H) && ix < static_cast<std::int64_t>(W)) {
              src[r * P + oy * WO + ox] = static_cast<std::int64_t>((c * H + static_cast<std::size_t>(iy)) * W +
                                                                    static_cast<std::size_t>(ix));
            }
          }
      }

  const std::size_t sample_in = C * H * W;
  auto im2col = [CK, P, sample_in](std::span<const double> xv, std::size_t n, const std::vector<std::int64_t>& idx) {
    detail::RowMat cols(CK, P);
    double* cp = cols.data();
    for (std::size_t i = 0; i < CK * P; ++i) cp[i] = idx[i] >= 0 ? xv[n * sample_in + static_cast<std::size_t>(idx[i])] : 0.0;
    return cols;
  };

  Tensor out = Tensor::zeros({N, O, HO, WO});
  const detail::RowMat wmat = detail::owned(weight.data().data(), O, CK);
  for (std::size_t n = 0; n < N; ++n) {
    detail::MapMat on(out.data().data() + n * O * P, O, P);
    const detail::RowMat prod = wmat * im2col(x.data(), n, src);
    on = prod;
    if (bias.defined()) {
      for (std::size_t o = 0; o < O; ++o) on.row(o).array() += bias.data()[o];
    }
  }

  if (Tape::any_requires_grad({&x, &weight, &bias})) {
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    t.record(inputs, out, [x, weight, bias, out, src, N, O, CK, P, sample_in, im2col]() mutable {
      const auto g = out.grad();
      const detail::RowMat wmat = detail::owned(weight.data().data(), O, CK);
      for (std::size_t n = 0; n < N; ++n) {
        const detail::RowMat gn = detail::owned(g.data() + n * O * P, O, P);
        if (weight.requires_grad()) {
          const detail::RowMat gw = gn * im2col(x.data(), n, src).transpose();
          detail::MapMat(weight.grad().data(), O, CK) += gw;
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t o = 0; o < O; ++o) gb[o] += gn.row(o).sum();
        }
        if (x.requires_grad()) {
          const detail::RowMat gcols = wmat.transpose() * gn;
          auto gx = x.grad();
          const double* gc = gcols.data();
          for (std::size_t i = 0; i < CK * P; ++i) {
            if (src[i] >= 0) gx[n * sample_in + static_cast<std::size_t>(src[i])] += gc[i];
          }
        }
      }
    });
  }
  return out;
}

struct SamplePoint {
  double x = 0.0;  // column coordinate, texel centers at integers
  double y = 0.0;  // row coordinate
};

namespace detail {

struct BilinearTaps {
  std::array<std::size_t, 4> index{};  // texel (row-major H x W) per tap
  std::array<double, 4> weight{};
};

inline BilinearTaps bilinear_taps(std::size_t height, std::size_t width, SamplePoint p) {
  const double x = std::clamp(p.x, 0.0, static_cast<double>(width - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(height - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const std::size_t x1 = std::min(x0 + 1, width - 1);
  const std::size_t y1 = std::min(y0 + 1, height - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  return {{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1},
          {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy}};
}

}  // namespace detail

/// Samples an [H, W, D] grid at fractional coordinates with border
/// replication -> [N, D]. Coordinates are constants; gradients reach the
/// (at most four) touched texels.
inline Tensor bilinear_sample(Tape& t, const Tensor& grid, const std::vector<SamplePoint>& points) {
  if (grid.rank() != 3 || grid.dim(0) == 0 || grid.dim(1) == 0) {
    throw ShapeError("bilinear_sample: grid must be [H, W, D], got " + shape_str(grid.shape()));
  }
  const std::size_t H = grid.dim(0), W = grid.dim(1), D = grid.dim(2);
  std::vector<detail::BilinearTaps> taps;
  taps.reserve(points.size());
  for (const auto& p : points) taps.push_back(detail::bilinear_taps(H, W, p));
  Tensor out = Tensor::zeros({points.size(), D});
  auto o = out.data();
  const auto gv = grid.data();
  for (std::size_t n = 0; n < taps.size(); ++n)
    for (int k = 0; k < 4; ++k) {
      const double w = taps[n].weight[k];
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < D; ++d) o[n * D + d] += w * gv[taps[n].index[k] * D + d];
    }
  if (grid.requires_grad()) {
    t.record({grid}, out, [grid, out, taps, D]() mutable {
      const auto g = out.grad();
      auto gg = grid.grad();
      for (std::size_t n = 0; n < taps.size(); ++n)
        for (int k = 0; k < 4; ++k) {
          const double w = taps[n].weight[k];
          if (w == 0.0) continue;
          for (std::size_t d = 0; d < D; ++d) gg[taps[n].index[k] * D + d] += w * g[n * D + d];
        }
    });
  }
  return out;
}

/// out[i] = mean of rows x[groups[i]] ([N, D] -> [groups.size(), D]); empty groups give 0.
inline Tensor row_mean(Tape& t, const Tensor& x, const std::vector<std::vector<std::uint32_t>>& groups) {
  if (x.rank() != 2) throw ShapeError("row_mean: expected [N, D], got " + shape_str(x.shape()));
  const std::size_t D = x.dim(1);
  Tensor out = Tensor::zeros({groups.size(), D});
  auto o = out.data();
  const auto xv = x.data();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty()) continue;
    const double inv = 1.0 / static_cast<double>(groups[i].size());
    for (auto r : groups[i]) {
      if (r >= x.dim(0)) throw ShapeError("row_mean: row index out of range");
      for (std::size_t d = 0; d < D; ++d) o[i * D + d] += inv * xv[r * D + d];
    }
  }
  if (x.requires_grad()) {
    t.record({x}, out, [x, out, groups, D]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i].empty()) continue;
        const double inv = 1.0 / static_cast<double>(groups[i].size());
        for (auto r : groups[i])
          for (std::size_t d = 0; d < D; ++d) gx[r * D + d] += inv * g[i * D + d];
      }
    });
  }
  return out;
}

}  // namespace voxsplat::ad
