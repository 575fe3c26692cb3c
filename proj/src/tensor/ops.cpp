#include "qcomp/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qcomp/errors.hpp"

namespace qcomp::ops {
namespace {

// out[n×m] += a[n×k] · b[k×m]. Every output element accumulates its k terms in
// ascending order, so results do not depend on buffer addresses or sizes.
void gemm_nn(const double* a, const double* b, double* out, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += aip * bp[j];
    }
  }
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

struct Extent {
  std::size_t rows;
  std::size_t cols;
};

Extent extent_of(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

bool is_single(const Shape& s) { return shape_size(s) == 1; }

template <typename Fn>
Tensor binary(const Tensor& a, const Tensor& b, Fn fn) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(a[i], b[i]);
    return out;
  }
  const Extent ea = extent_of(a.shape());
  const Extent eb = extent_of(b.shape());
  const Extent eo = extent_of(out_shape);
  const bool single_a = is_single(a.shape());
  const bool single_b = is_single(b.shape());
  for (std::size_t r = 0; r < eo.rows; ++r) {
    for (std::size_t c = 0; c < eo.cols; ++c) {
      const double va = single_a ? a[0] : a[(ea.rows == 1 ? 0 : r) * ea.cols + (ea.cols == 1 ? 0 : c)];
      const double vb = single_b ? b[0] : b[(eb.rows == 1 ? 0 : r) * eb.cols + (eb.cols == 1 ? 0 : c)];
      out[r * eo.cols + c] = fn(va, vb);
    }
  }
  return out;
}

template <typename Fn>
Tensor unary(const Tensor& a, Fn fn) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = fn(a[i]);
  return out;
}

// Decomposes x into (outer, axis_len, inner) so that element (o, k, i) lives at
// o * axis_len * inner + k * inner + i.
struct AxisView {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisView axis_view(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(x.shape()));
  }
  if (x.rank() == 1) return {1, x.dim(0), 1};
  return axis == 0 ? AxisView{1, x.dim(0), x.dim(1)} : AxisView{x.dim(0), x.dim(1), 1};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  if (out.empty()) return out;
  if (a.cols() == 0) return out;
  gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt inner dimensions disagree: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  if (out.empty() || a.cols() == 0) return out;
  const Tensor bt = transpose(b);
  gemm_nn(a.data(), bt.data(), out.data(), a.rows(), a.cols(), b.rows());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn inner dimensions disagree: " + shape_string(a.shape()) + "^T x " +
                         shape_string(b.shape()));
  }
  Tensor out({a.cols(), b.cols()});
  if (out.empty() || a.rows() == 0) return out;
  const std::size_t n = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* ap = a.data() + p * n;
    const double* bp = b.data() + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = ap[i];
      double* o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += api * bp[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_single(b)) return a;
  if (is_single(a)) return b;
  const Extent ea = extent_of(a);
  const Extent eb = extent_of(b);
  auto merge = [&](std::size_t x, std::size_t y) -> std::size_t {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    throw DimensionError("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
  };
  const std::size_t rows = merge(ea.rows, eb.rows);
  const std::size_t cols = merge(ea.cols, eb.cols);
  if (a.size() == 1 && b.size() == 1) return {cols};
  return {rows, cols};
}

Tensor reduce_to_shape(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out(target);
  if (is_single(target)) {
    out[0] = sum(grad);
    return out;
  }
  const Extent eg = extent_of(grad.shape());
  const Extent et = extent_of(target);
  for (std::size_t r = 0; r < eg.rows; ++r) {
    for (std::size_t c = 0; c < eg.cols; ++c) {
      out[(et.rows == 1 ? 0 : r) * et.cols + (et.cols == 1 ? 0 : c)] += grad[r * eg.cols + c];
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.values()) {
    if (v == 0.0) throw NumericError("division by zero");
  }
  return binary(a, b, [](double x, double y) { return x / y; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  }
  return unary(a, [](double x) { return std::log(x); });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
}

Tensor softmax_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x, axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, x[base + k * v.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double e = std::exp(x[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] /= total;
    }
  }
  return out;
}

Tensor log_softmax_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x, axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < v.len; ++k) mx = std::max(mx, x[base + k * v.inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) total += std::exp(x[base + k * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] = x[base + k * v.inner] - lse;
    }
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) {
      throw IndexError("gather_rows index " + std::to_string(idx[i]) + " out of range for " + std::to_string(n) +
                       " rows");
    }
    std::copy_n(x.data() + idx[i] * d, d, out.data() + i * d);
  }
  return out;
}

Tensor concat_axis(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank()) throw DimensionError("concat_axis rank mismatch");
  if (axis >= a.rank()) throw DimensionError("concat_axis axis out of range");
  if (a.rank() == 1) {
    std::vector<double> data(a.values().begin(), a.values().end());
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor::vector(std::move(data));
  }
  // An operand with a zero-sized dimension is the concatenation identity.
  if (a.empty() && a.dim(axis) == 0 && (a.dim(1 - axis) == b.dim(1 - axis) || a.dim(1 - axis) == 0)) return b;
  if (b.empty() && b.dim(axis) == 0 && (b.dim(1 - axis) == a.dim(1 - axis) || b.dim(1 - axis) == 0)) return a;
  const std::size_t other = 1 - axis;
  if (a.dim(other) != b.dim(other)) {
    throw DimensionError("concat_axis shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                         " differ off axis " + std::to_string(axis));
  }
  if (axis == 0) {
    Tensor out({a.rows() + b.rows(), a.cols()});
    std::copy(a.values().begin(), a.values().end(), out.data());
    std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
    return out;
  }
  Tensor out({a.rows(), a.cols() + b.cols()});
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.data() + r * a.cols(), a.cols(), out.data() + r * out.cols());
    std::copy_n(b.data() + r * b.cols(), b.cols(), out.data() + r * out.cols() + a.cols());
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  if (begin > end || end > x.cols()) throw IndexError("slice_cols range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({x.rows(), w});
  for (std::size_t r = 0; r < x.rows(); ++r) std::copy_n(x.data() + r * x.cols() + begin, w, out.data() + r * w);
  return out;
}

ExtremaResult reduce_extrema_axis(const Tensor& x, std::size_t axis, Extremum mode) {
  const AxisView v = axis_view(x, axis);
  ExtremaResult res;
  Shape out_shape = x.rank() == 1 ? Shape{1} : (axis == 0 ? Shape{1, x.dim(1)} : Shape{x.dim(0), 1});
  res.values = Tensor(out_shape);
  res.indices.assign(v.outer * v.inner, 0);
  if (v.len == 0) throw DimensionError("reduce_extrema_axis over an empty axis");
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      std::size_t best = 0;
      double best_v = x[base];
      for (std::size_t k = 1; k < v.len; ++k) {
        const double val = x[base + k * v.inner];
        if (mode == Extremum::kMax ? val > best_v : val < best_v) {
          best_v = val;
          best = k;
        }
      }
      res.values[o * v.inner + i] = best_v;
      res.indices[o * v.inner + i] = best;
    }
  }
  return res;
}

double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

double mean(const Tensor& x) {
  if (x.empty()) throw ContractError("mean of an empty tensor");
  return sum(x) / static_cast<double>(x.size());
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t c = x.cols();
  if (gain.size() != c || bias.size() != c) throw DimensionError("layer_norm gain/bias length mismatch");
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* row = x.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = (row[j] - mu) * inv * gain[j] + bias[j];
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_matrix(weight, "linear weight");
  if (bias.size() != weight.rows()) throw DimensionError("linear bias length mismatch");
  const Tensor x2 = x.rank() == 1 ? x.reshaped({1, x.size()}) : x;
  Tensor out = matmul_nt(x2, weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bias[c];
  }
  return x.rank() == 1 ? out.reshaped({out.size()}) : out;
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> ids, std::size_t count) {
  require_matrix(x, "segment_mean");
  if (ids.size() != x.rows()) throw DimensionError("segment_mean needs one id per row");
  const std::size_t c = x.cols();
  Tensor out({count, c});
  std::vector<std::size_t> card(count, 0);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= count) throw IndexError("segment id out of range");
    ++card[ids[r]];
    double* dst = out.data() + ids[r] * c;
    const double* src = x.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  for (std::size_t s = 0; s < count; ++s) {
    if (card[s] == 0) throw ContractError("segment " + std::to_string(s) + " is empty");
    const double n = static_cast<double>(card[s]);
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= n;
  }
  return out;
}

}  // namespace qcomp::ops
