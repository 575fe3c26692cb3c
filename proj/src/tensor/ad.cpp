#include "qcomp/tensor/ad.hpp"

#include <cmath>
#include <utility>

#include "qcomp/errors.hpp"

namespace qcomp::ad {
namespace {

Graph& graph_of(Var a) {
  if (!a.graph) throw ContractError("unbound Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph || !a.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

// Elementwise unary op whose derivative is a function of input and output.
template <typename Deriv>
Var unary(std::string_view tag, Var a, Tensor out, Deriv deriv) {
  Graph& g = graph_of(a);
  const std::size_t pa = a.id;
  return g.record(tag, std::move(out), {a}, [pa, deriv](Graph& gr, std::size_t self) {
    if (!gr.requires_grad(pa)) return;
    const Tensor& up = gr.upstream(self);
    const Tensor& x = gr.value(pa);
    const Tensor& y = gr.value(self);
    Tensor& dst = gr.grad_buffer(pa);
    for (std::size_t i = 0; i < up.size(); ++i) dst[i] += up[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("matmul", ops::matmul(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::matmul_nt(up, gr.value(pb)));
    if (gr.requires_grad(pb)) gr.accumulate(pb, ops::matmul_tn(gr.value(pa), up));
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("matmul_nt", ops::matmul_nt(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::matmul(up, gr.value(pb)));
    if (gr.requires_grad(pb)) gr.accumulate(pb, ops::matmul_tn(up, gr.value(pa)));
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const std::size_t pa = a.id;
  return g.record("transpose", ops::transpose(a.value()), {a}, [pa](Graph& gr, std::size_t self) {
    gr.accumulate(pa, ops::transpose(gr.upstream(self)));
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("add", ops::add(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::reduce_to_shape(up, gr.value(pa).shape()));
    if (gr.requires_grad(pb)) gr.accumulate(pb, ops::reduce_to_shape(up, gr.value(pb).shape()));
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("sub", ops::sub(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::reduce_to_shape(up, gr.value(pa).shape()));
    if (gr.requires_grad(pb)) gr.accumulate(pb, ops::reduce_to_shape(ops::scale(up, -1.0), gr.value(pb).shape()));
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("mul", ops::mul(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::reduce_to_shape(ops::mul(up, gr.value(pb)), gr.value(pa).shape()));
    if (gr.requires_grad(pb)) gr.accumulate(pb, ops::reduce_to_shape(ops::mul(up, gr.value(pa)), gr.value(pb).shape()));
  });
}

Var div(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("div", ops::div(a.value(), b.value()), {a, b}, [pa, pb](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    const Tensor& bv = gr.value(pb);
    if (gr.requires_grad(pa)) gr.accumulate(pa, ops::reduce_to_shape(ops::div(up, bv), gr.value(pa).shape()));
    if (gr.requires_grad(pb)) {
      // d(a/b)/db = -(a/b)/b
      const Tensor t = ops::div(ops::mul(up, gr.value(self)), bv);
      gr.accumulate(pb, ops::reduce_to_shape(ops::scale(t, -1.0), bv.shape()));
    }
  });
}

Var scale(Var a, double factor) {
  return unary("scale", a, ops::scale(a.value(), factor), [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  Tensor out = a.value();
  for (double& v : out.values()) v += value;
  return unary("add_scalar", a, std::move(out), [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, ops::sigmoid(a.value()), [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary("relu", a, ops::relu(a.value()), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary("exp", a, ops::exp(a.value()), [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, ops::log(a.value()), [](double x, double) { return 1.0 / x; });
}

Var softplus(Var a) {
  return unary("softplus", a, ops::softplus(a.value()), [](double x, double) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Var square(Var a) {
  return unary("square", a, ops::mul(a.value(), a.value()), [](double x, double) { return 2.0 * x; });
}

Var softmax_axis(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  return g.record("softmax", ops::softmax_axis(x.value(), axis), {x}, [px, axis](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    const Tensor& y = gr.value(self);
    const Tensor prod = ops::mul(up, y);
    // dx = y ⊙ (up − Σ_axis up ⊙ y)
    Tensor dx(y.shape());
    if (y.rank() == 1) {
      const double s = ops::sum(prod);
      for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] * (up[i] - s);
    } else if (axis == 1) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) s += prod(r, c);
        for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) = y(r, c) * (up(r, c) - s);
      }
    } else {
      for (std::size_t c = 0; c < y.cols(); ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) s += prod(r, c);
        for (std::size_t r = 0; r < y.rows(); ++r) dx(r, c) = y(r, c) * (up(r, c) - s);
      }
    }
    gr.accumulate(px, dx);
  });
}

Var log_softmax_axis(Var x, std::size_t axis) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  return g.record("log_softmax", ops::log_softmax_axis(x.value(), axis), {x}, [px, axis](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    const Tensor p = ops::exp(gr.value(self));
    // dx = up − softmax ⊙ Σ_axis up
    Tensor dx(p.shape());
    if (p.rank() == 1) {
      const double s = ops::sum(up);
      for (std::size_t i = 0; i < p.size(); ++i) dx[i] = up[i] - p[i] * s;
    } else if (axis == 1) {
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) s += up(r, c);
        for (std::size_t c = 0; c < p.cols(); ++c) dx(r, c) = up(r, c) - p(r, c) * s;
      }
    } else {
      for (std::size_t c = 0; c < p.cols(); ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < p.rows(); ++r) s += up(r, c);
        for (std::size_t r = 0; r < p.rows(); ++r) dx(r, c) = up(r, c) - p(r, c) * s;
      }
    }
    gr.accumulate(px, dx);
  });
}

Var gather_rows(Var x, std::vector<std::size_t> idx) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  Tensor out = ops::gather_rows(x.value(), idx);
  return g.record("gather_rows", std::move(out), {x}, [px, idx = std::move(idx)](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    Tensor& dst = gr.grad_buffer(px);
    const std::size_t d = up.cols();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) dst[idx[i] * d + j] += up[i * d + j];
    }
  });
}

Var concat_axis(Var a, Var b, std::size_t axis) {
  Graph& g = graph_of(a, b);
  const std::size_t pa = a.id, pb = b.id;
  return g.record("concat", ops::concat_axis(a.value(), b.value(), axis), {a, b},
                  [pa, pb, axis](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    const Tensor& av = gr.value(pa);
                    const Tensor& bv = gr.value(pb);
                    if (up.rank() == 1 || axis == 0) {
                      // Row-major contiguous split.
                      if (gr.requires_grad(pa) && !av.empty()) {
                        Tensor ga(av.shape());
                        std::copy_n(up.data(), av.size(), ga.data());
                        gr.accumulate(pa, ga);
                      }
                      if (gr.requires_grad(pb) && !bv.empty()) {
                        Tensor gb(bv.shape());
                        std::copy_n(up.data() + (up.size() - bv.size()), bv.size(), gb.data());
                        gr.accumulate(pb, gb);
                      }
                      return;
                    }
                    const std::size_t ca = av.empty() ? 0 : av.cols();
                    if (gr.requires_grad(pa) && !av.empty()) gr.accumulate(pa, ops::slice_cols(up, 0, ca));
                    if (gr.requires_grad(pb) && !bv.empty()) gr.accumulate(pb, ops::slice_cols(up, ca, up.cols()));
                  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  return g.record("slice_cols", ops::slice_cols(x.value(), begin, end), {x}, [px, begin](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    Tensor& dst = gr.grad_buffer(px);
    const std::size_t w = up.cols();
    const std::size_t c = dst.cols();
    for (std::size_t r = 0; r < up.rows(); ++r) {
      for (std::size_t j = 0; j < w; ++j) dst[r * c + begin + j] += up[r * w + j];
    }
  });
}

Var pick_per_row(Var x, std::vector<std::size_t> cols) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (cols.size() != xv.rows()) throw DimensionError("pick_per_row needs one column per row");
  Tensor out({cols.size()});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= xv.cols()) throw IndexError("pick_per_row column out of range");
    out[r] = xv(r, cols[r]);
  }
  const std::size_t px = x.id;
  return g.record("pick_per_row", std::move(out), {x}, [px, cols = std::move(cols)](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    Tensor& dst = gr.grad_buffer(px);
    for (std::size_t r = 0; r < cols.size(); ++r) dst(r, cols[r]) += up[r];
  });
}

Var row(Var x, std::size_t r) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  if (r >= xv.rows()) throw IndexError("row index out of range");
  Tensor out({1, xv.cols()});
  std::copy_n(xv.data() + r * xv.cols(), xv.cols(), out.data());
  const std::size_t px = x.id;
  return g.record("row", std::move(out), {x}, [px, r](Graph& gr, std::size_t self) {
    const Tensor& up = gr.upstream(self);
    Tensor& dst = gr.grad_buffer(px);
    for (std::size_t j = 0; j < up.size(); ++j) dst[r * up.size() + j] += up[j];
  });
}

Var reduce_extrema_axis(Var x, std::size_t axis, ops::Extremum mode, std::vector<std::size_t>* indices) {
  Graph& g = graph_of(x);
  ops::ExtremaResult res = ops::reduce_extrema_axis(x.value(), axis, mode);
  if (indices) *indices = res.indices;
  const std::size_t px = x.id;
  const Tensor& xv = x.value();
  const bool along_rows = xv.rank() == 1 || axis == 0;
  const std::size_t cols = xv.cols();
  return g.record("reduce_extrema", std::move(res.values), {x},
                  [px, along_rows, cols, idx = std::move(res.indices)](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    Tensor& dst = gr.grad_buffer(px);
                    for (std::size_t o = 0; o < idx.size(); ++o) {
                      const std::size_t flat = along_rows ? idx[o] * cols + o : o * cols + idx[o];
                      dst[flat] += up[o];
                    }
                  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  return g.record("sum", Tensor::scalar(ops::sum(x.value())), {x}, [px](Graph& gr, std::size_t self) {
    const double up = gr.upstream(self)[0];
    Tensor& dst = gr.grad_buffer(px);
    for (double& v : dst.values()) v += up;
  });
}

Var mean(Var x) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  return g.record("mean", Tensor::scalar(ops::mean(x.value())), {x}, [px](Graph& gr, std::size_t self) {
    Tensor& dst = gr.grad_buffer(px);
    const double up = gr.upstream(self)[0] / static_cast<double>(dst.size());
    for (double& v : dst.values()) v += up;
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const std::size_t px = x.id, pg = gain.id, pb = bias.id;
  return g.record("layer_norm", ops::layer_norm(x.value(), gain.value(), bias.value(), eps), {x, gain, bias},
                  [px, pg, pb, eps](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    const Tensor& xv = gr.value(px);
                    const Tensor& gv = gr.value(pg);
                    const std::size_t c = xv.cols();
                    const double n = static_cast<double>(c);
                    Tensor dx(xv.shape()), dg(gv.shape()), db(gv.shape());
                    std::vector<double> xhat(c), gy(c);
                    for (std::size_t r = 0; r < xv.rows(); ++r) {
                      const double* row = xv.data() + r * c;
                      double mu = 0.0;
                      for (std::size_t j = 0; j < c; ++j) mu += row[j];
                      mu /= n;
                      double var = 0.0;
                      for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
                      var /= n;
                      const double inv = 1.0 / std::sqrt(var + eps);
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        xhat[j] = (row[j] - mu) * inv;
                        const double u = up[r * c + j];
                        dg[j] += u * xhat[j];
                        db[j] += u;
                        gy[j] = u * gv[j];
                        s1 += gy[j];
                        s2 += gy[j] * xhat[j];
                      }
                      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] = inv * (gy[j] - s1 / n - xhat[j] * s2 / n);
                    }
                    gr.accumulate(px, dx);
                    gr.accumulate(pg, dg);
                    gr.accumulate(pb, db);
                  });
}

Var linear(Var x, Var weight, Var bias) {
  Graph& g = graph_of(x, weight);
  graph_of(x, bias);
  const std::size_t px = x.id, pw = weight.id, pb = bias.id;
  return g.record("linear", ops::linear(x.value(), weight.value(), bias.value()), {x, weight, bias},
                  [px, pw, pb](Graph& gr, std::size_t self) {
                    const Tensor& xv = gr.value(px);
                    const bool vec = xv.rank() == 1;
                    const Tensor up = vec ? gr.upstream(self).reshaped({1, gr.upstream(self).size()}) : gr.upstream(self);
                    const Tensor x2 = vec ? xv.reshaped({1, xv.size()}) : xv;
                    if (gr.requires_grad(px)) {
                      Tensor dx = ops::matmul(up, gr.value(pw));
                      gr.accumulate(px, vec ? dx.reshaped({dx.size()}) : dx);
                    }
                    if (gr.requires_grad(pw)) gr.accumulate(pw, ops::matmul_tn(up, x2));
                    if (gr.requires_grad(pb)) {
                      Tensor db(gr.value(pb).shape());
                      for (std::size_t r = 0; r < up.rows(); ++r) {
                        for (std::size_t c = 0; c < up.cols(); ++c) db[c] += up(r, c);
                      }
                      gr.accumulate(pb, db);
                    }
                  });
}

Var segment_mean(Var x, std::vector<std::size_t> ids, std::size_t count) {
  Graph& g = graph_of(x);
  const std::size_t px = x.id;
  Tensor out = ops::segment_mean(x.value(), ids, count);
  std::vector<double> card(count, 0.0);
  for (auto s : ids) card[s] += 1.0;
  return g.record("segment_mean", std::move(out), {x},
                  [px, ids = std::move(ids), card = std::move(card)](Graph& gr, std::size_t self) {
                    const Tensor& up = gr.upstream(self);
                    Tensor& dst = gr.grad_buffer(px);
                    const std::size_t c = up.cols();
                    for (std::size_t r = 0; r < ids.size(); ++r) {
                      const double n = card[ids[r]];
                      for (std::size_t j = 0; j < c; ++j) dst[r * c + j] += up[ids[r] * c + j] / n;
                    }
                  });
}

}  // namespace qcomp::ad
