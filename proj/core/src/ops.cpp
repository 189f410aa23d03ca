#include "nacf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nacf::ops {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + detail);
}

/// C[m x n] += A[m x k] . B[k x n]. Zero entries of A are skipped, which
/// keeps masked attention rows exactly independent of excluded keys.
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class T>
std::vector<T> transposed(const T* a, std::size_t m, std::size_t n) {
  std::vector<T> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

template <class T>
Var<T> finish(Tensor<T> out, std::initializer_list<Var<T>> inputs,
              typename Tape<T>::BackwardFn fn, const char* op) {
  check_finite(out, op);
  return inputs.begin()->tape()->record(std::move(out), inputs, std::move(fn));
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    shape_error(op, "axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    shape_error(op, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

template <class T, class F, class D>
Var<T> unary(const Var<T>& x, F f, D dfdy, const char* op) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, dfdy](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& y = tape.value(self);
        const Tensor<T>& xin = tape.value(xi);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdy(xin[i], y[i]);
      },
      op);
}

}  // namespace

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() < 1 || av.rank() > 2 || bv.rank() != 2) {
    shape_error("matmul", "expected matrices, got " + shape_string(av.shape()) + " . " +
                              shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.shape()[0] != k) {
    shape_error("matmul", "inner dims differ: " + shape_string(av.shape()) + " . " +
                              shape_string(bv.shape()));
  }
  Tensor<T> out(av.rank() == 1 ? Shape{n} : Shape{m, n});
  gemm_acc(av.raw(), bv.raw(), out.raw(), m, k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return finish<T>(
      std::move(out), {a, b},
      [ai, bi, m, k, n](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        if (tape.requires_grad(ai)) {
          const auto bt = transposed(tape.value(bi).raw(), k, n);
          gemm_acc(g.raw(), bt.data(), tape.grad_slot(ai).raw(), m, n, k);
        }
        if (tape.requires_grad(bi)) {
          const auto at = transposed(tape.value(ai).raw(), m, k);
          gemm_acc(at.data(), g.raw(), tape.grad_slot(bi).raw(), k, m, n);
        }
      },
      "matmul");
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    shape_error("matmul_nt", shape_string(av.shape()) + " . " + shape_string(bv.shape()) + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor<T> out({m, n});
  const auto bt = transposed(bv.raw(), n, k);
  gemm_acc(av.raw(), bt.data(), out.raw(), m, k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return finish<T>(
      std::move(out), {a, b},
      [ai, bi, m, k, n](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        if (tape.requires_grad(ai)) {
          gemm_acc(g.raw(), tape.value(bi).raw(), tape.grad_slot(ai).raw(), m, n, k);
        }
        if (tape.requires_grad(bi)) {
          const auto gt = transposed(g.raw(), m, n);
          gemm_acc(gt.data(), tape.value(ai).raw(), tape.grad_slot(bi).raw(), n, m, k);
        }
      },
      "matmul_nt");
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return finish<T>(
      std::move(out), {a, b},
      [ai, bi](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        for (std::size_t id : {ai, bi}) {
          if (!tape.requires_grad(id)) continue;
          Tensor<T>& gx = tape.grad_slot(id);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
      },
      "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return finish<T>(
      std::move(out), {a, b},
      [ai, bi](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        if (tape.requires_grad(ai)) {
          Tensor<T>& ga = tape.grad_slot(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tape.requires_grad(bi)) {
          Tensor<T>& gb = tape.grad_slot(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      },
      "sub");
}

template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "hadamard");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return finish<T>(
      std::move(out), {a, b},
      [ai, bi](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        if (tape.requires_grad(ai)) {
          const Tensor<T>& bv = tape.value(bi);
          Tensor<T>& ga = tape.grad_slot(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (tape.requires_grad(bi)) {
          const Tensor<T>& av = tape.value(ai);
          Tensor<T>& gb = tape.grad_slot(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      },
      "hadamard");
}

template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& rv = row.value();
  const std::size_t n = av.cols();
  if (rv.size() != n || rv.rows() != 1) {
    shape_error("add_row", shape_string(av.shape()) + " + row " + shape_string(rv.shape()));
  }
  const std::size_t m = av.size() / n;
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + rv[j];
  const std::size_t ai = a.id(), ri = row.id();
  return finish<T>(
      std::move(out), {a, row},
      [ai, ri, m, n](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        if (tape.requires_grad(ai)) {
          Tensor<T>& ga = tape.grad_slot(ai);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tape.requires_grad(ri)) {
          Tensor<T>& gr = tape.grad_slot(ri);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
        }
      },
      "add_row");
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary<T>(
      a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; }, "scale");
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T{0} ? v : T{0}; },
      [](T v, T) { return v > T{0} ? T{1} : T{0}; }, "relu");
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; }, "tanh");
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); },
      [](T, T y) { return y * (T{1} - y); }, "sigmoid");
}

template <class T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "softmax");
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.extent * s.inner + in;
      T mx = xv[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xv[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, s](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T dot = 0;
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t i = base + e * s.inner;
              dot += g[i] * y[i];
            }
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t i = base + e * s.inner;
              gx[i] += y[i] * (g[i] - dot);
            }
          }
        }
      },
      "softmax");
}

template <class T>
Var<T> masked_softmax(const Var<T>& x, const std::vector<std::uint8_t>& keep) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2 || keep.size() != xv.size()) {
    shape_error("masked_softmax", "mask of " + std::to_string(keep.size()) +
                                      " entries for " + shape_string(xv.shape()));
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = xv.raw() + i * n;
    const std::uint8_t* kr = keep.data() + i * n;
    T* yr = out.raw() + i * n;
    bool any = false;
    T mx = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!kr[j]) continue;
      mx = any ? std::max(mx, xr[j]) : xr[j];
      any = true;
    }
    if (!any) continue;
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!kr[j]) continue;
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (kr[j]) yr[j] /= total;
    }
  }
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, m, n](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < m; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = i * n + j;
            if (y[k] != T{0}) gx[k] += y[k] * (g[k] - dot);
          }
        }
      },
      "masked_softmax");
}

template <class T>
Var<T> log_softmax(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() < 1) shape_error("log_softmax", "empty tensor");
  const std::size_t n = xv.cols(), m = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = xv.raw() + i * n;
    T* yr = out.raw() + i * n;
    T mx = *std::max_element(xr, xr + n);
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xr[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] - lse;
  }
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, m, n](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& y = tape.value(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < m; ++i) {
          T gsum = 0;
          for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = i * n + j;
            gx[k] += g[k] - std::exp(y[k]) * gsum;
          }
        }
      },
      "log_softmax");
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T epsilon) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  if (xv.rank() < 1 || n < 2) {
    shape_error("layer_norm", "last axis must have length >= 2, got " + shape_string(xv.shape()));
  }
  if (gain.size() != n || bias.size() != n) {
    shape_error("layer_norm", "gain/bias length must equal " + std::to_string(n));
  }
  const std::size_t m = xv.size() / n;
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = xv.raw() + i * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(n);
    const T inv = T{1} / std::sqrt(var + epsilon);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mean) * inv;
      xhat[i * n + j] = h;
      out[i * n + j] = gv[j] * h + bv[j];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return finish<T>(
      std::move(out), {x, gain, bias},
      [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        const Tensor<T>& gv = tape.value(gi);
        if (tape.requires_grad(gi)) {
          Tensor<T>& gg = tape.grad_slot(gi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (tape.requires_grad(bi)) {
          Tensor<T>& gb = tape.grad_slot(bi);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
        }
        if (tape.requires_grad(xi)) {
          Tensor<T>& gx = tape.grad_slot(xi);
          const T inv_n = T{1} / static_cast<T>(n);
          for (std::size_t i = 0; i < m; ++i) {
            T sum_d = 0, sum_dh = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gv[j];
              sum_d += d;
              sum_dh += d * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[i * n + j] * gv[j];
              gx[i * n + j] +=
                  inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dh);
            }
          }
        }
      },
      "layer_norm");
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat", "no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_error("concat", "axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", "rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        shape_error("concat", shape_string(s) + " vs " + shape_string(first));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_extent = out_shape[axis];
  Tensor<T> out(out_shape);
  std::vector<std::size_t> ids, offsets, extents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = p.value();
    const std::size_t ext = v.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.raw() + o * ext * inner, ext * inner,
                  out.raw() + (o * out_extent + offset) * inner);
    }
    ids.push_back(p.id());
    offsets.push_back(offset);
    extents.push_back(ext);
    offset += ext;
  }
  check_finite(out, "concat");
  return parts[0].tape()->record(
      std::move(out), parts,
      [ids, offsets, extents, outer, inner, out_extent](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!tape.requires_grad(ids[k])) continue;
          Tensor<T>& gp = tape.grad_slot(ids[k]);
          const std::size_t ext = extents[k];
          for (std::size_t o = 0; o < outer; ++o) {
            const T* src = g.raw() + (o * out_extent + offsets[k]) * inner;
            T* dst = gp.raw() + o * ext * inner;
            for (std::size_t i = 0; i < ext * inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <class T>
Var<T> mean_pool(const Var<T>& x, std::size_t axis) {
  const Tensor<T>& xv = x.value();
  const AxisSplit s = split_axis(xv.shape(), axis, "mean_pool");
  Shape out_shape = xv.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor<T> out(out_shape);
  const T inv = T{1} / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t in = 0; in < s.inner; ++in)
        out[o * s.inner + in] += xv[(o * s.extent + e) * s.inner + in];
    for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] *= inv;
  }
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, s, inv](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t e = 0; e < s.extent; ++e)
            for (std::size_t in = 0; in < s.inner; ++in)
              gx[(o * s.extent + e) * s.inner + in] += g[o * s.inner + in] * inv;
      },
      "mean_pool");
}

template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) shape_error("embedding", "table must be a matrix");
  if (ids.empty()) shape_error("embedding", "empty id list");
  const std::size_t rows = tv.rows(), d = tv.cols();
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw Error(ErrorCode::IndexOutOfVocab,
                  "embedding id " + std::to_string(ids[i]) + " outside table of " +
                      std::to_string(rows) + " rows");
    }
    std::copy_n(tv.raw() + static_cast<std::size_t>(ids[i]) * d, d, out.raw() + i * d);
  }
  const std::size_t ti = table.id();
  std::vector<int> id_copy(ids.begin(), ids.end());
  return finish<T>(
      std::move(out), {table},
      [ti, d, id_copy = std::move(id_copy)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T>& gt = tape.grad_slot(ti);
        for (std::size_t i = 0; i < id_copy.size(); ++i) {
          T* dst = gt.raw() + static_cast<std::size_t>(id_copy[i]) * d;
          const T* src = g.raw() + i * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
      },
      "embedding");
}

template <class T>
Var<T> dropout(const Var<T>& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw Error(ErrorCode::InvalidProbability,
                "dropout probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!train || p == 0.0) return x;
  const Tensor<T>& xv = x.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(xv.shape());
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : T{0};
    out[i] = xv[i] * mask[i];
  }
  const std::size_t xi = x.id();
  return finish<T>(
      std::move(out), {x},
      [xi, mask = std::move(mask)](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
      },
      "dropout");
}

template <class T>
Var<T> sum(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  T total = 0;
  for (T v : xv.data()) total += v;
  const std::size_t xi = x.id();
  return finish<T>(
      Tensor<T>({1}, std::vector<T>{total}), {x},
      [xi](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad(self)[0];
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
      },
      "sum");
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    shape_error("reshape", shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  const std::size_t xi = x.id();
  return finish<T>(
      x.value().reshaped(std::move(shape)), {x},
      [xi](Tape<T>& tape, std::size_t self) {
        const Tensor<T>& g = tape.grad(self);
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      },
      "reshape");
}

template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  const Tensor<T>& xv = x.value();
  if (weights.size() != xv.size()) {
    shape_error("weighted_sum", shape_string(xv.shape()) + " vs weights " +
                                    shape_string(weights.shape()));
  }
  T total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += weights[i] * xv[i];
  const std::size_t xi = x.id();
  return finish<T>(
      Tensor<T>({1}, std::vector<T>{total}), {x},
      [xi, weights](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad(self)[0];
        Tensor<T>& gx = tape.grad_slot(xi);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
      },
      "weighted_sum");
}

template <class T>
Var<T> gather_sum(const Var<T>& x, std::span<const GatherEntry> entries) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  T total = 0;
  for (const auto& e : entries) {
    if (e.row >= m || e.col >= n) {
      throw Error(ErrorCode::IndexOutOfVocab,
                  "gather index (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                      ") outside " + shape_string(xv.shape()));
    }
    total += static_cast<T>(e.weight) * xv[e.row * n + e.col];
  }
  const std::size_t xi = x.id();
  std::vector<GatherEntry> copy(entries.begin(), entries.end());
  return finish<T>(
      Tensor<T>({1}, std::vector<T>{total}), {x},
      [xi, n, copy = std::move(copy)](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad(self)[0];
        Tensor<T>& gx = tape.grad_slot(xi);
        for (const auto& e : copy) gx[e.row * n + e.col] += g * static_cast<T>(e.weight);
      },
      "gather_sum");
}

#define NACF_INSTANTIATE_OPS(T)                                                       \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                               \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                  \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                  \
  template Var<T> hadamard(const Var<T>&, const Var<T>&);                             \
  template Var<T> add_row(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale(const Var<T>&, T);                                            \
  template Var<T> relu(const Var<T>&);                                                \
  template Var<T> tanh(const Var<T>&);                                                \
  template Var<T> sigmoid(const Var<T>&);                                             \
  template Var<T> softmax(const Var<T>&, std::size_t);                                \
  template Var<T> masked_softmax(const Var<T>&, const std::vector<std::uint8_t>&);    \
  template Var<T> log_softmax(const Var<T>&);                                         \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);         \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                       \
  template Var<T> mean_pool(const Var<T>&, std::size_t);                              \
  template Var<T> embedding(const Var<T>&, std::span<const int>);                     \
  template Var<T> dropout(const Var<T>&, double, bool, Rng&);                         \
  template Var<T> sum(const Var<T>&);                                                 \
  template Var<T> reshape(const Var<T>&, Shape);                                      \
  template Var<T> weighted_sum(const Var<T>&, const Tensor<T>&);                      \
  template Var<T> gather_sum(const Var<T>&, std::span<const GatherEntry>);

NACF_INSTANTIATE_OPS(float)
NACF_INSTANTIATE_OPS(double)

#undef NACF_INSTANTIATE_OPS

}  // namespace nacf::ops
