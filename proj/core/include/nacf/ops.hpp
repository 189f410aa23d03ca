#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nacf/rng.hpp"
#include "nacf/tape.hpp"

/// Differentiable operations over tape-recorded values. Every op validates
/// shapes (ShapeMismatch) and rejects non-finite results (NonFinite).
namespace nacf::ops {

/// [m x k] . [k x n]. A rank-1 left operand is treated as one row and the
/// result is rank-1.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// [m x k] . [n x k]^T -> [m x n].
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b);
/// Adds the vector `row` (length = last dim of `a`) to every row of `a`.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <class T>
Var<T> scale(const Var<T>& a, T factor);

template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> tanh(const Var<T>& x);
template <class T>
Var<T> sigmoid(const Var<T>& x);

/// Max-subtracted softmax along `axis`.
template <class T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Row softmax of a [m x n] matrix over the entries with keep[i*n+j] != 0.
/// Excluded entries come out exactly zero.
template <class T>
Var<T> masked_softmax(const Var<T>& x, const std::vector<std::uint8_t>& keep);

/// log(softmax) along the last axis.
template <class T>
Var<T> log_softmax(const Var<T>& x);

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                  T epsilon = T(1e-5));

template <class T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

/// Mean over `axis`; the axis is removed from the shape.
template <class T>
Var<T> mean_pool(const Var<T>& x, std::size_t axis);

/// Rows of `table` selected by `ids` -> [ids.size() x d].
template <class T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids);

/// Inverted dropout. Identity (same handle) when `train` is false or p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, double p, bool train, Rng& rng);

template <class T>
Var<T> sum(const Var<T>& x);

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// sum_i weights[i] * x[i] as a scalar; `weights` is a constant.
template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

struct GatherEntry {
  std::size_t row;
  std::size_t col;
  double weight;
};

/// sum_e weight_e * x[row_e, col_e] over a [m x n] matrix. Used for
/// token-level negative log-likelihoods.
template <class T>
Var<T> gather_sum(const Var<T>& x, std::span<const GatherEntry> entries);

}  // namespace nacf::ops
