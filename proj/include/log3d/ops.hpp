// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "log3d/tensor.hpp"

namespace log3d::ad {

// Elementwise ops; operands must have identical shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
/// x * sigmoid(x)
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// x[R,in] * w[out,in]^T + b[out] -> [R,out]
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Cross-correlation. x is [C_in,X,Y,Z] or batched [B,C_in,X,Y,Z];
/// w is [C_out,C_in,k,k,k]; b is [C_out]. Output side (S + 2*pad - k)/stride + 1.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride = 1,
                 std::size_t pad = 0);

/// Window maximum over k^3 windows; ties route the gradient to the first
/// linear index inside the window.
template <typename T> Tensor<T> maxpool3d(const Tensor<T>& x, std::size_t k = 2, std::size_t stride = 2);

/// Replicates every voxel factor^3 times.
template <typename T> Tensor<T> upsample_nearest3d(const Tensor<T>& x, std::size_t factor);

/// Standardizes the last axis (biased variance) then applies gain and bias.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

/// softmax(q k^T * scale) v over rows; q,k,v are [T,d]. scale <= 0 selects 1/sqrt(d).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, T scale = T(0));

/// Rows idx[i] of x[R,d] -> [idx.size(), d].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::uint32_t>& idx);

/// Inverse of a set of gathers that partition [0, rows): part p row r goes to
/// output row index[p][r].
template <typename T>
Tensor<T> assemble_rows(const std::vector<Tensor<T>>& parts,
                        const std::vector<std::vector<std::uint32_t>>& index, std::size_t rows);

/// Mean over all elements of Huber(pred - target): 0.5 e^2 when |e| <= delta,
/// delta (|e| - delta/2) otherwise. `target` receives no gradient.
template <typename T>
Tensor<T> huber_mean(const Tensor<T>& pred, const Tensor<T>& target, T delta);

/// Mean over all elements of -0.5 (1 + logvar - mu^2 - exp(logvar)).
template <typename T> Tensor<T> kl_mean(const Tensor<T>& mu, const Tensor<T>& logvar);

/// mu + exp(logvar / 2) * eps with a constant eps.
template <typename T>
Tensor<T> reparameterize(const Tensor<T>& mu, const Tensor<T>& logvar, const std::vector<T>& eps);

}  // namespace log3d::ad
