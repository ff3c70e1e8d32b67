#pragma once

#include <initializer_list>
#include <span>
#include <vector>

#include "fddlab/numerics/tensor.hpp"

// Differentiable ops. Each op records itself on the active tape when any
// input requires a gradient; otherwise it is a plain computation.

namespace fddlab::num {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);

Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);

/// [M,K] x [K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// [B,M,K] x [B,K,N], or [B,M,K] x [B,N,K]^T when transpose_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x[..., in] W[out, in]^T + b[out]; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// x[N,Ci,H,W] * w[Co,Ci,k,k] + b[Co]; odd k, zero padding k/2, stride 1 or 2.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1);
/// Nearest-neighbour 2x upsample of [N,C,H,W].
Tensor upsample2x(const Tensor& x);
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

Tensor softmax(const Tensor& x, int axis);

Tensor concat(std::span<const Tensor> xs, int axis);
Tensor concat(std::initializer_list<Tensor> xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);

/// Full reductions return a scalar; accumulation is in double.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
/// Same values; no gradient flows back through the result.
Tensor stop_grad(const Tensor& x);
/// Rows of table[V,D] -> [n,D].
Tensor gather(const Tensor& table, std::span<const int> indices);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(float s, const Tensor& a) { return scale(a, s); }

}  // namespace fddlab::num
