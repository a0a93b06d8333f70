#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lensnvs/geometry.hpp"
#include "lensnvs/tensor.hpp"

namespace lensnvs::nn {

/// Per-key validity bits, 1 = attend. Empty span means "all valid".
using Mask = std::span<const std::uint8_t>;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// x[..., in] · w[in, out] + b[out]. `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Normalizes the last axis to zero mean / unit variance (eps 1e-5), then
/// applies gain and bias of that axis' length.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

/// Concatenation along the last axis; leading axes must agree.
Tensor concat_last(const std::vector<Tensor>& parts);

Tensor reshape(const Tensor& x, Shape shape);
/// Matrix transpose of x [M, N] -> [N, M].
Tensor transpose(const Tensor& x);

/// Batched scaled dot-product attention.
///   q [B, nq, d], k [B, nk, d], v [B, nk, dv]; mask has B*nk bits.
/// Heads split d and dv evenly. Masked keys get zero weight. Throws if some
/// batch entry has every key masked. If `weights` is non-null it receives the
/// softmax weights laid out [B, heads, nq, nk].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Mask mask = {}, int heads = 1,
                 std::vector<double>* weights = nullptr);

/// Single-problem form: softmax(q k^T / sqrt(d) + mask_bias) v with
/// q [nq, d], k [nk, d], v [nk, dv].
Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, Mask mask = {});

/// Mean over axis 1 of x [B, n, d] restricted to mask bits (B*n); -> [B, d].
Tensor masked_mean(const Tensor& x, Mask mask);

/// Row gather along axis 0; index -1 produces a zero row.
Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index);

/// Bilinear reads from fmap [C, H, W] at `taps`; -> [P, C]. Out-of-bounds taps
/// produce zero rows.
Tensor bilinear_gather(const Tensor& fmap, std::span<const geom::BilinearTap> taps);

/// 2-D cross-correlation: x [C, H, W], w [O, C, kh, kw], optional b [O];
/// output [O, (H + 2 pad - kh) / stride + 1, (W + 2 pad - kw) / stride + 1].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int pad = 0);

/// Mean over valid rows of (pred - target)^2 for pred [R, C]; `target` has
/// R*C values, `row_mask` R bits (empty = all rows). Throws on an empty mask.
Tensor masked_mse(const Tensor& pred, std::span<const double> target, Mask row_mask = {});

}  // namespace lensnvs::nn
