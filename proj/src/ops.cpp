#include "lensnvs/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lensnvs/parallel.hpp"

namespace lensnvs::nn {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

// Accumulation target for a parent, or nullptr if it does not need grads.
double* grad_target(Node* parent) {
  return parent->requires_grad ? parent->grad_buffer().data() : nullptr;
}

Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  bool record;
  auto node = make_result(a.shape(), std::move(out), {a, b}, record);
  if (record) {
    Node* self = node.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    node->backward = [self, pa, pb] {
      const auto& g = self->grad;
      if (double* ga = grad_target(pa)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (double* gb = grad_target(pb)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    };
  }
  return wrap(std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  bool record;
  auto node = make_result(a.shape(), std::move(out), {a, b}, record);
  if (record) {
    Node* self = node.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    node->backward = [self, pa, pb] {
      const auto& g = self->grad;
      if (double* ga = grad_target(pa)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      if (double* gb = grad_target(pb)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    };
  }
  return wrap(std::move(node));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  bool record;
  auto node = make_result(a.shape(), std::move(out), {a, b}, record);
  if (record) {
    Node* self = node.get();
    Node* pa = a.node().get();
    Node* pb = b.node().get();
    node->backward = [self, pa, pb] {
      const auto& g = self->grad;
      if (double* ga = grad_target(pa)) for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
      if (double* gb = grad_target(pb)) for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
    };
  }
  return wrap(std::move(node));
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  bool record;
  auto node = make_result(a.shape(), std::move(out), {a}, record);
  if (record) {
    Node* self = node.get();
    Node* pa = a.node().get();
    node->backward = [self, pa, s] {
      double* ga = pa->grad_buffer().data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) ga[i] += s * self->grad[i];
    };
  }
  return wrap(std::move(node));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::invalid_argument("transpose: expected a matrix, got " + shape_string(x.shape()));
  const int m = x.dim(0);
  const int n = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
  bool record;
  auto node = make_result({n, m}, std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    node->backward = [self, px, m, n] {
      double* gx = px->grad_buffer().data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(i) * n + j] += self->grad[static_cast<std::size_t>(j) * m + i];
    };
  }
  return wrap(std::move(node));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  bool record;
  auto node = make_result({}, {acc}, {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    node->backward = [self, px] {
      double* gx = px->grad_buffer().data();
      for (std::size_t i = 0; i < px->value.size(); ++i) gx[i] += self->grad[0];
    };
  }
  return wrap(std::move(node));
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw std::invalid_argument("linear: weight must be [in, out]");
  const int in = w.dim(0);
  const int out_dim = w.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in) {
    throw std::invalid_argument("linear: input " + shape_string(x.shape()) + " vs weight " +
                                shape_string(w.shape()));
  }
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim)) {
    throw std::invalid_argument("linear: bias must be [out]");
  }
  const std::size_t rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<double> out(rows * out_dim);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = b.defined() ? b.values().data() : nullptr;
  LENSNVS_PARALLEL_FOR
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * out_dim;
    if (bv) std::copy(bv, bv + out_dim, o);
    const double* xr = xv + r * in;
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wi = wv + static_cast<std::size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) o[j] += xi * wi[j];
    }
  }
  bool record;
  auto node = make_result(std::move(shape), std::move(out), {x, w, b}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    Node* pw = w.node().get();
    Node* pb = b.defined() ? b.node().get() : nullptr;
    node->backward = [self, px, pw, pb, rows, in, out_dim] {
      const double* g = self->grad.data();
      if (double* gx = grad_target(px)) {
        const double* wv = pw->value.data();
        LENSNVS_PARALLEL_FOR
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g + r * out_dim;
          double* gxr = gx + r * in;
          for (int i = 0; i < in; ++i) {
            const double* wi = wv + static_cast<std::size_t>(i) * out_dim;
            double acc = 0.0;
            for (int j = 0; j < out_dim; ++j) acc += gr[j] * wi[j];
            gxr[i] += acc;
          }
        }
      }
      if (double* gw = grad_target(pw)) {
        const double* xv = px->value.data();
        // Partitioned over weight rows so each sum runs in a fixed order.
        LENSNVS_PARALLEL_FOR
        for (int i = 0; i < in; ++i) {
          double* gwi = gw + static_cast<std::size_t>(i) * out_dim;
          for (std::size_t r = 0; r < rows; ++r) {
            const double xi = xv[r * in + i];
            if (xi == 0.0) continue;
            const double* gr = g + r * out_dim;
            for (int j = 0; j < out_dim; ++j) gwi[j] += xi * gr[j];
          }
        }
      }
      if (pb != nullptr) {
        if (double* gb = grad_target(pb)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (int j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
          }
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 * 0.5));
  }
  bool record;
  auto node = make_result(x.shape(), std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    node->backward = [self, px] {
      double* gx = px->grad_buffer().data();
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double v = px->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += self->grad[i] * (cdf + v * pdf);
      }
    };
  }
  return wrap(std::move(node));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  bool record;
  auto node = make_result(x.shape(), std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    node->backward = [self, px] {
      double* gx = px->grad_buffer().data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) {
        const double s = self->value[i];
        gx[i] += self->grad[i] * s * (1.0 - s);
      }
    };
  }
  return wrap(std::move(node));
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  constexpr double kEps = 1e-5;
  const int d = x.dim(-1);
  if (gain.numel() != static_cast<std::size_t>(d) || bias.numel() != static_cast<std::size_t>(d)) {
    throw std::invalid_argument("layernorm: gain/bias must match the last axis");
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  // Saved for backward: normalized values and inverse std per row.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* xv = x.values().data();
  const double* gv = gain.values().data();
  const double* bv = bias.values().data();
  LENSNVS_PARALLEL_FOR
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[r] = is;
    for (int j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  bool record;
  auto node = make_result(x.shape(), std::move(out), {x, gain, bias}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    Node* pg = gain.node().get();
    Node* pb = bias.node().get();
    node->backward = [self, px, pg, pb, xhat, inv_std, rows, d] {
      const double* g = self->grad.data();
      if (double* gg = grad_target(pg)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
      }
      if (double* gb = grad_target(pb)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (double* gx = grad_target(px)) {
        const double* gv = pg->value.data();
        LENSNVS_PARALLEL_FOR
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_dh = 0.0;
          double mean_dh_h = 0.0;
          for (int j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            mean_dh += dh;
            mean_dh_h += dh * (*xhat)[r * d + j];
          }
          mean_dh /= d;
          mean_dh_h /= d;
          for (int j = 0; j < d; ++j) {
            const double dh = g[r * d + j] * gv[j];
            gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * d + j] * mean_dh_h);
          }
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Shape lead = parts[0].shape();
  if (lead.empty()) throw std::invalid_argument("concat_last: scalars cannot be concatenated");
  lead.pop_back();
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.empty()) throw std::invalid_argument("concat_last: scalars cannot be concatenated");
    widths.push_back(s.back());
    total += s.back();
    s.pop_back();
    if (s != lead) throw std::invalid_argument("concat_last: leading axes differ");
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  int offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const double* src = parts[p].values().data();
    const int w = widths[p];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(src + r * w, src + (r + 1) * w, out.data() + r * total + offset);
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  bool record;
  auto node = make_result(std::move(shape), std::move(out), parts, record);
  if (record) {
    Node* self = node.get();
    std::vector<Node*> srcs;
    for (const auto& p : parts) srcs.push_back(p.node().get());
    node->backward = [self, srcs, widths, rows, total] {
      int offset = 0;
      for (std::size_t p = 0; p < srcs.size(); ++p) {
        const int w = widths[p];
        if (double* gp = grad_target(srcs[p])) {
          for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < w; ++j) gp[r * w + j] += self->grad[r * total + offset + j];
        }
        offset += w;
      }
    };
  }
  return wrap(std::move(node));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  bool record;
  auto node = make_result(std::move(shape), std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    node->backward = [self, px] {
      double* gx = px->grad_buffer().data();
      for (std::size_t i = 0; i < self->grad.size(); ++i) gx[i] += self->grad[i];
    };
  }
  return wrap(std::move(node));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Mask mask, int heads,
                 std::vector<double>* weights) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw std::invalid_argument("attention: q, k, v must be rank 3");
  }
  const int batch = q.dim(0);
  const int nq = q.dim(1);
  const int d = q.dim(2);
  const int nk = k.dim(1);
  const int dv = v.dim(2);
  if (k.dim(0) != batch || v.dim(0) != batch || k.dim(2) != d || v.dim(1) != nk) {
    throw std::invalid_argument("attention: shape mismatch q" + shape_string(q.shape()) + " k" +
                                shape_string(k.shape()) + " v" + shape_string(v.shape()));
  }
  if (heads < 1 || d % heads != 0 || dv % heads != 0) {
    throw std::invalid_argument("attention: head count must divide the key and value widths");
  }
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(batch) * nk) {
    throw std::invalid_argument("attention: mask must have B*nk entries");
  }
  if (nk == 0) throw std::invalid_argument("attention: no keys");
  for (int b = 0; b < batch && !mask.empty(); ++b) {
    bool any = false;
    for (int j = 0; j < nk; ++j) any = any || mask[static_cast<std::size_t>(b) * nk + j];
    if (!any) throw std::invalid_argument("attention: every key is masked (empty support)");
  }
  const int dh = d / heads;
  const int dvh = dv / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(batch) * heads * nq * nk);
  std::vector<double> out(static_cast<std::size_t>(batch) * nq * dv, 0.0);
  const double* qv = q.values().data();
  const double* kv = k.values().data();
  const double* vv = v.values().data();

  LENSNVS_PARALLEL_FOR
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < nq; ++i) {
        double* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * nq + i) * nk;
        const double* qi = qv + (static_cast<std::size_t>(b) * nq + i) * d + h * dh;
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < nk; ++j) {
          if (!mask.empty() && !mask[static_cast<std::size_t>(b) * nk + j]) {
            p[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = kv + (static_cast<std::size_t>(b) * nk + j) * d + h * dh;
          double s = 0.0;
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * inv_sqrt;
          best = std::max(best, p[j]);
        }
        double z = 0.0;
        for (int j = 0; j < nk; ++j) {
          p[j] = std::isinf(p[j]) ? 0.0 : std::exp(p[j] - best);
          z += p[j];
        }
        double* o = out.data() + (static_cast<std::size_t>(b) * nq + i) * dv + h * dvh;
        for (int j = 0; j < nk; ++j) {
          p[j] /= z;
          if (p[j] == 0.0) continue;
          const double* vj = vv + (static_cast<std::size_t>(b) * nk + j) * dv + h * dvh;
          for (int c = 0; c < dvh; ++c) o[c] += p[j] * vj[c];
        }
      }
    }
  }
  if (weights != nullptr) *weights = *probs;

  bool record;
  auto node = make_result({batch, nq, dv}, std::move(out), {q, k, v}, record);
  if (record) {
    Node* self = node.get();
    Node* pq = q.node().get();
    Node* pk = k.node().get();
    Node* pv = v.node().get();
    node->backward = [=] {
      const double* g = self->grad.data();
      double* gq = grad_target(pq);
      double* gk = grad_target(pk);
      double* gv = grad_target(pv);
      const double* qv = pq->value.data();
      const double* kv = pk->value.data();
      const double* vv = pv->value.data();
      // Each batch entry touches only its own rows of q, k and v.
      LENSNVS_PARALLEL_FOR
      for (int b = 0; b < batch; ++b) {
        std::vector<double> ds(nk);
        for (int h = 0; h < heads; ++h) {
          for (int i = 0; i < nq; ++i) {
            const double* p = probs->data() + ((static_cast<std::size_t>(b) * heads + h) * nq + i) * nk;
            const double* gi = g + (static_cast<std::size_t>(b) * nq + i) * dv + h * dvh;
            double dot = 0.0;
            for (int j = 0; j < nk; ++j) {
              if (p[j] == 0.0) {
                ds[j] = 0.0;
                continue;
              }
              const double* vj = vv + (static_cast<std::size_t>(b) * nk + j) * dv + h * dvh;
              double dp = 0.0;
              for (int c = 0; c < dvh; ++c) dp += gi[c] * vj[c];
              ds[j] = dp;
              dot += p[j] * dp;
              if (gv) {
                double* gvj = gv + (static_cast<std::size_t>(b) * nk + j) * dv + h * dvh;
                for (int c = 0; c < dvh; ++c) gvj[c] += p[j] * gi[c];
              }
            }
            const double* qi = qv + (static_cast<std::size_t>(b) * nq + i) * d + h * dh;
            double* gqi = gq ? gq + (static_cast<std::size_t>(b) * nq + i) * d + h * dh : nullptr;
            for (int j = 0; j < nk; ++j) {
              if (p[j] == 0.0) continue;
              const double s = p[j] * (ds[j] - dot) * inv_sqrt;
              const double* kj = kv + (static_cast<std::size_t>(b) * nk + j) * d + h * dh;
              if (gqi) for (int c = 0; c < dh; ++c) gqi[c] += s * kj[c];
              if (gk) {
                double* gkj = gk + (static_cast<std::size_t>(b) * nk + j) * d + h * dh;
                for (int c = 0; c < dh; ++c) gkj[c] += s * qi[c];
              }
            }
          }
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v, Mask mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw std::invalid_argument("softmax_attention: q, k, v must be rank 2");
  }
  Tensor out = attention(reshape(q, {1, q.dim(0), q.dim(1)}), reshape(k, {1, k.dim(0), k.dim(1)}),
                         reshape(v, {1, v.dim(0), v.dim(1)}), mask, 1);
  return reshape(out, {q.dim(0), v.dim(1)});
}

Tensor masked_mean(const Tensor& x, Mask mask) {
  if (x.rank() != 3) throw std::invalid_argument("masked_mean: x must be [B, n, d]");
  const int batch = x.dim(0);
  const int n = x.dim(1);
  const int d = x.dim(2);
  if (!mask.empty() && mask.size() != static_cast<std::size_t>(batch) * n) {
    throw std::invalid_argument("masked_mean: mask must have B*n entries");
  }
  std::vector<double> counts(batch, 0.0);
  std::vector<double> out(static_cast<std::size_t>(batch) * d, 0.0);
  const double* xv = x.values().data();
  for (int b = 0; b < batch; ++b) {
    for (int j = 0; j < n; ++j) {
      if (!mask.empty() && !mask[static_cast<std::size_t>(b) * n + j]) continue;
      counts[b] += 1.0;
      const double* row = xv + (static_cast<std::size_t>(b) * n + j) * d;
      for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(b) * d + c] += row[c];
    }
    if (counts[b] == 0.0) throw std::invalid_argument("masked_mean: every entry masked");
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(b) * d + c] /= counts[b];
  }
  bool record;
  auto node = make_result({batch, d}, std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    std::vector<std::uint8_t> bits(mask.begin(), mask.end());
    node->backward = [self, px, bits, counts, batch, n, d] {
      double* gx = px->grad_buffer().data();
      for (int b = 0; b < batch; ++b) {
        for (int j = 0; j < n; ++j) {
          if (!bits.empty() && !bits[static_cast<std::size_t>(b) * n + j]) continue;
          double* row = gx + (static_cast<std::size_t>(b) * n + j) * d;
          for (int c = 0; c < d; ++c) row[c] += self->grad[static_cast<std::size_t>(b) * d + c] / counts[b];
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index) {
  if (x.rank() < 1) throw std::invalid_argument("gather_rows: need rank >= 1");
  const std::int64_t rows = x.dim(0);
  const std::size_t width = rows == 0 ? 0 : x.numel() / rows;
  Shape shape = x.shape();
  shape[0] = static_cast<int>(index.size());
  std::vector<double> out(index.size() * width, 0.0);
  const double* xv = x.values().data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::int64_t r = index[i];
    if (r < -1 || r >= rows) throw std::out_of_range("gather_rows: index out of range");
    if (r >= 0) std::copy(xv + r * width, xv + (r + 1) * width, out.data() + i * width);
  }
  bool record;
  auto node = make_result(std::move(shape), std::move(out), {x}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    std::vector<std::int64_t> idx(index.begin(), index.end());
    node->backward = [self, px, idx, width] {
      double* gx = px->grad_buffer().data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        double* dst = gx + idx[i] * width;
        const double* src = self->grad.data() + i * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
      }
    };
  }
  return wrap(std::move(node));
}

Tensor bilinear_gather(const Tensor& fmap, std::span<const geom::BilinearTap> taps) {
  if (fmap.rank() != 3) throw std::invalid_argument("bilinear_gather: feature map must be [C, H, W]");
  const int channels = fmap.dim(0);
  const int h = fmap.dim(1);
  const int w = fmap.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> out(taps.size() * channels, 0.0);
  const double* fv = fmap.values().data();
  for (std::size_t p = 0; p < taps.size(); ++p) {
    const auto& t = taps[p];
    if (!t.in_bounds) continue;
    if (t.x1 >= w || t.y1 >= h || t.x0 < 0 || t.y0 < 0) throw std::out_of_range("bilinear_gather: tap outside map");
    const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
    const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
    const std::size_t i00 = static_cast<std::size_t>(t.y0) * w + t.x0;
    const std::size_t i01 = static_cast<std::size_t>(t.y0) * w + t.x1;
    const std::size_t i10 = static_cast<std::size_t>(t.y1) * w + t.x0;
    const std::size_t i11 = static_cast<std::size_t>(t.y1) * w + t.x1;
    for (int c = 0; c < channels; ++c) {
      const double* f = fv + c * plane;
      out[p * channels + c] = w00 * f[i00] + w01 * f[i01] + w10 * f[i10] + w11 * f[i11];
    }
  }
  bool record;
  auto node = make_result({static_cast<int>(taps.size()), channels}, std::move(out), {fmap}, record);
  if (record) {
    Node* self = node.get();
    Node* pf = fmap.node().get();
    std::vector<geom::BilinearTap> saved(taps.begin(), taps.end());
    node->backward = [self, pf, saved, channels, w, plane] {
      double* gf = pf->grad_buffer().data();
      for (std::size_t p = 0; p < saved.size(); ++p) {
        const auto& t = saved[p];
        if (!t.in_bounds) continue;
        const double w00 = (1 - t.wx) * (1 - t.wy), w01 = t.wx * (1 - t.wy);
        const double w10 = (1 - t.wx) * t.wy, w11 = t.wx * t.wy;
        const std::size_t i00 = static_cast<std::size_t>(t.y0) * w + t.x0;
        const std::size_t i01 = static_cast<std::size_t>(t.y0) * w + t.x1;
        const std::size_t i10 = static_cast<std::size_t>(t.y1) * w + t.x0;
        const std::size_t i11 = static_cast<std::size_t>(t.y1) * w + t.x1;
        for (int c = 0; c < channels; ++c) {
          const double g = self->grad[p * channels + c];
          double* f = gf + c * plane;
          f[i00] += w00 * g;
          f[i01] += w01 * g;
          f[i10] += w10 * g;
          f[i11] += w11 * g;
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  if (x.rank() != 3 || w.rank() != 4) throw std::invalid_argument("conv2d: x must be [C,H,W], w [O,C,kh,kw]");
  const int c_in = x.dim(0);
  const int h = x.dim(1);
  const int wd = x.dim(2);
  const int c_out = w.dim(0);
  const int kh = w.dim(2);
  const int kw = w.dim(3);
  if (w.dim(1) != c_in) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  if (b.defined() && b.numel() != static_cast<std::size_t>(c_out)) throw std::invalid_argument("conv2d: bias must be [O]");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
  std::vector<double> out(static_cast<std::size_t>(c_out) * oh * ow, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = b.defined() ? b.values().data() : nullptr;

  // For output row oy and kernel row ky the input row is oy*stride + ky - pad.
  LENSNVS_PARALLEL_FOR
  for (int o = 0; o < c_out; ++o) {
    double* out_o = out.data() + static_cast<std::size_t>(o) * oh * ow;
    if (bv) std::fill(out_o, out_o + static_cast<std::size_t>(oh) * ow, bv[o]);
    for (int c = 0; c < c_in; ++c) {
      const double* xc = xv + static_cast<std::size_t>(c) * h * wd;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const double wt = wv[((static_cast<std::size_t>(o) * c_in + c) * kh + ky) * kw + kx];
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* row = xc + static_cast<std::size_t>(iy) * wd;
            double* orow = out_o + static_cast<std::size_t>(oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= wd) continue;
              orow[ox] += wt * row[ix];
            }
          }
        }
      }
    }
  }
  bool record;
  auto node = make_result({c_out, oh, ow}, std::move(out), {x, w, b}, record);
  if (record) {
    Node* self = node.get();
    Node* px = x.node().get();
    Node* pw = w.node().get();
    Node* pb = b.defined() ? b.node().get() : nullptr;
    node->backward = [=] {
      const double* g = self->grad.data();
      const double* xv = px->value.data();
      const double* wv = pw->value.data();
      if (double* gw = grad_target(pw)) {
        LENSNVS_PARALLEL_FOR
        for (int o = 0; o < c_out; ++o) {
          const double* g_o = g + static_cast<std::size_t>(o) * oh * ow;
          for (int c = 0; c < c_in; ++c) {
            const double* xc = xv + static_cast<std::size_t>(c) * h * wd;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                double acc = 0.0;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  const double* row = xc + static_cast<std::size_t>(iy) * wd;
                  const double* grow = g_o + static_cast<std::size_t>(oy) * ow;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    acc += grow[ox] * row[ix];
                  }
                }
                gw[((static_cast<std::size_t>(o) * c_in + c) * kh + ky) * kw + kx] += acc;
              }
            }
          }
        }
      }
      if (pb != nullptr) {
        if (double* gb = grad_target(pb)) {
          for (int o = 0; o < c_out; ++o) {
            double acc = 0.0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) {
              acc += g[static_cast<std::size_t>(o) * oh * ow + i];
            }
            gb[o] += acc;
          }
        }
      }
      if (double* gx = grad_target(px)) {
        // Partitioned over input channels: each input element is written by one thread.
        LENSNVS_PARALLEL_FOR
        for (int c = 0; c < c_in; ++c) {
          double* gxc = gx + static_cast<std::size_t>(c) * h * wd;
          for (int o = 0; o < c_out; ++o) {
            const double* g_o = g + static_cast<std::size_t>(o) * oh * ow;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const double wt = wv[((static_cast<std::size_t>(o) * c_in + c) * kh + ky) * kw + kx];
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  double* row = gxc + static_cast<std::size_t>(iy) * wd;
                  const double* grow = g_o + static_cast<std::size_t>(oy) * ow;
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    row[ix] += wt * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
    };
  }
  return wrap(std::move(node));
}

Tensor masked_mse(const Tensor& pred, std::span<const double> target, Mask row_mask) {
  if (pred.rank() != 2) throw std::invalid_argument("masked_mse: pred must be [R, C]");
  const int rows = pred.dim(0);
  const int cols = pred.dim(1);
  if (target.size() != pred.numel()) throw std::invalid_argument("masked_mse: target size mismatch");
  if (!row_mask.empty() && row_mask.size() != static_cast<std::size_t>(rows)) {
    throw std::invalid_argument("masked_mse: mask must have one bit per row");
  }
  double acc = 0.0;
  std::size_t count = 0;
  const double* pv = pred.values().data();
  for (int r = 0; r < rows; ++r) {
    if (!row_mask.empty() && !row_mask[r]) continue;
    for (int c = 0; c < cols; ++c) {
      const double e = pv[static_cast<std::size_t>(r) * cols + c] - target[static_cast<std::size_t>(r) * cols + c];
      acc += e * e;
    }
    count += cols;
  }
  if (count == 0) throw std::invalid_argument("masked_mse: empty mask");
  bool record;
  auto node = make_result({}, {acc / static_cast<double>(count)}, {pred}, record);
  if (record) {
    Node* self = node.get();
    Node* pp = pred.node().get();
    std::vector<double> tgt(target.begin(), target.end());
    std::vector<std::uint8_t> bits(row_mask.begin(), row_mask.end());
    node->backward = [self, pp, tgt, bits, rows, cols, count] {
      double* gp = pp->grad_buffer().data();
      const double s = 2.0 * self->grad[0] / static_cast<double>(count);
      for (int r = 0; r < rows; ++r) {
        if (!bits.empty() && !bits[r]) continue;
        for (int c = 0; c < cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * cols + c;
          gp[i] += s * (pp->value[i] - tgt[i]);
        }
      }
    };
  }
  return wrap(std::move(node));
}

}  // namespace lensnvs::nn
