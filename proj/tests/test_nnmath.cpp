#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "lensnvs/gradcheck.hpp"
#include "lensnvs/ops.hpp"
#include "lensnvs/params.hpp"
#include "test_support.hpp"

namespace lensnvs::nn {
namespace {

std::vector<double> randn(std::size_t n, std::uint64_t seed, double s = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, s);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

Tensor rand_param(Shape shape, std::uint64_t seed) {
  const std::size_t n = numel(shape);
  return Tensor::parameter(std::move(shape), randn(n, seed));
}

Tensor rand_const(Shape shape, std::uint64_t seed) {
  const std::size_t n = numel(shape);
  return Tensor::constant(std::move(shape), randn(n, seed));
}

// Brute-force softmax(q k^T / sqrt(d)) v for one problem.
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<int>& keep) {
  const int nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  std::vector<double> out(static_cast<std::size_t>(nq) * dv, 0.0);
  for (int i = 0; i < nq; ++i) {
    std::vector<double> s(nk, -INFINITY);
    double m = -INFINITY;
    for (int j = 0; j < nk; ++j) {
      if (!keep[j]) continue;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += q.values()[i * d + c] * k.values()[j * d + c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      m = std::max(m, s[j]);
    }
    double z = 0.0;
    for (int j = 0; j < nk; ++j) z += keep[j] ? std::exp(s[j] - m) : 0.0;
    for (int j = 0; j < nk; ++j) {
      if (!keep[j]) continue;
      const double w = std::exp(s[j] - m) / z;
      for (int c = 0; c < dv; ++c) out[i * dv + c] += w * v.values()[j * dv + c];
    }
  }
  return out;
}

TEST(Tensor, BasicsAndErrors) {
  const Tensor t = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(t.item(), std::invalid_argument);
  EXPECT_THROW(backward(t), std::invalid_argument);
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
}

TEST(Backward, LinearGradientIsInput) {
  const Tensor w = Tensor::parameter({4}, {0.5, -1.0, 2.0, 0.25});
  const Tensor x = Tensor::constant({4}, {1.0, 2.0, 3.0, 4.0});
  backward(sum(mul(w, x)));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(w.grad()[i], x.values()[i]);
}

TEST(Backward, AccumulatesAndResets) {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  backward(sum(w));
  backward(sum(scale(w, 3.0)));
  EXPECT_EQ(w.grad()[0], 4.0);
  w.zero_grad();
  EXPECT_EQ(w.grad()[1], 0.0);
}

TEST(Backward, DisconnectedParameterStaysZero) {
  const Tensor used = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor unused = Tensor::parameter({2}, {3.0, 4.0});
  backward(sum(used));
  EXPECT_FALSE(unused.has_grad());
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, NoGradGuardSkipsTape) {
  const Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = sum(w);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Backward, SharedSubgraphGetsBothPaths) {
  const Tensor x = Tensor::parameter({1}, {3.0});
  const Tensor y = mul(x, x);               // x^2
  backward(sum(add(y, mul(y, x))));         // x^2 + x^3
  EXPECT_NEAR(x.grad()[0], 2 * 3.0 + 3 * 9.0, 1e-12);
}

TEST(Attention, SingletonKeyReturnsValue) {
  const Tensor q = rand_const({3, 4}, 1), k = rand_const({1, 4}, 2), v = rand_const({1, 5}, 3);
  const Tensor out = softmax_attention(q, k, v);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(out.values()[i * 5 + c], v.values()[c], 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  const Tensor q = rand_const({2, 3}, 1);
  const Tensor k = Tensor::constant({4, 3}, std::vector<double>(12, 0.7));
  const Tensor v = rand_const({4, 2}, 4);
  const Tensor out = softmax_attention(q, k, v);
  for (int c = 0; c < 2; ++c) {
    double m = 0.0;
    for (int j = 0; j < 4; ++j) m += v.values()[j * 2 + c] / 4.0;
    EXPECT_NEAR(out.values()[c], m, 1e-12);
  }
}

TEST(Attention, MatchesBruteForce) {
  const Tensor q = rand_const({3, 6}, 5), k = rand_const({7, 6}, 6), v = rand_const({7, 4}, 7);
  const std::vector<int> keep = {1, 0, 1, 1, 0, 1, 1};
  std::vector<std::uint8_t> mask(keep.begin(), keep.end());
  const Tensor out = softmax_attention(q, k, v, mask);
  const auto want = attention_oracle(q, k, v, keep);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.values()[i], want[i], 1e-9);
}

TEST(Attention, WeightsAreConvexAndPermutationInvariant) {
  const Tensor q = rand_const({1, 1, 4}, 8), k = rand_const({1, 6, 4}, 9), v = rand_const({1, 6, 3}, 10);
  std::vector<double> w;
  const Tensor out = attention(q, k, v, {}, 1, &w);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-9);
  for (int c = 0; c < 3; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (int j = 0; j < 6; ++j) {
      lo = std::min(lo, v.values()[j * 3 + c]);
      hi = std::max(hi, v.values()[j * 3 + c]);
    }
    EXPECT_GE(out.values()[c], lo);
    EXPECT_LE(out.values()[c], hi);
  }
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  std::vector<double> kp(24), vp(18);
  for (int j = 0; j < 6; ++j) {
    std::copy_n(k.values().begin() + perm[j] * 4, 4, kp.begin() + j * 4);
    std::copy_n(v.values().begin() + perm[j] * 3, 3, vp.begin() + j * 3);
  }
  const Tensor outp = attention(q, Tensor::constant({1, 6, 4}, kp), Tensor::constant({1, 6, 3}, vp));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(outp.values()[c], out.values()[c], 1e-12);
}

TEST(Attention, MultiHeadRowsSumToOne) {
  const Tensor q = rand_const({2, 3, 8}, 1), k = rand_const({2, 5, 8}, 2), v = rand_const({2, 5, 8}, 3);
  std::vector<std::uint8_t> mask = {1, 1, 0, 1, 1, 0, 0, 1, 1, 1};
  std::vector<double> w;
  attention(q, k, v, mask, 2, &w);
  ASSERT_EQ(w.size(), 2u * 2 * 3 * 5);
  for (std::size_t row = 0; row < w.size() / 5; ++row) {
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += w[row * 5 + j];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_EQ(w[2], 0.0);  // masked key of batch 0
}

TEST(Attention, AllMaskedThrows) {
  const Tensor q = rand_const({1, 2}, 1), k = rand_const({3, 2}, 2), v = rand_const({3, 2}, 3);
  const std::vector<std::uint8_t> none(3, 0);
  EXPECT_THROW(softmax_attention(q, k, v, none), std::invalid_argument);
}

TEST(Ops, ShapeErrors) {
  EXPECT_THROW(add(rand_const({2}, 1), rand_const({3}, 1)), std::invalid_argument);
  EXPECT_THROW(linear(rand_const({2, 3}, 1), rand_const({4, 2}, 2), Tensor()), std::invalid_argument);
  EXPECT_THROW(conv2d(rand_const({2, 4, 4}, 1), rand_const({1, 3, 3, 3}, 2), Tensor()), std::invalid_argument);
  EXPECT_THROW(reshape(rand_const({2, 3}, 1), {4}), std::invalid_argument);
  const std::vector<std::int64_t> bad = {5};
  EXPECT_THROW(gather_rows(rand_const({2, 3}, 1), bad), std::out_of_range);
  const std::vector<std::uint8_t> none(2, 0);
  EXPECT_THROW(masked_mse(rand_const({2, 3}, 1), std::vector<double>(6), none), std::invalid_argument);
}

TEST(Ops, Conv2dMatchesDirectSum) {
  const Tensor x = rand_const({2, 5, 6}, 1), w = rand_const({3, 2, 3, 3}, 2), b = rand_const({3}, 3);
  const Tensor y = conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{3, 3, 3}));
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = b.values()[o];
        for (int c = 0; c < 2; ++c)
          for (int u = 0; u < 3; ++u)
            for (int v = 0; v < 3; ++v) {
              const int yy = 2 * i - 1 + u, xx = 2 * j - 1 + v;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
              s += w.values()[((o * 2 + c) * 3 + u) * 3 + v] * x.values()[(c * 5 + yy) * 6 + xx];
            }
        EXPECT_NEAR(y.values()[(o * 3 + i) * 3 + j], s, 1e-12);
      }
}

TEST(Ops, LayernormNormalizes) {
  const Tensor x = rand_const({3, 8}, 4);
  const Tensor y = layernorm(x, Tensor::constant({8}, std::vector<double>(8, 1.0)),
                             Tensor::constant({8}, std::vector<double>(8, 0.0)));
  for (int r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (int c = 0; c < 8; ++c) m += y.values()[r * 8 + c] / 8.0;
    for (int c = 0; c < 8; ++c) v += std::pow(y.values()[r * 8 + c] - m, 2) / 8.0;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

// Finite-difference checks; the full per-op suite also runs in `selfcheck`.
TEST(GradCheck, ElementwiseAndReductions) {
  const Tensor a = rand_param({3, 4}, 1), b = rand_param({3, 4}, 2);
  for (auto fn : std::vector<std::function<Tensor()>>{
           [&] { return sum(mul(gelu(a), b)); }, [&] { return mean(mul(sigmoid(a), sub(a, b))); },
           [&] { return sum(mul(transpose(a), transpose(b))); }, [&] { return sum(mul(reshape(a, {12}), reshape(b, {12}))); }}) {
    const auto r = check_gradients(fn, {a, b});
    EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  }
}

TEST(GradCheck, LayersAndAttention) {
  const Tensor x = rand_param({2, 3, 4}, 3), w = rand_param({4, 4}, 4), bias = rand_param({4}, 5);
  const Tensor g = rand_param({4}, 6), beta = rand_param({4}, 7), probe = rand_const({2, 3, 4}, 8);
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 1, 0};
  auto fn = [&] {
    const Tensor h = layernorm(linear(x, w, bias), g, beta);
    return sum(mul(attention(h, x, h, mask, 2), probe));
  };
  const auto r = check_gradients(fn, {x, w, bias, g, beta});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(GradCheck, ConvAndGathers) {
  const Tensor x = rand_param({2, 6, 5}, 1), w = rand_param({3, 2, 3, 3}, 2), b = rand_param({3}, 3);
  std::vector<geom::BilinearTap> taps;
  for (auto [px, py] : {std::pair{0.3, 1.7}, std::pair{2.0, 0.0}, std::pair{1.5, 2.5}})
    taps.push_back(geom::bilinear_tap({px, py}, 3, 3));
  const std::vector<std::int64_t> rows = {2, -1, 0, 2};
  const std::vector<double> target = randn(12, 9);
  auto fn = [&] {
    const Tensor f = conv2d(x, w, b, 2, 1);  // [3, 3, 3]
    const Tensor g = bilinear_gather(f, taps);  // [3, 3]
    return masked_mse(gather_rows(g, rows), target);
  };
  const auto r = check_gradients(fn, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor& p = store.create("p", {1}, {1.0});
  p.node()->grad_buffer()[0] = 1.0;
  adam_step(store, AdamOptions{});
  EXPECT_NEAR(p.values()[0], 1.0 - 5e-4, 1e-7);
  EXPECT_EQ(store.step(), 1);
  EXPECT_FALSE(p.has_grad() && p.grad()[0] != 0.0);
}

TEST(Adam, ZeroGradientLeavesParameter) {
  ParamStore store;
  Tensor& p = store.create("p", {2}, {0.25, -0.5});
  p.node()->grad_buffer();
  adam_step(store, AdamOptions{});
  EXPECT_EQ(p.values()[0], 0.25);
  EXPECT_EQ(p.values()[1], -0.5);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamStore store;
  Tensor& good = store.create("good", {1}, {1.0});
  Tensor& bad = store.create("layer.bad", {2}, {1.0, 2.0});
  good.node()->grad_buffer()[0] = 1.0;
  bad.node()->grad_buffer()[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(store, AdamOptions{});
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("layer.bad"), std::string::npos);
  }
  EXPECT_EQ(good.values()[0], 1.0);  // nothing modified
}

TEST(Adam, LearningRateDecay) {
  EXPECT_DOUBLE_EQ(decayed_learning_rate(5e-4, 0, 100), 5e-4);
  EXPECT_NEAR(decayed_learning_rate(5e-4, 100, 100), 5e-5, 1e-18);
  EXPECT_NEAR(decayed_learning_rate(1.0, 50, 100), std::sqrt(0.1), 1e-12);
}

TEST(ParamStore, XavierBoundsAndFloat32) {
  ParamStore store;
  Rng rng(1);
  const Tensor& w = store.create_xavier("w", {20, 30}, 20, 30, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  for (double v : w.values()) {
    EXPECT_LE(std::abs(v), bound);
    EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  }
  EXPECT_THROW(store.create_constant("w", {1}, 0.0), std::invalid_argument);
  EXPECT_THROW(store.get("missing"), std::out_of_range);
  EXPECT_EQ(store.parameter_count(), 600u);
}

TEST(Checkpoint, RoundTripIsExact) {
  testing::TempDir dir("ckpt");
  ParamStore store;
  Rng rng(2);
  store.create_xavier("a.w", {3, 4}, 3, 4, rng);
  store.create_constant("b", {4}, 0.125);
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    for (double& g : e.param.node()->grad_buffer()) g = 0.3;
  }
  adam_step(store, AdamOptions{});
  save_checkpoint(dir / "m.ckpt", store, "feature_dim=4\n");
  ParamStore loaded;
  const auto meta = load_checkpoint(dir / "m.ckpt", loaded);
  EXPECT_EQ(meta.metadata, "feature_dim=4\n");
  EXPECT_EQ(meta.step, 1);
  ASSERT_EQ(loaded.names(), store.names());
  for (const auto& name : store.names()) {
    const auto& x = store.entry(name);
    const auto& y = loaded.entry(name);
    EXPECT_TRUE(std::equal(x.param.values().begin(), x.param.values().end(), y.param.values().begin()));
    EXPECT_EQ(x.first_moment, y.first_moment);
    EXPECT_EQ(x.second_moment, y.second_moment);
  }
  // Loading into a populated store overwrites in place.
  EXPECT_NO_THROW(load_checkpoint(dir / "m.ckpt", loaded));
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  testing::TempDir dir("ckpt2");
  ParamStore store;
  store.create_constant("w", {2, 2}, 1.0);
  save_checkpoint(dir / "m.ckpt", store);
  ParamStore other;
  other.create_constant("w", {4}, 1.0);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), std::runtime_error);
  ParamStore renamed;
  renamed.create_constant("v", {2, 2}, 1.0);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", renamed), std::runtime_error);
  {
    std::ofstream f(dir / "bad.ckpt", std::ios::binary);
    f << "NOTACKPT";
  }
  ParamStore fresh;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt", fresh), std::runtime_error);
  std::filesystem::resize_file(dir / "m.ckpt", std::filesystem::file_size(dir / "m.ckpt") - 5);
  ParamStore fresh2;
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", fresh2), std::runtime_error);
}

}  // namespace
}  // namespace lensnvs::nn
