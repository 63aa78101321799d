// Copyright 2026 The lmkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <sstream>

#include "lmkit/nn/gradcheck.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/optim.hpp"
#include "lmkit/nn/tensor_file.hpp"

namespace lmkit::nn {
namespace {

using P = Parameter<double>;
using G = Graph<double>;

P random_param(const std::string& name, int r, int c, Rng& rng, double sd = 0.5) {
  P p(name, r, c);
  init_normal(p, rng, sd);
  return p;
}

// Weighted sum of all outputs so every output entry gets a distinct
// upstream gradient.
Var weighted_sum(G& g, Var x, std::uint64_t seed = 77) {
  Rng rng(seed);
  Mat<double> w(g.value(x).rows(), g.value(x).cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  return g.sum(g.mul(x, g.constant(w)));
}

void expect_grads(std::vector<P*> params, const std::function<Var(G&)>& f, double tol = 1e-6) {
  const auto rep = grad_check(params, f);
  for (const auto& e : rep.groups) {
    EXPECT_LT(e.relative_error, tol) << e.name;
    EXPECT_TRUE(e.finite) << e.name;
  }
}

TEST(Graph, ElementwiseAndLinearGradients) {
  Rng rng(1);
  auto a = random_param("a", 3, 4, rng), b = random_param("b", 4, 5, rng);
  auto c = random_param("c", 3, 5, rng), bias = random_param("bias", 1, 5, rng);
  expect_grads({&a, &b, &c, &bias}, [&](G& g) {
    Var h = g.linear(g.param(a), g.param(b), g.param(bias));
    h = g.add(g.tanh(h), g.mul(g.sigmoid(g.param(c)), g.gelu(h)));
    h = g.sub(h, g.scale(g.relu(g.param(c)), 0.3));
    return weighted_sum(g, h);
  });
}

TEST(Graph, MatmulNtAndGather) {
  Rng rng(2);
  auto table = random_param("table", 6, 3, rng), x = random_param("x", 4, 3, rng);
  expect_grads({&table, &x}, [&](G& g) {
    Var rows = g.gather_rows(g.param(table), {1, 3, 1, 0});
    Var h = g.add(rows, g.param(x));
    return weighted_sum(g, g.matmul_nt(h, g.param(table)));
  });
}

TEST(Graph, ConcatSliceMean) {
  Rng rng(3);
  auto a = random_param("a", 3, 2, rng), b = random_param("b", 3, 4, rng);
  expect_grads({&a, &b}, [&](G& g) {
    Var c = g.concat_cols({g.param(a), g.param(b), g.param(a)});
    Var s = g.slice_cols(c, 1, 5);
    return weighted_sum(g, g.add(g.mean_rows(s), g.mean_rows(g.tanh(s))));
  });
}

TEST(Graph, LayerNormGradients) {
  Rng rng(4);
  auto x = random_param("x", 4, 6, rng, 2.0), gain = random_param("gain", 1, 6, rng);
  auto bias = random_param("bias", 1, 6, rng);
  expect_grads({&x, &gain, &bias}, [&](G& g) {
    return weighted_sum(g, g.layer_norm(g.param(x), g.param(gain), g.param(bias)));
  });
}

TEST(Graph, LayerNormNormalizesRows) {
  Rng rng(5);
  auto x = random_param("x", 3, 8, rng, 3.0);
  P gain("gain", 1, 8), bias("bias", 1, 8);
  gain.value.setOnes();
  G g;
  const auto& y = g.value(g.layer_norm(g.param(x), g.param(gain), g.param(bias)));
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(y.row(i).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(i).squaredNorm() / 8, 1.0, 1e-9);
  }
}

TEST(Graph, CrossEntropyGradientsAndIgnore) {
  Rng rng(6);
  auto z = random_param("z", 4, 5, rng, 2.0);
  expect_grads({&z}, [&](G& g) { return g.softmax_cross_entropy(g.param(z), {2, -1, 0, 4}); });
}

TEST(Graph, CrossEntropyUniformIsLogV) {
  G g;
  Var l = g.softmax_cross_entropy(g.constant(Mat<double>::Zero(3, 37)), {0, 5, 36});
  EXPECT_NEAR(g.scalar(l), std::log(37.0), 1e-12);
}

TEST(Graph, CrossEntropyWithNoTargetsIsZero) {
  P z("z", 2, 3);
  G g;
  Var l = g.softmax_cross_entropy(g.param(z), {-1, -1});
  EXPECT_EQ(g.scalar(l), 0.0);
  g.backward(l);
  EXPECT_TRUE(z.grad.isZero());
}

TEST(Graph, AttentionGradients) {
  Rng rng(7);
  const int batch = 2, len = 4, hidden = 6, heads = 3;
  auto q = random_param("q", batch * len, hidden, rng);
  auto k = random_param("k", batch * len, hidden, rng);
  auto v = random_param("v", batch * len, hidden, rng);
  expect_grads({&q, &k, &v}, [&](G& g) {
    return weighted_sum(
        g, g.attention(g.param(q), g.param(k), g.param(v), batch, len, heads, {4, 2}));
  });
}

TEST(Graph, AttentionRowsNormalizedAndPaddingIgnored) {
  Rng rng(8);
  const int batch = 2, len = 5, hidden = 4, heads = 2;
  auto q = random_param("q", batch * len, hidden, rng);
  auto k = random_param("k", batch * len, hidden, rng);
  auto v = random_param("v", batch * len, hidden, rng);
  std::vector<Mat<double>> probs;
  G g;
  Var out = g.attention(g.param(q), g.param(k), g.param(v), batch, len, heads, {5, 3}, 0.0, &probs);
  ASSERT_EQ(probs.size(), 4u);
  for (const auto& p : probs) {
    for (int i = 0; i < len; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  }
  EXPECT_TRUE(probs[2].rightCols(2).isZero());
  EXPECT_TRUE(probs[3].rightCols(2).isZero());

  // Changing padded key/value rows of sequence 1 leaves its outputs alone.
  k.value.row(9).setConstant(40.0);
  v.value.row(8).setConstant(-13.0);
  G g2;
  Var out2 = g2.attention(g2.param(q), g2.param(k), g2.param(v), batch, len, heads, {5, 3});
  EXPECT_TRUE(g.value(out).bottomRows(5).isApprox(g2.value(out2).bottomRows(5), 1e-14));
}

TEST(Graph, AttentionDropoutGradients) {
  Rng rng(9);
  auto q = random_param("q", 3, 4, rng), k = random_param("k", 3, 4, rng);
  auto v = random_param("v", 3, 4, rng);
  // The same dropout masks on every evaluation: reseed inside the closure.
  expect_grads({&q, &k, &v}, [&](G& g) {
    Rng masks(123);
    g.set_training(true, &masks);
    return weighted_sum(
        g, g.attention(g.param(q), g.param(k), g.param(v), 1, 3, 2, {3}, 0.4));
  });
}

TEST(Graph, LstmGradientsBothDirections) {
  Rng rng(10);
  const int batch = 2, steps = 4, in = 3, hidden = 5;
  auto x = random_param("x", steps * batch, in, rng);
  auto wi = random_param("w_in", in, 4 * hidden, rng);
  auto wr = random_param("w_rec", hidden, 4 * hidden, rng);
  auto b = random_param("bias", 1, 4 * hidden, rng);
  auto h0 = random_param("h0", batch, hidden, rng);
  auto c0 = random_param("c0", batch, hidden, rng);
  for (bool reverse : {false, true}) {
    expect_grads({&x, &wi, &wr, &b}, [&](G& g) {
      return weighted_sum(
          g, g.lstm(g.param(x), g.param(wi), g.param(wr), g.param(b), batch, reverse));
    });
    expect_grads({&x, &wi, &wr, &b, &h0, &c0}, [&](G& g) {
      return weighted_sum(g, g.lstm(g.param(x), g.param(wi), g.param(wr), g.param(b), batch,
                                    reverse, g.param(h0), g.param(c0)));
    });
  }
}

TEST(Graph, LstmReverseMatchesReversedInput) {
  Rng rng(11);
  const int steps = 5, in = 2, hidden = 3;
  auto x = random_param("x", steps, in, rng);
  auto wi = random_param("w_in", in, 4 * hidden, rng);
  auto wr = random_param("w_rec", hidden, 4 * hidden, rng);
  auto b = random_param("bias", 1, 4 * hidden, rng);
  Mat<double> flipped = x.value.colwise().reverse();
  G g;
  Var fwd = g.lstm(g.constant(flipped), g.param(wi), g.param(wr), g.param(b), 1);
  Var bwd = g.lstm(g.param(x), g.param(wi), g.param(wr), g.param(b), 1, true);
  Mat<double> expect = g.value(fwd).colwise().reverse();
  EXPECT_TRUE(g.value(bwd).isApprox(expect, 1e-14));
}

TEST(Graph, DropoutIsIdentityInEval) {
  P x("x", 2, 3);
  x.value.setConstant(1.5);
  G g;
  Var y = g.dropout(g.param(x), 0.5);
  EXPECT_EQ(y.id, 0);
  Rng rng(1);
  G t(true, &rng);
  const auto& v = t.value(t.dropout(t.param(x), 0.5));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    EXPECT_TRUE(v.data()[i] == 0.0 || v.data()[i] == 3.0);
  }
}

TEST(Graph, ConstantsGetNoGradient) {
  P w("w", 2, 2);
  w.value.setIdentity();
  G g;
  Var c = g.constant(Mat<double>::Ones(3, 2));
  Var l = g.sum(g.matmul(c, g.param(w)));
  EXPECT_FALSE(g.needs_grad(c));
  g.backward(l);
  EXPECT_TRUE(w.grad.isApprox(Mat<double>::Constant(2, 2, 3.0)));
}

TEST(Graph, GradientsAccumulateAcrossGraphs) {
  P w("w", 1, 1);
  w.value(0, 0) = 2.0;
  for (int i = 0; i < 3; ++i) {
    G g;
    g.backward(g.sum(g.mul(g.param(w), g.param(w))));
  }
  EXPECT_DOUBLE_EQ(w.grad(0, 0), 12.0);
}

// ------------------------------------------------------------ optimizers

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_EQ(warmup_linear_decay(1e-4, 100, 1000, 0), 0.0);
  EXPECT_EQ(warmup_linear_decay(1e-4, 100, 1000, 100), 1e-4);
  EXPECT_EQ(warmup_linear_decay(1e-4, 100, 1000, 1000), 0.0);
  EXPECT_DOUBLE_EQ(warmup_linear_decay(1e-4, 100, 1000, 50), 5e-5);
  EXPECT_DOUBLE_EQ(warmup_linear_decay(1e-4, 100, 1000, 550), 5e-5);
  EXPECT_THROW(warmup_linear_decay(1e-4, 100, 1000, 1001), ConfigError);
  EXPECT_THROW(warmup_linear_decay(1e-4, 100, 1000, -1), ConfigError);
}

TEST(AdamW, FirstStepMovesBySignTimesLr) {
  Parameter<float> w("w", 1, 3), b("b", 1, 1, false);
  w.grad << 0.5f, -2.0f, 0.0f;
  b.grad(0, 0) = 1.0f;
  AdamW<float> opt({&w, &b}, {0.9, 0.999, 1e-12, 0.0});
  opt.step(0.1);
  EXPECT_NEAR(w.value(0, 0), -0.1f, 1e-6);
  EXPECT_NEAR(w.value(0, 1), 0.1f, 1e-6);
  EXPECT_NEAR(w.value(0, 2), 0.0f, 1e-6);
  EXPECT_NEAR(b.value(0, 0), -0.1f, 1e-6);
}

TEST(AdamW, DecayOnlyFlaggedParameters) {
  Parameter<float> w("w", 1, 1), g("gain", 1, 1, false);
  w.value(0, 0) = 1.0f;
  g.value(0, 0) = 1.0f;
  w.zero_grad();
  g.zero_grad();
  AdamW<float> opt({&w, &g}, {});
  opt.step(0.5);
  EXPECT_NEAR(w.value(0, 0), 1.0f - 0.5f * 0.01f, 1e-7);
  EXPECT_EQ(g.value(0, 0), 1.0f);
}

TEST(AdamW, MinimizesQuadratic) {
  Parameter<double> w("w", 1, 2);
  w.value << 3.0, -4.0;
  AdamW<double> opt({&w}, {0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 2000; ++i) {
    w.zero_grad();
    Graph<double> g;
    g.backward(g.sum(g.mul(g.param(w), g.param(w))));
    opt.step(0.01);
  }
  EXPECT_LT(w.value.norm(), 1e-2);
}

TEST(Clip, ScalesToMaxNorm) {
  Parameter<double> a("a", 1, 2), b("b", 1, 1);
  a.grad << 3.0, 0.0;
  b.grad << 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({&a, &b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-9);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-9);
}

// ------------------------------------------------------------ tensor files

TEST(TensorFile, RoundTripIsBitExact) {
  TensorFile f;
  f.manifest["kind"] = "test";
  f.manifest["step"] = 12;
  Mat<float> a(2, 3);
  a << 1.0f, -0.0f, 3.25e-20f, std::numeric_limits<float>::max(), 0.1f, -7.5f;
  f.put("layer.w", a);
  f.put("b", Mat<float>::Zero(1, 0));
  std::stringstream ss;
  write_tensor_file(ss, f);
  const auto back = read_tensor_file(ss);
  EXPECT_EQ(back.manifest, f.manifest);
  EXPECT_EQ(back.order, f.order);
  ASSERT_TRUE(back.has("layer.w"));
  EXPECT_EQ(std::memcmp(back.get("layer.w").data(), a.data(), sizeof(float) * 6), 0);
  EXPECT_THROW(back.get("missing"), DataError);
}

TEST(TensorFile, RejectsCorruptInput) {
  std::stringstream bad("LMKTENS1\x02");
  EXPECT_THROW(read_tensor_file(bad), DataError);
  std::stringstream junk("nope");
  EXPECT_THROW(read_tensor_file(junk), DataError);
  TensorFile f;
  f.put("w", Mat<float>::Ones(2, 2));
  std::stringstream ss;
  write_tensor_file(ss, f);
  std::string s = ss.str();
  s.resize(s.size() - 3);
  std::stringstream cut(s);
  EXPECT_THROW(read_tensor_file(cut), DataError);
}

}  // namespace
}  // namespace lmkit::nn
