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

#include <cmath>
#include <sstream>

#include "lmkit/encoder/model.hpp"
#include "lmkit/encoder/train.hpp"

namespace lmkit::encoder {
namespace {

EncoderConfig tiny(int vocab = 20) {
  EncoderConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.max_positions = 16;
  c.vocab_size = vocab;
  c.dropout = 0.0;
  return c;
}

TEST(Config, ParameterCountOfBaseShape) {
  const double n = static_cast<double>(parameter_count(EncoderConfig::base(30522)));
  EXPECT_NEAR(n / 110e6, 1.0, 0.05);
}

TEST(Config, ToyParameterCountMatchesShapeSum) {
  EncoderConfig c;
  c.layers = 2;
  c.hidden = 32;
  c.heads = 2;
  c.vocab_size = 100;
  // embeddings 100*32 + 512*32 + 2*32 + 2*32 = 19712
  // per layer 4*(32*32+32) + 2*32 + (32*128+128) + (128*32+32) + 2*32 = 12704
  // mlm head (32*32+32) + 2*32 + 100 = 1220
  // pooler + nsp (32*32+32) + (32*2+2) = 1122
  EXPECT_EQ(parameter_count(c), 47462);
  Encoder<float> m(c);
  EXPECT_EQ(m.count(), 47462);
}

TEST(Config, Validation) {
  auto c = tiny();
  c.hidden = 10;
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(4);
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(EncoderConfig::from_json(tiny().to_json()).to_json(), tiny().to_json());
}

TEST(Init, SameSeedSameParameters) {
  Encoder<float> a(tiny()), b(tiny()), c(tiny());
  a.init(5);
  b.init(5);
  c.init(6);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    differs = differs || pa[i]->value != pc[i]->value;
  }
  EXPECT_TRUE(differs);
  EXPECT_TRUE(a.find("embeddings.norm.gain")->value.isOnes());
  EXPECT_FALSE(a.find("layer0.ffn.in.bias")->decay);
  EXPECT_TRUE(a.find("layer0.ffn.in.weight")->decay);
}

Batch sample_batch() { return grad_check_batch(20); }

TEST(Forward, ShapesAndAttentionRows) {
  Encoder<double> m(tiny());
  m.init(1);
  const Batch b = sample_batch();
  Graph<double> g;
  std::vector<Mat<double>> attn;
  const auto f = m.forward(g, b, &attn);
  EXPECT_EQ(g.value(f.nsp_logits).rows(), 2);
  EXPECT_EQ(g.value(f.nsp_logits).cols(), 2);
  EXPECT_EQ(g.value(f.mlm_logits).rows(), 3);
  EXPECT_EQ(g.value(f.mlm_logits).cols(), 20);
  ASSERT_EQ(attn.size(), 4u);  // 2 examples x 2 heads x 1 layer
  for (const auto& p : attn) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-6);
  }
  // Example 1 has 5 real tokens out of 8.
  for (int h = 2; h < 4; ++h) EXPECT_TRUE(attn[h].topRightCorner(5, 3).isZero());
}

TEST(Forward, BatchPermutationPermutesOutputs) {
  Encoder<double> m(tiny());
  m.init(2);
  Batch b = sample_batch();
  Batch swapped = b;
  const int len = b.len;
  for (int t = 0; t < len; ++t) {
    std::swap(swapped.ids[t], swapped.ids[len + t]);
    std::swap(swapped.segments[t], swapped.segments[len + t]);
  }
  std::swap(swapped.lengths[0], swapped.lengths[1]);
  swapped.mlm_rows.clear();
  swapped.mlm_labels.clear();
  std::swap(swapped.nsp_labels[0], swapped.nsp_labels[1]);
  Graph<double> g1, g2;
  const auto f1 = m.encode(g1, b);
  const auto f2 = m.encode(g2, swapped);
  EXPECT_TRUE(g1.value(f1.hidden).topRows(len).isApprox(g2.value(f2.hidden).bottomRows(len), 1e-12));
  EXPECT_TRUE(g1.value(f1.pooled).row(0).isApprox(g2.value(f2.pooled).row(1), 1e-12));
}

TEST(Forward, EvalModeIsDeterministic) {
  auto c = tiny();
  c.dropout = 0.3;
  Encoder<float> m(c);
  m.init(3);
  const Batch b = sample_batch();
  Graph<float> g1, g2;
  EXPECT_EQ(g1.value(m.forward(g1, b).nsp_logits), g2.value(m.forward(g2, b).nsp_logits));
}

TEST(Forward, RejectsLongSequences) {
  auto c = tiny();
  c.max_positions = 6;
  Encoder<float> m(c);
  m.init(1);
  Graph<float> g;
  EXPECT_THROW(m.forward(g, sample_batch()), ConfigError);
}

TEST(Loss, UniformLogitsGiveLogV) {
  Graph<double> g;
  Var mlm = g.constant(Mat<double>::Zero(4, 1000));
  Var nsp = g.constant(Mat<double>::Zero(2, 2));
  const auto l = pretraining_loss(g, mlm, {1, 2, 3, 999}, nsp, {0, 1});
  EXPECT_NEAR(l.mlm, std::log(1000.0), 1e-9);
  EXPECT_NEAR(l.nsp, std::log(2.0), 1e-12);
  EXPECT_EQ(g.scalar(l.total), l.mlm + l.nsp);
}

TEST(Loss, HandComputedFixture) {
  // MLM rows: p(label) = 2/4 and 3/5; NSP: p(label) = 3/4.
  Mat<double> mlm(2, 3), nsp(1, 2);
  mlm << 0, std::log(2.0), 0, std::log(3.0), 0, 0;
  nsp << 0, std::log(3.0);
  Graph<double> g;
  const auto l = pretraining_loss(g, g.constant(mlm), {1, 0}, g.constant(nsp), {1});
  const double expect_mlm = (std::log(2.0) + std::log(5.0 / 3.0)) / 2;
  const double expect_nsp = std::log(4.0 / 3.0);
  EXPECT_NEAR(l.mlm, expect_mlm, 1e-12);
  EXPECT_NEAR(l.nsp, expect_nsp, 1e-12);
  EXPECT_NEAR(g.scalar(l.total), 0.889668474614749, 1e-12);
  EXPECT_EQ(g.scalar(l.total), l.mlm + l.nsp);
}

TEST(Loss, PerfectLogitsApproachZero) {
  Mat<double> mlm = Mat<double>::Zero(2, 5), nsp = Mat<double>::Zero(1, 2);
  mlm(0, 3) = 60;
  mlm(1, 0) = 60;
  nsp(0, 0) = 60;
  Graph<double> g;
  const auto l = pretraining_loss(g, g.constant(mlm), {3, 0}, g.constant(nsp), {0});
  EXPECT_LT(g.scalar(l.total), 1e-20);
}

TEST(Loss, NoMaskedPositionsGivesZeroMlm) {
  Encoder<double> m(tiny());
  m.init(1);
  Batch b = sample_batch();
  b.mlm_rows.clear();
  b.mlm_labels.clear();
  Graph<double> g;
  const auto f = m.forward(g, b);
  EXPECT_FALSE(f.mlm_logits.valid());
  const auto l = pretraining_loss(g, f, b);
  EXPECT_EQ(l.mlm, 0.0);
  EXPECT_EQ(g.scalar(l.total), l.nsp);
  EXPECT_THROW(pretraining_loss(g, f.mlm_logits, {}, f.nsp_logits, {}), ConfigError);
}

TEST(Schedule, LrAtFixedPoints) {
  OptimizerConfig c;
  c.warmup_steps = 10000;
  c.total_steps = 100000;
  EXPECT_EQ(lr_at(c, 0), 0.0);
  EXPECT_EQ(lr_at(c, 10000), 1e-4);
  EXPECT_EQ(lr_at(c, 100000), 0.0);
  EXPECT_THROW(lr_at(c, 100001), ConfigError);
  double prev = -1;
  for (std::int64_t s = 0; s <= 10000; s += 500) {
    EXPECT_GT(lr_at(c, s), prev);
    prev = lr_at(c, s);
  }
  for (std::int64_t s = 10000; s <= 100000; s += 5000) {
    EXPECT_LE(lr_at(c, s), prev);
    prev = lr_at(c, s);
  }
  c.warmup_steps = c.total_steps;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GradCheck, TinyEncoderWithinTolerance) {
  const auto rep = grad_check(tiny(), 1);
  EXPECT_LT(rep.max_relative_error(), 1e-4);
  EXPECT_TRUE(rep.failing(1e-4).empty());
  EXPECT_EQ(rep.groups.size(), Encoder<double>(tiny()).parameters().size());
}

TEST(GradCheck, DegenerateZeroModelHasFiniteGradients) {
  Encoder<double> m(tiny());
  for (auto* p : m.parameters()) {
    p->value.setZero();
    p->zero_grad();
  }
  const Batch b = sample_batch();
  Graph<double> g;
  g.backward(pretraining_loss(g, m.forward(g, b), b).total);
  for (auto* p : m.parameters()) EXPECT_TRUE(p->grad.allFinite()) << p->name;
}

TEST(GradCheck, AbsentTokensGetZeroEmbeddingGradient) {
  Encoder<double> m(tiny(40));
  m.init(4);
  const Batch b = sample_batch();
  // Without the tied decoder only the input lookup reaches the table.
  Graph<double> g;
  const auto f = m.encode(g, b);
  g.backward(g.sum(g.mul(f.hidden, f.hidden)));
  const auto& grad = m.find("embeddings.word")->grad;
  std::vector<bool> present(40, false);
  for (int id : b.ids) present[id] = true;
  for (int r = 0; r < 40; ++r) {
    if (!present[r]) { EXPECT_TRUE(grad.row(r).isZero()) << r; }
  }
}

TEST(Checkpoint, RoundTripReproducesForwardBitwise) {
  auto c = tiny();
  c.dropout = 0.1;
  Encoder<float> m(c);
  m.init(9);
  nn::AdamW<float> opt(m.parameters(), {});
  for (auto* p : m.parameters()) p->grad.setConstant(0.01f);
  opt.step(1e-3);
  Rng rng(3);
  std::stringstream ss;
  nn::write_tensor_file(ss, make_checkpoint(m, &opt, 1, &rng));
  const auto file = nn::read_tensor_file(ss);
  EXPECT_EQ(file.manifest["step"], 1);
  EXPECT_EQ(file.manifest["rng_state"], rng.state());
  auto back = encoder_from_checkpoint(file);
  const Batch b = sample_batch();
  Graph<float> g1, g2;
  const auto f1 = m.forward(g1, b), f2 = back.forward(g2, b);
  EXPECT_EQ(g1.value(f1.mlm_logits), g2.value(f2.mlm_logits));
  EXPECT_EQ(g1.value(f1.nsp_logits), g2.value(f2.nsp_logits));
  nn::AdamW<float> opt2(back.parameters(), {});
  restore_optimizer(opt2, file);
  EXPECT_EQ(opt2.steps(), 1);
  EXPECT_EQ(opt2.first_moments()[0], opt.first_moments()[0]);
}

TEST(Train, PhaseStepsFollowExampleShares) {
  EXPECT_EQ(phase_steps({900, 100}, 2000), (std::vector<std::int64_t>{1800, 200}));
  EXPECT_EQ(phase_steps({5}, 7), (std::vector<std::int64_t>{7}));
}

TEST(Train, ShortRunReducesLossAndIsDeterministic) {
  auto c = tiny(12);
  c.hidden = 16;
  Encoder<float> m1(c), m2(c);
  m1.init(1);
  m2.init(1);
  // One fixed example: the loss should drop when it is memorized.
  pretrain::PretrainExample ex;
  ex.ids = {2, 5, 4, 7, 3, 8, 9, 3};
  ex.segment_ids = {0, 0, 0, 0, 0, 1, 1, 1};
  ex.masked_positions = {2};
  ex.masked_labels = {6};
  ex.is_next = true;
  TrainOptions o;
  o.optimizer.learning_rate = 1e-2;
  o.optimizer.warmup_steps = 5;
  o.optimizer.total_steps = 60;
  o.optimizer.batch_size = 1;
  const auto curve = train(m1, {{ex}}, o);
  ASSERT_EQ(curve.size(), 60u);
  EXPECT_LT(curve.back().total(), 0.2 * curve.front().total());
  EXPECT_DOUBLE_EQ(curve.front().lr, lr_at(o.optimizer, 1));
  const auto again = train(m2, {{ex}}, o);
  EXPECT_EQ(again.back().mlm_loss, curve.back().mlm_loss);
  std::ostringstream csv;
  write_loss_csv(csv, curve);
  EXPECT_EQ(csv.str().substr(0, 28), "step,lr,mlm_loss,nsp_loss\n1,");
}

}  // namespace
}  // namespace lmkit::encoder
