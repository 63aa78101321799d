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

// Pretraining loop, evaluation, checkpoints and the encoder gradient check.

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "lmkit/encoder/model.hpp"
#include "lmkit/nn/gradcheck.hpp"
#include "lmkit/nn/optim.hpp"
#include "lmkit/nn/tensor_file.hpp"

namespace lmkit::encoder {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double weight_decay = 0.01;
  std::int64_t warmup_steps = 10000;
  std::int64_t total_steps = 1000000;
  int batch_size = 256;
  double clip_norm = 1.0;  // 0 disables clipping

  void validate() const {
    if (!(learning_rate > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1) ||
        !(epsilon > 0) || weight_decay < 0 || warmup_steps < 0 || total_steps <= 0 ||
        batch_size <= 0 || clip_norm < 0) {
      throw ConfigError("optimizer settings must be positive");
    }
    if (warmup_steps >= total_steps) {
      throw ConfigError("warmup steps (" + std::to_string(warmup_steps) +
                        ") must be below total steps (" + std::to_string(total_steps) + ")");
    }
  }

  nlohmann::ordered_json to_json() const {
    return {{"learning_rate", learning_rate}, {"beta1", beta1},
            {"beta2", beta2},                 {"epsilon", epsilon},
            {"weight_decay", weight_decay},   {"warmup_steps", warmup_steps},
            {"total_steps", total_steps},     {"batch_size", batch_size},
            {"clip_norm", clip_norm}};
  }
};

inline double lr_at(const OptimizerConfig& c, std::int64_t step) {
  return nn::warmup_linear_decay(c.learning_rate, c.warmup_steps, c.total_steps, step);
}

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  double total() const { return mlm_loss + nsp_loss; }
};

inline void write_loss_csv(std::ostream& out, const std::vector<LossRecord>& curve) {
  out << "step,lr,mlm_loss,nsp_loss\n";
  char buf[128];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step), r.lr,
                  r.mlm_loss, r.nsp_loss);
    out << buf;
  }
}

// Moving average of the total loss over `window` records ending at index i.
inline double smoothed_loss(const std::vector<LossRecord>& curve, std::size_t i,
                            std::size_t window = 50) {
  const std::size_t lo = i + 1 >= window ? i + 1 - window : 0;
  double s = 0.0;
  for (std::size_t k = lo; k <= i; ++k) s += curve[k].total();
  return s / static_cast<double>(i + 1 - lo);
}

// ---------------------------------------------------------------- checkpoint

inline nn::TensorFile make_checkpoint(const Encoder<float>& model,
                                      nn::AdamW<float>* opt, std::int64_t step,
                                      const Rng* rng) {
  nn::TensorFile f;
  f.manifest["format"] = "lmkit-encoder";
  f.manifest["version"] = 1;
  f.manifest["config"] = model.config().to_json();
  f.manifest["step"] = step;
  f.manifest["rng_state"] = rng ? rng->state() : std::string();
  f.manifest["optimizer_steps"] = opt ? opt->steps() : 0;
  const auto params = model.parameters();
  for (const auto* p : params) f.put(p->name, p->value);
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      f.put("adam.m/" + params[i]->name, opt->first_moments()[i]);
      f.put("adam.v/" + params[i]->name, opt->second_moments()[i]);
    }
  }
  return f;
}

inline Encoder<float> encoder_from_checkpoint(const nn::TensorFile& f) {
  if (f.manifest.value("format", "") != "lmkit-encoder") {
    throw DataError("not an encoder checkpoint");
  }
  Encoder<float> model(EncoderConfig::from_json(f.manifest.at("config")));
  for (auto* p : model.parameters()) nn::restore(*p, f);
  return model;
}

// Restores optimizer moments saved alongside the parameters.
inline void restore_optimizer(nn::AdamW<float>& opt, const nn::TensorFile& f) {
  const auto& params = opt.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    opt.first_moments()[i] = f.get("adam.m/" + params[i]->name);
    opt.second_moments()[i] = f.get("adam.v/" + params[i]->name);
  }
  opt.set_steps(f.manifest.value("optimizer_steps", std::int64_t{0}));
}

// ------------------------------------------------------------------ training

struct TrainOptions {
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_every = 0;  // 0: only the final state
  std::string checkpoint_dir;          // empty: no checkpoint files
  std::function<void(const LossRecord&)> on_step;
};

// Steps for each phase, proportional to its example count; the last phase
// takes the remainder.
inline std::vector<std::int64_t> phase_steps(const std::vector<std::size_t>& sizes,
                                             std::int64_t total) {
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  std::vector<std::int64_t> out;
  std::int64_t used = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    std::int64_t k = i + 1 == sizes.size()
                         ? total - used
                         : std::llround(static_cast<double>(total) * sizes[i] / n);
    k = std::min(k, total - used);
    out.push_back(k);
    used += k;
  }
  return out;
}

// Trains on the phases in order (shorter sequences first, as packed). Each
// phase cycles through its examples in a fresh shuffled order per pass.
inline std::vector<LossRecord> train(Encoder<float>& model,
                                     const std::vector<std::vector<pretrain::PretrainExample>>& phases,
                                     const TrainOptions& o) {
  o.optimizer.validate();
  std::vector<std::size_t> sizes;
  for (const auto& p : phases) sizes.push_back(p.size());
  std::size_t total_examples = 0;
  for (auto s : sizes) total_examples += s;
  if (total_examples == 0) throw DataError("no pretraining examples");

  const auto steps = phase_steps(sizes, o.optimizer.total_steps);
  auto params = model.parameters();
  nn::AdamW<float> opt(params, {o.optimizer.beta1, o.optimizer.beta2, o.optimizer.epsilon,
                                o.optimizer.weight_decay});
  Rng rng = Rng::derive(o.seed, 0x7e41);
  std::vector<LossRecord> curve;
  std::int64_t step = 0;

  auto save = [&](const std::string& tag) {
    if (o.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(o.checkpoint_dir);
    nn::save_tensor_file(o.checkpoint_dir + "/checkpoint-" + tag + ".lmkt",
                         make_checkpoint(model, &opt, step, &rng));
  };

  for (std::size_t p = 0; p < phases.size(); ++p) {
    const auto& data = phases[p];
    if (steps[p] > 0 && data.empty()) throw DataError("packing phase has no examples");
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    for (std::int64_t s = 0; s < steps[p]; ++s) {
      std::vector<const pretrain::PretrainExample*> picked;
      while (static_cast<int>(picked.size()) < o.optimizer.batch_size &&
             picked.size() < data.size()) {
        if (cursor == order.size()) {
          order.resize(data.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          rng.shuffle(order);
          cursor = 0;
        }
        picked.push_back(&data[order[cursor++]]);
      }
      const Batch batch = make_batch(picked);
      nn::zero_grads(params);
      Graph<float> g(true, &rng);
      const auto fwd = model.forward(g, batch);
      const auto loss = pretraining_loss(g, fwd, batch);
      ++step;
      if (!std::isfinite(loss.mlm) || !std::isfinite(loss.nsp)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (phase " +
                           std::to_string(p) + ", batch " + std::to_string(s) + ")");
      }
      g.backward(loss.total);
      if (o.optimizer.clip_norm > 0) nn::clip_grad_norm(params, o.optimizer.clip_norm);
      // The rate used for the update is the one at the step being taken.
      const double lr = lr_at(o.optimizer, step);
      opt.step(lr);
      LossRecord rec{step, lr, loss.mlm, loss.nsp};
      curve.push_back(rec);
      if (o.on_step) o.on_step(rec);
      if (o.checkpoint_every > 0 && step % o.checkpoint_every == 0) {
        save(std::to_string(step));
      }
    }
  }
  save("final");
  return curve;
}

// ---------------------------------------------------------------- evaluation

struct PretrainEval {
  double mlm_accuracy = 0.0;
  double nsp_accuracy = 0.0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
  std::size_t masked = 0;
  std::size_t pairs = 0;
};

template <class T>
PretrainEval evaluate(const Encoder<T>& model, const std::vector<pretrain::PretrainExample>& data,
                      int batch_size = 32) {
  PretrainEval e;
  std::size_t mlm_hits = 0, nsp_hits = 0;
  double mlm_sum = 0.0, nsp_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<const pretrain::PretrainExample*> picked;
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
      picked.push_back(&data[i]);
    }
    const Batch b = make_batch(picked);
    Graph<T> g;
    const auto f = model.forward(g, b);
    const auto l = pretraining_loss(g, f, b);
    mlm_sum += l.mlm * static_cast<double>(b.mlm_labels.size());
    nsp_sum += l.nsp * static_cast<double>(b.size);
    if (f.mlm_logits.valid()) {
      const auto& z = g.value(f.mlm_logits);
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::Index arg;
        z.row(i).maxCoeff(&arg);
        mlm_hits += arg == b.mlm_labels[i];
      }
    }
    const auto& n = g.value(f.nsp_logits);
    for (int i = 0; i < b.size; ++i) nsp_hits += (n(i, 1) > n(i, 0) ? 1 : 0) == b.nsp_labels[i];
    e.masked += b.mlm_labels.size();
    e.pairs += b.size;
  }
  if (e.masked) {
    e.mlm_accuracy = static_cast<double>(mlm_hits) / e.masked;
    e.mlm_loss = mlm_sum / e.masked;
  }
  if (e.pairs) {
    e.nsp_accuracy = static_cast<double>(nsp_hits) / e.pairs;
    e.nsp_loss = nsp_sum / e.pairs;
  }
  return e;
}

// ------------------------------------------------------------ gradient check

// A two-example batch with padding, masked tokens in both examples and
// both NSP labels.
inline Batch grad_check_batch(int vocab) {
  const int v = vocab - subword::kNumSpecials;
  auto tok = [&](int i) { return subword::kNumSpecials + (i % v); };
  pretrain::PretrainExample a, b;
  a.ids = {subword::kClsId, tok(0), subword::kMaskId, tok(3), subword::kSepId, tok(5), tok(1),
           subword::kSepId};
  a.segment_ids = {0, 0, 0, 0, 0, 1, 1, 1};
  a.masked_positions = {2, 6};
  a.masked_labels = {tok(2), tok(1)};
  a.is_next = true;
  b.ids = {subword::kClsId, tok(4), subword::kSepId, subword::kMaskId, subword::kSepId};
  b.segment_ids = {0, 0, 0, 1, 1};
  b.masked_positions = {3};
  b.masked_labels = {tok(7)};
  b.is_next = false;
  return make_batch(std::vector<pretrain::PretrainExample>{a, b});
}

// Checks every parameter tensor of a double-precision encoder (dropout off)
// against central differences on grad_check_batch.
inline nn::GradCheckReport grad_check(EncoderConfig config, std::uint64_t seed = 1,
                                      double eps = 1e-5) {
  config.dropout = 0.0;
  config.validate();
  Encoder<double> model(config);
  model.init(seed);
  // Break the symmetry of the zero-initialized biases and unit gains so
  // their gradients are exercised in a generic position.
  Rng rng(seed + 1);
  for (auto* p : model.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      p->value.data()[i] += rng.normal(0.0, 0.1);
    }
  }
  const Batch batch = grad_check_batch(config.vocab_size);
  return nn::grad_check(
      model.parameters(),
      [&](Graph<double>& g) { return pretraining_loss(g, model.forward(g, batch), batch).total; },
      eps);
}

}  // namespace lmkit::encoder
