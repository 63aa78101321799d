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


// Pieces shared by the sequence tagger and the document classifier: a
// bidirectional LSTM layer and an SGD loop with dev-driven learning-rate
// annealing and best-dev snapshots.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/optim.hpp"
#include "lmkit/nn/tensor_file.hpp"

namespace lmkit::tagger {

using nn::Graph;
using nn::Parameter;
using nn::Var;

class BiLstm {
 public:
  BiLstm(const std::string& prefix, int input, int hidden)
      : hidden_(hidden),
        fwd_in_(prefix + ".forward.input.weight", input, 4 * hidden),
        fwd_rec_(prefix + ".forward.recurrent.weight", hidden, 4 * hidden),
        fwd_bias_(prefix + ".forward.bias", 1, 4 * hidden, false),
        bwd_in_(prefix + ".backward.input.weight", input, 4 * hidden),
        bwd_rec_(prefix + ".backward.recurrent.weight", hidden, 4 * hidden),
        bwd_bias_(prefix + ".backward.bias", 1, 4 * hidden, false) {}

  int hidden() const { return hidden_; }

  // Uniform(+-1/sqrt(hidden)) weights, forget-gate bias 1.
  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_));
    for (auto* p : parameters()) {
      if (p->decay) {
        nn::init_uniform(*p, rng, bound);
      } else {
        p->value.setZero();
        p->value.middleCols(hidden_, hidden_).setOnes();
      }
    }
  }

  std::vector<Parameter<float>*> parameters() {
    return {&fwd_in_, &fwd_rec_, &fwd_bias_, &bwd_in_, &bwd_rec_, &bwd_bias_};
  }

  // One sequence, one row per step. Returns [forward, backward] states.
  Var forward(Graph<float>& g, Var x) {
    Var f = g.lstm(x, g.param(fwd_in_), g.param(fwd_rec_), g.param(fwd_bias_), 1, false);
    Var b = g.lstm(x, g.param(bwd_in_), g.param(bwd_rec_), g.param(bwd_bias_), 1, true);
    return g.concat_cols({f, b});
  }

 private:
  int hidden_;
  Parameter<float> fwd_in_, fwd_rec_, fwd_bias_, bwd_in_, bwd_rec_, bwd_bias_;
};

// Values of every parameter, for best-epoch snapshots.
class Snapshot {
 public:
  explicit Snapshot(const std::vector<Parameter<float>*>& params) {
    for (const auto* p : params) values_.push_back(p->value);
  }
  void restore(const std::vector<Parameter<float>*>& params) const {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values_[i];
  }

 private:
  std::vector<nn::Mat<float>> values_;
};

struct SgdSchedule {
  double learning_rate = 0.1;
  int max_epochs = 20;
  int batch_size = 32;
  int patience = 3;            // epochs without dev improvement before annealing
  double anneal_factor = 0.5;  // 0 turns annealing into plain early stopping
  double min_learning_rate = 1e-4;
  double clip_norm = 5.0;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (anneal_factor < 0 || anneal_factor >= 1) throw ConfigError("anneal factor must be in [0, 1)");
  }

  nlohmann::ordered_json to_json() const {
    return {{"learning_rate", learning_rate}, {"max_epochs", max_epochs},
            {"batch_size", batch_size},       {"patience", patience},
            {"anneal_factor", anneal_factor}, {"min_learning_rate", min_learning_rate},
            {"clip_norm", clip_norm}};
  }
  static SgdSchedule from_json(const nlohmann::json& j) {
    SgdSchedule s;
    s.learning_rate = j.at("learning_rate");
    s.max_epochs = j.at("max_epochs");
    s.batch_size = j.at("batch_size");
    s.patience = j.at("patience");
    s.anneal_factor = j.at("anneal_factor");
    s.min_learning_rate = j.at("min_learning_rate");
    s.clip_norm = j.at("clip_norm");
    return s;
  }

  // max-epoch 50, learning rate 0.1, minibatch 64, patience 3.
  static SgdSchedule paper() {
    SgdSchedule s;
    s.max_epochs = 50;
    s.learning_rate = 0.1;
    s.batch_size = 64;
    s.patience = 3;
    return s;
  }
};

struct EpochStat {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;    // mean per example
  double dev_score = 0.0;     // higher is better; minus train loss without dev data
  bool improved = false;
};

// Minibatch SGD over `n` training examples. `batch_loss` builds the summed
// loss of the given examples; `dev_score` returns nullopt when there is no
// dev data, in which case the negated train loss drives annealing. The
// parameters of the best epoch are restored at the end.
inline std::vector<EpochStat> run_sgd(
    const std::vector<Parameter<float>*>& params, std::size_t n, const SgdSchedule& s, Rng& rng,
    const std::function<Var(Graph<float>&, const std::vector<std::size_t>&)>& batch_loss,
    const std::function<std::optional<double>()>& dev_score,
    const std::function<void(const EpochStat&)>& on_epoch = nullptr) {
  s.validate();
  if (n == 0) throw DataError("empty training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochStat> history;
  std::optional<Snapshot> best;
  double best_score = -std::numeric_limits<double>::infinity();
  double lr = s.learning_rate;
  int bad_epochs = 0;
  for (int epoch = 1; epoch <= s.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(s.batch_size)) {
      const std::vector<std::size_t> batch(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + s.batch_size)));
      nn::zero_grads(params);
      Graph<float> g(true, &rng);
      Var total = batch_loss(g, batch);
      const double l = g.scalar(total);
      if (!std::isfinite(l)) {
        throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
      }
      loss_sum += l;
      g.backward(g.scale(total, 1.0f / static_cast<float>(batch.size())));
      if (s.clip_norm > 0) nn::clip_grad_norm(params, s.clip_norm);
      nn::sgd_step(params, lr);
    }
    EpochStat st;
    st.epoch = epoch;
    st.learning_rate = lr;
    st.train_loss = loss_sum / static_cast<double>(n);
    const auto dev = dev_score();
    st.dev_score = dev ? *dev : -st.train_loss;
    st.improved = st.dev_score > best_score;
    if (st.improved) {
      best_score = st.dev_score;
      best.emplace(params);
      bad_epochs = 0;
    } else if (++bad_epochs > s.patience) {
      lr *= s.anneal_factor;
      bad_epochs = 0;
    }
    history.push_back(st);
    if (on_epoch) on_epoch(st);
    if (lr < s.min_learning_rate) break;
  }
  if (best) best->restore(params);
  return history;
}

inline void put_parameters(nn::TensorFile& f, const std::vector<Parameter<float>*>& params) {
  for (const auto* p : params) f.put(p->name, p->value);
}

inline void get_parameters(const nn::TensorFile& f, const std::vector<Parameter<float>*>& params) {
  for (auto* p : params) nn::restore(*p, f, "");
}

}  // namespace lmkit::tagger
