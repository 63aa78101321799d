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


// BiLSTM-CRF sequence tagger over frozen word features.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/eval/metrics.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/tensor_file.hpp"
#include "lmkit/tagger/crf.hpp"
#include "lmkit/tagger/data.hpp"
#include "lmkit/tagger/embeddings.hpp"
#include "lmkit/tagger/heads.hpp"

namespace lmkit::tagger {

// What the dev set is scored with.
enum class TagMetric { kAccuracy, kSpanF1 };

inline TagMetric parse_tag_metric(const std::string& s) {
  if (s == "accuracy") return TagMetric::kAccuracy;
  if (s == "span-f1") return TagMetric::kSpanF1;
  throw ConfigError("tag metric must be accuracy or span-f1, got '" + s + "'");
}

inline std::string to_string(TagMetric m) {
  return m == TagMetric::kAccuracy ? "accuracy" : "span-f1";
}

struct TaggerConfig {
  int hidden = 256;  // per direction
  double dropout = 0.5;
  TagMetric metric = TagMetric::kAccuracy;
  std::uint64_t seed = 1;
  SgdSchedule schedule;

  void validate() const {
    if (hidden < 1) throw ConfigError("tagger hidden size must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    schedule.validate();
  }

  nlohmann::ordered_json to_json() const {
    return {{"hidden", hidden},
            {"dropout", dropout},
            {"metric", to_string(metric)},
            {"seed", seed},
            {"schedule", schedule.to_json()}};
  }
  static TaggerConfig from_json(const nlohmann::json& j) {
    TaggerConfig c;
    c.hidden = j.at("hidden");
    c.dropout = j.at("dropout");
    c.metric = parse_tag_metric(j.at("metric"));
    c.seed = j.at("seed");
    c.schedule = SgdSchedule::from_json(j.at("schedule"));
    return c;
  }

  static TaggerConfig paper() {
    TaggerConfig c;
    c.schedule = SgdSchedule::paper();
    return c;
  }
};

class SequenceTagger {
 public:
  SequenceTagger(int input_dim, LabelSet tags, const TaggerConfig& config)
      : input_dim_(input_dim),
        tags_(std::move(tags)),
        config_(config),
        rnn_("bilstm", input_dim, config.hidden),
        out_w_("output.weight", 2 * config.hidden, tags_.size()),
        out_b_("output.bias", 1, tags_.size(), false),
        transitions_("crf.transitions", tags_.size(), tags_.size(), false),
        start_("crf.start", 1, tags_.size(), false),
        stop_("crf.stop", 1, tags_.size(), false) {
    config_.validate();
    if (input_dim < 1) throw ConfigError("tagger input dimension must be >= 1");
    if (tags_.size() < 1) throw ConfigError("empty tag set");
  }

  SequenceTagger(SequenceTagger&&) = default;

  void init(std::uint64_t seed) {
    Rng rng(seed);
    rnn_.init(rng);
    nn::init_uniform(out_w_, rng, std::sqrt(6.0 / (2.0 * config_.hidden + tags_.size())));
    for (auto* p : {&out_b_, &transitions_, &start_, &stop_}) p->value.setZero();
    nn::zero_grads(parameters());
  }

  const LabelSet& tags() const { return tags_; }
  const TaggerConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }

  std::vector<Parameter<float>*> parameters() {
    auto out = rnn_.parameters();
    for (auto* p : {&out_w_, &out_b_, &transitions_, &start_, &stop_}) out.push_back(p);
    return out;
  }

  // L x tags emission scores for one sentence of features.
  Var emissions(Graph<float>& g, const Mat<float>& features) {
    if (features.cols() != input_dim_) throw ConfigError("tagger: feature dimension mismatch");
    Var x = g.dropout(g.constant(features), config_.dropout);
    Var h = g.dropout(rnn_.forward(g, x), config_.dropout);
    return g.linear(h, g.param(out_w_), g.param(out_b_));
  }

  Var loss(Graph<float>& g, const Mat<float>& features, const std::vector<int>& gold) {
    return crf_nll(g, emissions(g, features), g.param(transitions_), g.param(start_),
                   g.param(stop_), gold);
  }

  CrfParams<float> crf() const { return {transitions_.value, start_.value, stop_.value}; }

  std::vector<int> decode(const Mat<float>& features) {
    if (features.rows() == 0) return {};
    Graph<float> g;
    return crf_viterbi(g.value(emissions(g, features)), crf()).tags;
  }

  std::vector<std::string> predict(const Mat<float>& features) {
    std::vector<std::string> out;
    for (int id : decode(features)) out.push_back(tags_.label(id));
    return out;
  }

  nn::TensorFile to_file(const nlohmann::ordered_json& embedder) {
    nn::TensorFile f;
    f.manifest["format"] = "lmkit-tagger";
    f.manifest["config"] = config_.to_json();
    f.manifest["input_dim"] = input_dim_;
    f.manifest["tags"] = tags_.to_json();
    f.manifest["embedder"] = embedder;
    put_parameters(f, parameters());
    return f;
  }

  static SequenceTagger from_file(const nn::TensorFile& f) {
    if (f.manifest.value("format", "") != "lmkit-tagger") throw DataError("not a tagger file");
    SequenceTagger m(f.manifest.at("input_dim").get<int>(), LabelSet::from_json(f.manifest.at("tags")),
                     TaggerConfig::from_json(f.manifest.at("config")));
    get_parameters(f, m.parameters());
    return m;
  }

 private:
  int input_dim_;
  LabelSet tags_;
  TaggerConfig config_;
  BiLstm rnn_;
  Parameter<float> out_w_, out_b_, transitions_, start_, stop_;
};

inline std::vector<Mat<float>> featurize(WordEmbedder& embedder,
                                         const std::vector<TaggedSentence>& data) {
  std::vector<Mat<float>> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(embedder.embed(s.tokens));
  return out;
}

inline double tag_score(TagMetric metric, const std::vector<eval::TagSequence>& gold,
                        const std::vector<eval::TagSequence>& predicted) {
  return metric == TagMetric::kAccuracy ? eval::word_accuracy(gold, predicted)
                                        : eval::conll_prf(gold, predicted).f1;
}

struct TrainedTagger {
  SequenceTagger model;
  std::vector<EpochStat> history;
};

// Trains on `train` only; `dev` selects the best epoch and drives annealing.
// The tag set is closed over both.
inline TrainedTagger train_tagger(const std::vector<TaggedSentence>& train,
                                  const std::vector<TaggedSentence>& dev, WordEmbedder& embedder,
                                  const TaggerConfig& config,
                                  const std::function<void(const EpochStat&)>& on_epoch = nullptr) {
  if (train.empty()) throw DataError("empty tagging training set");
  for (const auto* set : {&train, &dev}) {
    for (const auto& s : *set) {
      if (s.tokens.size() != s.tags.size() || s.tokens.empty()) {
        throw DataError("tagged sentence with mismatched or empty columns");
      }
    }
  }
  SequenceTagger model(embedder.dim(), tagset_of({&train, &dev}), config);
  model.init(config.seed);
  embedder.reset();
  const auto train_x = featurize(embedder, train);
  const auto dev_x = featurize(embedder, dev);
  std::vector<std::vector<int>> gold;
  for (const auto& s : train) {
    gold.emplace_back();
    for (const auto& t : s.tags) gold.back().push_back(model.tags().id(t));
  }
  std::vector<eval::TagSequence> dev_gold;
  for (const auto& s : dev) dev_gold.push_back(s.tags);
  Rng rng = Rng::derive(config.seed, 0x7a62);
  auto history = run_sgd(
      model.parameters(), train.size(), config.schedule, rng,
      [&](Graph<float>& g, const std::vector<std::size_t>& batch) {
        Var total;
        for (auto i : batch) {
          Var l = model.loss(g, train_x[i], gold[i]);
          total = total.valid() ? g.add(total, l) : l;
        }
        return total;
      },
      [&]() -> std::optional<double> {
        if (dev.empty()) return std::nullopt;
        std::vector<eval::TagSequence> pred;
        for (const auto& x : dev_x) pred.push_back(model.predict(x));
        return tag_score(config.metric, dev_gold, pred);
      },
      on_epoch);
  return {std::move(model), std::move(history)};
}

// Fills `predicted` of every sentence.
inline void tag_sentences(SequenceTagger& model, WordEmbedder& embedder,
                          std::vector<TaggedSentence>& data) {
  for (auto& s : data) s.predicted = model.predict(embedder.embed(s.tokens));
}

}  // namespace lmkit::tagger
