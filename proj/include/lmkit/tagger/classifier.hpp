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


// Document classifier: word features, optional linear reprojection, one
// BiLSTM layer whose final forward and backward states form the document
// vector, then a linear layer over the classes.

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
#include "lmkit/core/text.hpp"
#include "lmkit/eval/metrics.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/tensor_file.hpp"
#include "lmkit/tagger/data.hpp"
#include "lmkit/tagger/embeddings.hpp"
#include "lmkit/tagger/heads.hpp"

namespace lmkit::tagger {

struct ClassifierConfig {
  int hidden = 128;  // per direction
  double dropout = 0.3068;
  bool reproject = true;
  std::uint64_t seed = 1;
  SgdSchedule schedule;

  void validate() const {
    if (hidden < 1) throw ConfigError("classifier hidden size must be >= 1");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
    schedule.validate();
  }

  nlohmann::ordered_json to_json() const {
    return {{"hidden", hidden},
            {"dropout", dropout},
            {"reproject", reproject},
            {"seed", seed},
            {"schedule", schedule.to_json()}};
  }
  static ClassifierConfig from_json(const nlohmann::json& j) {
    ClassifierConfig c;
    c.hidden = j.at("hidden");
    c.dropout = j.at("dropout");
    c.reproject = j.at("reproject");
    c.seed = j.at("seed");
    c.schedule = SgdSchedule::from_json(j.at("schedule"));
    return c;
  }

  static ClassifierConfig paper() {
    ClassifierConfig c;
    c.schedule = SgdSchedule::paper();
    return c;
  }
};

inline std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  for (auto w : text::split_whitespace(text)) out.emplace_back(w);
  return out;
}

class DocumentClassifier {
 public:
  DocumentClassifier(int input_dim, LabelSet classes, const ClassifierConfig& config)
      : input_dim_(input_dim),
        classes_(std::move(classes)),
        config_(config),
        proj_w_("reprojection.weight", input_dim, input_dim),
        proj_b_("reprojection.bias", 1, input_dim, false),
        rnn_("bilstm", input_dim, config.hidden),
        out_w_("output.weight", 2 * config.hidden, classes_.size()),
        out_b_("output.bias", 1, classes_.size(), false) {
    config_.validate();
    if (input_dim < 1) throw ConfigError("classifier input dimension must be >= 1");
  }

  DocumentClassifier(DocumentClassifier&&) = default;

  void init(std::uint64_t seed) {
    Rng rng(seed);
    nn::init_uniform(proj_w_, rng, std::sqrt(3.0 / input_dim_));
    proj_b_.value.setZero();
    rnn_.init(rng);
    nn::init_uniform(out_w_, rng, std::sqrt(6.0 / (2.0 * config_.hidden + classes_.size())));
    out_b_.value.setZero();
    nn::zero_grads(parameters());
  }

  const LabelSet& classes() const { return classes_; }
  const ClassifierConfig& config() const { return config_; }
  int input_dim() const { return input_dim_; }

  std::vector<Parameter<float>*> parameters() {
    std::vector<Parameter<float>*> out;
    if (config_.reproject) out = {&proj_w_, &proj_b_};
    for (auto* p : rnn_.parameters()) out.push_back(p);
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
  }

  // 1 x classes scores for one document.
  Var logits(Graph<float>& g, const Mat<float>& features) {
    if (features.cols() != input_dim_ || features.rows() == 0) {
      throw ConfigError("classifier: bad feature matrix");
    }
    Var x = g.constant(features);
    if (config_.reproject) x = g.linear(x, g.param(proj_w_), g.param(proj_b_));
    x = g.dropout(x, config_.dropout);
    Var h = rnn_.forward(g, x);
    const int last = static_cast<int>(features.rows()) - 1, hid = config_.hidden;
    Var doc = g.concat_cols({g.slice_cols(g.gather_rows(h, {last}), 0, hid),
                             g.slice_cols(g.gather_rows(h, {0}), hid, hid)});
    doc = g.dropout(doc, config_.dropout);
    return g.linear(doc, g.param(out_w_), g.param(out_b_));
  }

  Var loss(Graph<float>& g, const Mat<float>& features, int label) {
    return g.softmax_cross_entropy(logits(g, features), {label});
  }

  int predict_id(const Mat<float>& features) {
    Graph<float> g;
    Eigen::Index arg = 0;
    g.value(logits(g, features)).row(0).maxCoeff(&arg);
    return static_cast<int>(arg);
  }

  std::string predict(const Mat<float>& features) { return classes_.label(predict_id(features)); }

  nn::TensorFile to_file(const nlohmann::ordered_json& embedder) {
    nn::TensorFile f;
    f.manifest["format"] = "lmkit-classifier";
    f.manifest["config"] = config_.to_json();
    f.manifest["input_dim"] = input_dim_;
    f.manifest["classes"] = classes_.to_json();
    f.manifest["embedder"] = embedder;
    put_parameters(f, parameters());
    return f;
  }

  static DocumentClassifier from_file(const nn::TensorFile& f) {
    if (f.manifest.value("format", "") != "lmkit-classifier") {
      throw DataError("not a classifier file");
    }
    DocumentClassifier m(f.manifest.at("input_dim").get<int>(),
                         LabelSet::from_json(f.manifest.at("classes")),
                         ClassifierConfig::from_json(f.manifest.at("config")));
    get_parameters(f, m.parameters());
    return m;
  }

 private:
  int input_dim_;
  LabelSet classes_;
  ClassifierConfig config_;
  Parameter<float> proj_w_, proj_b_;
  BiLstm rnn_;
  Parameter<float> out_w_, out_b_;
};

// Every label of `eval` must be known to `train`'s label set.
inline void check_label_coverage(const LabelSet& known, const std::vector<LabeledText>& eval) {
  for (const auto& d : eval) {
    if (!known.contains(d.label)) {
      throw DataError("label set mismatch: '" + d.label + "' does not occur in training data");
    }
  }
}

struct TrainedClassifier {
  DocumentClassifier model;
  std::vector<EpochStat> history;
};

inline TrainedClassifier train_classifier(
    const std::vector<LabeledText>& train, const std::vector<LabeledText>& dev,
    WordEmbedder& embedder, const ClassifierConfig& config,
    const std::function<void(const EpochStat&)>& on_epoch = nullptr) {
  const LabelSet classes = labels_of(train);
  if (classes.size() < 2) throw DataError("classifier training data needs at least two classes");
  check_label_coverage(classes, dev);
  DocumentClassifier model(embedder.dim(), classes, config);
  model.init(config.seed);
  embedder.reset();
  std::vector<Mat<float>> train_x, dev_x;
  std::vector<int> labels;
  for (const auto& d : train) {
    train_x.push_back(embedder.embed(words_of(d.text)));
    labels.push_back(classes.id(d.label));
  }
  for (const auto& d : dev) dev_x.push_back(embedder.embed(words_of(d.text)));
  Rng rng = Rng::derive(config.seed, 0x636c);
  auto history = run_sgd(
      model.parameters(), train.size(), config.schedule, rng,
      [&](Graph<float>& g, const std::vector<std::size_t>& batch) {
        Var total;
        for (auto i : batch) {
          Var l = model.loss(g, train_x[i], labels[i]);
          total = total.valid() ? g.add(total, l) : l;
        }
        return total;
      },
      [&]() -> std::optional<double> {
        if (dev.empty()) return std::nullopt;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < dev.size(); ++i) hits += model.predict(dev_x[i]) == dev[i].label;
        return eval::percent(hits, dev.size());
      },
      on_epoch);
  return {std::move(model), std::move(history)};
}

inline std::vector<std::string> classify(DocumentClassifier& model, WordEmbedder& embedder,
                                         const std::vector<LabeledText>& data) {
  std::vector<std::string> out;
  for (const auto& d : data) out.push_back(model.predict(embedder.embed(words_of(d.text))));
  return out;
}

}  // namespace lmkit::tagger
