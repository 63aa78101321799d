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


// Fine-tuning a pretrained encoder with a linear head: one label per
// sequence (read at the [CLS] position) or one label per word (read at the
// word's first piece; later pieces carry no loss).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/core/text.hpp"
#include "lmkit/encoder/model.hpp"
#include "lmkit/encoder/train.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/optim.hpp"
#include "lmkit/subword/vocab.hpp"
#include "lmkit/tagger/classifier.hpp"
#include "lmkit/tagger/data.hpp"

namespace lmkit::tagger {

enum class FinetuneTask { kSequence, kToken };

inline FinetuneTask parse_finetune_task(const std::string& s) {
  if (s == "sequence") return FinetuneTask::kSequence;
  if (s == "token") return FinetuneTask::kToken;
  throw ConfigError("fine-tuning task must be sequence or token, got '" + s + "'");
}

inline std::string to_string(FinetuneTask t) {
  return t == FinetuneTask::kSequence ? "sequence" : "token";
}

struct FinetuneConfig {
  int epochs = 3;
  double learning_rate = 2e-5;
  int batch_size = 16;
  int max_length = 128;           // pieces, [CLS] and [SEP] included
  double warmup_proportion = 0.1;
  double weight_decay = 0.01;
  bool use_pooler = false;  // sequence head on the pooler output instead of the raw [CLS] state
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_length < 3) throw ConfigError("max length must be >= 3");
    if (warmup_proportion < 0 || warmup_proportion > 1) {
      throw ConfigError("warmup proportion must be in [0, 1]");
    }
    if (weight_decay < 0) throw ConfigError("weight decay must be >= 0");
  }

  nlohmann::ordered_json to_json() const {
    return {{"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_length", max_length},
            {"warmup_proportion", warmup_proportion},
            {"weight_decay", weight_decay},
            {"use_pooler", use_pooler},
            {"seed", seed}};
  }
};

// Words plus label ids: one id for sequence tasks, one per word otherwise.
struct FinetuneExample {
  std::vector<std::string> words;
  std::vector<int> labels;
};

// A sequence after subword encoding, ready for batching.
struct EncodedExample {
  std::vector<int> ids;           // [CLS] pieces [SEP]
  std::vector<int> first_piece;   // position of each word's first piece, -1 if truncated
  std::vector<int> labels;
};

inline EncodedExample encode_example(const subword::SubwordVocab& vocab,
                                     const FinetuneExample& ex, int max_length) {
  EncodedExample out;
  out.ids.push_back(subword::kClsId);
  out.labels = ex.labels;
  for (const auto& w : ex.words) {
    const auto seg = subword::viterbi(vocab, text::decode_utf8(w));
    const bool fits = static_cast<int>(out.ids.size()) < max_length - 1 && !seg.ids.empty();
    out.first_piece.push_back(fits ? static_cast<int>(out.ids.size()) : -1);
    for (int id : seg.ids) {
      if (static_cast<int>(out.ids.size()) >= max_length - 1) break;
      out.ids.push_back(id);
    }
  }
  out.ids.push_back(subword::kSepId);
  return out;
}

// Rows of a padded batch that carry a token label, and those labels.
struct TokenTargets {
  std::vector<int> rows;
  std::vector<int> labels;
};

inline TokenTargets token_targets(const std::vector<const EncodedExample*>& examples, int len) {
  TokenTargets t;
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = *examples[b];
    for (std::size_t w = 0; w < ex.first_piece.size(); ++w) {
      if (ex.first_piece[w] < 0) continue;
      t.rows.push_back(static_cast<int>(b) * len + ex.first_piece[w]);
      t.labels.push_back(ex.labels[w]);
    }
  }
  return t;
}

inline encoder::Batch finetune_batch(const std::vector<const EncodedExample*>& examples) {
  encoder::Batch b;
  b.size = static_cast<int>(examples.size());
  for (const auto* ex : examples) b.len = std::max(b.len, static_cast<int>(ex->ids.size()));
  b.ids.assign(static_cast<std::size_t>(b.size * b.len), subword::kPadId);
  b.segments.assign(b.ids.size(), 0);
  for (int i = 0; i < b.size; ++i) {
    const auto& ids = examples[i]->ids;
    std::copy(ids.begin(), ids.end(), b.ids.begin() + i * b.len);
    b.lengths.push_back(static_cast<int>(ids.size()));
  }
  return b;
}

class FinetunedModel {
 public:
  FinetunedModel(encoder::Encoder<float> enc, FinetuneTask task, LabelSet labels,
                 bool use_pooler = false)
      : encoder_(std::move(enc)),
        task_(task),
        use_pooler_(use_pooler),
        labels_(std::move(labels)),
        head_w_("head.weight", encoder_.config().hidden, labels_.size()),
        head_b_("head.bias", 1, labels_.size(), false) {
    if (labels_.size() < 1) throw ConfigError("empty label set");
  }

  FinetunedModel(FinetunedModel&&) = default;

  void init_head(std::uint64_t seed) {
    Rng rng(seed);
    nn::init_normal(head_w_, rng, encoder_.config().init_scale);
    head_b_.value.setZero();
  }

  FinetuneTask task() const { return task_; }
  const LabelSet& labels() const { return labels_; }
  const encoder::Encoder<float>& encoder() const { return encoder_; }

  std::vector<Parameter<float>*> parameters() {
    auto out = encoder_.parameters();
    out.push_back(&head_w_);
    out.push_back(&head_b_);
    return out;
  }

  // Logits for sequence tasks (one row per example) or for the labelled
  // first pieces of token tasks (rows of `targets`).
  Var logits(Graph<float>& g, const encoder::Batch& b, const TokenTargets* targets) {
    auto enc = encoder_.encode(g, b);
    Var h;
    if (task_ == FinetuneTask::kToken) {
      h = g.gather_rows(enc.hidden, targets->rows);
    } else if (use_pooler_) {
      h = enc.pooled;
    } else {
      std::vector<int> cls;
      for (int i = 0; i < b.size; ++i) cls.push_back(i * b.len);
      h = g.gather_rows(enc.hidden, cls);
    }
    h = g.dropout(h, encoder_.config().dropout);
    return g.linear(h, g.param(head_w_), g.param(head_b_));
  }

  // Label ids per example: one for sequence tasks, one per word otherwise.
  // Words cut off by the length limit get label 0.
  std::vector<std::vector<int>> predict(const std::vector<EncodedExample>& data,
                                        int batch_size = 32) {
    std::vector<std::vector<int>> out;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
      std::vector<const EncodedExample*> chunk;
      for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) {
        chunk.push_back(&data[i]);
      }
      const auto b = finetune_batch(chunk);
      const auto targets = token_targets(chunk, b.len);
      if (task_ == FinetuneTask::kToken && targets.rows.empty()) {
        for (const auto* ex : chunk) out.emplace_back(ex->first_piece.size(), 0);
        continue;
      }
      Graph<float> g;
      const Mat<float> z = g.value(logits(g, b, &targets));
      auto argmax = [&](Eigen::Index r) {
        Eigen::Index a = 0;
        z.row(r).maxCoeff(&a);
        return static_cast<int>(a);
      };
      Eigen::Index row = 0;
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        if (task_ == FinetuneTask::kSequence) {
          out.push_back({argmax(static_cast<Eigen::Index>(i))});
          continue;
        }
        std::vector<int> tags;
        for (int p : chunk[i]->first_piece) tags.push_back(p < 0 ? 0 : argmax(row++));
        out.push_back(std::move(tags));
      }
    }
    return out;
  }

  nn::TensorFile to_file() const {
    nn::TensorFile f = encoder::make_checkpoint(encoder_, nullptr, 0, nullptr);
    f.manifest["task"] = to_string(task_);
    f.manifest["labels"] = labels_.to_json();
    f.manifest["use_pooler"] = use_pooler_;
    f.put(head_w_.name, head_w_.value);
    f.put(head_b_.name, head_b_.value);
    return f;
  }

  static FinetunedModel from_file(const nn::TensorFile& f) {
    if (!f.manifest.contains("task")) throw DataError("not a fine-tuned model");
    FinetunedModel m(encoder::encoder_from_checkpoint(f),
                     parse_finetune_task(f.manifest.at("task")),
                     LabelSet::from_json(f.manifest.at("labels")),
                     f.manifest.value("use_pooler", false));
    nn::restore(m.head_w_, f);
    nn::restore(m.head_b_, f);
    return m;
  }

 private:
  encoder::Encoder<float> encoder_;
  FinetuneTask task_;
  bool use_pooler_;
  LabelSet labels_;
  Parameter<float> head_w_, head_b_;
};

struct FinetuneEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;  // percent, eval mode, after the epoch
};

struct FinetuneResult {
  FinetunedModel model;
  std::vector<FinetuneEpoch> history;
};

inline double label_accuracy(const std::vector<std::vector<int>>& gold,
                             const std::vector<std::vector<int>>& predicted) {
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = 0; j < gold[i].size(); ++j) hits += gold[i][j] == predicted[i][j];
    total += gold[i].size();
  }
  return eval::percent(hits, total);
}

// Adam with linear warmup and decay to zero over all updates. Reports
// train-set accuracy after every epoch.
inline FinetuneResult finetune_encoder(FinetuneTask task, const std::vector<FinetuneExample>& train,
                                       const LabelSet& labels, encoder::Encoder<float> enc,
                                       const subword::SubwordVocab& vocab,
                                       const FinetuneConfig& config,
                                       const std::function<void(const FinetuneEpoch&)>& on_epoch =
                                           nullptr) {
  config.validate();
  if (train.empty()) throw DataError("empty fine-tuning set");
  if (enc.config().vocab_size != static_cast<int>(vocab.size())) {
    throw ConfigError("checkpoint vocabulary size " + std::to_string(enc.config().vocab_size) +
                      " does not match tokenizer vocabulary size " + std::to_string(vocab.size()));
  }
  const int max_len = std::min(config.max_length, enc.config().max_positions);
  std::vector<EncodedExample> data;
  std::vector<std::vector<int>> gold;
  for (const auto& ex : train) {
    const std::size_t want = task == FinetuneTask::kSequence ? 1 : ex.words.size();
    if (ex.words.empty() || ex.labels.size() != want) throw DataError("malformed fine-tuning example");
    for (int l : ex.labels) {
      if (l < 0 || l >= labels.size()) throw DataError("label id out of range");
    }
    data.push_back(encode_example(vocab, ex, max_len));
    gold.push_back(ex.labels);
  }
  FinetunedModel model(std::move(enc), task, labels, config.use_pooler);
  model.init_head(config.seed);
  const auto params = model.parameters();
  nn::AdamW<float> opt(params, {0.9, 0.999, 1e-6, config.weight_decay});
  const std::int64_t per_epoch = (static_cast<std::int64_t>(data.size()) + config.batch_size - 1) /
                                 config.batch_size;
  const std::int64_t total = per_epoch * config.epochs;
  const auto warmup = static_cast<std::int64_t>(std::llround(config.warmup_proportion * total));
  Rng rng = Rng::derive(config.seed, 0x6674);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<FinetuneEpoch> history;
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      std::vector<const EncodedExample*> chunk;
      std::vector<int> seq_labels;
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        chunk.push_back(&data[order[i]]);
        seq_labels.push_back(data[order[i]].labels.front());
      }
      const auto b = finetune_batch(chunk);
      const auto targets = token_targets(chunk, b.len);
      ++step;
      if (task == FinetuneTask::kToken && targets.rows.empty()) continue;
      nn::zero_grads(params);
      Graph<float> g(true, &rng);
      Var z = model.logits(g, b, &targets);
      Var loss = g.softmax_cross_entropy(
          z, task == FinetuneTask::kSequence ? seq_labels : targets.labels);
      const double l = g.scalar(loss);
      if (!std::isfinite(l)) {
        throw NumericError("non-finite fine-tuning loss at step " + std::to_string(step));
      }
      loss_sum += l * static_cast<double>(chunk.size());
      g.backward(loss);
      nn::clip_grad_norm(params, 1.0);
      opt.step(nn::warmup_linear_decay(config.learning_rate, warmup, total, step));
    }
    FinetuneEpoch e{epoch, loss_sum / static_cast<double>(data.size()),
                    label_accuracy(gold, model.predict(data))};
    history.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return {std::move(model), std::move(history)};
}

// Converters from task data. Labels of `eval_sets` must be known to the
// training label set.
inline LabelSet finetune_labels(const std::vector<LabeledText>& train,
                                const std::vector<const std::vector<LabeledText>*>& eval_sets) {
  LabelSet labels = labels_of(train);
  for (const auto* s : eval_sets) check_label_coverage(labels, *s);
  return labels;
}

inline LabelSet finetune_labels(const std::vector<TaggedSentence>& train,
                                const std::vector<const std::vector<TaggedSentence>*>& eval_sets) {
  LabelSet labels = tagset_of({&train});
  for (const auto* s : eval_sets) {
    for (const auto& sent : *s) {
      for (const auto& t : sent.tags) {
        if (!labels.contains(t)) {
          throw DataError("label set mismatch: '" + t + "' does not occur in training data");
        }
      }
    }
  }
  return labels;
}

inline std::vector<FinetuneExample> finetune_examples(const std::vector<LabeledText>& data,
                                                      const LabelSet& labels) {
  std::vector<FinetuneExample> out;
  for (const auto& d : data) out.push_back({words_of(d.text), {labels.id(d.label)}});
  return out;
}

inline std::vector<FinetuneExample> finetune_examples(const std::vector<TaggedSentence>& data,
                                                      const LabelSet& labels) {
  std::vector<FinetuneExample> out;
  for (const auto& s : data) {
    FinetuneExample ex{s.tokens, {}};
    for (const auto& t : s.tags) ex.labels.push_back(labels.id(t));
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<EncodedExample> encode_examples(const subword::SubwordVocab& vocab,
                                                   const std::vector<FinetuneExample>& data,
                                                   int max_length) {
  std::vector<EncodedExample> out;
  for (const auto& ex : data) out.push_back(encode_example(vocab, ex, max_length));
  return out;
}

}  // namespace lmkit::tagger
