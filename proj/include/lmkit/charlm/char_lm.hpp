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

// Character-level LSTM language models and the contextual word embeddings
// read off their hidden states, with an optional pooled memory of earlier
// occurrences of each word.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/core/text.hpp"
#include "lmkit/corpus/corpus.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/nn/optim.hpp"
#include "lmkit/nn/tensor_file.hpp"

namespace lmkit::charlm {

using nn::Graph;
using nn::Mat;
using nn::Parameter;
using nn::Var;

enum class Direction { kForward, kBackward };

inline std::string to_string(Direction d) { return d == Direction::kForward ? "forward" : "backward"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "forward") return Direction::kForward;
  if (s == "backward") return Direction::kBackward;
  throw ConfigError("direction must be forward or backward, got '" + s + "'");
}

// Character inventory. Id 0 is the unknown character, id 1 the boundary
// symbol placed between paragraphs and before every sentence.
class CharVocab {
 public:
  static constexpr int kUnknown = 0;
  static constexpr int kBoundary = 1;

  CharVocab() = default;
  explicit CharVocab(std::vector<char32_t> chars) : chars_(std::move(chars)) {
    for (std::size_t i = 0; i < chars_.size(); ++i) index_[chars_[i]] = static_cast<int>(i) + 2;
  }

  // Characters seen at least min_count times, most frequent first (ties
  // by code point).
  static CharVocab build(const corpus::Corpus& c, std::size_t min_count = 1) {
    std::map<char32_t, std::size_t> counts;
    for (const auto& d : c.documents()) {
      for (const auto& p : d.paragraphs) {
        for (char32_t ch : text::decode_utf8(p)) ++counts[ch];
      }
    }
    std::vector<std::pair<char32_t, std::size_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<char32_t> chars;
    for (const auto& [ch, n] : v) {
      if (n >= min_count) chars.push_back(ch);
    }
    return CharVocab(std::move(chars));
  }

  int size() const { return static_cast<int>(chars_.size()) + 2; }
  const std::vector<char32_t>& chars() const { return chars_; }

  int id(char32_t ch) const {
    auto it = index_.find(ch);
    return it == index_.end() ? kUnknown : it->second;
  }

  std::vector<int> encode(std::u32string_view s) const {
    std::vector<int> out;
    out.reserve(s.size());
    for (char32_t ch : s) out.push_back(id(ch));
    return out;
  }

  bool operator==(const CharVocab& o) const { return chars_ == o.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
};

struct CharLMConfig {
  int hidden = 64;
  int embedding = 32;
  int sequence_length = 64;
  int batch_size = 16;
  int epochs = 2;
  Direction direction = Direction::kForward;
  double learning_rate = 2e-3;
  double clip_norm = 1.0;
  std::size_t min_char_count = 1;
  std::uint64_t seed = 1;

  // Reference values of the published Basque models.
  static CharLMConfig paper(Direction d) {
    CharLMConfig c;
    c.hidden = 2048;
    c.embedding = 100;
    c.sequence_length = 250;
    c.batch_size = 100;
    c.epochs = 5;
    c.direction = d;
    return c;
  }

  void validate() const {
    if (hidden <= 0 || embedding <= 0 || sequence_length <= 0 || batch_size <= 0 || epochs < 0) {
      throw ConfigError("character LM sizes must be positive");
    }
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  }
};

class CharLM {
 public:
  CharLM(CharVocab vocab, const CharLMConfig& config)
      : vocab_(std::move(vocab)),
        config_(config),
        embed_("char.embedding", vocab_.size(), config.embedding),
        w_in_("lstm.input.weight", config.embedding, 4 * config.hidden),
        w_rec_("lstm.recurrent.weight", config.hidden, 4 * config.hidden),
        bias_("lstm.bias", 1, 4 * config.hidden, false),
        out_w_("output.weight", config.hidden, vocab_.size()),
        out_b_("output.bias", 1, vocab_.size(), false) {
    config_.validate();
  }

  CharLM(CharLM&&) = default;

  // Uniform(-0.1, 0.1) weights; forget-gate bias 1.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    nn::init_uniform(embed_, rng, 0.1);
    nn::init_uniform(w_in_, rng, 0.1);
    nn::init_uniform(w_rec_, rng, 0.1);
    bias_.value.setZero();
    bias_.value.middleCols(config_.hidden, config_.hidden).setOnes();
    nn::init_uniform(out_w_, rng, 0.1);
    out_b_.value.setZero();
    for (auto* p : parameters()) p->zero_grad();
  }

  const CharVocab& vocab() const { return vocab_; }
  const CharLMConfig& config() const { return config_; }
  Direction direction() const { return config_.direction; }
  int hidden() const { return config_.hidden; }

  std::vector<Parameter<float>*> parameters() {
    return {&embed_, &w_in_, &w_rec_, &bias_, &out_w_, &out_b_};
  }

  // Hidden states for `batch` parallel id streams laid out time-major
  // (row t * batch + b). Optional carried-in state; final state returned
  // through h_last / c_last.
  Var hidden_states(Graph<float>& g, const std::vector<int>& ids, int batch, const Mat<float>* h0,
                    const Mat<float>* c0, Mat<float>* h_last, Mat<float>* c_last) {
    Var x = g.gather_rows(g.param(embed_), ids);
    Var hv = h0 ? g.constant(*h0) : Var{};
    Var cv = c0 ? g.constant(*c0) : Var{};
    return g.lstm(x, g.param(w_in_), g.param(w_rec_), g.param(bias_), batch, false, hv, cv, h_last,
                  c_last);
  }

  Var logits(Graph<float>& g, Var hidden) {
    return g.linear(hidden, g.param(out_w_), g.param(out_b_));
  }

  // Hidden state after each symbol of a single stream, one row per symbol.
  Mat<float> run(const std::vector<int>& ids) {
    Graph<float> g;
    return g.value(hidden_states(g, ids, 1, nullptr, nullptr, nullptr, nullptr));
  }

  nn::TensorFile to_file() const {
    nn::TensorFile f;
    f.manifest["format"] = "lmkit-charlm";
    f.manifest["version"] = 1;
    f.manifest["direction"] = to_string(config_.direction);
    f.manifest["hidden"] = config_.hidden;
    f.manifest["embedding"] = config_.embedding;
    std::vector<std::uint32_t> cps(vocab_.chars().begin(), vocab_.chars().end());
    f.manifest["chars"] = cps;
    for (const auto* p : {&embed_, &w_in_, &w_rec_, &bias_, &out_w_, &out_b_}) f.put(p->name, p->value);
    return f;
  }

  static CharLM from_file(const nn::TensorFile& f) {
    if (f.manifest.value("format", "") != "lmkit-charlm") throw DataError("not a character LM file");
    std::vector<char32_t> chars;
    for (std::uint32_t cp : f.manifest.at("chars").get<std::vector<std::uint32_t>>()) {
      chars.push_back(cp);
    }
    CharLMConfig c;
    c.direction = parse_direction(f.manifest.at("direction"));
    c.hidden = f.manifest.at("hidden");
    c.embedding = f.manifest.at("embedding");
    CharLM m(CharVocab(std::move(chars)), c);
    for (auto* p : m.parameters()) nn::restore(*p, f);
    return m;
  }

 private:
  CharVocab vocab_;
  CharLMConfig config_;
  Parameter<float> embed_, w_in_, w_rec_, bias_, out_w_, out_b_;
};

// The training stream: every paragraph preceded by a boundary symbol;
// reversed as a whole for backward models.
inline std::vector<int> char_stream(const CharVocab& v, const corpus::Corpus& c, Direction d) {
  std::vector<int> ids;
  for (const auto& doc : c.documents()) {
    for (const auto& p : doc.paragraphs) {
      ids.push_back(CharVocab::kBoundary);
      for (int id : v.encode(text::decode_utf8(p))) ids.push_back(id);
    }
  }
  ids.push_back(CharVocab::kBoundary);
  if (d == Direction::kBackward) std::reverse(ids.begin(), ids.end());
  return ids;
}

struct EpochReport {
  int epoch = 0;
  double perplexity = 0.0;
  double accuracy = 0.0;
};

struct StreamEval {
  double perplexity = 0.0;
  double accuracy = 0.0;
  std::size_t predictions = 0;
};

// Next-symbol perplexity and accuracy over a stream, run as one sequence.
inline StreamEval evaluate_stream(CharLM& m, const std::vector<int>& ids) {
  StreamEval e;
  if (ids.size() < 2) return e;
  const std::vector<int> in(ids.begin(), ids.end() - 1);
  Graph<float> g;
  const Var z = m.logits(g, m.hidden_states(g, in, 1, nullptr, nullptr, nullptr, nullptr));
  const auto& logits = g.value(z);
  double nll = 0.0;
  std::size_t hits = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int target = ids[t + 1];
    const double mx = logits.row(t).maxCoeff();
    const double lse = mx + std::log((logits.row(t).array() - static_cast<float>(mx)).exp().sum());
    nll += lse - logits(t, target);
    Eigen::Index arg;
    logits.row(t).maxCoeff(&arg);
    hits += arg == target;
  }
  e.predictions = static_cast<std::size_t>(logits.rows());
  e.perplexity = std::exp(nll / static_cast<double>(e.predictions));
  e.accuracy = static_cast<double>(hits) / static_cast<double>(e.predictions);
  return e;
}

// Trains by next-character cross-entropy with truncated backpropagation:
// the stream is cut into batch_size contiguous lanes which are consumed in
// chunks of sequence_length, carrying the recurrent state between chunks.
inline std::vector<EpochReport> train_char_lm(
    CharLM& m, const corpus::Corpus& c,
    const std::function<void(const EpochReport&)>& on_epoch = nullptr) {
  const auto& cfg = m.config();
  const std::vector<int> stream = char_stream(m.vocab(), c, cfg.direction);
  if (stream.size() < 3) throw DataError("corpus too small for character LM training");
  const int lanes = std::max(1, std::min<int>(cfg.batch_size, static_cast<int>(stream.size() - 1) / 2));
  const std::size_t lane_len = (stream.size() - 1) / lanes;
  auto params = m.parameters();
  nn::AdamW<float> opt(params, {0.9, 0.999, 1e-8, 0.0});
  std::vector<EpochReport> reports;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Mat<float> h = Mat<float>::Zero(lanes, cfg.hidden), cst = Mat<float>::Zero(lanes, cfg.hidden);
    double nll = 0.0;
    std::size_t count = 0, hits = 0;
    for (std::size_t start = 0; start < lane_len; start += cfg.sequence_length) {
      const int steps = static_cast<int>(std::min<std::size_t>(cfg.sequence_length, lane_len - start));
      std::vector<int> in(static_cast<std::size_t>(steps * lanes)), target(in.size());
      for (int t = 0; t < steps; ++t) {
        for (int b = 0; b < lanes; ++b) {
          const std::size_t pos = b * lane_len + start + t;
          in[t * lanes + b] = stream[pos];
          target[t * lanes + b] = stream[pos + 1];
        }
      }
      nn::zero_grads(params);
      Graph<float> g;
      Mat<float> h_next, c_next;
      Var hs = m.hidden_states(g, in, lanes, &h, &cst, &h_next, &c_next);
      Var z = m.logits(g, hs);
      Var loss = g.softmax_cross_entropy(z, target);
      const double l = g.scalar(loss);
      if (!std::isfinite(l)) {
        throw NumericError("character LM: non-finite loss in epoch " + std::to_string(epoch));
      }
      const auto& zv = g.value(z);
      for (Eigen::Index r = 0; r < zv.rows(); ++r) {
        Eigen::Index arg;
        zv.row(r).maxCoeff(&arg);
        hits += arg == target[r];
      }
      nll += l * static_cast<double>(target.size());
      count += target.size();
      g.backward(loss);
      if (cfg.clip_norm > 0) nn::clip_grad_norm(params, cfg.clip_norm);
      opt.step(cfg.learning_rate);
      h = std::move(h_next);
      cst = std::move(c_next);
    }
    EpochReport r{epoch, std::exp(nll / static_cast<double>(count)),
                  static_cast<double>(hits) / static_cast<double>(count)};
    reports.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  return reports;
}

// ------------------------------------------------------------- embeddings

// Contextual embedding of every word of a whitespace-tokenized sentence:
// the forward model's state at the word's last character (reading from
// the sentence start) concatenated with the backward model's state at the
// word's first character (reading from the sentence end). Words are joined
// by single spaces.
inline Mat<float> embed_words(CharLM& fwd, CharLM& bwd, const std::vector<std::string>& words) {
  if (fwd.direction() != Direction::kForward || bwd.direction() != Direction::kBackward) {
    throw ConfigError("embed_words needs a forward and a backward model");
  }
  if (!(fwd.vocab() == bwd.vocab())) throw ConfigError("character models use different vocabularies");
  Mat<float> out(static_cast<Eigen::Index>(words.size()), fwd.hidden() + bwd.hidden());
  if (words.empty()) return out;
  std::u32string sentence;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (const auto& w : words) {
    if (w.empty()) throw ConfigError("embed_words: empty word");
    if (!sentence.empty()) sentence += U' ';
    const auto cps = text::decode_utf8(w);
    spans.emplace_back(sentence.size(), sentence.size() + cps.size());
    sentence += cps;
  }
  const std::size_t n = sentence.size();
  std::vector<int> f_ids = {CharVocab::kBoundary};
  for (int id : fwd.vocab().encode(sentence)) f_ids.push_back(id);
  std::vector<int> b_ids = {CharVocab::kBoundary};
  for (std::size_t i = n; i-- > 0;) b_ids.push_back(bwd.vocab().id(sentence[i]));
  const Mat<float> hf = fwd.run(f_ids);
  const Mat<float> hb = bwd.run(b_ids);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto [s, e] = spans[w];
    out.row(static_cast<Eigen::Index>(w)).head(fwd.hidden()) = hf.row(static_cast<Eigen::Index>(e));
    out.row(static_cast<Eigen::Index>(w)).tail(bwd.hidden()) = hb.row(static_cast<Eigen::Index>(n - s));
  }
  return out;
}

enum class Pooling { kMean, kMin, kMax };

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::kMean;
  if (s == "min") return Pooling::kMin;
  if (s == "max") return Pooling::kMax;
  throw ConfigError("pooling must be mean, min or max, got '" + s + "'");
}

inline std::string to_string(Pooling p) {
  return p == Pooling::kMean ? "mean" : p == Pooling::kMin ? "min" : "max";
}

// Previously seen local embeddings per exact surface form.
class EmbeddingMemory {
 public:
  using Vector = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

  explicit EmbeddingMemory(Pooling pooling = Pooling::kMean) : pooling_(pooling) {}

  // Returns [pool(memory[word] + local), local] and appends local.
  Vector pooled_embed(const std::string& word, const Vector& local) {
    auto& seen = memory_[word];
    if (!seen.empty() && seen.front().size() != local.size()) {
      throw ConfigError("pooled_embed: dimension changed for '" + word + "'");
    }
    seen.push_back(local);
    Vector pooled = seen.front();
    if (pooling_ == Pooling::kMean) {
      if (seen.size() > 1) {
        pooled.setZero();
        for (const auto& v : seen) pooled += v;
        pooled /= static_cast<float>(seen.size());
      }
    } else {
      for (std::size_t i = 1; i < seen.size(); ++i) {
        if (pooling_ == Pooling::kMin) {
          pooled = pooled.cwiseMin(seen[i]);
        } else {
          pooled = pooled.cwiseMax(seen[i]);
        }
      }
    }
    Vector out(2 * local.size());
    out << pooled, local;
    return out;
  }

  void reset() { memory_.clear(); }
  std::size_t size() const { return memory_.size(); }
  std::size_t occurrences(const std::string& word) const {
    auto it = memory_.find(word);
    return it == memory_.end() ? 0 : it->second.size();
  }
  Pooling pooling() const { return pooling_; }

 private:
  Pooling pooling_;
  std::unordered_map<std::string, std::vector<Vector>> memory_;
};

}  // namespace lmkit::charlm
