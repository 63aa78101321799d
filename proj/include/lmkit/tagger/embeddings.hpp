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


// Word-level feature extractors for the downstream heads. All embedders are
// frozen: the heads train on top of their output.

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/charlm/char_lm.hpp"
#include "lmkit/core/error.hpp"
#include "lmkit/nn/graph.hpp"

namespace lmkit::tagger {

using nn::Mat;

enum class UnknownWords { kZero, kError };

class StaticEmbeddingTable {
 public:
  StaticEmbeddingTable(int dim, UnknownWords policy = UnknownWords::kZero)
      : dim_(dim), policy_(policy) {
    if (dim <= 0) throw ConfigError("embedding dimension must be positive");
  }

  int dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  bool contains(const std::string& w) const { return index_.count(w) > 0; }
  UnknownWords policy() const { return policy_; }

  void add(const std::string& word, std::vector<float> v) {
    if (static_cast<int>(v.size()) != dim_) throw ConfigError("embedding dimension mismatch");
    if (!index_.emplace(word, rows_.size()).second) {
      throw DataError("duplicate embedding for '" + word + "'");
    }
    rows_.push_back(std::move(v));
  }

  // Unknown words map to zeros (or throw, under kError).
  void lookup(const std::string& word, float* out) const {
    auto it = index_.find(word);
    if (it == index_.end()) {
      if (policy_ == UnknownWords::kError) throw DataError("no embedding for '" + word + "'");
      std::fill(out, out + dim_, 0.0f);
      return;
    }
    std::copy(rows_[it->second].begin(), rows_[it->second].end(), out);
  }

 private:
  int dim_;
  UnknownWords policy_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<float>> rows_;
};

// Text vectors: a "count dim" header, then "word v1 ... v_dim" per line.
inline StaticEmbeddingTable load_static_embeddings(std::istream& in,
                                                   UnknownWords policy = UnknownWords::kZero) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("embeddings: empty file");
  std::istringstream header(line);
  long long count = -1, dim = -1;
  std::string extra;
  if (!(header >> count >> dim) || (header >> extra) || count < 0 || dim <= 0) {
    throw DataError("embeddings line 1: expected header \"count dim\"");
  }
  StaticEmbeddingTable table(static_cast<int>(dim), policy);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream row(line);
    std::string word;
    row >> word;
    std::vector<float> v;
    for (std::string tok; row >> tok;) {
      std::size_t used = 0;
      float x = 0.0f;
      try {
        x = std::stof(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || !std::isfinite(x)) {
        throw DataError("embeddings line " + std::to_string(lineno) + ": bad value '" + tok + "'");
      }
      v.push_back(x);
    }
    if (static_cast<long long>(v.size()) != dim) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": expected " +
                      std::to_string(dim) + " values, got " + std::to_string(v.size()));
    }
    try {
      table.add(word, std::move(v));
    } catch (const DataError& e) {
      throw DataError("embeddings line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (static_cast<long long>(table.size()) != count) {
    throw DataError("embeddings: header announces " + std::to_string(count) + " words, found " +
                    std::to_string(table.size()));
  }
  return table;
}

// Maps a tokenized sentence to one row per token.
class WordEmbedder {
 public:
  virtual ~WordEmbedder() = default;
  virtual int dim() const = 0;
  virtual Mat<float> embed(const std::vector<std::string>& words) = 0;
  virtual nlohmann::ordered_json describe() const = 0;
  // Clears state carried across sentences, if any.
  virtual void reset() {}
};

class StaticEmbedder : public WordEmbedder {
 public:
  explicit StaticEmbedder(std::shared_ptr<const StaticEmbeddingTable> table)
      : table_(std::move(table)) {}

  int dim() const override { return table_->dim(); }
  Mat<float> embed(const std::vector<std::string>& words) override {
    Mat<float> out(static_cast<Eigen::Index>(words.size()), dim());
    for (std::size_t i = 0; i < words.size(); ++i) table_->lookup(words[i], out.row(i).data());
    return out;
  }
  nlohmann::ordered_json describe() const override {
    return {{"type", "static"}, {"dim", dim()}, {"words", table_->size()}};
  }

 private:
  std::shared_ptr<const StaticEmbeddingTable> table_;
};

// Forward and backward character LM states; with a pooling memory each
// row becomes [pooled over previous occurrences, local].
class CharLMEmbedder : public WordEmbedder {
 public:
  CharLMEmbedder(std::shared_ptr<charlm::CharLM> fwd, std::shared_ptr<charlm::CharLM> bwd,
                 std::optional<charlm::Pooling> pooling = std::nullopt)
      : fwd_(std::move(fwd)), bwd_(std::move(bwd)), pooling_(pooling) {
    if (pooling_) memory_.emplace(*pooling_);
  }

  int dim() const override { return (fwd_->hidden() + bwd_->hidden()) * (pooling_ ? 2 : 1); }

  Mat<float> embed(const std::vector<std::string>& words) override {
    Mat<float> local = charlm::embed_words(*fwd_, *bwd_, words);
    if (!memory_) return local;
    Mat<float> out(local.rows(), dim());
    for (Eigen::Index i = 0; i < local.rows(); ++i) {
      out.row(i) = memory_->pooled_embed(words[static_cast<std::size_t>(i)], local.row(i));
    }
    return out;
  }

  nlohmann::ordered_json describe() const override {
    nlohmann::ordered_json j{{"type", "charlm"}, {"dim", dim()}};
    j["pooling"] = pooling_ ? charlm::to_string(*pooling_) : "none";
    return j;
  }

  void reset() override {
    if (memory_) memory_->reset();
  }

 private:
  std::shared_ptr<charlm::CharLM> fwd_, bwd_;
  std::optional<charlm::Pooling> pooling_;
  std::optional<charlm::EmbeddingMemory> memory_;
};

}  // namespace lmkit::tagger
