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

// Post-LN transformer encoder with masked-LM and next-sentence heads.
//
// Embeddings (token + learned position + segment) -> LayerNorm -> N x
// [self-attention -> add & norm -> GELU feed-forward -> add & norm]. The
// masked-LM head is dense -> GELU -> LayerNorm -> decoder tied to the token
// embedding plus an output bias. The next-sentence head is a tanh pooler
// on the first position followed by a 2-way linear layer.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/nn/graph.hpp"
#include "lmkit/pretrain/examples.hpp"
#include "lmkit/subword/vocab.hpp"

namespace lmkit::encoder {

using nn::Graph;
using nn::Mat;
using nn::Parameter;
using nn::Var;

struct EncoderConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 2;
  int ffn = 0;  // 0 means 4 * hidden
  int max_positions = 512;
  int vocab_size = 0;
  int segment_types = 2;
  double dropout = 0.1;
  double init_scale = 0.02;

  int ffn_size() const { return ffn > 0 ? ffn : 4 * hidden; }

  void validate() const {
    if (layers < 1 || hidden < 1 || heads < 1 || max_positions < 1 || segment_types < 1) {
      throw ConfigError("encoder sizes must be positive");
    }
    if (hidden % heads != 0) {
      throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    }
    if (vocab_size <= subword::kNumSpecials) throw ConfigError("encoder vocab size too small");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (!(init_scale > 0.0)) throw ConfigError("init scale must be positive");
  }

  static EncoderConfig base(int vocab) {
    EncoderConfig c;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 12;
    c.vocab_size = vocab;
    return c;
  }

  nlohmann::ordered_json to_json() const {
    return {{"layers", layers},         {"hidden", hidden},
            {"heads", heads},           {"ffn", ffn_size()},
            {"max_positions", max_positions}, {"vocab_size", vocab_size},
            {"segment_types", segment_types}, {"dropout", dropout},
            {"init_scale", init_scale}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    j.at("layers").get_to(c.layers);
    j.at("hidden").get_to(c.hidden);
    j.at("heads").get_to(c.heads);
    j.at("ffn").get_to(c.ffn);
    j.at("max_positions").get_to(c.max_positions);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("segment_types").get_to(c.segment_types);
    j.at("dropout").get_to(c.dropout);
    j.at("init_scale").get_to(c.init_scale);
    c.validate();
    return c;
  }
};

// Closed-form parameter count.
inline std::int64_t parameter_count(const EncoderConfig& c) {
  const std::int64_t h = c.hidden, f = c.ffn_size(), v = c.vocab_size;
  const std::int64_t embeddings = v * h + std::int64_t{c.max_positions} * h +
                                  std::int64_t{c.segment_types} * h + 2 * h;
  const std::int64_t layer = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h;
  const std::int64_t mlm = (h * h + h) + 2 * h + v;
  const std::int64_t nsp = (h * h + h) + (2 * h + 2);
  return embeddings + c.layers * layer + mlm + nsp;
}

// A padded batch of pretraining examples.
struct Batch {
  int size = 0;
  int len = 0;
  std::vector<int> ids;       // size * len, [PAD] filled
  std::vector<int> segments;  // size * len
  std::vector<int> lengths;   // unpadded length per example
  std::vector<int> mlm_rows;  // row b * len + position of every masked token
  std::vector<int> mlm_labels;
  std::vector<int> nsp_labels;  // 1 = is_next
};

inline Batch make_batch(const std::vector<const pretrain::PretrainExample*>& examples) {
  if (examples.empty()) throw ConfigError("empty batch");
  Batch b;
  b.size = static_cast<int>(examples.size());
  for (const auto* ex : examples) b.len = std::max(b.len, static_cast<int>(ex->ids.size()));
  b.ids.assign(static_cast<std::size_t>(b.size * b.len), subword::kPadId);
  b.segments.assign(b.ids.size(), 0);
  for (int i = 0; i < b.size; ++i) {
    const auto& ex = *examples[i];
    if (ex.ids.empty()) throw DataError("empty pretraining example");
    b.lengths.push_back(static_cast<int>(ex.ids.size()));
    for (std::size_t t = 0; t < ex.ids.size(); ++t) {
      b.ids[i * b.len + t] = ex.ids[t];
      b.segments[i * b.len + t] = ex.segment_ids[t];
    }
    for (std::size_t k = 0; k < ex.masked_positions.size(); ++k) {
      b.mlm_rows.push_back(i * b.len + ex.masked_positions[k]);
      b.mlm_labels.push_back(ex.masked_labels[k]);
    }
    b.nsp_labels.push_back(ex.is_next ? 1 : 0);
  }
  return b;
}

inline Batch make_batch(const std::vector<pretrain::PretrainExample>& examples) {
  std::vector<const pretrain::PretrainExample*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  return make_batch(ptrs);
}

template <class T>
struct ForwardOutput {
  Var hidden;       // (size * len) x hidden
  Var pooled;       // size x hidden
  Var mlm_logits;   // masked x vocab, invalid when nothing is masked
  Var nsp_logits;   // size x 2
};

template <class T>
struct LossOutput {
  Var total;
  double mlm = 0.0;
  double nsp = 0.0;
};

template <class T>
class Encoder {
 public:
  struct Layer {
    Parameter<T>*q_w, *q_b, *k_w, *k_b, *v_w, *v_b, *o_w, *o_b;
    Parameter<T>*attn_gain, *attn_bias;
    Parameter<T>*in_w, *in_b, *out_w, *out_b;
    Parameter<T>*ffn_gain, *ffn_bias;
  };

  explicit Encoder(const EncoderConfig& config) : config_(config) {
    config_.validate();
    const int h = config_.hidden, f = config_.ffn_size(), v = config_.vocab_size;
    word_ = add("embeddings.word", v, h);
    position_ = add("embeddings.position", config_.max_positions, h);
    segment_ = add("embeddings.segment", config_.segment_types, h);
    emb_gain_ = add("embeddings.norm.gain", 1, h, false);
    emb_bias_ = add("embeddings.norm.bias", 1, h, false);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      Layer L;
      L.q_w = add(p + "attention.query.weight", h, h);
      L.q_b = add(p + "attention.query.bias", 1, h, false);
      L.k_w = add(p + "attention.key.weight", h, h);
      L.k_b = add(p + "attention.key.bias", 1, h, false);
      L.v_w = add(p + "attention.value.weight", h, h);
      L.v_b = add(p + "attention.value.bias", 1, h, false);
      L.o_w = add(p + "attention.output.weight", h, h);
      L.o_b = add(p + "attention.output.bias", 1, h, false);
      L.attn_gain = add(p + "attention.norm.gain", 1, h, false);
      L.attn_bias = add(p + "attention.norm.bias", 1, h, false);
      L.in_w = add(p + "ffn.in.weight", h, f);
      L.in_b = add(p + "ffn.in.bias", 1, f, false);
      L.out_w = add(p + "ffn.out.weight", f, h);
      L.out_b = add(p + "ffn.out.bias", 1, h, false);
      L.ffn_gain = add(p + "ffn.norm.gain", 1, h, false);
      L.ffn_bias = add(p + "ffn.norm.bias", 1, h, false);
      layers_.push_back(L);
    }
    mlm_w_ = add("mlm.dense.weight", h, h);
    mlm_b_ = add("mlm.dense.bias", 1, h, false);
    mlm_gain_ = add("mlm.norm.gain", 1, h, false);
    mlm_norm_bias_ = add("mlm.norm.bias", 1, h, false);
    mlm_out_bias_ = add("mlm.output.bias", 1, v, false);
    pool_w_ = add("pooler.weight", h, h);
    pool_b_ = add("pooler.bias", 1, h, false);
    nsp_w_ = add("nsp.weight", h, 2);
    nsp_b_ = add("nsp.bias", 1, 2, false);
  }

  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  // Weights ~ N(0, init_scale), biases 0, normalization gains 1.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
      const bool is_gain = p->name.ends_with(".gain");
      if (is_gain) {
        p->value.setOnes();
      } else if (p->name.ends_with(".bias")) {
        p->value.setZero();
      } else {
        nn::init_normal(*p, rng, config_.init_scale);
      }
      p->zero_grad();
    }
  }

  const EncoderConfig& config() const { return config_; }

  std::vector<Parameter<T>*> parameters() const {
    std::vector<Parameter<T>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  Parameter<T>& word_embedding() { return *word_; }

  // Contextual hidden states and pooled [CLS] vector. Attention
  // probabilities of every layer are appended to *attention when given.
  ForwardOutput<T> encode(Graph<T>& g, const Batch& b,
                          std::vector<Mat<T>>* attention = nullptr) const {
    if (b.len > config_.max_positions) {
      throw ConfigError("sequence length " + std::to_string(b.len) + " exceeds max positions " +
                        std::to_string(config_.max_positions));
    }
    std::vector<int> positions(b.ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % b.len);
    for (int id : b.ids) {
      if (id < 0 || id >= config_.vocab_size) throw DataError("token id out of vocabulary");
    }
    for (int s : b.segments) {
      if (s < 0 || s >= config_.segment_types) throw DataError("segment id out of range");
    }
    const double p = config_.dropout;
    Var x = g.add(g.add(g.gather_rows(g.param(*word_), b.ids),
                        g.gather_rows(g.param(*position_), positions)),
                  g.gather_rows(g.param(*segment_), b.segments));
    x = g.dropout(g.layer_norm(x, g.param(*emb_gain_), g.param(*emb_bias_)), p);
    for (const auto& L : layers_) {
      Var q = g.linear(x, g.param(*L.q_w), g.param(*L.q_b));
      Var k = g.linear(x, g.param(*L.k_w), g.param(*L.k_b));
      Var v = g.linear(x, g.param(*L.v_w), g.param(*L.v_b));
      std::vector<Mat<T>> probs;
      Var a = g.attention(q, k, v, b.size, b.len, config_.heads, b.lengths, p,
                          attention ? &probs : nullptr);
      if (attention) attention->insert(attention->end(), probs.begin(), probs.end());
      a = g.dropout(g.linear(a, g.param(*L.o_w), g.param(*L.o_b)), p);
      x = g.layer_norm(g.add(x, a), g.param(*L.attn_gain), g.param(*L.attn_bias));
      Var f = g.gelu(g.linear(x, g.param(*L.in_w), g.param(*L.in_b)));
      f = g.dropout(g.linear(f, g.param(*L.out_w), g.param(*L.out_b)), p);
      x = g.layer_norm(g.add(x, f), g.param(*L.ffn_gain), g.param(*L.ffn_bias));
    }
    std::vector<int> cls(b.size);
    for (int i = 0; i < b.size; ++i) cls[i] = i * b.len;
    ForwardOutput<T> out;
    out.hidden = x;
    out.pooled = g.tanh(g.linear(g.gather_rows(x, cls), g.param(*pool_w_), g.param(*pool_b_)));
    return out;
  }

  // Full pretraining forward pass: MLM logits at masked rows, NSP logits.
  ForwardOutput<T> forward(Graph<T>& g, const Batch& b,
                           std::vector<Mat<T>>* attention = nullptr) const {
    ForwardOutput<T> out = encode(g, b, attention);
    if (!b.mlm_rows.empty()) {
      Var m = g.gather_rows(out.hidden, b.mlm_rows);
      m = g.gelu(g.linear(m, g.param(*mlm_w_), g.param(*mlm_b_)));
      m = g.layer_norm(m, g.param(*mlm_gain_), g.param(*mlm_norm_bias_));
      out.mlm_logits = g.add_bias(g.matmul_nt(m, g.param(*word_)), g.param(*mlm_out_bias_));
    }
    out.nsp_logits = g.linear(g.dropout(out.pooled, config_.dropout), g.param(*nsp_w_),
                              g.param(*nsp_b_));
    return out;
  }

 private:
  Parameter<T>* add(const std::string& name, int rows, int cols, bool decay = true) {
    params_.push_back(std::make_unique<Parameter<T>>(name, rows, cols, decay));
    return params_.back().get();
  }

  EncoderConfig config_;
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::vector<Layer> layers_;
  Parameter<T>*word_, *position_, *segment_, *emb_gain_, *emb_bias_;
  Parameter<T>*mlm_w_, *mlm_b_, *mlm_gain_, *mlm_norm_bias_, *mlm_out_bias_;
  Parameter<T>*pool_w_, *pool_b_, *nsp_w_, *nsp_b_;
};

// Mean MLM cross-entropy over masked positions (0 when there are none)
// plus mean NSP cross-entropy over examples.
template <class T>
LossOutput<T> pretraining_loss(Graph<T>& g, Var mlm_logits, const std::vector<int>& mlm_labels,
                               Var nsp_logits, const std::vector<int>& nsp_labels) {
  if (nsp_labels.empty()) throw ConfigError("loss needs at least one next-sentence label");
  LossOutput<T> out;
  Var nsp = g.softmax_cross_entropy(nsp_logits, nsp_labels);
  Var mlm = mlm_logits.valid() ? g.softmax_cross_entropy(mlm_logits, mlm_labels)
                               : g.constant(Mat<T>::Zero(1, 1));
  out.mlm = static_cast<double>(g.scalar(mlm));
  out.nsp = static_cast<double>(g.scalar(nsp));
  out.total = g.add(mlm, nsp);
  return out;
}

template <class T>
LossOutput<T> pretraining_loss(Graph<T>& g, const ForwardOutput<T>& f, const Batch& b) {
  return pretraining_loss(g, f.mlm_logits, b.mlm_labels, f.nsp_logits, b.nsp_labels);
}

}  // namespace lmkit::encoder
