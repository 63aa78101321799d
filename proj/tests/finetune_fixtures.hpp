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


// A tiny pretrained encoder and a topic classification set over the same
// synthetic language.

#pragma once

#include <string>
#include <vector>

#include "lmkit/encoder/train.hpp"
#include "lmkit/pretrain/examples.hpp"
#include "lmkit/tagger/data.hpp"
#include "test_fixtures.hpp"

namespace lmkit::testing_fixtures {

struct TinyPretrained {
  subword::SubwordVocab vocab;
  nn::TensorFile checkpoint;
};

inline TinyPretrained tiny_pretrained(std::int64_t steps = 600, int max_length = 32) {
  const auto c = topical_corpus(1, 20, 5, 10);
  subword::TrainerConfig tc;
  tc.target_size = 300;
  tc.coverage = 1.0;
  tc.max_piece_length = 10;
  TinyPretrained out{subword::train_unigram(c, tc).vocab, {}};
  pretrain::PackingSchedule sched;
  sched.phases = {{static_cast<std::size_t>(max_length), 1.0}};
  pretrain::MaskingPolicy pol;
  pol.seed = 3;
  const auto phases = pretrain::pack(c, out.vocab, sched, pol, 400);
  encoder::EncoderConfig ec;
  ec.layers = 2;
  ec.hidden = 32;
  ec.heads = 2;
  ec.max_positions = max_length;
  ec.vocab_size = static_cast<int>(out.vocab.size());
  encoder::Encoder<float> m(ec);
  m.init(1);
  encoder::TrainOptions o;
  o.optimizer.learning_rate = 5e-3;
  o.optimizer.warmup_steps = 10;
  o.optimizer.total_steps = steps;
  o.optimizer.batch_size = 16;
  encoder::train(m, phases, o);
  out.checkpoint = encoder::make_checkpoint(m, nullptr, steps, nullptr);
  return out;
}

// `n` sentences labelled with their topic name, topics taken in turn.
inline std::vector<tagger::LabeledText> topic_examples(std::uint64_t seed, std::size_t n,
                                                       std::size_t topics) {
  std::vector<tagger::LabeledText> out;
  for (const auto& s : topical_sentences(seed, n, 1, topics)) {
    out.push_back({"topic" + std::to_string(s.topic), s.text});
  }
  return out;
}

}  // namespace lmkit::testing_fixtures
