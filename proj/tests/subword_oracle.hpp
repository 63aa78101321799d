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

// Brute-force references for segmentation: every segmentation of a word is
// enumerated explicitly, no lattice or dynamic programming involved.

#pragma once

#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "lmkit/core/random.hpp"
#include "lmkit/subword/trainer.hpp"
#include "lmkit/subword/vocab.hpp"

namespace lmkit::subword::testing_oracle {

inline SubwordVocab make_vocab(const std::vector<std::pair<std::string, double>>& entries) {
  std::vector<Piece> pieces;
  for (const auto& [shown, lp] : entries) {
    Piece p;
    p.continuation = !shown.empty() && shown[0] == '#';
    p.text = text::decode_utf8(p.continuation ? shown.substr(1) : shown);
    p.log_prob = lp;
    pieces.push_back(p);
  }
  return SubwordVocab(pieces);
}

// Both forms of every alphabet character plus `n_multi` random longer
// pieces; probabilities random and normalized.
inline SubwordVocab random_toy_vocab(Rng& rng, const std::u32string& alphabet,
                                     std::size_t max_len, std::size_t n_multi) {
  std::set<std::pair<std::u32string, bool>> keys;
  for (char32_t c : alphabet) {
    keys.insert({std::u32string(1, c), false});
    keys.insert({std::u32string(1, c), true});
  }
  const std::size_t want = keys.size() + n_multi;
  while (keys.size() < want) {
    std::u32string t;
    const auto len = 2 + rng.below(max_len - 1);
    for (std::size_t i = 0; i < len; ++i) t.push_back(alphabet[rng.below(alphabet.size())]);
    keys.insert({t, rng.bernoulli(0.5)});
  }
  std::vector<Piece> pieces;
  double total = 0.0;
  std::vector<double> w;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    w.push_back(0.05 + rng.uniform());
    total += w.back();
  }
  std::size_t i = 0;
  for (const auto& [t, cont] : keys) pieces.push_back({t, cont, std::log(w[i++] / total)});
  return SubwordVocab(pieces);
}

// Calls f(ids) for every segmentation of `word` into vocabulary pieces.
inline void for_each_segmentation(const SubwordVocab& vocab, const std::u32string& word,
                                  const std::function<void(const std::vector<int>&,
                                                           const std::vector<std::u32string>&)>& f) {
  std::vector<int> ids;
  std::vector<std::u32string> texts;
  std::function<void(std::size_t)> rec = [&](std::size_t pos) {
    if (pos == word.size()) {
      f(ids, texts);
      return;
    }
    for (std::size_t len = 1; pos + len <= word.size(); ++len) {
      const auto t = word.substr(pos, len);
      const int id = vocab.find(t, pos > 0);
      if (id < 0) continue;
      ids.push_back(id);
      texts.push_back(t);
      rec(pos + len);
      ids.pop_back();
      texts.pop_back();
    }
  };
  rec(0);
}

struct BruteForceBest {
  std::vector<int> ids;
  double score = -INFINITY;
};

// Highest score; ties by fewer pieces, then lexicographic piece texts.
// Scores are summed left to right.
inline BruteForceBest brute_force_best(const SubwordVocab& vocab, const std::u32string& word) {
  BruteForceBest best;
  std::vector<std::u32string> best_texts;
  bool found = false;
  for_each_segmentation(vocab, word, [&](const auto& ids, const auto& texts) {
    double s = 0.0;
    for (int id : ids) s += vocab.piece(id).log_prob;
    bool take = !found || s > best.score;
    if (found && s == best.score) {
      if (ids.size() != best.ids.size()) take = ids.size() < best.ids.size();
      else take = texts < best_texts;
    }
    if (take) {
      best.ids = ids;
      best.score = s;
      best_texts = texts;
      found = true;
    }
  });
  return best;
}

struct BruteForceCounts {
  std::vector<double> expected;
  double log_likelihood = 0.0;
};

// Posterior-weighted piece counts by explicit enumeration.
inline BruteForceCounts brute_force_expected(const SubwordVocab& vocab,
                                             const std::vector<WordCount>& words) {
  BruteForceCounts out;
  out.expected.assign(vocab.piece_count(), 0.0);
  for (const auto& wc : words) {
    std::vector<std::pair<std::vector<int>, double>> segs;
    double z = 0.0;
    for_each_segmentation(vocab, wc.word, [&](const auto& ids, const auto&) {
      double p = 1.0;
      for (int id : ids) p *= std::exp(vocab.piece(id).log_prob);
      segs.push_back({ids, p});
      z += p;
    });
    out.log_likelihood += static_cast<double>(wc.count) * std::log(z);
    for (const auto& [ids, p] : segs) {
      for (int id : ids) {
        out.expected[id - kNumSpecials] += static_cast<double>(wc.count) * p / z;
      }
    }
  }
  return out;
}

}  // namespace lmkit::subword::testing_oracle
