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

// Unigram language model vocabulary training.
//
//   1. char_coverage picks the alphabet.
//   2. seed_vocab proposes single characters plus frequent substrings.
//   3. Rounds of EM over each word's segmentation lattice, each followed by
//      pruning of the pieces whose removal costs the least likelihood,
//      until the vocabulary fits the target size.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/core/text.hpp"
#include "lmkit/corpus/corpus.hpp"
#include "lmkit/subword/vocab.hpp"

namespace lmkit::subword {

struct WordCount {
  std::u32string word;
  std::uint64_t count;
};

// Distinct whitespace words with their frequencies, sorted by word.
inline std::vector<WordCount> count_words(const corpus::Corpus& c) {
  std::map<std::u32string, std::uint64_t> counts;
  for (const auto& doc : c.documents()) {
    for (const auto& p : doc.paragraphs) {
      for (auto w : text::split_whitespace(p)) ++counts[text::decode_utf8(w)];
    }
  }
  std::vector<WordCount> out;
  out.reserve(counts.size());
  for (auto& [w, n] : counts) out.push_back({w, n});
  return out;
}

// Smallest set of characters, taken by descending frequency (ties by code
// point), whose occurrences reach `coverage` of all character occurrences.
inline std::vector<char32_t> char_coverage(const std::vector<WordCount>& words,
                                           double coverage) {
  if (!(coverage > 0.0 && coverage <= 1.0)) {
    throw ConfigError("coverage must be in (0,1]");
  }
  std::map<char32_t, std::uint64_t> freq;
  std::uint64_t total = 0;
  for (const auto& wc : words) {
    for (char32_t c : wc.word) {
      freq[c] += wc.count;
      total += wc.count;
    }
  }
  std::vector<std::pair<char32_t, std::uint64_t>> sorted(freq.begin(), freq.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<char32_t> alphabet;
  const double needed = coverage * static_cast<double>(total);
  std::uint64_t covered = 0;
  for (const auto& [c, n] : sorted) {
    if (static_cast<double>(covered) >= needed * (1.0 - 1e-12)) break;
    alphabet.push_back(c);
    covered += n;
  }
  std::sort(alphabet.begin(), alphabet.end());
  return alphabet;
}

inline std::vector<char32_t> char_coverage(const corpus::Corpus& c, double coverage) {
  if (c.empty()) throw DataError("char_coverage: empty corpus");
  return char_coverage(count_words(c), coverage);
}

// Score of a candidate in the seed vocabulary.
struct Candidate {
  Piece piece;
  double frequency = 0.0;
};

// Every alphabet character in both position forms, plus the top substrings
// (within words, 2..max_len characters, no out-of-alphabet characters)
// ranked by frequency x length. Initial probabilities are proportional to
// that score. Returns at most seed_size candidates.
inline std::vector<Candidate> seed_vocab(const std::vector<WordCount>& words,
                                         const std::vector<char32_t>& alphabet,
                                         std::size_t seed_size,
                                         std::size_t max_len) {
  const std::set<char32_t> alpha(alphabet.begin(), alphabet.end());
  const std::size_t required = 2 * alpha.size();
  if (seed_size < required) {
    throw ConfigError("seed size " + std::to_string(seed_size) +
                      " is smaller than the " + std::to_string(required) +
                      " single-character pieces of the alphabet");
  }
  if (max_len < 1) throw ConfigError("max piece length must be >= 1");
  std::map<std::pair<std::u32string, bool>, double> freq;
  for (char32_t c : alpha) {
    freq[{std::u32string(1, c), false}] = 0.0;
    freq[{std::u32string(1, c), true}] = 0.0;
  }
  for (const auto& wc : words) {
    const auto& w = wc.word;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t len = 1; len <= max_len && i + len <= w.size(); ++len) {
        if (!alpha.count(w[i + len - 1])) break;
        freq[{w.substr(i, len), i > 0}] += static_cast<double>(wc.count);
      }
    }
  }
  std::vector<Candidate> singles;
  std::vector<Candidate> multi;
  for (const auto& [key, f] : freq) {
    Candidate c{{key.first, key.second, 0.0}, f};
    (key.first.size() == 1 ? singles : multi).push_back(std::move(c));
  }
  auto score = [](const Candidate& c) {
    return c.frequency * static_cast<double>(c.piece.text.size());
  };
  // freq is ordered by (text, continuation), so stable_sort leaves ties in
  // that order.
  std::stable_sort(multi.begin(), multi.end(), [&](const auto& a, const auto& b) {
    return score(a) > score(b);
  });
  if (multi.size() > seed_size - singles.size()) multi.resize(seed_size - singles.size());
  std::vector<Candidate> out = std::move(singles);
  out.insert(out.end(), multi.begin(), multi.end());
  double total = 0.0;
  for (const auto& c : out) total += std::max(score(c), 1.0);
  for (auto& c : out) c.piece.log_prob = std::log(std::max(score(c), 1.0) / total);
  return out;
}

// ---------------------------------------------------------------------------
// EM

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct EStep {
  std::vector<double> expected;  // indexed by piece position in the vocab
  double log_likelihood = 0.0;   // sum over words of count * log P(word)
  double token_count = 0.0;      // sum of counts of words used
};

namespace detail {

inline void accumulate_word(const SubwordVocab& vocab, const WordCount& wc,
                            EStep& acc) {
  const std::size_t n = wc.word.size();
  // [UNK] edges are forced, so any constant score leaves EM unaffected.
  const auto lattice = build_lattice(vocab, wc.word, 0.0);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> alpha(n + 1, kNegInf), beta(n + 1, kNegInf);
  alpha[0] = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    for (const auto& e : lattice[j]) alpha[j] = log_add(alpha[j], alpha[e.begin] + e.score);
  }
  beta[n] = 0.0;
  for (std::size_t j = n; j > 0; --j) {
    for (const auto& e : lattice[j]) beta[e.begin] = log_add(beta[e.begin], e.score + beta[j]);
  }
  const double log_z = alpha[n];
  const double count = static_cast<double>(wc.count);
  acc.log_likelihood += count * log_z;
  acc.token_count += count;
  for (std::size_t j = 1; j <= n; ++j) {
    for (const auto& e : lattice[j]) {
      if (e.id == kUnkId) continue;
      const double post = std::exp(alpha[e.begin] + e.score + beta[j] - log_z);
      acc.expected[e.id - kNumSpecials] += count * post;
    }
  }
}

}  // namespace detail

// Expected piece counts by forward-backward over every word's lattice.
// Words are sharded across `threads` workers and merged in shard order.
inline EStep expected_counts(const SubwordVocab& vocab,
                             const std::vector<WordCount>& words,
                             unsigned threads = 1) {
  threads = std::max(1u, std::min<unsigned>(threads, words.size() ? words.size() : 1));
  std::vector<EStep> shards(threads);
  for (auto& s : shards) s.expected.assign(vocab.piece_count(), 0.0);
  auto work = [&](unsigned t) {
    const std::size_t lo = words.size() * t / threads;
    const std::size_t hi = words.size() * (t + 1) / threads;
    for (std::size_t i = lo; i < hi; ++i) detail::accumulate_word(vocab, words[i], shards[t]);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  EStep total = std::move(shards[0]);
  for (unsigned t = 1; t < threads; ++t) {
    total.log_likelihood += shards[t].log_likelihood;
    total.token_count += shards[t].token_count;
    for (std::size_t i = 0; i < total.expected.size(); ++i) {
      total.expected[i] += shards[t].expected[i];
    }
  }
  return total;
}

// Renormalized pieces from expected counts. A count floor keeps every piece
// (in particular every single character) at non-zero probability.
inline std::vector<Piece> m_step(const SubwordVocab& vocab, const EStep& e) {
  double sum = 0.0;
  for (double c : e.expected) sum += c;
  const double floor =
      std::max(sum, 1.0) * 1e-12 / static_cast<double>(std::max<std::size_t>(1, e.expected.size()));
  double norm = 0.0;
  for (double c : e.expected) norm += std::max(c, floor);
  std::vector<Piece> out = vocab.pieces();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].log_prob = std::log(std::max(e.expected[i], floor) / norm);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainerConfig {
  std::size_t target_size = 50000;   // includes the specials
  double coverage = 0.9995;
  std::size_t seed_size = 0;         // 0 means 10 x target_size
  std::size_t max_piece_length = 16;
  double shrink_factor = 0.75;
  int em_iterations = 2;
  unsigned threads = 1;
};

struct EmIteration {
  std::size_t round = 0;
  std::size_t pieces = 0;
  double log_likelihood = 0.0;  // of the parameters going into the E-step
};

struct TrainResult {
  SubwordVocab vocab;
  std::vector<char32_t> alphabet;
  std::vector<EmIteration> history;
};

// Likelihood cost of dropping each piece: expected count times the gap
// between its log-probability and the best segmentation of its text by the
// remaining pieces. Single characters get +infinity.
inline std::vector<double> pruning_loss(const SubwordVocab& vocab,
                                        const std::vector<double>& expected) {
  std::vector<double> loss(vocab.piece_count());
  for (std::size_t i = 0; i < vocab.piece_count(); ++i) {
    const Piece& p = vocab.pieces()[i];
    if (p.text.size() == 1) {
      loss[i] = std::numeric_limits<double>::infinity();
      continue;
    }
    const int self = static_cast<int>(i) + kNumSpecials;
    // Best alternative path over the piece text, keeping its position form.
    const std::size_t n = p.text.size();
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    std::vector<double> best(n + 1, kNegInf);
    best[0] = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (best[a] == kNegInf) continue;
      for (std::size_t len = 1; a + len <= n && len <= vocab.max_piece_length(); ++len) {
        const int id = vocab.find(std::u32string_view(p.text).substr(a, len),
                                  p.continuation || a > 0);
        if (id < 0 || id == self) continue;
        best[a + len] = std::max(best[a + len], best[a] + vocab.piece(id).log_prob);
      }
    }
    loss[i] = expected[i] * (p.log_prob - best[n]);
    if (std::isnan(loss[i])) loss[i] = 0.0;
  }
  return loss;
}

inline TrainResult train_unigram(const std::vector<WordCount>& words,
                                 const TrainerConfig& cfg) {
  if (words.empty()) throw DataError("train_unigram: no words");
  if (!(cfg.shrink_factor > 0.0 && cfg.shrink_factor < 1.0)) {
    throw ConfigError("shrink factor must be in (0,1)");
  }
  if (cfg.em_iterations < 1) throw ConfigError("em iterations must be >= 1");
  TrainResult result;
  result.alphabet = char_coverage(words, cfg.coverage);
  const std::size_t required = 2 * result.alphabet.size();
  if (cfg.target_size < required + kNumSpecials) {
    throw ConfigError("target size " + std::to_string(cfg.target_size) +
                      " is below the " + std::to_string(required + kNumSpecials) +
                      " entries needed for the specials and the alphabet");
  }
  const std::size_t target_pieces = cfg.target_size - kNumSpecials;
  const std::size_t seed_size = cfg.seed_size ? cfg.seed_size : 10 * cfg.target_size;
  std::vector<Piece> pieces;
  for (auto& c : seed_vocab(words, result.alphabet, seed_size, cfg.max_piece_length)) {
    pieces.push_back(std::move(c.piece));
  }
  const VocabHeader header{1, cfg.target_size, cfg.coverage};
  SubwordVocab vocab(pieces, header);

  for (std::size_t round = 0;; ++round) {
    EStep e;
    for (int it = 0; it < cfg.em_iterations; ++it) {
      e = expected_counts(vocab, words, cfg.threads);
      if (!std::isfinite(e.log_likelihood)) {
        throw InvariantError("train_unigram: non-finite corpus log-likelihood");
      }
      result.history.push_back({round, vocab.piece_count(), e.log_likelihood});
      vocab = SubwordVocab(m_step(vocab, e), header);
    }
    if (vocab.piece_count() <= target_pieces) break;

    // Expected counts under the refitted parameters drive the pruning.
    e = expected_counts(vocab, words, cfg.threads);
    const auto loss = pruning_loss(vocab, e.expected);
    const std::size_t keep = std::max(
        target_pieces, static_cast<std::size_t>(
                           std::floor(cfg.shrink_factor * static_cast<double>(vocab.piece_count()))));
    std::vector<std::size_t> order(vocab.piece_count());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return loss[a] > loss[b];
    });
    std::vector<Piece> kept;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const Piece& p = vocab.pieces()[order[k]];
      if (k < keep || p.text.size() == 1) kept.push_back(p);
    }
    if (kept.size() == vocab.piece_count()) break;  // only single characters left
    double norm = 0.0;
    for (const auto& p : kept) norm += std::exp(p.log_prob);
    for (auto& p : kept) p.log_prob -= std::log(norm);
    vocab = SubwordVocab(std::move(kept), header);
  }
  result.vocab = std::move(vocab);
  return result;
}

inline TrainResult train_unigram(const corpus::Corpus& c, const TrainerConfig& cfg) {
  if (c.empty()) throw DataError("train_unigram: empty corpus");
  return train_unigram(count_words(c), cfg);
}

// Mean number of pieces per whitespace word.
inline double fertility(const SubwordVocab& vocab, const corpus::Corpus& c) {
  std::size_t words = 0;
  std::size_t pieces = 0;
  for (const auto& wc : count_words(c)) {
    words += wc.count;
    pieces += wc.count * viterbi(vocab, wc.word).ids.size();
  }
  if (words == 0) throw DataError("fertility: corpus has no words");
  return static_cast<double>(pieces) / static_cast<double>(words);
}

}  // namespace lmkit::subword
