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

// MLM + NSP pretraining examples: segment pair sampling, whole-word
// masking and phase-wise packing.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/corpus/corpus.hpp"
#include "lmkit/subword/vocab.hpp"

namespace lmkit::pretrain {

struct MaskingPolicy {
  double candidate_fraction = 0.15;
  double mask_fraction = 0.8;
  double random_fraction = 0.1;
  double keep_fraction = 0.1;
  bool whole_word = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(candidate_fraction >= 0.0 && candidate_fraction < 1.0)) {
      throw ConfigError("mask probability must be in [0,1)");
    }
    if (mask_fraction < 0 || random_fraction < 0 || keep_fraction < 0 ||
        std::fabs(mask_fraction + random_fraction + keep_fraction - 1.0) > 1e-9) {
      throw ConfigError("mask/random/keep fractions must be non-negative and sum to 1");
    }
  }
};

struct PretrainExample {
  std::vector<int> ids;          // [CLS] A [SEP] B [SEP]
  std::vector<int> segment_ids;  // 0 for [CLS], A and the first [SEP]
  std::vector<int> masked_positions;
  std::vector<int> masked_labels;
  bool is_next = false;
  // Word of each position (-1 for specials); B words follow A words.
  // Carried for diagnostics, not part of the binary format.
  std::vector<int> word_ids;

  bool operator==(const PretrainExample&) const = default;
};

struct PackingPhase {
  std::size_t max_len = 128;
  double fraction = 1.0;
};

struct PackingSchedule {
  std::vector<PackingPhase> phases = {{128, 0.9}, {512, 0.1}};

  void validate() const {
    if (phases.empty()) throw ConfigError("packing schedule has no phases");
    double sum = 0.0;
    for (const auto& p : phases) {
      if (p.max_len < 5) throw ConfigError("phase max_len must be >= 5");
      if (!(p.fraction > 0.0)) throw ConfigError("phase fraction must be positive");
      sum += p.fraction;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("phase fractions must sum to 1");
  }

  // Per-phase share of `total`, rounded, last phase takes the remainder.
  std::vector<std::size_t> counts(std::size_t total) const {
    std::vector<std::size_t> out;
    std::size_t used = 0;
    for (std::size_t i = 0; i < phases.size(); ++i) {
      std::size_t n = i + 1 == phases.size()
                          ? total - used
                          : static_cast<std::size_t>(std::llround(phases[i].fraction * total));
      n = std::min(n, total - used);
      out.push_back(n);
      used += n;
    }
    return out;
  }

  // "128:0.9,512:0.1"
  static PackingSchedule parse(const std::string& spec) {
    PackingSchedule s;
    s.phases.clear();
    std::size_t start = 0;
    while (start <= spec.size()) {
      const auto comma = spec.find(',', start);
      const std::string item = spec.substr(start, comma - start);
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("bad schedule item '" + item + "'");
      try {
        s.phases.push_back({std::stoul(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
      } catch (const std::logic_error&) {
        throw ConfigError("bad schedule item '" + item + "'");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    s.validate();
    return s;
  }
};

// ---------------------------------------------------------------------------
// NSP pairs

struct SegmentPair {
  std::size_t a;  // indices into the segment list
  std::size_t b;
  bool is_next;
};

// Draws (A, B, is_next) with is_next ~ Bernoulli(0.5). Positive pairs take A
// uniformly among segments that have a successor in their document and B
// as that successor. Negative pairs take A uniformly over all segments and
// B uniformly from the other documents; with a single document, from the
// same document excluding A and its successor.
class NspSampler {
 public:
  explicit NspSampler(const std::vector<corpus::Segment>& segments) : segs_(segments) {
    if (segs_.size() < 2) throw DataError("NSP sampling needs at least two segments");
    for (std::size_t i = 0; i + 1 < segs_.size(); ++i) {
      if (segs_[i + 1].document == segs_[i].document) with_next_.push_back(i);
    }
    for (std::size_t i = 0; i < segs_.size(); ++i) {
      auto& r = doc_range_[segs_[i].document];
      if (r.second == 0) r.first = i;
      r.second = i + 1;
    }
    single_document_ = doc_range_.size() == 1;
  }

  bool single_document() const { return single_document_; }

  SegmentPair next(Rng& rng) {
    const bool want_next = rng.bernoulli(0.5) && !with_next_.empty();
    if (want_next) {
      const std::size_t a = with_next_[rng.below(with_next_.size())];
      return {a, a + 1, true};
    }
    for (;;) {
      const std::size_t a = rng.below(segs_.size());
      if (!single_document_) {
        const auto [lo, hi] = doc_range_.at(segs_[a].document);
        const std::size_t others = segs_.size() - (hi - lo);
        std::size_t k = rng.below(others);
        if (k >= lo) k += hi - lo;
        return {a, k, false};
      }
      // Same document: anything but A and its successor.
      std::vector<std::size_t> allowed;
      for (std::size_t i = 0; i < segs_.size(); ++i) {
        if (i != a && i != a + 1) allowed.push_back(i);
      }
      if (allowed.empty()) continue;
      return {a, allowed[rng.below(allowed.size())], false};
    }
  }

 private:
  const std::vector<corpus::Segment>& segs_;
  std::vector<std::size_t> with_next_;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> doc_range_;
  bool single_document_ = false;
};

inline std::vector<SegmentPair> make_nsp_pairs(const std::vector<corpus::Segment>& segments,
                                               std::size_t count, Rng& rng) {
  NspSampler sampler(segments);
  std::vector<SegmentPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sampler.next(rng));
  return out;
}

// ---------------------------------------------------------------------------
// Masking

enum class Replacement : std::uint8_t { kMask, kRandom, kKeep };

struct MaskResult {
  std::vector<int> ids;  // after replacement
  std::vector<int> positions;
  std::vector<int> labels;
  std::vector<Replacement> replacements;
};

inline bool is_structural(int id) {
  return id == subword::kClsId || id == subword::kSepId || id == subword::kPadId;
}

// Number of masking candidates for n maskable tokens: fraction * n, with
// the fractional part resolved by a coin flip so the expected count is
// exact. Without an rng the value is rounded up.
inline std::size_t masking_target(double fraction, std::size_t n, Rng* rng = nullptr) {
  if (fraction <= 0.0 || n == 0) return 0;
  const double x = fraction * static_cast<double>(n);
  const double whole = std::floor(x + 1e-9);
  const double rest = x - whole;
  if (rest <= 1e-9) return static_cast<std::size_t>(whole);
  if (!rng) return static_cast<std::size_t>(whole) + 1;
  return static_cast<std::size_t>(whole) + (rng->uniform() < rest ? 1 : 0);
}

// Selects whole words (all positions sharing a word id) in random order
// until masking_target(fraction, N) tokens are chosen, N the number of
// maskable tokens. Words that would overshoot are skipped in a first pass.
// If the target is still short, the shortest remaining word is added when
// nothing was chosen yet or when it lands at least as close to the target.
// Each chosen token independently becomes [MASK], a random non-special
// piece, or stays unchanged.
inline MaskResult apply_masking(const std::vector<int>& ids, const std::vector<int>& word_ids,
                                std::size_t vocab_size, const MaskingPolicy& policy, Rng& rng) {
  policy.validate();
  if (ids.size() != word_ids.size()) throw ConfigError("apply_masking: ids/word_ids size mismatch");
  MaskResult out;
  out.ids = ids;

  std::vector<std::vector<int>> units;
  std::map<int, std::size_t> unit_of_word;
  std::size_t maskable = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (subword::SubwordVocab::is_special(ids[i])) continue;
    ++maskable;
    if (policy.whole_word && word_ids[i] >= 0) {
      auto [it, fresh] = unit_of_word.emplace(word_ids[i], units.size());
      if (fresh) units.emplace_back();
      units[it->second].push_back(static_cast<int>(i));
    } else {
      units.push_back({static_cast<int>(i)});
    }
  }
  const std::size_t target = masking_target(policy.candidate_fraction, maskable, &rng);
  if (target == 0) return out;

  std::vector<std::size_t> order(units.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<bool> chosen(units.size(), false);
  std::size_t count = 0;
  for (std::size_t u : order) {
    if (count + units[u].size() <= target) {
      chosen[u] = true;
      count += units[u].size();
    }
    if (count == target) break;
  }
  if (count < target) {
    std::size_t best = units.size();
    for (std::size_t u : order) {
      if (!chosen[u] && (best == units.size() || units[u].size() < units[best].size())) best = u;
    }
    if (best < units.size() &&
        (count == 0 || count + units[best].size() - target <= target - count)) {
      chosen[best] = true;
    }
  }

  for (std::size_t u = 0; u < units.size(); ++u) {
    if (!chosen[u]) continue;
    for (int p : units[u]) out.positions.push_back(p);
  }
  std::sort(out.positions.begin(), out.positions.end());
  const int first_piece = subword::kNumSpecials;
  const int n_pieces = static_cast<int>(vocab_size) - first_piece;
  for (int p : out.positions) {
    out.labels.push_back(ids[p]);
    const double r = rng.uniform();
    if (r < policy.mask_fraction) {
      out.ids[p] = subword::kMaskId;
      out.replacements.push_back(Replacement::kMask);
    } else if (r < policy.mask_fraction + policy.random_fraction && n_pieces > 0) {
      out.ids[p] = first_piece + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_pieces)));
      out.replacements.push_back(Replacement::kRandom);
    } else {
      out.replacements.push_back(Replacement::kKeep);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Packing

struct PackStats {
  std::size_t skipped = 0;           // pairs that could not be fitted
  std::size_t truncated = 0;         // pairs that lost tokens
  bool single_document = false;      // negatives drawn from the same document
};

struct TokenSpan {
  std::vector<int> ids;
  std::vector<int> word_ids;
};

// Removes tokens from the end of the longer segment (B on ties) until both
// fit in max_tokens.
inline bool truncate_pair(TokenSpan& a, TokenSpan& b, std::size_t max_tokens) {
  bool changed = false;
  while (a.ids.size() + b.ids.size() > max_tokens) {
    TokenSpan& longer = a.ids.size() > b.ids.size() ? a : b;
    longer.ids.pop_back();
    longer.word_ids.pop_back();
    changed = true;
  }
  return changed;
}

// Builds [CLS] A [SEP] B [SEP] and masks it. Returns nothing when the pair
// cannot keep at least one token of each segment.
inline std::optional<PretrainExample> build_example(TokenSpan a, TokenSpan b, bool is_next,
                                                    std::size_t max_len, std::size_t vocab_size,
                                                    const MaskingPolicy& policy, Rng& rng,
                                                    bool* truncated = nullptr) {
  if (max_len < 5 || a.ids.empty() || b.ids.empty()) return std::nullopt;
  const bool cut = truncate_pair(a, b, max_len - 3);
  if (truncated) *truncated = cut;
  if (a.ids.empty() || b.ids.empty()) return std::nullopt;
  PretrainExample ex;
  ex.is_next = is_next;
  ex.ids.push_back(subword::kClsId);
  ex.word_ids.push_back(-1);
  int max_word = -1;
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    ex.ids.push_back(a.ids[i]);
    ex.word_ids.push_back(a.word_ids[i]);
    max_word = std::max(max_word, a.word_ids[i]);
  }
  ex.ids.push_back(subword::kSepId);
  ex.word_ids.push_back(-1);
  ex.segment_ids.assign(ex.ids.size(), 0);
  for (std::size_t i = 0; i < b.ids.size(); ++i) {
    ex.ids.push_back(b.ids[i]);
    ex.word_ids.push_back(b.word_ids[i] + max_word + 1);
  }
  ex.ids.push_back(subword::kSepId);
  ex.word_ids.push_back(-1);
  ex.segment_ids.resize(ex.ids.size(), 1);
  auto m = apply_masking(ex.ids, ex.word_ids, vocab_size, policy, rng);
  ex.ids = std::move(m.ids);
  ex.masked_positions = std::move(m.positions);
  ex.masked_labels = std::move(m.labels);
  return ex;
}

// Generates `total` examples split across the schedule's phases. Phase p
// draws from its own random stream derived from (policy.seed, p).
inline std::vector<std::vector<PretrainExample>> pack(const corpus::Corpus& corpus,
                                                      const subword::SubwordVocab& vocab,
                                                      const PackingSchedule& schedule,
                                                      const MaskingPolicy& policy,
                                                      std::size_t total,
                                                      PackStats* stats = nullptr) {
  schedule.validate();
  policy.validate();
  const auto segs = corpus::segments(corpus);
  NspSampler sampler(segs);
  PackStats st;
  st.single_document = sampler.single_document();

  std::vector<std::optional<TokenSpan>> cache(segs.size());
  auto tokens_of = [&](std::size_t i) -> const TokenSpan& {
    if (!cache[i]) {
      auto seq = subword::encode(vocab, segs[i].text);
      cache[i] = TokenSpan{std::move(seq.ids), std::move(seq.word_ids)};
    }
    return *cache[i];
  };

  const auto counts = schedule.counts(total);
  std::vector<std::vector<PretrainExample>> phases(schedule.phases.size());
  for (std::size_t p = 0; p < schedule.phases.size(); ++p) {
    Rng rng = Rng::derive(policy.seed, p);
    const std::size_t max_len = schedule.phases[p].max_len;
    std::size_t attempts = 0;
    while (phases[p].size() < counts[p]) {
      if (++attempts > 20 * counts[p] + 100) {
        throw DataError("pack: too many segment pairs cannot be fitted");
      }
      const auto pair = sampler.next(rng);
      bool cut = false;
      auto ex = build_example(tokens_of(pair.a), tokens_of(pair.b), pair.is_next, max_len,
                              vocab.size(), policy, rng, &cut);
      if (!ex) {
        ++st.skipped;
        continue;
      }
      if (cut) ++st.truncated;
      phases[p].push_back(std::move(*ex));
    }
  }
  if (stats) *stats = st;
  return phases;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct MaskingReport {
  std::size_t examples = 0;
  std::size_t maskable_tokens = 0;
  std::size_t masked_tokens = 0;
  std::size_t mask_replaced = 0;
  std::size_t random_replaced = 0;
  std::size_t kept = 0;
  std::size_t wwm_violations = 0;  // masked positions whose word is partly unmasked
  std::size_t is_next = 0;

  double candidate_fraction() const {
    return maskable_tokens ? static_cast<double>(masked_tokens) / maskable_tokens : 0.0;
  }
  double fraction(std::size_t n) const {
    return masked_tokens ? static_cast<double>(n) / masked_tokens : 0.0;
  }
};

// A random replacement that happens to draw the original id is counted as
// kept.
inline MaskingReport masking_stats(const std::vector<PretrainExample>& examples) {
  MaskingReport r;
  for (const auto& ex : examples) {
    ++r.examples;
    if (ex.is_next) ++r.is_next;
    std::vector<bool> masked(ex.ids.size(), false);
    for (int p : ex.masked_positions) masked[p] = true;
    for (std::size_t i = 0; i < ex.ids.size(); ++i) {
      if (!is_structural(ex.ids[i])) ++r.maskable_tokens;
    }
    for (std::size_t k = 0; k < ex.masked_positions.size(); ++k) {
      const int p = ex.masked_positions[k];
      ++r.masked_tokens;
      if (ex.ids[p] == subword::kMaskId) ++r.mask_replaced;
      else if (ex.ids[p] == ex.masked_labels[k]) ++r.kept;
      else ++r.random_replaced;
    }
    if (ex.word_ids.size() == ex.ids.size()) {
      for (int p : ex.masked_positions) {
        for (std::size_t i = 0; i < ex.ids.size(); ++i) {
          if (ex.word_ids[i] == ex.word_ids[p] && ex.word_ids[p] >= 0 && !masked[i]) {
            ++r.wwm_violations;
            break;
          }
        }
      }
    }
  }
  return r;
}

}  // namespace lmkit::pretrain
