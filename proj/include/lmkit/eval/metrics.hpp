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

// Classification, tagging and span metrics. All scores are percentages.

#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lmkit/core/error.hpp"

namespace lmkit::eval {

using TagSequence = std::vector<std::string>;

inline double percent(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

// Harmonic mean; 0 when both are 0.
inline double f1_score(double precision, double recall) {
  return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

// ------------------------------------------------------------ classification

struct ClassScore {
  std::size_t gold = 0, predicted = 0, correct = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct ClassificationReport {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  std::map<std::string, ClassScore> per_class;
};

// Micro F1 pools counts over classes, which for single-label data is plain
// accuracy. Macro F1 averages per-class F1 over `classes`; a class with no
// gold and no predicted items scores 0 and still counts in the mean.
inline ClassificationReport micro_macro_f1(const std::vector<std::string>& gold,
                                           const std::vector<std::string>& predicted,
                                           const std::vector<std::string>& classes) {
  if (gold.empty()) throw ConfigError("micro_macro_f1: empty input");
  if (gold.size() != predicted.size()) {
    throw DataError("micro_macro_f1: " + std::to_string(gold.size()) + " gold labels vs " +
                    std::to_string(predicted.size()) + " predictions");
  }
  if (classes.empty()) throw ConfigError("micro_macro_f1: empty class set");
  ClassificationReport rep;
  for (const auto& c : classes) rep.per_class[c];
  if (rep.per_class.size() != classes.size()) throw ConfigError("micro_macro_f1: duplicate class");
  auto slot = [&](const std::string& label) -> ClassScore& {
    auto it = rep.per_class.find(label);
    if (it == rep.per_class.end()) throw DataError("label '" + label + "' not in class set");
    return it->second;
  };
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++slot(gold[i]).gold;
    ++slot(predicted[i]).predicted;
    if (gold[i] == predicted[i]) {
      ++slot(gold[i]).correct;
      ++correct;
    }
  }
  double macro = 0.0;
  for (auto& [name, s] : rep.per_class) {
    s.precision = percent(s.correct, s.predicted);
    s.recall = percent(s.correct, s.gold);
    s.f1 = f1_score(s.precision, s.recall);
    macro += s.f1;
  }
  rep.micro_f1 = percent(correct, gold.size());
  rep.macro_f1 = macro / static_cast<double>(classes.size());
  return rep;
}

// ------------------------------------------------------------------- tagging

inline double word_accuracy(const std::vector<TagSequence>& gold,
                            const std::vector<TagSequence>& predicted) {
  if (gold.size() != predicted.size()) {
    throw DataError("word_accuracy: " + std::to_string(gold.size()) + " gold sentences vs " +
                    std::to_string(predicted.size()) + " predicted");
  }
  std::size_t total = 0, correct = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != predicted[s].size()) {
      throw DataError("word_accuracy: length mismatch in sentence " + std::to_string(s + 1));
    }
    for (std::size_t t = 0; t < gold[s].size(); ++t) correct += gold[s][t] == predicted[s][t];
    total += gold[s].size();
  }
  return percent(correct, total);
}

// --------------------------------------------------------------------- spans

struct SpanEntity {
  std::string type;
  std::size_t start = 0;  // inclusive token index
  std::size_t end = 0;    // exclusive
  bool operator==(const SpanEntity&) const = default;
  auto operator<=>(const SpanEntity&) const = default;
};

namespace detail {

struct BioTag {
  char prefix;  // 'O', 'B' or 'I'
  std::string type;
};

inline BioTag parse_bio(const std::string& tag) {
  if (tag == "O") return {'O', {}};
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
    return {tag[0], tag.substr(2)};
  }
  throw DataError("malformed BIO tag '" + tag + "'");
}

}  // namespace detail

// Entities of a BIO sequence with conlleval semantics: an I- tag after O or
// after another type opens a new entity instead of being rejected.
inline std::vector<SpanEntity> bio_spans(const TagSequence& tags) {
  std::vector<SpanEntity> out;
  bool open = false;
  for (std::size_t t = 0; t < tags.size(); ++t) {
    const auto tag = detail::parse_bio(tags[t]);
    const bool continues = open && tag.prefix == 'I' && tag.type == out.back().type;
    if (continues) {
      out.back().end = t + 1;
      continue;
    }
    open = tag.prefix != 'O';
    if (open) out.push_back({tag.type, t, t + 1});
  }
  return out;
}

// Inverse of bio_spans for non-overlapping spans.
inline TagSequence spans_to_bio(const std::vector<SpanEntity>& spans, std::size_t length) {
  TagSequence tags(length, "O");
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > length) throw ConfigError("span out of range");
    for (std::size_t t = s.start; t < s.end; ++t) {
      if (tags[t] != "O") throw ConfigError("overlapping spans");
      tags[t] = (t == s.start ? "B-" : "I-") + s.type;
    }
  }
  return tags;
}

struct SpanScore {
  std::size_t gold = 0, predicted = 0, correct = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Exact-match entity scoring: type, start and end must all agree.
inline SpanScore conll_prf(const std::vector<TagSequence>& gold,
                           const std::vector<TagSequence>& predicted) {
  if (gold.size() != predicted.size()) {
    throw DataError("conll_prf: " + std::to_string(gold.size()) + " gold sentences vs " +
                    std::to_string(predicted.size()) + " predicted");
  }
  SpanScore s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != predicted[i].size()) {
      throw DataError("conll_prf: length mismatch in sentence " + std::to_string(i + 1));
    }
    const auto g = bio_spans(gold[i]);
    const auto p = bio_spans(predicted[i]);
    s.gold += g.size();
    s.predicted += p.size();
    for (const auto& e : p) s.correct += std::find(g.begin(), g.end(), e) != g.end();
  }
  s.precision = percent(s.correct, s.predicted);
  s.recall = percent(s.correct, s.gold);
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

}  // namespace lmkit::eval
