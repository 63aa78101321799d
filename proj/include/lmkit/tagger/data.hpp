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


// Task data: CoNLL-style tagging files, label<TAB>text classification files,
// and the matching prediction files.

#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/text.hpp"

namespace lmkit::tagger {

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  std::vector<std::string> predicted;  // empty until tagged
};

struct LabeledText {
  std::string label;
  std::string text;
};

// Closed label inventory, ids in sorted label order.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(const std::set<std::string>& labels) : labels_(labels.begin(), labels.end()) {
    for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = static_cast<int>(i);
  }

  int size() const { return static_cast<int>(labels_.size()); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::string& label(int id) const { return labels_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& l) const { return index_.count(l) > 0; }
  int id(const std::string& l) const {
    auto it = index_.find(l);
    if (it == index_.end()) throw DataError("label '" + l + "' not in label set");
    return it->second;
  }
  bool operator==(const LabelSet& o) const { return labels_ == o.labels_; }

  nlohmann::json to_json() const { return labels_; }
  static LabelSet from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<std::string>>();
    return LabelSet(std::set<std::string>(v.begin(), v.end()));
  }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, int> index_;
};

inline LabelSet tagset_of(const std::vector<const std::vector<TaggedSentence>*>& sets) {
  std::set<std::string> tags;
  for (const auto* s : sets) {
    for (const auto& sent : *s) tags.insert(sent.tags.begin(), sent.tags.end());
  }
  return LabelSet(tags);
}

inline LabelSet labels_of(const std::vector<LabeledText>& data) {
  std::set<std::string> labels;
  for (const auto& d : data) labels.insert(d.label);
  return LabelSet(labels);
}

namespace detail {

inline std::vector<std::string> columns(const std::string& line) {
  std::vector<std::string> out;
  for (auto f : text::split_whitespace(line)) out.emplace_back(f);
  return out;
}

}  // namespace detail

// token TAB tag lines, sentences separated by blank lines. With
// `with_predictions` a third column carries the predicted tag.
inline std::vector<TaggedSentence> read_conll(std::istream& in, bool with_predictions = false) {
  const std::size_t want = with_predictions ? 3 : 2;
  std::vector<TaggedSentence> out;
  TaggedSentence cur;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) out.push_back(std::move(cur));
    cur = {};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto cols = detail::columns(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols.size() != want) {
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(want) +
                      " columns, got " + std::to_string(cols.size()));
    }
    cur.tokens.push_back(cols[0]);
    cur.tags.push_back(cols[1]);
    if (with_predictions) cur.predicted.push_back(cols[2]);
  }
  flush();
  return out;
}

// Writes token, gold and (when present) predicted columns.
inline void write_conll(std::ostream& out, const std::vector<TaggedSentence>& data) {
  for (const auto& s : data) {
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      out << s.tokens[t] << '\t' << s.tags[t];
      if (!s.predicted.empty()) out << '\t' << s.predicted[t];
      out << '\n';
    }
    out << '\n';
  }
}

inline std::vector<LabeledText> read_classification(std::istream& in) {
  std::vector<LabeledText> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw DataError("line " + std::to_string(lineno) + ": expected label<TAB>text");
    }
    LabeledText d{line.substr(0, tab), text::clean(line.substr(tab + 1))};
    if (text::split_whitespace(d.text).empty()) {
      throw DataError("line " + std::to_string(lineno) + ": empty text");
    }
    out.push_back(std::move(d));
  }
  return out;
}

// gold TAB predicted per line.
inline void read_label_pairs(std::istream& in, std::vector<std::string>* gold,
                             std::vector<std::string>* predicted) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cols = detail::columns(line);
    if (cols.empty()) continue;
    if (cols.size() != 2) {
      throw DataError("line " + std::to_string(lineno) + ": expected gold and predicted labels");
    }
    gold->push_back(cols[0]);
    predicted->push_back(cols[1]);
  }
}

}  // namespace lmkit::tagger
