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

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/core/text.hpp"

namespace lmkit::subword {

// Reserved ids.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;
inline constexpr std::array<std::string_view, kNumSpecials> kSpecialNames = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

// Display prefix of pieces that continue a word ("Mediku #aren #era").
inline constexpr char kContinuationMarker = '#';

// A vocabulary entry. Word-initial and continuation pieces with the same
// text are distinct entries.
struct Piece {
  std::u32string text;
  bool continuation = false;
  double log_prob = 0.0;

  // "#aren" for continuation pieces, "Mediku" for word-initial ones.
  std::string display() const {
    std::string s = continuation ? std::string(1, kContinuationMarker) : "";
    return s + text::encode_utf8(text);
  }
};

inline bool operator<(const Piece& a, const Piece& b) {
  if (a.text != b.text) return a.text < b.text;
  return a.continuation < b.continuation;
}

struct VocabHeader {
  int version = 1;
  std::size_t target_size = 0;
  double coverage = 1.0;
};

// Piece -> log-probability table with dense ids: the five specials first,
// then pieces by descending probability, ties by display form.
class SubwordVocab {
 public:
  SubwordVocab() { rebuild({}); }

  explicit SubwordVocab(std::vector<Piece> pieces, VocabHeader header = {})
      : header_(header) {
    rebuild(std::move(pieces));
  }

  std::size_t size() const { return kNumSpecials + pieces_.size(); }
  std::size_t piece_count() const { return pieces_.size(); }
  const VocabHeader& header() const { return header_; }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // Requires !is_special(id).
  const Piece& piece(int id) const { return pieces_.at(id - kNumSpecials); }
  const std::vector<Piece>& pieces() const { return pieces_; }

  // Display form; specials by name.
  std::string token(int id) const {
    if (is_special(id)) return std::string(kSpecialNames[id]);
    return piece(id).display();
  }

  // -1 when absent.
  int find(std::u32string_view text, bool continuation) const {
    const auto& map = continuation ? continuation_ : initial_;
    auto it = map.find(std::u32string(text));
    return it == map.end() ? -1 : it->second;
  }

  int find_token(std::string_view display) const {
    for (int i = 0; i < kNumSpecials; ++i) {
      if (display == kSpecialNames[i]) return i;
    }
    if (!display.empty() && display.front() == kContinuationMarker) {
      return find(text::decode_utf8(display.substr(1)), true);
    }
    return find(text::decode_utf8(display), false);
  }

  bool in_alphabet(char32_t c) const { return alphabet_.count(c) > 0; }
  const std::set<char32_t>& alphabet() const { return alphabet_; }
  std::size_t max_piece_length() const { return max_len_; }

  double min_log_prob() const { return min_log_prob_; }

  // Score given to an [UNK] edge in the tokenization lattice.
  double unk_log_prob() const { return min_log_prob_ - 10.0; }

  // Sum of piece probabilities.
  double total_probability() const {
    double s = 0.0;
    for (const auto& p : pieces_) s += std::exp(p.log_prob);
    return s;
  }

  // Text format: a header line, then "piece<TAB>log-prob" per line with the
  // specials first. Word-initial pieces whose text starts with '#' or '\'
  // are written with a leading '\'.
  void save(std::ostream& out) const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", header_.coverage);
    out << "#lmkit-vocab\tversion=" << header_.version
        << "\ttarget_size=" << header_.target_size << "\tcoverage=" << buf
        << '\n';
    for (auto name : kSpecialNames) out << name << "\t0\n";
    for (const auto& p : pieces_) {
      std::string shown = p.display();
      if (!p.continuation && !shown.empty() &&
          (shown.front() == kContinuationMarker || shown.front() == '\\')) {
        shown.insert(shown.begin(), '\\');
      }
      std::snprintf(buf, sizeof buf, "%.17g", p.log_prob);
      out << shown << '\t' << buf << '\n';
    }
  }

  std::string to_string() const {
    std::ostringstream os;
    save(os);
    return os.str();
  }

  static SubwordVocab load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("#lmkit-vocab", 0) != 0) {
      throw DataError("vocab: missing '#lmkit-vocab' header line");
    }
    VocabHeader header;
    for (auto field : split_tabs(line)) {
      const auto eq = field.find('=');
      if (eq == std::string_view::npos) continue;
      const std::string key(field.substr(0, eq));
      const std::string value(field.substr(eq + 1));
      if (key == "version") header.version = std::stoi(value);
      if (key == "target_size") header.target_size = std::stoull(value);
      if (key == "coverage") header.coverage = std::strtod(value.c_str(), nullptr);
    }
    if (header.version != 1) {
      throw DataError("vocab: unsupported version " + std::to_string(header.version));
    }
    std::vector<Piece> pieces;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) {
        throw DataError("vocab: line " + std::to_string(lineno) + ": missing tab");
      }
      std::string_view shown(line.data(), tab);
      const std::string value = line.substr(tab + 1);
      char* end = nullptr;
      const double lp = std::strtod(value.c_str(), &end);
      if (end == value.c_str()) {
        throw DataError("vocab: line " + std::to_string(lineno) + ": bad log-prob");
      }
      const std::size_t special_index = lineno - 2;
      if (special_index < kNumSpecials) {
        if (shown != kSpecialNames[special_index]) {
          throw DataError("vocab: line " + std::to_string(lineno) + ": expected " +
                          std::string(kSpecialNames[special_index]));
        }
        continue;
      }
      Piece p;
      p.log_prob = lp;
      if (!shown.empty() && shown.front() == '\\') {
        shown.remove_prefix(1);
      } else if (!shown.empty() && shown.front() == kContinuationMarker) {
        p.continuation = true;
        shown.remove_prefix(1);
      }
      p.text = text::decode_utf8(shown);
      if (p.text.empty()) {
        throw DataError("vocab: line " + std::to_string(lineno) + ": empty piece");
      }
      pieces.push_back(std::move(p));
    }
    return SubwordVocab(std::move(pieces), header);
  }

  static SubwordVocab load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocab file " + path);
    return load(in);
  }

 private:
  static std::vector<std::string_view> split_tabs(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
      const auto tab = s.find('\t', start);
      out.push_back(s.substr(start, tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    return out;
  }

  void rebuild(std::vector<Piece> pieces) {
    std::vector<std::pair<std::string, Piece>> keyed;
    keyed.reserve(pieces.size());
    for (auto& p : pieces) keyed.emplace_back(p.display(), std::move(p));
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
      if (a.second.log_prob != b.second.log_prob) {
        return a.second.log_prob > b.second.log_prob;
      }
      return a.first < b.first;
    });
    pieces_.clear();
    initial_.clear();
    continuation_.clear();
    alphabet_.clear();
    max_len_ = 1;
    min_log_prob_ = 0.0;
    for (auto& [shown, p] : keyed) {
      const int id = static_cast<int>(kNumSpecials + pieces_.size());
      auto& map = p.continuation ? continuation_ : initial_;
      if (!map.emplace(p.text, id).second) {
        throw DataError("vocab: duplicate piece " + shown);
      }
      if (p.text.size() == 1) alphabet_.insert(p.text[0]);
      max_len_ = std::max(max_len_, p.text.size());
      min_log_prob_ = std::min(min_log_prob_, p.log_prob);
      pieces_.push_back(std::move(p));
    }
  }

  VocabHeader header_;
  std::vector<Piece> pieces_;
  std::unordered_map<std::u32string, int> initial_;
  std::unordered_map<std::u32string, int> continuation_;
  std::set<char32_t> alphabet_;
  std::size_t max_len_ = 1;
  double min_log_prob_ = 0.0;
};

// ---------------------------------------------------------------------------
// Segmentation lattice

struct LatticeEdge {
  std::size_t begin;
  std::size_t end;
  int id;  // piece id, or kUnkId
  double score;
};

// Edges of the segmentation lattice of one word. A character with no
// single-character piece in its position form gets an [UNK] edge scored
// unk_score.
inline std::vector<std::vector<LatticeEdge>> build_lattice(
    const SubwordVocab& vocab, std::u32string_view word, double unk_score) {
  const std::size_t n = word.size();
  std::vector<std::vector<LatticeEdge>> ending_at(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t max_len = std::min(vocab.max_piece_length(), n - i);
    bool has_single = false;
    for (std::size_t len = 1; len <= max_len; ++len) {
      const int id = vocab.find(word.substr(i, len), i > 0);
      if (id < 0) continue;
      if (len == 1) has_single = true;
      ending_at[i + len].push_back({i, i + len, id, vocab.piece(id).log_prob});
    }
    if (!has_single) ending_at[i + 1].push_back({i, i + 1, kUnkId, unk_score});
  }
  return ending_at;
}

struct Segmentation {
  std::vector<int> ids;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // code points
  double score = 0.0;
};

// Maximum log-probability segmentation. Ties: fewer pieces, then the
// lexicographically smallest sequence of piece texts.
inline Segmentation viterbi(const SubwordVocab& vocab, std::u32string_view word) {
  if (word.empty()) throw ConfigError("viterbi: empty word");
  const std::size_t n = word.size();
  const auto lattice = build_lattice(vocab, word, vocab.unk_log_prob());
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n + 1, kNegInf);
  std::vector<std::size_t> count(n + 1, 0);
  std::vector<const LatticeEdge*> back(n + 1, nullptr);
  best[0] = 0.0;

  auto path_to = [&](std::size_t end, const LatticeEdge* last) {
    std::vector<std::u32string_view> seq;
    if (last) seq.push_back(word.substr(last->begin, last->end - last->begin));
    std::size_t pos = last ? last->begin : end;
    while (pos > 0) {
      const auto* e = back[pos];
      seq.push_back(word.substr(e->begin, e->end - e->begin));
      pos = e->begin;
    }
    std::reverse(seq.begin(), seq.end());
    return seq;
  };

  for (std::size_t j = 1; j <= n; ++j) {
    for (const auto& e : lattice[j]) {
      if (best[e.begin] == kNegInf) continue;
      const double s = best[e.begin] + e.score;
      const std::size_t c = count[e.begin] + 1;
      bool take = false;
      if (back[j] == nullptr || s > best[j]) {
        take = true;
      } else if (s == best[j]) {
        if (c < count[j]) {
          take = true;
        } else if (c == count[j]) {
          take = path_to(j, &e) < path_to(j, nullptr);
        }
      }
      if (take) {
        best[j] = s;
        count[j] = c;
        back[j] = &e;
      }
    }
  }
  if (back[n] == nullptr) throw InvariantError("viterbi: lattice has no path");
  Segmentation seg;
  seg.score = best[n];
  for (std::size_t pos = n; pos > 0;) {
    const auto* e = back[pos];
    seg.ids.push_back(e->id);
    seg.spans.push_back({e->begin, e->end});
    pos = e->begin;
  }
  std::reverse(seg.ids.begin(), seg.ids.end());
  std::reverse(seg.spans.begin(), seg.spans.end());
  return seg;
}

inline std::vector<std::string> viterbi_tokenize(const SubwordVocab& vocab,
                                                 std::string_view word) {
  const auto seg = viterbi(vocab, text::decode_utf8(word));
  std::vector<std::string> out;
  out.reserve(seg.ids.size());
  for (int id : seg.ids) out.push_back(vocab.token(id));
  return out;
}

// ---------------------------------------------------------------------------
// Text encoding

struct TokenizedSequence {
  std::vector<int> ids;
  std::vector<int> word_ids;  // index of the whitespace word of each piece
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // bytes in text
  std::string text;           // the cleaned input
};

// Whitespace pre-split plus per-word Viterbi. No specials are added.
inline TokenizedSequence encode(const SubwordVocab& vocab, std::string_view raw) {
  TokenizedSequence seq;
  seq.text = text::clean(raw);
  const auto words = text::split_whitespace(seq.text);
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t word_offset =
        static_cast<std::size_t>(words[w].data() - seq.text.data());
    const std::u32string cps = text::decode_utf8(words[w]);
    // Byte offset of every code point boundary.
    std::vector<std::size_t> byte_at(cps.size() + 1, 0);
    for (std::size_t i = 0, b = 0; i < cps.size(); ++i) {
      byte_at[i] = b;
      b += text::encode_utf8(cps[i]).size();
      byte_at[i + 1] = b;
    }
    const auto seg = viterbi(vocab, cps);
    for (std::size_t k = 0; k < seg.ids.size(); ++k) {
      seq.ids.push_back(seg.ids[k]);
      seq.word_ids.push_back(static_cast<int>(w));
      seq.spans.push_back({word_offset + byte_at[seg.spans[k].first],
                           word_offset + byte_at[seg.spans[k].second]});
    }
  }
  return seq;
}

// Rebuilds text from ids alone: continuation pieces glue to the previous
// piece, other pieces start a new space-separated word.
inline std::string decode(const SubwordVocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id == kPadId) continue;
    const bool glue = !SubwordVocab::is_special(id) && vocab.piece(id).continuation;
    if (!out.empty() && !glue) out.push_back(' ');
    if (SubwordVocab::is_special(id)) {
      out += kSpecialNames[id];
    } else {
      out += text::encode_utf8(vocab.piece(id).text);
    }
  }
  return out;
}

// Exact reconstruction through the recorded spans, [UNK] included.
inline std::string decode(const TokenizedSequence& seq) {
  std::string out;
  for (std::size_t k = 0; k < seq.ids.size(); ++k) {
    if (k > 0 && seq.word_ids[k] != seq.word_ids[k - 1]) out.push_back(' ');
    const auto [b, e] = seq.spans[k];
    out.append(seq.text, b, e - b);
  }
  return out;
}

}  // namespace lmkit::subword
