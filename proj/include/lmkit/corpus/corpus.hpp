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

// Document/paragraph structured corpora.
//
// File format (UTF-8): one paragraph per line, a blank line ends a document.
// Directive lines at the start of a document:
//   #source:<tag>   source tag for this and all following documents
//   #id:<id>        identifier of this document
// A line whose first byte is '\' has that byte removed and is otherwise
// taken literally, which is how paragraphs starting with '#' are written.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/core/random.hpp"
#include "lmkit/core/text.hpp"

namespace lmkit::corpus {

struct Document {
  std::string id;
  std::string source;
  std::vector<std::string> paragraphs;

  bool operator==(const Document&) const = default;
};

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {}

  const std::vector<Document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }

  std::size_t paragraph_count() const {
    std::size_t n = 0;
    for (const auto& d : docs_) n += d.paragraphs.size();
    return n;
  }

  bool operator==(const Corpus&) const = default;

 private:
  std::vector<Document> docs_;
};

struct IngestReport {
  std::size_t documents = 0;
  std::size_t paragraphs = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_duplicates = 0;
  std::size_t dropped_documents = 0;
};

inline constexpr std::size_t kMinParagraphChars = 2;

namespace detail {

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

inline bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f';
  });
}

}  // namespace detail

// Reads a corpus file. Cleaning: NFC, control characters removed,
// whitespace collapsed, paragraphs shorter than two characters dropped,
// exact duplicate paragraphs within a document dropped.
inline Corpus ingest(std::istream& in, std::string_view source,
                     IngestReport* report = nullptr) {
  IngestReport rep;
  std::vector<Document> docs;
  std::string current_source(source);
  Document doc;
  std::set<std::string> seen;
  bool doc_started = false;
  std::size_t offset = 0;

  auto finish = [&]() {
    if (!doc_started) return;
    if (doc.paragraphs.empty()) {
      ++rep.dropped_documents;
    } else {
      if (doc.id.empty()) {
        doc.id = doc.source + "/" + std::to_string(docs.size());
      }
      rep.paragraphs += doc.paragraphs.size();
      docs.push_back(std::move(doc));
    }
    doc = Document{};
    seen.clear();
    doc_started = false;
  };

  std::string line;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    text::validate_utf8(line, line_offset);
    if (detail::is_blank(line)) {
      finish();
      continue;
    }
    if (!doc_started || doc.paragraphs.empty()) {
      if (detail::starts_with(line, "#source:")) {
        current_source = text::clean(line.substr(8));
        doc.source = current_source;
        doc_started = true;
        continue;
      }
      if (detail::starts_with(line, "#id:")) {
        doc.id = text::clean(line.substr(4));
        doc.source = current_source;
        doc_started = true;
        continue;
      }
    }
    if (!doc_started) {
      doc.source = current_source;
      doc_started = true;
    }
    std::string_view raw = line;
    if (!raw.empty() && raw.front() == '\\') raw.remove_prefix(1);
    std::string para = text::clean(raw);
    if (text::codepoint_length(para) < kMinParagraphChars) {
      ++rep.dropped_short;
      continue;
    }
    if (!seen.insert(para).second) {
      ++rep.dropped_duplicates;
      continue;
    }
    doc.paragraphs.push_back(std::move(para));
  }
  finish();
  rep.documents = docs.size();
  if (report) *report = rep;
  if (docs.empty()) throw DataError("empty corpus: no document survived cleaning");
  return Corpus(std::move(docs));
}

inline Corpus ingest_file(const std::string& path, std::string_view source,
                          IngestReport* report = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file " + path);
  return ingest(in, source, report);
}

inline void serialize(const Corpus& corpus, std::ostream& out) {
  std::string last_source;
  bool first = true;
  for (const auto& doc : corpus.documents()) {
    if (!first) out << '\n';
    if (first || doc.source != last_source) {
      out << "#source:" << doc.source << '\n';
      last_source = doc.source;
    }
    out << "#id:" << doc.id << '\n';
    for (const auto& p : doc.paragraphs) {
      if (!p.empty() && (p.front() == '#' || p.front() == '\\')) out << '\\';
      out << p << '\n';
    }
    first = false;
  }
}

inline std::string serialize(const Corpus& corpus) {
  std::ostringstream os;
  serialize(corpus, os);
  return os.str();
}

// ---------------------------------------------------------------------------
// Statistics

struct SourceStats {
  std::string source;
  std::size_t documents = 0;
  std::size_t paragraphs = 0;
  std::size_t tokens = 0;
};

struct CorpusStats {
  std::vector<SourceStats> sources;  // sorted by tag
  std::size_t documents = 0;
  std::size_t paragraphs = 0;
  std::size_t tokens = 0;
};

inline CorpusStats stats(const Corpus& corpus) {
  std::map<std::string, SourceStats> by_source;
  CorpusStats s;
  for (const auto& doc : corpus.documents()) {
    auto& src = by_source[doc.source];
    src.source = doc.source;
    ++src.documents;
    src.paragraphs += doc.paragraphs.size();
    for (const auto& p : doc.paragraphs) {
      src.tokens += text::split_whitespace(p).size();
    }
  }
  for (auto& [tag, src] : by_source) {
    s.documents += src.documents;
    s.paragraphs += src.paragraphs;
    s.tokens += src.tokens;
    s.sources.push_back(src);
  }
  return s;
}

// "35M", "64.6M", "0.1M".
inline std::string format_millions(std::size_t tokens) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", static_cast<double>(tokens) / 1e6);
  std::string s = buf;
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s + "M";
}

inline std::string render_stats_table(const CorpusStats& s,
                                      std::string_view total_label = "Total") {
  struct Row {
    std::string name, docs, paras, tokens, millions;
  };
  std::vector<Row> rows;
  rows.push_back({"Source", "Documents", "Paragraphs", "Tokens", "Million tokens"});
  for (const auto& src : s.sources) {
    rows.push_back({src.source, std::to_string(src.documents),
                    std::to_string(src.paragraphs), std::to_string(src.tokens),
                    format_millions(src.tokens)});
  }
  rows.push_back({std::string(total_label), std::to_string(s.documents),
                  std::to_string(s.paragraphs), std::to_string(s.tokens),
                  format_millions(s.tokens)});
  std::size_t w[5] = {0, 0, 0, 0, 0};
  for (const auto& r : rows) {
    w[0] = std::max(w[0], text::codepoint_length(r.name));
    w[1] = std::max(w[1], r.docs.size());
    w[2] = std::max(w[2], r.paras.size());
    w[3] = std::max(w[3], r.tokens.size());
    w[4] = std::max(w[4], r.millions.size());
  }
  auto pad_right = [](const std::string& v, std::size_t width) {
    return v + std::string(width - text::codepoint_length(v), ' ');
  };
  auto pad_left = [](const std::string& v, std::size_t width) {
    return std::string(width - v.size(), ' ') + v;
  };
  std::string rule(w[0] + w[1] + w[2] + w[3] + w[4] + 8, '-');
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (i + 1 == rows.size()) os << rule << '\n';
    os << pad_right(r.name, w[0]) << "  " << pad_left(r.docs, w[1]) << "  "
       << pad_left(r.paras, w[2]) << "  " << pad_left(r.tokens, w[3]) << "  "
       << pad_left(r.millions, w[4]) << '\n';
    if (i == 0) os << rule << '\n';
  }
  return os.str();
}

// One JSON object per line: a record per source, then the total.
inline std::string stats_records(const CorpusStats& s) {
  std::ostringstream os;
  for (const auto& src : s.sources) {
    nlohmann::ordered_json j;
    j["source"] = src.source;
    j["documents"] = src.documents;
    j["paragraphs"] = src.paragraphs;
    j["tokens"] = src.tokens;
    os << j.dump() << '\n';
  }
  nlohmann::ordered_json t;
  t["source"] = nullptr;
  t["documents"] = s.documents;
  t["paragraphs"] = s.paragraphs;
  t["tokens"] = s.tokens;
  os << t.dump() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::vector<double> ratios;
  std::uint64_t seed = 0;

  void validate() const {
    if (ratios.empty()) throw ConfigError("split: no ratios given");
    double sum = 0.0;
    for (double r : ratios) {
      if (!(r > 0.0 && r <= 1.0)) {
        throw ConfigError("split: ratio " + std::to_string(r) + " not in (0,1]");
      }
      sum += r;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw ConfigError("split: ratios sum to " + std::to_string(sum) + ", not 1");
    }
  }
};

// Partition sizes: floor of the ideal share, remainder handed out by
// largest fractional part (earlier partition wins ties), then every
// partition is topped up to at least one document from the largest one.
inline std::vector<std::size_t> split_sizes(std::size_t n,
                                            const std::vector<double>& ratios) {
  const std::size_t k = ratios.size();
  std::vector<std::size_t> sizes(k);
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double ideal = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    assigned += sizes[i];
    frac.push_back({ideal - static_cast<double>(sizes[i]), i});
  }
  std::stable_sort(frac.begin(), frac.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) ++sizes[frac[j % k].second];
  while (assigned > n) {
    auto it = std::max_element(sizes.begin(), sizes.end());
    --*it;
    --assigned;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (sizes[i] == 0) {
      auto it = std::max_element(sizes.begin(), sizes.end());
      --*it;
      ++sizes[i];
    }
  }
  return sizes;
}

inline std::vector<Corpus> split(const Corpus& corpus, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = corpus.size();
  if (n < spec.ratios.size()) {
    throw DataError("split: " + std::to_string(n) + " documents cannot fill " +
                    std::to_string(spec.ratios.size()) + " partitions");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(order);
  const auto sizes = split_sizes(n, spec.ratios);
  std::vector<Corpus> parts;
  std::size_t pos = 0;
  for (std::size_t size : sizes) {
    std::vector<std::size_t> idx(order.begin() + pos, order.begin() + pos + size);
    std::sort(idx.begin(), idx.end());  // keep corpus order inside a partition
    std::vector<Document> docs;
    for (std::size_t i : idx) docs.push_back(corpus[i]);
    parts.emplace_back(std::move(docs));
    pos += size;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Segments

struct Segment {
  std::size_t document;  // index into the corpus
  std::string_view document_id;
  std::size_t index;     // paragraph index inside the document
  std::string_view text;
};

// Paragraphs in document order. Views stay valid while the corpus lives.
inline std::vector<Segment> segments(const Corpus& corpus) {
  std::vector<Segment> out;
  out.reserve(corpus.paragraph_count());
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const auto& doc = corpus[d];
    for (std::size_t i = 0; i < doc.paragraphs.size(); ++i) {
      out.push_back({d, doc.id, i, doc.paragraphs[i]});
    }
  }
  return out;
}

}  // namespace lmkit::corpus
