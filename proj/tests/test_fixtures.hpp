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

// Synthetic corpora shared by the test suites.

#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "lmkit/core/random.hpp"
#include "lmkit/corpus/corpus.hpp"
#include "lmkit/subword/trainer.hpp"

namespace lmkit::testing_fixtures {

inline corpus::Corpus corpus_of(const std::string& s, const std::string& source = "t") {
  std::istringstream in(s);
  return corpus::ingest(in, source);
}

// Pseudo-words built from a few syllables so that subword structure exists.
inline std::string random_word(Rng& rng) {
  static const char* kSyl[] = {"ka", "be", "ti", "ra", "zu", "en", "go", "ko",
                               "ren", "era", "tik", "ak", "e", "etx", "mendi"};
  std::string w;
  const auto n = 1 + rng.below(3);
  for (std::size_t i = 0; i < n; ++i) w += kSyl[rng.below(15)];
  return w;
}

// `docs` documents of 1..max_paras paragraphs of 3..max_words words.
inline corpus::Corpus random_corpus(Rng& rng, std::size_t docs, std::size_t max_paras,
                                    std::size_t max_words) {
  std::string s;
  for (std::size_t d = 0; d < docs; ++d) {
    const auto paras = 1 + rng.below(max_paras);
    for (std::size_t p = 0; p < paras; ++p) {
      const auto words = 3 + rng.below(max_words - 2);
      for (std::size_t w = 0; w < words; ++w) {
        if (w) s += ' ';
        s += random_word(rng);
      }
      s += " p" + std::to_string(d) + "x" + std::to_string(p) + '\n';
    }
    s += '\n';
  }
  return corpus_of(s);
}

inline subword::SubwordVocab small_vocab(const corpus::Corpus& c, std::size_t size = 120) {
  subword::TrainerConfig cfg;
  cfg.target_size = size;
  cfg.coverage = 1.0;
  cfg.max_piece_length = 6;
  return subword::train_unigram(c, cfg).vocab;
}

struct TopicalSentence {
  std::size_t document;
  std::size_t topic;
  std::string text;
};

// Sentences with strong topical signatures: each topic has its own nouns,
// verbs and adjectives, all ending in a topic marker syllable, and every
// sentence follows one of a few templates using its topic's words.
// `docs` documents of `sentences` sentences each, topics assigned in turn;
// at most 20 topics.
inline std::vector<TopicalSentence> topical_sentences(std::uint64_t seed, std::size_t docs,
                                                      std::size_t sentences,
                                                      std::size_t topics = 20) {
  static const char* kMarker[] = {"qa", "qe", "qi", "qo", "qu", "wa", "we", "wi", "wo", "wu",
                                  "va", "ve", "vi", "vo", "vu", "fa", "fe", "fi", "fo", "fu"};
  Rng words_rng(1234);  // topic vocabularies are fixed across seeds
  struct Topic {
    std::vector<std::string> nouns, verbs, adjs;
  };
  std::vector<Topic> t(std::min<std::size_t>(topics, 20));
  for (std::size_t k = 0; k < t.size(); ++k) {
    auto& tp = t[k];
    for (int i = 0; i < 6; ++i) tp.nouns.push_back(random_word(words_rng) + kMarker[k] + "a");
    for (int i = 0; i < 4; ++i) tp.verbs.push_back(random_word(words_rng) + kMarker[k] + "tu");
    for (int i = 0; i < 3; ++i) tp.adjs.push_back(random_word(words_rng) + kMarker[k] + "ko");
  }
  Rng rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
  std::vector<TopicalSentence> out;
  for (std::size_t d = 0; d < docs; ++d) {
    const std::size_t topic = (d + seed) % t.size();
    const Topic& tp = t[topic];
    for (std::size_t k = 0; k < sentences; ++k) {
      std::string s;
      switch (rng.below(3)) {
        case 0:
          s = pick(tp.adjs) + " " + pick(tp.nouns) + " " + pick(tp.verbs) + " da " +
              pick(tp.nouns);
          break;
        case 1:
          s = pick(tp.nouns) + " eta " + pick(tp.nouns) + " " + pick(tp.verbs) + " dira";
          break;
        default:
          s = pick(tp.nouns) + " " + pick(tp.adjs) + " bat " + pick(tp.verbs) + " du " +
              pick(tp.nouns) + " " + pick(tp.adjs);
      }
      out.push_back({d, topic, s + " ."});
    }
  }
  return out;
}

// The sentences above as a corpus, one paragraph per sentence.
inline corpus::Corpus topical_corpus(std::uint64_t seed, std::size_t docs, std::size_t sentences,
                                     std::size_t topics = 20) {
  std::string s;
  const auto sents = topical_sentences(seed, docs, sentences, topics);
  for (std::size_t i = 0; i < sents.size(); ++i) {
    if (i > 0 && sents[i].document != sents[i - 1].document) s += "\n";
    s += sents[i].text + "\n";
  }
  return corpus_of(s + "\n", "synthetic");
}

}  // namespace lmkit::testing_fixtures
