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


#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>

#include "finetune_fixtures.hpp"
#include "lmkit/nn/gradcheck.hpp"
#include "lmkit/tagger/classifier.hpp"
#include "lmkit/tagger/crf.hpp"
#include "lmkit/tagger/embeddings.hpp"
#include "lmkit/tagger/finetune.hpp"
#include "lmkit/tagger/sequence_tagger.hpp"
#include "test_fixtures.hpp"

namespace lmkit::tagger {
namespace {

using nn::Mat;
using MatD = Mat<double>;

MatD random_mat(Rng& rng, int r, int c, double scale = 1.0) {
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
  return m;
}

CrfParams<double> random_crf(Rng& rng, int k) {
  return {random_mat(rng, k, k), random_mat(rng, 1, k), random_mat(rng, 1, k)};
}

// Independent scoring and enumeration, written against the definition.
double path_score(const MatD& e, const CrfParams<double>& c, const std::vector<int>& y) {
  double s = c.start(0, y[0]) + c.stop(0, y.back());
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += e(static_cast<Eigen::Index>(t), y[t]);
    if (t > 0) s += c.transitions(y[t - 1], y[t]);
  }
  return s;
}

// Visits every sequence in lexicographic order.
void enumerate(int len, int k, const std::function<void(const std::vector<int>&)>& visit) {
  std::vector<int> y(len, 0);
  while (true) {
    visit(y);
    int t = len - 1;
    while (t >= 0 && ++y[t] == k) y[t--] = 0;
    if (t < 0) return;
  }
}

TEST(Crf, ZeroScoresGiveLengthTimesLogTags) {
  for (int k = 1; k <= 5; ++k) {
    for (int len = 1; len <= 7; ++len) {
      const auto z = crf_log_partition(MatD::Zero(len, k).eval(), CrfParams<double>::zeros(k));
      EXPECT_DOUBLE_EQ(z, len * std::log(static_cast<double>(k))) << k << " " << len;
    }
  }
}

TEST(Crf, LengthOneIsLogSumExp) {
  Rng rng(2);
  const auto e = random_mat(rng, 1, 3);
  const auto c = random_crf(rng, 3);
  double s = 0.0;
  for (int j = 0; j < 3; ++j) s += std::exp(c.start(0, j) + e(0, j) + c.stop(0, j));
  EXPECT_NEAR(crf_log_partition(e, c), std::log(s), 1e-12);
}

TEST(Crf, PartitionAndViterbiMatchEnumeration) {
  Rng rng(7);
  for (int inst = 0; inst < 100; ++inst) {
    const int k = 1 + static_cast<int>(rng.below(4));
    const int len = 1 + static_cast<int>(rng.below(6));
    const auto e = random_mat(rng, len, k);
    const auto c = random_crf(rng, k);
    double sum = 0.0, best = -std::numeric_limits<double>::infinity();
    std::vector<int> argbest;
    enumerate(len, k, [&](const std::vector<int>& y) {
      const double s = path_score(e, c, y);
      sum += std::exp(s);
      if (s > best) {
        best = s;
        argbest = y;
      }
    });
    EXPECT_NEAR(crf_log_partition(e, c), std::log(sum), 1e-9);
    const auto v = crf_viterbi(e, c);
    EXPECT_EQ(v.tags, argbest);
    EXPECT_NEAR(v.score, best, 1e-9);
  }
}

TEST(Crf, ViterbiThreeTagsLengthFive) {
  Rng rng(9);
  const auto e = random_mat(rng, 5, 3);
  const auto c = random_crf(rng, 3);
  int visited = 0;
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> arg;
  enumerate(5, 3, [&](const std::vector<int>& y) {
    ++visited;
    if (path_score(e, c, y) > best) {
      best = path_score(e, c, y);
      arg = y;
    }
  });
  EXPECT_EQ(visited, 243);
  const auto v = crf_viterbi(e, c);
  EXPECT_EQ(v.tags, arg);
  EXPECT_DOUBLE_EQ(v.score, crf_score(e, c, v.tags));
}

TEST(Crf, ZeroTransitionsDecodePerPosition) {
  Rng rng(4);
  const auto e = random_mat(rng, 6, 4);
  const auto v = crf_viterbi(e, CrfParams<double>::zeros(4));
  for (int t = 0; t < 6; ++t) {
    Eigen::Index arg;
    e.row(t).maxCoeff(&arg);
    EXPECT_EQ(v.tags[t], arg);
  }
}

TEST(Crf, TiesGoToSmallestTagAtFirstDifference) {
  auto c = CrfParams<double>::zeros(2);
  c.transitions(0, 1) = 1.0;
  c.transitions(1, 0) = 1.0;
  EXPECT_EQ(crf_viterbi(MatD::Zero(2, 2).eval(), c).tags, (std::vector<int>{0, 1}));
  EXPECT_EQ(crf_viterbi(MatD::Zero(4, 3).eval(), CrfParams<double>::zeros(3)).tags,
            (std::vector<int>{0, 0, 0, 0}));
}

TEST(Crf, ProbabilitiesSumToOne) {
  Rng rng(12);
  for (int inst = 0; inst < 20; ++inst) {
    const int k = 2 + static_cast<int>(rng.below(3)), len = 1 + static_cast<int>(rng.below(6));
    const auto e = random_mat(rng, len, k);
    const auto c = random_crf(rng, k);
    const double z = crf_log_partition(e, c);
    double total = 0.0;
    enumerate(len, k, [&](const std::vector<int>& y) {
      const double p = std::exp(crf_score(e, c, y) - z);
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0);
      total += p;
    });
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Crf, ViterbiBeatsRandomSequences) {
  Rng rng(13);
  const int k = 5, len = 12;
  const auto e = random_mat(rng, len, k);
  const auto c = random_crf(rng, k);
  const auto v = crf_viterbi(e, c);
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> y(len);
    for (auto& t : y) t = static_cast<int>(rng.below(k));
    EXPECT_GE(v.score, crf_score(e, c, y));
  }
}

TEST(Crf, ConstantShiftAtOnePosition) {
  Rng rng(14);
  for (int inst = 0; inst < 20; ++inst) {
    const int k = 3, len = 5;
    auto e = random_mat(rng, len, k);
    const auto c = random_crf(rng, k);
    const double z = crf_log_partition(e, c);
    const auto v = crf_viterbi(e, c);
    const double shift = rng.normal(0.0, 3.0);
    e.row(static_cast<Eigen::Index>(rng.below(len))).array() += shift;
    EXPECT_NEAR(crf_log_partition(e, c), z + shift, 1e-9);
    const auto w = crf_viterbi(e, c);
    EXPECT_EQ(w.tags, v.tags);
    EXPECT_NEAR(w.score, v.score + shift, 1e-9);
  }
}

TEST(Crf, NllIsNonNegativeAndHasCorrectGradient) {
  Rng rng(15);
  const int k = 3, len = 4;
  nn::Parameter<double> e("emissions", len, k), tr("transitions", k, k), st("start", 1, k),
      sp("stop", 1, k);
  for (auto* p : {&e, &tr, &st, &sp}) nn::init_normal(*p, rng, 1.0);
  const std::vector<int> gold = {2, 0, 1, 1};
  auto loss = [&](nn::Graph<double>& g) {
    return crf_nll(g, g.param(e), g.param(tr), g.param(st), g.param(sp), gold);
  };
  nn::Graph<double> g;
  EXPECT_GE(g.scalar(loss(g)), 0.0);
  const auto rep = nn::grad_check({&e, &tr, &st, &sp}, loss);
  EXPECT_LT(rep.max_relative_error(), 1e-6);
  // A peaked model drives the loss to zero from above.
  e.value.setConstant(-50.0);
  for (int t = 0; t < len; ++t) e.value(t, gold[t]) = 50.0;
  nn::Graph<double> g2;
  const double l = g2.scalar(loss(g2));
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-12);
}

// ------------------------------------------------------------ embeddings

TEST(StaticEmbeddings, LoadsTable) {
  std::istringstream in("2 3\netxea 0.1 0.2 0.3\nmendia -1 0 1e-2\n");
  const auto t = load_static_embeddings(in);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.dim(), 3);
  float v[3];
  t.lookup("mendia", v);
  EXPECT_FLOAT_EQ(v[2], 0.01f);
  t.lookup("itsasoa", v);
  EXPECT_EQ(v[0], 0.0f);
  EXPECT_EQ(v[1], 0.0f);
}

TEST(StaticEmbeddings, AcceptsReferenceDimension) {
  std::string s = "1 300\nhitza";
  for (int i = 0; i < 300; ++i) s += " 0.5";
  std::istringstream in(s + "\n");
  EXPECT_EQ(load_static_embeddings(in).dim(), 300);
}

TEST(StaticEmbeddings, ErrorsNameTheLine) {
  auto error_of = [](const std::string& s) {
    std::istringstream in(s);
    try {
      load_static_embeddings(in);
    } catch (const DataError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(error_of("2 3\na 1 2 3\nb 1 2\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("2 3\na 1 2 3\nb 1 x 2\n").find("line 3"), std::string::npos);
  EXPECT_NE(error_of("3\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("2 3\na 1 2 3\n").find("announces 2"), std::string::npos);
  EXPECT_NE(error_of("2 1\na 1\na 2\n").find("duplicate"), std::string::npos);
}

TEST(StaticEmbeddings, ErrorPolicy) {
  std::istringstream in("1 2\na 1 2\n");
  const auto t = load_static_embeddings(in, UnknownWords::kError);
  float v[2];
  EXPECT_THROW(t.lookup("b", v), DataError);
}

// ------------------------------------------------------------- data files

TEST(TaskData, ConllReaderAndWriter) {
  std::istringstream in("Kaixo\tO\nMiren\tB-PER\n\n\nBilbo\tB-LOC\n");
  auto data = read_conll(in);
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].tags, (std::vector<std::string>{"O", "B-PER"}));
  data[0].predicted = {"O", "O"};
  data[1].predicted = {"O"};
  std::ostringstream out;
  write_conll(out, data);
  std::istringstream back(out.str());
  const auto three = read_conll(back, true);
  EXPECT_EQ(three[1].predicted, (std::vector<std::string>{"O"}));
  std::istringstream bad("a\tb\tc\n");
  EXPECT_THROW(read_conll(bad), DataError);
}

TEST(TaskData, ClassificationReader) {
  std::istringstream in("kirola\tReala irabazi du\n\npolitika\tHauteskundeak  gaur\n");
  const auto d = read_classification(in);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[1].label, "politika");
  EXPECT_EQ(d[1].text, "Hauteskundeak gaur");
  std::istringstream bad("no tab here\n");
  EXPECT_THROW(read_classification(bad), DataError);
}

// ----------------------------------------------------------- tagger head

std::shared_ptr<StaticEmbeddingTable> random_table(const std::vector<std::string>& words, int dim,
                                                   std::uint64_t seed) {
  auto t = std::make_shared<StaticEmbeddingTable>(dim);
  Rng rng(seed);
  for (const auto& w : words) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
    t->add(w, v);
  }
  return t;
}

// Tiny POS set where "lan" and "ikasi" are ambiguous between NOUN and VERB.
std::vector<TaggedSentence> toy_pos(std::size_t n, std::uint64_t seed) {
  const std::vector<std::pair<std::string, std::string>> det = {{"bat", "DET"}, {"hau", "DET"}};
  const std::vector<std::string> nouns = {"etxe", "mendi", "lan", "ikasi", "liburu"};
  const std::vector<std::string> verbs = {"lan", "ikasi", "ikusi", "egin"};
  const std::vector<std::string> adjs = {"handi", "txiki"};
  Rng rng(seed);
  std::vector<TaggedSentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    TaggedSentence s;
    auto add = [&](const std::string& w, const std::string& t) {
      s.tokens.push_back(w);
      s.tags.push_back(t);
    };
    add(nouns[rng.below(nouns.size())], "NOUN");
    if (rng.bernoulli(0.5)) add(adjs[rng.below(adjs.size())], "ADJ");
    const auto& d = det[rng.below(det.size())];
    add(d.first, d.second);
    add(verbs[rng.below(verbs.size())], "VERB");
    add(".", "PUNCT");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> toy_words() {
  return {"bat", "hau", "etxe", "mendi", "lan", "ikasi", "liburu", "ikusi", "egin",
          "handi", "txiki", "."};
}

TaggerConfig small_tagger() {
  TaggerConfig c;
  c.hidden = 16;
  c.dropout = 0.0;
  c.schedule.max_epochs = 50;
  c.schedule.batch_size = 4;
  return c;
}

TEST(SequenceTagger, PaperPreset) {
  const auto c = TaggerConfig::paper();
  EXPECT_EQ(c.schedule.max_epochs, 50);
  EXPECT_DOUBLE_EQ(c.schedule.learning_rate, 0.1);
  EXPECT_EQ(c.schedule.batch_size, 64);
}

TEST(SequenceTagger, OverfitsToyPosSet) {
  const auto train = toy_pos(20, 1);
  StaticEmbedder emb(random_table(toy_words(), 8, 3));
  int epochs = 0;
  auto result = train_tagger(train, {}, emb, small_tagger(), [&](const EpochStat&) { ++epochs; });
  EXPECT_LE(epochs, 50);
  auto data = train;
  tag_sentences(result.model, emb, data);
  std::vector<eval::TagSequence> gold, pred;
  for (const auto& s : data) {
    gold.push_back(s.tags);
    pred.push_back(s.predicted);
  }
  EXPECT_DOUBLE_EQ(eval::word_accuracy(gold, pred), 100.0);
  for (const auto& s : train) {
    nn::Graph<float> g;
    std::vector<int> ids;
    for (const auto& t : s.tags) ids.push_back(result.model.tags().id(t));
    EXPECT_GE(g.scalar(result.model.loss(g, emb.embed(s.tokens), ids)), 0.0f);
  }
}

TEST(SequenceTagger, DevSelectsBestEpochAndIsNotTrainedOn) {
  const auto train = toy_pos(10, 2);
  auto dev = toy_pos(5, 3);
  dev[0].tags[0] = "X";  // only in dev: part of the tag set, never a target
  StaticEmbedder emb(random_table(toy_words(), 8, 3));
  auto cfg = small_tagger();
  cfg.schedule.max_epochs = 6;
  auto result = train_tagger(train, dev, emb, cfg);
  EXPECT_TRUE(result.model.tags().contains("X"));
  ASSERT_EQ(result.history.size(), 6u);
  double best = -1;
  for (const auto& e : result.history) best = std::max(best, e.dev_score);
  std::vector<eval::TagSequence> gold, pred;
  for (const auto& s : dev) {
    gold.push_back(s.tags);
    pred.push_back(result.model.predict(emb.embed(s.tokens)));
  }
  EXPECT_DOUBLE_EQ(eval::word_accuracy(gold, pred), best);
}

TEST(SequenceTagger, FileRoundTripAndDeterminism) {
  const auto train = toy_pos(6, 4);
  StaticEmbedder emb(random_table(toy_words(), 8, 3));
  auto cfg = small_tagger();
  cfg.schedule.max_epochs = 2;
  auto a = train_tagger(train, {}, emb, cfg);
  auto b = train_tagger(train, {}, emb, cfg);
  std::stringstream ss;
  nn::write_tensor_file(ss, a.model.to_file(emb.describe()));
  auto back = SequenceTagger::from_file(nn::read_tensor_file(ss));
  for (const auto& s : toy_pos(5, 9)) {
    const auto x = emb.embed(s.tokens);
    EXPECT_EQ(back.predict(x), a.model.predict(x));
    EXPECT_EQ(b.model.predict(x), a.model.predict(x));
  }
}

// -------------------------------------------------------- classifier head

std::vector<LabeledText> separable_docs(std::size_t n) {
  std::vector<LabeledText> out;
  const std::vector<std::string> a = {"gol", "partida", "taldea"}, b = {"legea", "alderdia", "botoa"};
  const std::vector<std::string> shared = {"gaur", "da", "izan"};
  Rng rng(21);
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = i % 2 == 0;
    const auto& own = first ? a : b;
    std::string text = shared[rng.below(3)] + " " + own[rng.below(3)] + " " + shared[rng.below(3)];
    out.push_back({first ? "kirola" : "politika", text});
  }
  return out;
}

ClassifierConfig small_classifier() {
  ClassifierConfig c;
  c.hidden = 16;
  c.dropout = 0.0;
  c.schedule.max_epochs = 50;
  c.schedule.batch_size = 4;
  return c;
}

std::vector<std::string> doc_words() {
  return {"gol", "partida", "taldea", "legea", "alderdia", "botoa", "gaur", "da", "izan"};
}

TEST(Classifier, PaperPreset) {
  const auto c = ClassifierConfig::paper();
  EXPECT_EQ(c.hidden, 128);
  EXPECT_DOUBLE_EQ(c.dropout, 0.3068);
  EXPECT_TRUE(c.reproject);
  EXPECT_EQ(c.schedule.patience, 3);
  EXPECT_EQ(c.schedule.batch_size, 64);
}

TEST(Classifier, SeparableSetIsLearned) {
  const auto docs = separable_docs(16);
  StaticEmbedder emb(random_table(doc_words(), 6, 5));
  auto result = train_classifier(docs, {}, emb, small_classifier());
  const auto pred = classify(result.model, emb, docs);
  std::vector<std::string> gold;
  for (const auto& d : docs) gold.push_back(d.label);
  EXPECT_DOUBLE_EQ(eval::micro_macro_f1(gold, pred, result.model.classes().labels()).micro_f1, 100.0);
  EXPECT_EQ(classify(result.model, emb, docs), pred);
}

TEST(Classifier, Errors) {
  StaticEmbedder emb(random_table(doc_words(), 6, 5));
  const std::vector<LabeledText> one = {{"a", "gol da"}, {"a", "legea da"}};
  EXPECT_THROW(train_classifier(one, {}, emb, small_classifier()), DataError);
  EXPECT_THROW(train_classifier(separable_docs(4), {{"kultura", "gaur"}}, emb, small_classifier()),
               DataError);
}

TEST(Classifier, FileRoundTrip) {
  StaticEmbedder emb(random_table(doc_words(), 6, 5));
  auto cfg = small_classifier();
  cfg.schedule.max_epochs = 2;
  auto r = train_classifier(separable_docs(6), {}, emb, cfg);
  std::stringstream ss;
  nn::write_tensor_file(ss, r.model.to_file(emb.describe()));
  auto back = DocumentClassifier::from_file(nn::read_tensor_file(ss));
  const auto x = emb.embed({"gaur", "botoa"});
  Graph<float> g1, g2;
  EXPECT_EQ(g1.value(back.logits(g1, x)), g2.value(r.model.logits(g2, x)));
}

// ----------------------------------------------------------- fine-tuning

class Finetune : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { tiny_ = new testing_fixtures::TinyPretrained(testing_fixtures::tiny_pretrained()); }
  static void TearDownTestSuite() { delete tiny_; }
  static testing_fixtures::TinyPretrained* tiny_;
};
testing_fixtures::TinyPretrained* Finetune::tiny_ = nullptr;

TEST_F(Finetune, PaperDefaults) {
  const FinetuneConfig c;
  EXPECT_EQ(c.epochs, 3);
  EXPECT_DOUBLE_EQ(c.learning_rate, 2e-5);
  EXPECT_EQ(c.batch_size, 16);
}

TEST_F(Finetune, ToyTopicSetIsMemorized) {
  const auto data = testing_fixtures::topic_examples(5, 50, 5);
  const auto labels = finetune_labels(data, {});
  FinetuneConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 8;
  auto r = finetune_encoder(FinetuneTask::kSequence, finetune_examples(data, labels), labels,
                            encoder::encoder_from_checkpoint(tiny_->checkpoint), tiny_->vocab, cfg);
  ASSERT_EQ(r.history.size(), 10u);
  EXPECT_DOUBLE_EQ(r.history.back().train_accuracy, 100.0);
}

TEST_F(Finetune, PoolerHeadIsOptional) {
  const auto data = testing_fixtures::topic_examples(6, 8, 2);
  const auto labels = finetune_labels(data, {});
  FinetuneConfig cfg;
  cfg.epochs = 1;
  cfg.use_pooler = true;
  auto r = finetune_encoder(FinetuneTask::kSequence, finetune_examples(data, labels), labels,
                            encoder::encoder_from_checkpoint(tiny_->checkpoint), tiny_->vocab, cfg);
  std::stringstream ss;
  nn::write_tensor_file(ss, r.model.to_file());
  const auto f = nn::read_tensor_file(ss);
  EXPECT_TRUE(f.manifest.at("use_pooler").get<bool>());
  auto back = FinetunedModel::from_file(f);
  const auto enc = encode_examples(tiny_->vocab, finetune_examples(data, labels), 32);
  EXPECT_EQ(back.predict(enc), r.model.predict(enc));
}

TEST_F(Finetune, FirstPieceCarriesTheTokenLabel) {
  const auto& v = tiny_->vocab;
  // A long unseen word splits into several pieces; it still has one label.
  FinetuneExample ex{{"da", "zzqzzqzzq", "."}, {0, 1, 0}};
  const auto enc = encode_example(v, ex, 32);
  ASSERT_EQ(enc.first_piece.size(), 3u);
  EXPECT_EQ(enc.first_piece[0], 1);
  const int pieces = enc.first_piece[2] - enc.first_piece[1];
  EXPECT_GE(pieces, 3);
  const auto targets = token_targets({&enc}, static_cast<int>(enc.ids.size()));
  EXPECT_EQ(targets.rows.size(), 3u);
  EXPECT_EQ(targets.labels, (std::vector<int>{0, 1, 0}));
}

TEST_F(Finetune, TokenTaskTrainsAndPredictsPerWord) {
  const std::vector<TaggedSentence> data = {
      {{"gol", "da", "."}, {"B-X", "O", "O"}, {}},
      {{"da", "gol", "."}, {"O", "B-X", "O"}, {}},
  };
  const auto labels = finetune_labels(data, {});
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 1e-3;
  auto r = finetune_encoder(FinetuneTask::kToken, finetune_examples(data, labels), labels,
                            encoder::encoder_from_checkpoint(tiny_->checkpoint), tiny_->vocab, cfg);
  const auto pred = r.model.predict(encode_examples(tiny_->vocab, finetune_examples(data, labels), 32));
  ASSERT_EQ(pred.size(), 2u);
  EXPECT_EQ(pred[0].size(), 3u);
}

TEST_F(Finetune, LabelAndVocabularyMismatch) {
  const auto train = testing_fixtures::topic_examples(5, 10, 2);
  const std::vector<LabeledText> eval = {{"topic9", "da ."}};
  EXPECT_THROW(finetune_labels(train, {&eval}), DataError);
  const auto labels = finetune_labels(train, {});
  auto enc = encoder::encoder_from_checkpoint(tiny_->checkpoint);
  const auto other = testing_fixtures::small_vocab(testing_fixtures::corpus_of("a b c\n"), 12);
  EXPECT_THROW(finetune_encoder(FinetuneTask::kSequence, finetune_examples(train, labels), labels,
                                std::move(enc), other, FinetuneConfig{}),
               ConfigError);
}

TEST_F(Finetune, FileRoundTrip) {
  const auto data = testing_fixtures::topic_examples(6, 8, 2);
  const auto labels = finetune_labels(data, {});
  FinetuneConfig cfg;
  cfg.epochs = 1;
  auto r = finetune_encoder(FinetuneTask::kSequence, finetune_examples(data, labels), labels,
                            encoder::encoder_from_checkpoint(tiny_->checkpoint), tiny_->vocab, cfg);
  std::stringstream ss;
  nn::write_tensor_file(ss, r.model.to_file());
  auto back = FinetunedModel::from_file(nn::read_tensor_file(ss));
  const auto enc = encode_examples(tiny_->vocab, finetune_examples(data, labels), 32);
  EXPECT_EQ(back.predict(enc), r.model.predict(enc));
  EXPECT_EQ(back.labels(), labels);
}

}  // namespace
}  // namespace lmkit::tagger
