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

// lmkit: one binary, one subcommand per pipeline step.

#include <algorithm>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli_support.hpp"
#include "lmkit/charlm/char_lm.hpp"
#include "lmkit/corpus/corpus.hpp"
#include "lmkit/encoder/train.hpp"
#include "lmkit/eval/metrics.hpp"
#include "lmkit/eval/report.hpp"
#include "lmkit/pretrain/example_io.hpp"
#include "lmkit/pretrain/examples.hpp"
#include "lmkit/subword/trainer.hpp"
#include "lmkit/tagger/classifier.hpp"
#include "lmkit/tagger/finetune.hpp"
#include "lmkit/tagger/sequence_tagger.hpp"

namespace lmkit::cli {
namespace {

struct Command {
  CLI::App* app = nullptr;
  std::string out;             // artifact directory
  bool needs_out = false;
  std::function<void(const fs::path& out)> run;
};

// Options shared by every command that builds word embeddings.
struct EmbedderOptions {
  std::string static_file;
  std::string unknown = "zero";
  std::string forward, backward;
  std::string pooled = "mean";

  void add(CLI::App* app) {
    app->add_option("--embeddings", static_file, "static embeddings: 'count dim' header, word and values per line");
    app->add_option("--unknown", unknown, "static embeddings: policy for unknown words")
        ->check(CLI::IsMember({"zero", "error"}));
    app->add_option("--forward", forward, "forward character LM file");
    app->add_option("--backward", backward, "backward character LM file");
    app->add_option("--pooled", pooled, "character LM embeddings: pooling over earlier occurrences")
        ->check(CLI::IsMember({"mean", "min", "max", "none"}));
  }

  std::unique_ptr<tagger::WordEmbedder> build() const {
    const bool charlm = !forward.empty() || !backward.empty();
    if (charlm == !static_file.empty()) {
      throw ConfigError("give either --embeddings or both --forward and --backward");
    }
    if (!charlm) {
      auto in = open_in(static_file);
      auto table = std::make_shared<const tagger::StaticEmbeddingTable>(tagger::load_static_embeddings(
          in, unknown == "error" ? tagger::UnknownWords::kError : tagger::UnknownWords::kZero));
      return std::make_unique<tagger::StaticEmbedder>(table);
    }
    if (forward.empty() || backward.empty()) throw ConfigError("--forward and --backward go together");
    auto f = std::make_shared<charlm::CharLM>(charlm::CharLM::from_file(nn::load_tensor_file(forward)));
    auto b = std::make_shared<charlm::CharLM>(charlm::CharLM::from_file(nn::load_tensor_file(backward)));
    std::optional<charlm::Pooling> pooling;
    if (pooled != "none") pooling = charlm::parse_pooling(pooled);
    return std::make_unique<tagger::CharLMEmbedder>(f, b, pooling);
  }
};

void add_schedule(CLI::App* app, tagger::SgdSchedule& s) {
  app->add_option("--lr", s.learning_rate, "initial SGD learning rate");
  app->add_option("--max-epochs", s.max_epochs, "epoch limit");
  app->add_option("--batch", s.batch_size, "minibatch size");
  app->add_option("--patience", s.patience, "epochs without dev improvement before annealing");
  app->add_option("--anneal-factor", s.anneal_factor, "learning rate factor on annealing, 0 stops instead");
  app->add_option("--min-lr", s.min_learning_rate, "stop once the learning rate falls below this");
  app->add_option("--clip", s.clip_norm, "gradient norm clip, 0 disables");
}

void write_history(const fs::path& path, const std::vector<tagger::EpochStat>& history) {
  auto out = open_out(path);
  out << "epoch,lr,train_loss,dev_score,improved\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << exact(e.learning_rate) << ',' << exact(e.train_loss) << ','
        << exact(e.dev_score) << ',' << (e.improved ? 1 : 0) << '\n';
  }
}

void print_epoch(const tagger::EpochStat& e) {
  std::cerr << "epoch " << e.epoch << " lr " << e.learning_rate << " loss "
            << fmt("%.4f", e.train_loss) << " dev " << fmt("%.2f", e.dev_score)
            << (e.improved ? " *" : "") << '\n';
}

std::vector<tagger::TaggedSentence> load_conll(const std::string& path, bool predictions = false) {
  if (path.empty()) return {};
  auto in = open_in(path);
  try {
    return tagger::read_conll(in, predictions);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<tagger::LabeledText> load_labeled(const std::string& path) {
  if (path.empty()) return {};
  auto in = open_in(path);
  try {
    return tagger::read_classification(in);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

corpus::Corpus load_corpus(const std::string& path) {
  return corpus::ingest_file(path, fs::path(path).stem().string());
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::string line;
  if (path.empty() || path == "-") {
    while (std::getline(std::cin, line)) lines.push_back(line);
  } else {
    auto in = open_in(path);
    while (std::getline(in, line)) lines.push_back(line);
  }
  return lines;
}

// Writes `text` to out/name when an output directory is given, else to stdout.
void emit(const fs::path& out, const std::string& name, const std::string& text) {
  std::cout << text;
  if (!out.empty()) {
    auto f = open_out(out / name);
    f << text;
  }
}

std::vector<std::vector<pretrain::PretrainExample>> load_phases(const fs::path& dir) {
  std::vector<std::vector<pretrain::PretrainExample>> phases;
  for (std::size_t k = 0;; ++k) {
    const auto jsonl = dir / ("phase-" + std::to_string(k) + ".jsonl");
    const auto bin = dir / ("phase-" + std::to_string(k) + ".bin");
    if (fs::exists(jsonl)) {
      auto in = open_in(jsonl.string());
      phases.push_back(pretrain::read_jsonl(in));
    } else if (fs::exists(bin)) {
      auto in = open_in(bin.string());
      phases.push_back(pretrain::read_binary(in));
    } else {
      break;
    }
  }
  if (phases.empty()) throw DataError("no phase-0.jsonl or phase-0.bin in " + dir.string());
  return phases;
}

// ---------------------------------------------------------------- commands

void add_corpus_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("ingest", "clean raw text files into one corpus");
    c.needs_out = true;
    auto inputs = std::make_shared<std::vector<std::string>>();
    auto sources = std::make_shared<std::vector<std::string>>();
    c.app->add_option("--input", *inputs, "raw text files; blank lines separate documents")->required();
    c.app->add_option("--source", *sources, "source tag per input (default: file stem)");
    c.run = [inputs, sources](const fs::path& out) {
      if (!sources->empty() && sources->size() != inputs->size()) {
        throw ConfigError("--source must be given once per --input");
      }
      std::vector<corpus::Document> docs;
      nlohmann::ordered_json reports = nlohmann::ordered_json::array();
      for (std::size_t i = 0; i < inputs->size(); ++i) {
        const std::string& path = (*inputs)[i];
        const std::string tag = sources->empty() ? fs::path(path).stem().string() : (*sources)[i];
        corpus::IngestReport rep;
        const auto c = corpus::ingest_file(path, tag, &rep);
        docs.insert(docs.end(), c.documents().begin(), c.documents().end());
        reports.push_back({{"input", path},
                           {"source", tag},
                           {"documents", rep.documents},
                           {"paragraphs", rep.paragraphs},
                           {"dropped_short", rep.dropped_short},
                           {"dropped_duplicates", rep.dropped_duplicates},
                           {"dropped_documents", rep.dropped_documents}});
      }
      auto f = open_out(out / "corpus.txt");
      corpus::serialize(corpus::Corpus(std::move(docs)), f);
      open_out(out / "ingest.json") << reports.dump(2) << '\n';
      std::cout << reports.dump(2) << '\n';
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("stats", "per-source document, paragraph and token counts");
    auto path = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>("table");
    auto label = std::make_shared<std::string>("Total");
    c.app->add_option("--corpus", *path, "corpus file")->required();
    c.app->add_option("--format", *format, "table or jsonl")->check(CLI::IsMember({"table", "jsonl"}));
    c.app->add_option("--total-label", *label, "name of the total row");
    c.run = [path, format, label](const fs::path& out) {
      const auto s = corpus::stats(load_corpus(*path));
      if (*format == "table") {
        emit(out, "stats.md", corpus::render_stats_table(s, *label));
      } else {
        emit(out, "stats.jsonl", corpus::stats_records(s));
      }
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("split", "seeded document-level partition of a corpus");
    c.needs_out = true;
    auto path = std::make_shared<std::string>();
    auto ratios = std::make_shared<std::vector<double>>(std::vector<double>{0.8, 0.1, 0.1});
    auto names = std::make_shared<std::vector<std::string>>(std::vector<std::string>{"train", "dev", "test"});
    c.app->add_option("--corpus", *path, "corpus file")->required();
    c.app->add_option("--ratios", *ratios, "partition shares, summing to 1")->delimiter(',');
    c.app->add_option("--names", *names, "partition file names")->delimiter(',');
    c.run = [path, ratios, names, &rs](const fs::path& out) {
      if (names->size() != ratios->size()) throw ConfigError("--names and --ratios differ in length");
      const auto parts = corpus::split(load_corpus(*path), {*ratios, rs.seed});
      for (std::size_t i = 0; i < parts.size(); ++i) {
        auto f = open_out(out / ((*names)[i] + ".txt"));
        corpus::serialize(parts[i], f);
        std::cout << (*names)[i] << '\t' << parts[i].size() << " documents\n";
      }
    };
  }
}

void add_subword_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("vocab-train", "train a unigram subword vocabulary");
    c.needs_out = true;
    auto path = std::make_shared<std::string>();
    auto cfg = std::make_shared<subword::TrainerConfig>();
    c.app->add_option("--corpus", *path, "corpus file")->required();
    c.app->add_option("--target-size", cfg->target_size, "vocabulary size, specials included");
    c.app->add_option("--coverage", cfg->coverage, "character coverage")->check(CLI::Range(0.0, 1.0));
    c.app->add_option("--max-piece-length", cfg->max_piece_length, "longest piece in characters");
    c.app->add_option("--seed-size", cfg->seed_size, "initial candidate count, 0 for 10 x target size");
    c.app->add_option("--shrink-factor", cfg->shrink_factor, "share of pieces kept per pruning round");
    c.app->add_option("--em-iterations", cfg->em_iterations, "EM passes per round");
    c.run = [path, cfg, &rs](const fs::path& out) {
      cfg->threads = static_cast<unsigned>(rs.threads);
      const auto corpus = load_corpus(*path);
      const auto r = subword::train_unigram(corpus, *cfg);
      auto f = open_out(out / "vocab.txt");
      r.vocab.save(f);
      auto h = open_out(out / "history.csv");
      h << "round,pieces,log_likelihood\n";
      for (const auto& it : r.history) {
        h << it.round << ',' << it.pieces << ',' << exact(it.log_likelihood) << '\n';
      }
      std::cout << "pieces " << r.vocab.size() << " alphabet " << r.alphabet.size() << " fertility "
                << fmt("%.4f", subword::fertility(r.vocab, corpus)) << '\n';
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("tokenize", "segment text lines into pieces");
    auto vocab = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>("-");
    auto ids = std::make_shared<bool>(false);
    c.app->add_option("--vocab", *vocab, "vocabulary file")->required();
    c.app->add_option("--input", *input, "text file, '-' for stdin");
    c.app->add_flag("--ids", *ids, "print ids instead of pieces");
    c.run = [vocab, input, ids](const fs::path& out) {
      const auto v = subword::SubwordVocab::load_file(*vocab);
      std::ostringstream os;
      for (const auto& line : read_lines(*input)) {
        const auto seq = subword::encode(v, line);
        for (std::size_t i = 0; i < seq.ids.size(); ++i) {
          if (i) os << ' ';
          if (*ids) {
            os << seq.ids[i];
          } else {
            os << v.token(seq.ids[i]);
          }
        }
        os << '\n';
      }
      emit(out, "tokens.txt", os.str());
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("fertility", "mean pieces per whitespace word");
    auto vocab = std::make_shared<std::string>();
    auto path = std::make_shared<std::string>();
    c.app->add_option("--vocab", *vocab, "vocabulary file")->required();
    c.app->add_option("--corpus", *path, "corpus file")->required();
    c.run = [vocab, path](const fs::path& out) {
      const double f = subword::fertility(subword::SubwordVocab::load_file(*vocab), load_corpus(*path));
      emit(out, "fertility.txt", fmt("%.6f", f) + "\n");
    };
  }
  (void)rs;
}

void add_pretrain_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  const bool paper = rs.preset == "paper";
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("pretrain-data", "pack masked NSP examples");
    c.needs_out = true;
    struct Opts {
      std::string corpus, vocab, seq_len = "128:0.9,512:0.1", format = "jsonl";
      double mask_prob = 0.15;
      bool wwm = true;
      std::size_t examples = 10000;
    };
    auto o = std::make_shared<Opts>();
    c.app->add_option("--corpus", o->corpus, "corpus file")->required();
    c.app->add_option("--vocab", o->vocab, "vocabulary file")->required();
    c.app->add_option("--seq-len", o->seq_len, "max length per phase as len:share,..., or one length");
    c.app->add_option("--mask-prob", o->mask_prob, "share of maskable tokens selected");
    c.app->add_flag("--wwm,!--no-wwm", o->wwm, "mask all pieces of a selected word [default: on]");
    c.app->add_option("--examples", o->examples, "total examples over all phases");
    c.app->add_option("--format", o->format, "jsonl, binary or both")
        ->check(CLI::IsMember({"jsonl", "binary", "both"}));
    c.run = [o, &rs](const fs::path& out) {
      const std::string spec =
          o->seq_len.find(':') == std::string::npos ? o->seq_len + ":1" : o->seq_len;
      const auto schedule = pretrain::PackingSchedule::parse(spec);
      pretrain::MaskingPolicy policy;
      policy.candidate_fraction = o->mask_prob;
      policy.whole_word = o->wwm;
      policy.seed = rs.seed;
      const auto corpus = load_corpus(o->corpus);
      const auto vocab = subword::SubwordVocab::load_file(o->vocab);
      pretrain::PackStats st;
      const auto phases = pretrain::pack(corpus, vocab, schedule, policy, o->examples, &st);
      nlohmann::ordered_json stats;
      stats["skipped"] = st.skipped;
      stats["truncated"] = st.truncated;
      stats["single_document"] = st.single_document;
      stats["phases"] = nlohmann::ordered_json::array();
      for (std::size_t k = 0; k < phases.size(); ++k) {
        const std::string base = "phase-" + std::to_string(k);
        if (o->format != "binary") {
          auto f = open_out(out / (base + ".jsonl"));
          pretrain::write_jsonl(f, phases[k]);
        }
        if (o->format != "jsonl") {
          auto f = open_out(out / (base + ".bin"));
          pretrain::write_binary(f, phases[k], static_cast<std::uint32_t>(schedule.phases[k].max_len));
        }
        const auto m = pretrain::masking_stats(phases[k]);
        stats["phases"].push_back({{"max_len", schedule.phases[k].max_len},
                                   {"examples", m.examples},
                                   {"maskable_tokens", m.maskable_tokens},
                                   {"masked_tokens", m.masked_tokens},
                                   {"mask_replaced", m.mask_replaced},
                                   {"random_replaced", m.random_replaced},
                                   {"kept", m.kept},
                                   {"wwm_violations", m.wwm_violations},
                                   {"is_next", m.is_next}});
      }
      open_out(out / "stats.json") << stats.dump(2) << '\n';
      std::cout << stats.dump(2) << '\n';
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("pretrain", "train the encoder on packed examples");
    c.needs_out = true;
    struct Opts {
      std::string data, vocab;
      encoder::EncoderConfig model;
      encoder::OptimizerConfig opt;
      std::int64_t checkpoint_every = 0;
    };
    auto o = std::make_shared<Opts>();
    if (paper) {
      o->model = encoder::EncoderConfig::base(0);
      o->opt.total_steps = 1000000;
      o->opt.batch_size = 256;
    } else {
      o->opt.total_steps = 2000;
      o->opt.warmup_steps = 200;
      o->opt.batch_size = 32;
    }
    c.app->add_option("--data", o->data, "directory written by pretrain-data")->required();
    c.app->add_option("--vocab", o->vocab, "vocabulary file the data was packed with")->required();
    c.app->add_option("--layers", o->model.layers, "transformer layers");
    c.app->add_option("--hidden", o->model.hidden, "hidden size");
    c.app->add_option("--heads", o->model.heads, "attention heads");
    c.app->add_option("--ffn", o->model.ffn, "feed-forward size, 0 for 4 x hidden");
    c.app->add_option("--max-positions", o->model.max_positions, "position embeddings");
    c.app->add_option("--dropout", o->model.dropout, "dropout rate");
    c.app->add_option("--lr", o->opt.learning_rate, "peak learning rate");
    c.app->add_option("--warmup", o->opt.warmup_steps, "linear warmup steps");
    c.app->add_option("--steps", o->opt.total_steps, "total optimizer steps");
    c.app->add_option("--batch", o->opt.batch_size, "examples per step");
    c.app->add_option("--weight-decay", o->opt.weight_decay, "decoupled weight decay");
    c.app->add_option("--clip", o->opt.clip_norm, "gradient norm clip, 0 disables");
    c.app->add_option("--checkpoint-every", o->checkpoint_every, "steps between checkpoints, 0 for final only");
    c.run = [o, &rs](const fs::path& out) {
      const auto vocab = subword::SubwordVocab::load_file(o->vocab);
      const auto phases = load_phases(o->data);
      auto cfg = o->model;
      cfg.vocab_size = static_cast<int>(vocab.size());
      cfg.validate();
      encoder::Encoder<float> model(cfg);
      model.init(rs.seed);
      encoder::TrainOptions t;
      t.optimizer = o->opt;
      t.seed = rs.seed;
      t.checkpoint_every = o->checkpoint_every;
      t.checkpoint_dir = out.string();
      const std::int64_t report_every = std::max<std::int64_t>(1, o->opt.total_steps / 20);
      t.on_step = [&](const encoder::LossRecord& r) {
        if (r.step % report_every == 0) {
          std::cerr << "step " << r.step << " lr " << r.lr << " mlm " << fmt("%.4f", r.mlm_loss)
                    << " nsp " << fmt("%.4f", r.nsp_loss) << '\n';
        }
      };
      std::cout << "parameters " << encoder::parameter_count(cfg) << '\n';
      const auto curve = encoder::train(model, phases, t);
      auto f = open_out(out / "loss.csv");
      encoder::write_loss_csv(f, curve);
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("grad-check", "compare encoder gradients with finite differences");
    struct Opts {
      encoder::EncoderConfig model;
      double tolerance = 1e-4;
      double epsilon = 1e-5;
    };
    auto o = std::make_shared<Opts>();
    o->model.layers = 1;
    o->model.hidden = 8;
    o->model.heads = 2;
    o->model.max_positions = 16;
    o->model.vocab_size = 16;
    c.app->add_option("--layers", o->model.layers, "transformer layers");
    c.app->add_option("--hidden", o->model.hidden, "hidden size");
    c.app->add_option("--heads", o->model.heads, "attention heads");
    c.app->add_option("--vocab-size", o->model.vocab_size, "vocabulary size, specials included");
    c.app->add_option("--tolerance", o->tolerance, "largest accepted relative error");
    c.app->add_option("--epsilon", o->epsilon, "finite difference step");
    c.run = [o, &rs](const fs::path& out) {
      const auto r = encoder::grad_check(o->model, rs.seed, o->epsilon);
      std::ostringstream os;
      for (const auto& g : r.groups) os << g.name << '\t' << fmt("%.3e", g.relative_error) << '\n';
      os << "max\t" << fmt("%.3e", r.max_relative_error()) << '\n';
      emit(out, "grad_check.tsv", os.str());
      const auto bad = r.failing(o->tolerance);
      if (!bad.empty() || !r.all_finite()) {
        throw NumericError(std::to_string(bad.size()) + " parameter groups exceed relative error " +
                           fmt("%g", o->tolerance));
      }
    };
  }
}

void add_charlm_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  const bool paper = rs.preset == "paper";
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("charlm-train", "train a character language model");
    c.needs_out = true;
    auto path = std::make_shared<std::string>();
    auto direction = std::make_shared<std::string>("forward");
    auto cfg = std::make_shared<charlm::CharLMConfig>(
        paper ? charlm::CharLMConfig::paper(charlm::Direction::kForward) : charlm::CharLMConfig{});
    c.app->add_option("--corpus", *path, "corpus file")->required();
    c.app->add_option("--direction", *direction, "reading direction")
        ->check(CLI::IsMember({"forward", "backward"}));
    c.app->add_option("--hidden", cfg->hidden, "LSTM state size");
    c.app->add_option("--embedding", cfg->embedding, "character embedding size");
    c.app->add_option("--seq-len", cfg->sequence_length, "characters per truncated backprop chunk");
    c.app->add_option("--batch", cfg->batch_size, "parallel lanes");
    c.app->add_option("--epochs", cfg->epochs, "passes over the corpus");
    c.app->add_option("--lr", cfg->learning_rate, "Adam learning rate");
    c.app->add_option("--clip", cfg->clip_norm, "gradient norm clip");
    c.app->add_option("--min-char-count", cfg->min_char_count, "rarer characters map to unknown");
    c.run = [path, direction, cfg, &rs](const fs::path& out) {
      cfg->direction = charlm::parse_direction(*direction);
      cfg->seed = rs.seed;
      const auto corpus = load_corpus(*path);
      charlm::CharLM m(charlm::CharVocab::build(corpus, cfg->min_char_count), *cfg);
      m.init(rs.seed);
      auto h = open_out(out / "epochs.csv");
      h << "epoch,perplexity,accuracy\n";
      charlm::train_char_lm(m, corpus, [&](const charlm::EpochReport& e) {
        h << e.epoch << ',' << exact(e.perplexity) << ',' << exact(e.accuracy) << '\n';
        std::cerr << "epoch " << e.epoch << " perplexity " << fmt("%.3f", e.perplexity) << '\n';
      });
      nn::save_tensor_file((out / "charlm.lmkt").string(), m.to_file());
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("embed", "contextual word embeddings from two character LMs");
    auto input = std::make_shared<std::string>("-");
    auto e = std::make_shared<EmbedderOptions>();
    c.app->add_option("--input", *input, "one whitespace-tokenized sentence per line, '-' for stdin");
    c.app->add_option("--forward", e->forward, "forward character LM file")->required();
    c.app->add_option("--backward", e->backward, "backward character LM file")->required();
    c.app->add_option("--pooled", e->pooled, "pooling over earlier occurrences")
        ->check(CLI::IsMember({"mean", "min", "max", "none"}));
    c.run = [input, e](const fs::path& out) {
      auto embedder = e->build();
      std::ostringstream os;
      for (const auto& line : read_lines(*input)) {
        std::vector<std::string> words;
        for (auto w : text::split_whitespace(line)) words.emplace_back(w);
        if (words.empty()) continue;
        const auto m = embedder->embed(words);
        for (std::size_t i = 0; i < words.size(); ++i) {
          os << words[i] << '\t';
          for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) os << ' ';
            os << fmt("%.9g", m(static_cast<Eigen::Index>(i), j));
          }
          os << '\n';
        }
        os << '\n';
      }
      emit(out, "embeddings.txt", os.str());
    };
  }
}

void add_tagger_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  const bool paper = rs.preset == "paper";
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("tag-train", "train a BiLSTM-CRF sequence tagger");
    c.needs_out = true;
    struct Opts {
      std::string train, dev, test, metric = "accuracy";
      EmbedderOptions emb;
      tagger::TaggerConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    if (paper) o->cfg = tagger::TaggerConfig::paper();
    c.app->add_option("--train", o->train, "CoNLL training file")->required();
    c.app->add_option("--dev", o->dev, "CoNLL dev file for model selection");
    c.app->add_option("--test", o->test, "CoNLL file to tag after training");
    o->emb.add(c.app);
    c.app->add_option("--hidden", o->cfg.hidden, "LSTM size per direction");
    c.app->add_option("--dropout", o->cfg.dropout, "dropout on embeddings and LSTM output");
    c.app->add_option("--metric", o->metric, "dev selection metric")
        ->check(CLI::IsMember({"accuracy", "span-f1"}));
    add_schedule(c.app, o->cfg.schedule);
    c.run = [o, &rs](const fs::path& out) {
      auto cfg = o->cfg;
      cfg.metric = tagger::parse_tag_metric(o->metric);
      cfg.seed = rs.seed;
      cfg.validate();
      const auto train = load_conll(o->train);
      const auto dev = load_conll(o->dev);
      auto test = load_conll(o->test);
      auto embedder = o->emb.build();
      auto r = tagger::train_tagger(train, dev, *embedder, cfg, print_epoch);
      write_history(out / "history.csv", r.history);
      nn::save_tensor_file((out / "tagger.lmkt").string(), r.model.to_file(embedder->describe()));
      if (!test.empty()) {
        tagger::tag_sentences(r.model, *embedder, test);
        auto f = open_out(out / "test.conll");
        tagger::write_conll(f, test);
        std::vector<eval::TagSequence> gold, pred;
        for (const auto& s : test) {
          gold.push_back(s.tags);
          pred.push_back(s.predicted);
        }
        std::cout << "test " << o->metric << ' '
                  << eval::format_score(tagger::tag_score(cfg.metric, gold, pred)) << '\n';
      }
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("classify-train", "train a BiLSTM document classifier");
    c.needs_out = true;
    struct Opts {
      std::string train, dev, test;
      bool no_reproject = false;
      EmbedderOptions emb;
      tagger::ClassifierConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    if (paper) o->cfg = tagger::ClassifierConfig::paper();
    c.app->add_option("--train", o->train, "label<TAB>text training file")->required();
    c.app->add_option("--dev", o->dev, "label<TAB>text dev file for model selection");
    c.app->add_option("--test", o->test, "label<TAB>text file to classify after training");
    o->emb.add(c.app);
    c.app->add_option("--hidden", o->cfg.hidden, "LSTM size per direction");
    c.app->add_option("--dropout", o->cfg.dropout, "dropout rate");
    c.app->add_flag("--no-reproject", o->no_reproject, "skip the linear map on the word embeddings");
    add_schedule(c.app, o->cfg.schedule);
    c.run = [o, &rs](const fs::path& out) {
      auto cfg = o->cfg;
      cfg.reproject = !o->no_reproject;
      cfg.seed = rs.seed;
      cfg.validate();
      const auto train = load_labeled(o->train);
      const auto dev = load_labeled(o->dev);
      const auto test = load_labeled(o->test);
      auto embedder = o->emb.build();
      auto r = tagger::train_classifier(train, dev, *embedder, cfg, print_epoch);
      tagger::check_label_coverage(r.model.classes(), test);
      write_history(out / "history.csv", r.history);
      nn::save_tensor_file((out / "classifier.lmkt").string(), r.model.to_file(embedder->describe()));
      if (!test.empty()) {
        const auto pred = tagger::classify(r.model, *embedder, test);
        auto f = open_out(out / "test.tsv");
        std::vector<std::string> gold;
        for (std::size_t i = 0; i < test.size(); ++i) {
          f << test[i].label << '\t' << pred[i] << '\n';
          gold.push_back(test[i].label);
        }
        const auto rep = eval::micro_macro_f1(gold, pred, r.model.classes().labels());
        std::cout << "test micro_f1 " << eval::format_score(rep.micro_f1) << " macro_f1 "
                  << eval::format_score(rep.macro_f1) << '\n';
      }
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("finetune", "fine-tune a pretrained encoder with a task head");
    c.needs_out = true;
    struct Opts {
      std::string task = "sequence", checkpoint, vocab, train, dev, test;
      tagger::FinetuneConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    c.app->add_option("--task", o->task, "sequence (label<TAB>text) or token (CoNLL)")
        ->check(CLI::IsMember({"sequence", "token"}));
    c.app->add_option("--checkpoint", o->checkpoint, "encoder checkpoint")->required();
    c.app->add_option("--vocab", o->vocab, "vocabulary of the checkpoint")->required();
    c.app->add_option("--train", o->train, "training file")->required();
    c.app->add_option("--dev", o->dev, "dev file, reported after training");
    c.app->add_option("--test", o->test, "file to label after training");
    c.app->add_option("--epochs", o->cfg.epochs, "passes over the training set");
    c.app->add_option("--lr", o->cfg.learning_rate, "peak Adam learning rate");
    c.app->add_option("--batch", o->cfg.batch_size, "examples per step");
    c.app->add_option("--max-length", o->cfg.max_length, "pieces per example, [CLS] and [SEP] included");
    c.app->add_option("--warmup", o->cfg.warmup_proportion, "share of steps spent warming up");
    c.app->add_option("--weight-decay", o->cfg.weight_decay, "decoupled weight decay");
    c.app->add_flag("--use-pooler", o->cfg.use_pooler, "sequence head reads the pooler output");
    c.run = [o, &rs](const fs::path& out) {
      auto cfg = o->cfg;
      cfg.seed = rs.seed;
      const auto task = tagger::parse_finetune_task(o->task);
      const auto vocab = subword::SubwordVocab::load_file(o->vocab);
      auto enc = encoder::encoder_from_checkpoint(nn::load_tensor_file(o->checkpoint));

      tagger::LabelSet labels;
      std::vector<tagger::FinetuneExample> train, dev, test;
      std::vector<tagger::LabeledText> test_docs;
      std::vector<tagger::TaggedSentence> test_sents;
      if (task == tagger::FinetuneTask::kSequence) {
        const auto tr = load_labeled(o->train), dv = load_labeled(o->dev);
        test_docs = load_labeled(o->test);
        labels = tagger::finetune_labels(tr, {&dv, &test_docs});
        train = tagger::finetune_examples(tr, labels);
        dev = tagger::finetune_examples(dv, labels);
        test = tagger::finetune_examples(test_docs, labels);
      } else {
        const auto tr = load_conll(o->train), dv = load_conll(o->dev);
        test_sents = load_conll(o->test);
        labels = tagger::finetune_labels(tr, {&dv, &test_sents});
        train = tagger::finetune_examples(tr, labels);
        dev = tagger::finetune_examples(dv, labels);
        test = tagger::finetune_examples(test_sents, labels);
      }
      auto h = open_out(out / "history.csv");
      h << "epoch,train_loss,train_accuracy\n";
      auto r = tagger::finetune_encoder(task, train, labels, std::move(enc), vocab, cfg,
                                        [&](const tagger::FinetuneEpoch& e) {
                                          h << e.epoch << ',' << exact(e.train_loss) << ','
                                            << exact(e.train_accuracy) << '\n';
                                          std::cerr << "epoch " << e.epoch << " loss "
                                                    << fmt("%.4f", e.train_loss) << " train acc "
                                                    << fmt("%.2f", e.train_accuracy) << '\n';
                                        });
      nn::save_tensor_file((out / "model.lmkt").string(), r.model.to_file());
      auto gold_of = [](const std::vector<tagger::FinetuneExample>& v) {
        std::vector<std::vector<int>> g;
        for (const auto& ex : v) g.push_back(ex.labels);
        return g;
      };
      if (!dev.empty()) {
        const auto pred = r.model.predict(tagger::encode_examples(vocab, dev, cfg.max_length));
        std::cout << "dev accuracy " << eval::format_score(tagger::label_accuracy(gold_of(dev), pred))
                  << '\n';
      }
      if (test.empty()) return;
      const auto pred = r.model.predict(tagger::encode_examples(vocab, test, cfg.max_length));
      if (task == tagger::FinetuneTask::kSequence) {
        auto f = open_out(out / "test.tsv");
        for (std::size_t i = 0; i < test_docs.size(); ++i) {
          f << test_docs[i].label << '\t' << labels.label(pred[i].front()) << '\n';
        }
      } else {
        for (std::size_t i = 0; i < test_sents.size(); ++i) {
          test_sents[i].predicted.clear();
          for (int id : pred[i]) test_sents[i].predicted.push_back(labels.label(id));
        }
        auto f = open_out(out / "test.conll");
        tagger::write_conll(f, test_sents);
      }
      std::cout << "test accuracy " << eval::format_score(tagger::label_accuracy(gold_of(test), pred))
                << '\n';
    };
  }
}

void add_eval_commands(CLI::App& app, std::vector<Command>& cmds, const RunSettings& rs) {
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("eval", "score a prediction file");
    struct Opts {
      std::string task = "ner", predictions, model, family;
      std::string name;
    };
    auto o = std::make_shared<Opts>();
    c.app->add_option("--task", o->task, "ner (span F1), pos (word accuracy) or classification")
        ->check(CLI::IsMember({"ner", "pos", "classification"}));
    c.app->add_option("--predictions", o->predictions,
                      "CoNLL token/gold/predicted file, or gold<TAB>predicted for classification")
        ->required();
    c.app->add_option("--name", o->name, "task name in the report (default: --task)");
    c.app->add_option("--model", o->model, "model name in the report");
    c.app->add_option("--family", o->family, "model family in the report");
    c.run = [o, &rs](const fs::path& out) {
      eval::MetricReport rep;
      std::ostringstream os;
      if (o->task == "classification") {
        std::vector<std::string> gold, pred;
        auto in = open_in(o->predictions);
        tagger::read_label_pairs(in, &gold, &pred);
        std::set<std::string> classes(gold.begin(), gold.end());
        classes.insert(pred.begin(), pred.end());
        const auto cr = eval::micro_macro_f1(gold, pred, {classes.begin(), classes.end()});
        rep = eval::classification_report(o->task, cr);
        for (const auto& [name, s] : cr.per_class) {
          os << name << "\tprecision " << eval::format_score(s.precision) << "\trecall "
             << eval::format_score(s.recall) << "\tf1 " << eval::format_score(s.f1) << "\tsupport "
             << s.gold << '\n';
        }
      } else {
        const auto data = load_conll(o->predictions, true);
        std::vector<eval::TagSequence> gold, pred;
        for (const auto& s : data) {
          gold.push_back(s.tags);
          pred.push_back(s.predicted);
        }
        if (o->task == "ner") {
          const auto s = eval::conll_prf(gold, pred);
          rep = eval::span_report(o->task, s);
          os << "entities gold " << s.gold << " predicted " << s.predicted << " correct "
             << s.correct << '\n';
        } else {
          rep.task = o->task;
          rep.metrics = {{"accuracy", eval::word_accuracy(gold, pred)}};
        }
      }
      if (!o->name.empty()) rep.task = o->name;
      rep.model = o->model;
      rep.family = o->family;
      rep.seed = rs.seed;
      for (const auto& [k, v] : rep.metrics) os << k << ' ' << eval::format_score(v) << '\n';
      std::cout << os.str();
      if (!out.empty()) {
        auto f = open_out(out / "report.jsonl");
        eval::write_reports(f, {rep});
      }
    };
  }
  {
    auto& c = cmds.emplace_back();
    c.app = app.add_subcommand("compare", "average runs and render the results table");
    auto files = std::make_shared<std::vector<std::string>>();
    auto runs = std::make_shared<std::size_t>(5);
    c.app->add_option("--reports", *files, "report files written by eval")->required();
    c.app->add_option("--runs", *runs, "runs expected per model and task");
    c.run = [files, runs](const fs::path& out) {
      std::vector<eval::MetricReport> all;
      for (const auto& path : *files) {
        auto in = open_in(path);
        for (auto& r : eval::read_reports(in)) all.push_back(std::move(r));
      }
      const auto aggs = eval::aggregate_all(all, *runs);
      emit(out, "table.md", eval::render_results_table(aggs));
      std::ostringstream os;
      for (const auto& a : aggs) {
        os << a.family << " / " << a.model << " / " << a.task << ": " << a.mean.front().first << ' '
           << eval::format_score(a.mean.front().second) << " +- "
           << eval::format_score(a.stddev.front().second) << (a.stddev_undefined ? " (single run)" : "")
           << '\n';
      }
      std::cout << '\n' << os.str();
      if (!out.empty()) {
        auto f = open_out(out / "aggregates.jsonl");
        for (const auto& a : aggs) {
          nlohmann::ordered_json j{{"task", a.task}, {"model", a.model}, {"family", a.family},
                                   {"runs", a.runs}};
          for (const auto& [k, v] : a.mean) j["mean"][k] = v;
          for (const auto& [k, v] : a.stddev) j["stddev"][k] = v;
          j["stddev_undefined"] = a.stddev_undefined;
          f << j.dump() << '\n';
        }
      }
    };
  }
}

// `--preset` changes defaults, so it is read before the parser is built.
std::string preset_from_args(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--preset" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--preset=", 0) == 0) return a.substr(9);
  }
  return "desk";
}

int run(int argc, char** argv) {
  RunSettings rs;
  rs.preset = preset_from_args(argc, argv);

  CLI::App app{"lmkit: subword vocabularies, encoder pretraining, character LM embeddings, "
               "taggers and evaluation"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_config("--config", "", "INI file; one [command] section of option = value lines");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--preset", rs.preset, "default values: desk-scale or the published configuration")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->configurable(false);
  app.add_option("--seed", rs.seed, "seed for every random stream of the run");
  app.add_option("--threads", rs.threads, "worker threads; 1 is fully deterministic")
      ->check(CLI::PositiveNumber);

  std::vector<Command> cmds;
  cmds.reserve(16);
  add_corpus_commands(app, cmds, rs);
  add_subword_commands(app, cmds, rs);
  add_pretrain_commands(app, cmds, rs);
  add_charlm_commands(app, cmds, rs);
  add_tagger_commands(app, cmds, rs);
  add_eval_commands(app, cmds, rs);
  for (auto& c : cmds) {
    c.app->add_option("--out", c.out, c.needs_out ? "artifact directory" : "optional artifact directory")
        ->required(c.needs_out);
  }

  // CLI11 prints no default for flags or empty strings.
  for (auto* sub : app.get_subcommands({})) {
    for (CLI::Option* o : sub->get_options()) {
      if (o->get_single_name() == "help" || o->get_required()) continue;
      if (o->get_description().find("[default:") != std::string::npos) continue;
      if (o->get_expected_min() == 0) {
        const auto d = o->get_default_str();
        o->description(o->get_description() + " [default: " + (d == "true" || d == "1" ? "on" : "off") + "]");
      } else if (o->get_default_str().empty()) {
        o->description(o->get_description() + " [default: none]");
      }
    }
  }

  // CLI11 reports a misspelled command only as a missing subcommand.
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" || a == "--preset" || a == "--seed" || a == "--threads") {
      ++i;
      continue;
    }
    if (a.empty() || a[0] == '-') continue;
    if (!app.get_subcommand_no_throw(a)) {
      std::cerr << "unknown command '" << a << "'\nRun with --help for more information.\n";
      return static_cast<int>(ExitCode::kUsage);
    }
    break;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kUsage);
  }

  for (auto& c : cmds) {
    if (!c.app->parsed()) continue;
    const fs::path out = c.out;
    if (!out.empty()) write_manifest(out, *c.app, rs);
    c.run(out);
  }
  return 0;
}

}  // namespace
}  // namespace lmkit::cli

int main(int argc, char** argv) {
  try {
    return lmkit::cli::run(argc, argv);
  } catch (const lmkit::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(lmkit::ExitCode::kInternal);
  }
}
