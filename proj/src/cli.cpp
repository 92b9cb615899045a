// SPDX-License-Identifier: Apache-2.0
#include "sppl/cli.hpp"

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <tuple>

#include <CLI11.hpp>

#include "sppl/config.hpp"
#include "sppl/corpusio.hpp"
#include "sppl/error.hpp"
#include "sppl/mlm_model.hpp"
#include "sppl/scorer.hpp"
#include "sppl/subseg.hpp"
#include "sppl/trainer.hpp"
#include "sppl/xl_model.hpp"

namespace sppl::cli {

namespace {

struct Args {
  std::vector<std::string> in;
  double alpha = 0.001;
  double epsilon = 0.1;
  std::uint64_t seed = 1;
  std::string out;

  std::string model;
  std::string scheme = "mm";
  std::string vocab;

  double valid_fraction = 0.0;
  std::string valid_out;
  std::uint64_t split_seed = 1;
  std::string manifest;

  std::string config;
  std::string out_dir;
  std::string resume;
  std::uint64_t stop_after = 0;

  std::string data;
  bool carry_memory = false;
  std::size_t variant_batch = 64;
  std::string report;

  std::string lexicon;
  std::string sentence;
  std::string score_scheme;  // empty: use the checkpoint's scheme
};

std::unique_ptr<CLI::App> build_app(Args& a, std::string& chosen) {
  auto app = std::make_unique<CLI::App>("Subword language modeling pipeline");
  app->name("sppl");
  app->require_subcommand(0, 1);

  const auto pick = [&chosen](const char* name) {
    return [&chosen, name] { chosen = name; };
  };

  CLI::App* st = app->add_subcommand("seg-train", "Train a subword segmentation lexicon");
  st->add_option("--in", a.in, "input text files")->required();
  st->add_option("--alpha", a.alpha, "corpus weight")->capture_default_str();
  st->add_option("--epsilon", a.epsilon, "convergence threshold in bits")->capture_default_str();
  st->add_option("--seed", a.seed, "training rng seed")->capture_default_str();
  st->add_option("--out", a.out, "lexicon output path")->required();
  st->callback(pick("seg-train"));

  CLI::App* sa = app->add_subcommand("seg-apply", "Segment text into marked subwords");
  sa->add_option("--model", a.model, "lexicon path")->required();
  sa->add_option("--in", a.in, "input text files")->required();
  sa->add_option("--scheme", a.scheme, "boundary marking: mm or m")->capture_default_str();
  sa->add_option("--out", a.out, "segmented text output path")->required();
  sa->callback(pick("seg-apply"));

  CLI::App* vb = app->add_subcommand("vocab-build", "Build a subword vocabulary");
  vb->add_option("--model", a.model, "lexicon path")->required();
  vb->add_option("--in", a.in, "input text files")->required();
  vb->add_option("--scheme", a.scheme, "boundary marking: mm or m")->capture_default_str();
  vb->add_option("--out", a.out, "vocab output path")->required();
  vb->callback(pick("vocab-build"));

  CLI::App* en = app->add_subcommand("encode", "Encode text into id record files");
  en->add_option("--model", a.model, "lexicon path")->required();
  en->add_option("--vocab", a.vocab, "vocab path")->required();
  en->add_option("--in", a.in, "input text files")->required();
  en->add_option("--scheme", a.scheme, "boundary marking: mm or m")->capture_default_str();
  en->add_option("--out", a.out, "record output path")->required();
  en->add_option("--valid-fraction", a.valid_fraction, "held-out sentence fraction")
      ->capture_default_str();
  en->add_option("--valid-out", a.valid_out, "held-out record output path");
  en->add_option("--split-seed", a.split_seed, "seed for the held-out split")
      ->capture_default_str();
  en->add_option("--manifest", a.manifest, "corpus manifest output path");
  en->callback(pick("encode"));

  CLI::App* tr = app->add_subcommand("train", "Train a model from a config file");
  tr->add_option("--config", a.config, "key=value config path")->required();
  tr->add_option("--out-dir", a.out_dir, "output directory")->required();
  tr->add_option("--resume", a.resume, "checkpoint to resume from");
  tr->add_option("--stop-after", a.stop_after, "pause after this step (0: run to the end)")
      ->capture_default_str();
  tr->callback(pick("train"));

  CLI::App* ep = app->add_subcommand("eval-ppl", "Autoregressive perplexity of a record file");
  ep->add_option("--model", a.model, "xl checkpoint path")->required();
  ep->add_option("--data", a.data, "record file to score")->required();
  ep->add_flag("--carry-memory", a.carry_memory, "carry xl memory across sentences");
  ep->add_option("--report", a.report, "per-sentence tsv output path");
  ep->callback(pick("eval-ppl"));

  CLI::App* pp = app->add_subcommand("eval-pseudo-ppl", "Pseudo-perplexity of a record file");
  pp->add_option("--model", a.model, "mlm checkpoint path")->required();
  pp->add_option("--data", a.data, "record file to score")->required();
  pp->add_option("--variant-batch", a.variant_batch, "masked variants per forward")
      ->capture_default_str();
  pp->add_option("--report", a.report, "per-sentence tsv output path");
  pp->callback(pick("eval-pseudo-ppl"));

  CLI::App* sc = app->add_subcommand("score-sentence", "Score one raw sentence");
  sc->add_option("--model", a.model, "checkpoint path")->required();
  sc->add_option("--lexicon", a.lexicon, "lexicon path")->required();
  sc->add_option("--vocab", a.vocab, "vocab path")->required();
  sc->add_option("--scheme", a.score_scheme, "boundary marking (default: checkpoint's)");
  sc->add_option("--sentence", a.sentence, "sentence text")->required();
  sc->callback(pick("score-sentence"));

  return app;
}

std::vector<std::string> split_words(const std::string& sentence) {
  std::vector<std::string> words;
  std::istringstream in(sentence);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

std::vector<std::string> mark_sentence(const std::string& sentence, const SegmentationModel& model,
                                       MarkingScheme scheme) {
  std::vector<std::vector<std::string>> pieces;
  for (const std::string& word : split_words(sentence)) pieces.push_back(model.segment(word));
  return apply_marking(pieces, scheme);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  for (const std::string& line : lines) out << line << "\n";
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

struct LoadedModel {
  RunConfig run;
  std::unique_ptr<MlmModel> mlm;
  std::unique_ptr<XlModel> xl;
};

LoadedModel load_model(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  LoadedModel lm;
  lm.run = parse_config_text(ck.config_echo, "checkpoint " + path);
  if (lm.run.vocab_size == 0) throw_data("checkpoint config lacks a resolved vocab_size");
  if (lm.run.kind == "mlm") {
    lm.mlm = std::make_unique<MlmModel>(lm.run.encoder_config(), lm.run.seed);
    load_parameters(ck, lm.mlm->params());
  } else {
    lm.xl = std::make_unique<XlModel>(lm.run.xl_config(), lm.run.seed);
    load_parameters(ck, lm.xl->params());
  }
  return lm;
}

EncodedCorpus load_scored_records(const std::string& path, std::size_t vocab_size) {
  std::size_t rec_vocab = 0;
  EncodedCorpus corpus = read_records(path, &rec_vocab);
  if (rec_vocab != vocab_size) {
    throw_data("record file vocab size disagrees with the model: " + path);
  }
  return corpus;
}

void cmd_seg_train(const Args& a, std::ostream&, std::ostream& err) {
  const Corpus corpus = load_corpus(a.in);
  std::map<std::string, std::int64_t> counts;
  for (const std::string& sentence : corpus.sentences) {
    for (const std::string& word : split_words(sentence)) ++counts[word];
  }
  const SegmentationModel model = train_segmentation(counts, a.alpha, a.epsilon, a.seed);
  save_lexicon(model, a.out);
  err << "seg-train: " << model.lexicon.size() << " lexicon units from " << counts.size()
      << " word types\n";
}

void cmd_seg_apply(const Args& a, std::ostream&, std::ostream& err) {
  const SegmentationModel model = load_lexicon(a.model);
  const MarkingScheme scheme = parse_marking_scheme(a.scheme);
  const Corpus corpus = load_corpus(a.in);
  std::vector<std::string> lines;
  lines.reserve(corpus.sentences.size());
  for (const std::string& sentence : corpus.sentences) {
    std::string line;
    for (const std::string& token : mark_sentence(sentence, model, scheme)) {
      if (!line.empty()) line += ' ';
      line += token;
    }
    lines.push_back(std::move(line));
  }
  write_lines(a.out, lines);
  err << "seg-apply: " << lines.size() << " sentences\n";
}

void cmd_vocab_build(const Args& a, std::ostream&, std::ostream& err) {
  const SegmentationModel model = load_lexicon(a.model);
  const MarkingScheme scheme = parse_marking_scheme(a.scheme);
  const Corpus corpus = load_corpus(a.in);
  const SubwordVocab vocab = build_vocab(corpus.sentences, model, scheme);
  save_vocab(vocab, a.out);
  err << "vocab-build: " << vocab.size() << " entries\n";
}

void cmd_encode(const Args& a, std::ostream&, std::ostream& err) {
  const SegmentationModel model = load_lexicon(a.model);
  const SubwordVocab vocab = load_vocab(a.vocab);
  const MarkingScheme scheme = parse_marking_scheme(a.scheme);
  if (a.valid_fraction > 0.0 && a.valid_out.empty()) {
    throw_usage("--valid-out is required when --valid-fraction is set");
  }

  Corpus train_corpus;
  Corpus valid_corpus;
  if (a.valid_fraction > 0.0) {
    std::tie(train_corpus, valid_corpus) = load_and_split(a.in, a.valid_fraction, a.split_seed);
  } else {
    train_corpus = load_corpus(a.in);
  }

  const EncodedCorpus encoded = encode_corpus(train_corpus, model, vocab, scheme);
  write_records(encoded, vocab.size(), a.out);
  err << "encode: " << encoded.size() << " sentences -> " << a.out << "\n";
  if (!valid_corpus.sentences.empty()) {
    const EncodedCorpus venc = encode_corpus(valid_corpus, model, vocab, scheme);
    write_records(venc, vocab.size(), a.valid_out);
    err << "encode: " << venc.size() << " held-out sentences -> " << a.valid_out << "\n";
  }
  if (!a.manifest.empty()) write_manifest(train_corpus, a.manifest);
}

void cmd_train(const Args& a, std::ostream& out, std::ostream&) {
  const RunConfig run = parse_config(a.config);
  const TrainOutput res = run.kind == "mlm" ? train_mlm(run, a.out_dir, a.resume, a.stop_after)
                                            : train_xl(run, a.out_dir, a.resume, a.stop_after);
  out << "checkpoint " << res.checkpoint_path << "\n";
  out << "log " << res.log_path << "\n";
}

void cmd_eval_ppl(const Args& a, std::ostream& out, std::ostream&) {
  const LoadedModel lm = load_model(a.model);
  if (!lm.xl) throw_usage("model kind mismatch: eval-ppl needs an xl checkpoint, got mlm");
  const EncodedCorpus corpus = load_scored_records(a.data, lm.run.vocab_size);
  const EvalReport report = corpus_perplexity_ar(*lm.xl, corpus, a.carry_memory);
  out << summary_line(report) << "\n";
  if (!a.report.empty()) write_report(report, a.report);
}

void cmd_eval_pseudo_ppl(const Args& a, std::ostream& out, std::ostream&) {
  const LoadedModel lm = load_model(a.model);
  if (!lm.mlm) {
    throw_usage("model kind mismatch: eval-pseudo-ppl needs an mlm checkpoint, got xl");
  }
  const EncodedCorpus corpus = load_scored_records(a.data, lm.run.vocab_size);
  const EvalReport report = corpus_pseudo_perplexity(*lm.mlm, corpus, a.variant_batch);
  out << summary_line(report) << "\n";
  if (!a.report.empty()) write_report(report, a.report);
}

void cmd_score_sentence(const Args& a, std::ostream& out, std::ostream&) {
  const LoadedModel lm = load_model(a.model);
  const SegmentationModel seg = load_lexicon(a.lexicon);
  const SubwordVocab vocab = load_vocab(a.vocab);
  if (vocab.size() != lm.run.vocab_size) {
    throw_data("vocab file disagrees with the model vocab size");
  }
  const MarkingScheme scheme =
      a.score_scheme.empty() ? lm.run.scheme : parse_marking_scheme(a.score_scheme);

  const auto clean = preprocess_line(a.sentence);
  if (!clean) throw_data("sentence is empty after preprocessing");
  std::string marked;
  for (const std::string& token : mark_sentence(*clean, seg, scheme)) {
    if (!marked.empty()) marked += ' ';
    marked += token;
  }
  out << marked << "\n";

  const EncodedSentence ids = encode_sentence(*clean, seg, vocab, scheme);
  const EvalReport report = lm.xl ? corpus_perplexity_ar(*lm.xl, {ids})
                                  : corpus_pseudo_perplexity(*lm.mlm, {ids}, a.variant_batch);
  out << summary_line(report) << "\n";
}

using Handler = void (*)(const Args&, std::ostream&, std::ostream&);

const std::map<std::string, Handler>& handlers() {
  static const std::map<std::string, Handler> table{
      {"seg-train", cmd_seg_train},   {"seg-apply", cmd_seg_apply},
      {"vocab-build", cmd_vocab_build}, {"encode", cmd_encode},
      {"train", cmd_train},           {"eval-ppl", cmd_eval_ppl},
      {"eval-pseudo-ppl", cmd_eval_pseudo_ppl}, {"score-sentence", cmd_score_sentence}};
  return table;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Args a;
  std::string chosen;
  const auto app = build_app(a, chosen);

  try {
    std::vector<const char*> argv;
    argv.push_back("sppl");
    for (const std::string& s : args) argv.push_back(s.c_str());
    app->parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::Success&) {
    out << app->help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  if (chosen.empty()) {
    out << app->help("", CLI::AppFormatMode::All);
    return 0;
  }

  try {
    handlers().at(chosen)(a, out, err);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrKind::usage:
        return 1;
      case ErrKind::data:
        return 2;
      case ErrKind::numeric:
        return 3;
    }
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

std::string helptext() {
  Args a;
  std::string chosen;
  return build_app(a, chosen)->help("", CLI::AppFormatMode::All);
}

std::vector<std::pair<std::string, std::vector<std::string>>> command_flags() {
  Args a;
  std::string chosen;
  const auto app = build_app(a, chosen);
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  for (const CLI::App* sub : app->get_subcommands([](const CLI::App*) { return true; })) {
    std::vector<std::string> names;
    for (const CLI::Option* opt : sub->get_options()) {
      for (const std::string& lname : opt->get_lnames()) names.push_back("--" + lname);
    }
    out.emplace_back(sub->get_name(), std::move(names));
  }
  return out;
}

}  // namespace sppl::cli
