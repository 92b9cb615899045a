// SPDX-License-Identifier: Apache-2.0
#include "sppl/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sppl/error.hpp"
#include "sppl/subseg.hpp"

namespace sppl {

namespace {

// log softmax(vals[off..off+v))[target], max-subtracted.
double row_log_prob(const std::vector<double>& vals, std::size_t off, std::size_t v, int target) {
  double mx = vals[off];
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, vals[off + j]);
  double denom = 0.0;
  for (std::size_t j = 0; j < v; ++j) denom += std::exp(vals[off + j] - mx);
  return vals[off + static_cast<std::size_t>(target)] - mx - std::log(denom);
}

std::size_t count_unk(const EncodedSentence& ids) {
  std::size_t n = 0;
  for (const int id : ids) n += (id == SubwordVocab::kUnk);
  return n;
}

void finish_report(EvalReport& r) {
  if (r.token_count == 0) throw_data("no scorable tokens in corpus");
  r.perplexity = std::exp(-r.total_log_prob / static_cast<double>(r.token_count));
}

}  // namespace

Tensor XlStream::feed(const Batch& tokens) {
  auto out = model_.forward_segment(tokens, mem_);
  mem_ = std::move(out.memory);
  return out.logits;
}

std::pair<double, std::size_t> sentence_log_prob_ar(ArStream& stream, const EncodedSentence& ids) {
  const std::size_t v = stream.vocab_size();
  const std::size_t w = stream.window();
  if (w == 0) throw_data("sentence_log_prob_ar: stream window must be positive");
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw_data("sentence_log_prob_ar: token id outside vocabulary");
    }
  }

  std::vector<int> input;
  input.reserve(ids.size() + 1);
  input.push_back(SubwordVocab::kSos);
  input.insert(input.end(), ids.begin(), ids.end());
  std::vector<int> targets(ids.begin(), ids.end());
  targets.push_back(SubwordVocab::kEos);

  double total = 0.0;
  for (std::size_t start = 0; start < input.size(); start += w) {
    const std::size_t len = std::min(w, input.size() - start);
    Batch seg;
    seg.rows = 1;
    seg.cols = len;
    seg.ids.assign(input.begin() + static_cast<std::ptrdiff_t>(start),
                   input.begin() + static_cast<std::ptrdiff_t>(start + len));
    const Tensor logits = stream.feed(seg);
    if (logits.rank() != 3 || logits.dim(1) != len || logits.dim(2) != v) {
      throw_data("sentence_log_prob_ar: stream returned malformed logits");
    }
    for (std::size_t t = 0; t < len; ++t) {
      total += row_log_prob(logits.values(), t * v, v, targets[start + t]);
    }
  }
  return {total, targets.size()};
}

EvalReport corpus_perplexity_ar(ArStream& stream, const EncodedCorpus& corpus, bool carry_memory) {
  if (corpus.empty()) throw_data("empty corpus");
  EvalReport r;
  r.mode = "ar";
  stream.reset();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!carry_memory && i > 0) stream.reset();
    const auto [lp, len] = sentence_log_prob_ar(stream, corpus[i]);
    r.per_sentence.push_back({i, lp, len});
    r.total_log_prob += lp;
    r.token_count += len;
    r.unk_count += count_unk(corpus[i]);
  }
  finish_report(r);
  return r;
}

EvalReport corpus_perplexity_ar(const XlModel& model, const EncodedCorpus& corpus,
                                bool carry_memory) {
  XlStream stream(model);
  return corpus_perplexity_ar(stream, corpus, carry_memory);
}

std::pair<double, std::size_t> sentence_pseudo_log_prob(const MaskedScorer& scorer,
                                                        const EncodedSentence& ids,
                                                        std::size_t variant_batch) {
  if (variant_batch == 0) throw_usage("variant batch size must be positive");
  for (const int id : ids) {
    if (id == SubwordVocab::kMask) throw_data("pseudo scoring: input already contains MASK");
    if (id == SubwordVocab::kPad || id == SubwordVocab::kSos || id == SubwordVocab::kEos) {
      throw_data("pseudo scoring: unexpected special token inside sentence");
    }
  }

  const std::size_t n = ids.size();
  std::vector<int> framed;
  framed.reserve(n + 2);
  framed.push_back(SubwordVocab::kSos);
  framed.insert(framed.end(), ids.begin(), ids.end());
  framed.push_back(SubwordVocab::kEos);
  const std::size_t cols = framed.size();

  double total = 0.0;
  for (std::size_t start = 0; start < n; start += variant_batch) {
    const std::size_t rows = std::min(variant_batch, n - start);
    MaskedBatch mb;
    mb.rows = rows;
    mb.cols = cols;
    mb.padding_mask.assign(rows * cols, 1);
    mb.targets.assign(rows * cols, MaskedBatch::kIgnore);
    for (std::size_t r = 0; r < rows; ++r) {
      mb.input_ids.insert(mb.input_ids.end(), framed.begin(), framed.end());
      const std::size_t pos = 1 + start + r;
      mb.input_ids[r * cols + pos] = SubwordVocab::kMask;
      mb.targets[r * cols + pos] = ids[start + r];
    }
    const Tensor logits = scorer(mb);
    if (logits.rank() != 3 || logits.dim(0) != rows || logits.dim(1) != cols) {
      throw_data("pseudo scoring: scorer returned malformed logits");
    }
    const std::size_t v = logits.dim(2);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t pos = 1 + start + r;
      total += row_log_prob(logits.values(), (r * cols + pos) * v, v, ids[start + r]);
    }
  }
  return {total, n};
}

std::pair<double, std::size_t> sentence_pseudo_log_prob(const MlmModel& model,
                                                        const EncodedSentence& ids,
                                                        std::size_t variant_batch) {
  return sentence_pseudo_log_prob(
      [&model](const MaskedBatch& mb) { return model.encode(mb); }, ids, variant_batch);
}

EvalReport corpus_pseudo_perplexity(const MaskedScorer& scorer, const EncodedCorpus& corpus,
                                    std::size_t variant_batch) {
  if (corpus.empty()) throw_data("empty corpus");
  EvalReport r;
  r.mode = "pseudo";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto [lp, len] = sentence_pseudo_log_prob(scorer, corpus[i], variant_batch);
    r.per_sentence.push_back({i, lp, len});
    r.total_log_prob += lp;
    r.token_count += len;
    r.unk_count += count_unk(corpus[i]);
  }
  finish_report(r);
  return r;
}

EvalReport corpus_pseudo_perplexity(const MlmModel& model, const EncodedCorpus& corpus,
                                    std::size_t variant_batch) {
  return corpus_pseudo_perplexity(
      [&model](const MaskedBatch& mb) { return model.encode(mb); }, corpus, variant_batch);
}

std::string summary_line(const EvalReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "mode=%s T=%zu logprob=%.17g ppl=%.17g unk=%zu",
                report.mode.c_str(), report.token_count, report.total_log_prob,
                report.perplexity, report.unk_count);
  return buf;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open report file: " + path);
  char buf[96];
  for (const auto& s : report.per_sentence) {
    std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%.17g\n", s.id, s.length, s.log_prob);
    out << buf;
  }
  if (!out.flush()) throw_data("failed writing report file: " + path);
}

}  // namespace sppl
