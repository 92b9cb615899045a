// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sppl/corpusio.hpp"
#include "sppl/mlm_model.hpp"
#include "sppl/tensor.hpp"
#include "sppl/xl_model.hpp"

namespace sppl {

struct SentenceScore {
  std::size_t id = 0;
  double log_prob = 0.0;
  std::size_t length = 0;
};

// Natural-log internals; perplexity is exp(-total_log_prob / token_count).
// AR token counts include the predicted EOS; pseudo counts cover real tokens
// only. The two modes are not numerically comparable.
struct EvalReport {
  std::string mode;  // "ar" | "pseudo"
  double total_log_prob = 0.0;
  std::size_t token_count = 0;
  double perplexity = 0.0;
  std::size_t unk_count = 0;
  std::vector<SentenceScore> per_sentence;
};

// Stateful next-token scorer the AR path drives. feed consumes a segment of
// up to window() tokens and returns next-token logits per position.
class ArStream {
 public:
  virtual ~ArStream() = default;
  virtual void reset() = 0;
  virtual Tensor feed(const Batch& tokens) = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t window() const = 0;
};

class XlStream : public ArStream {
 public:
  explicit XlStream(const XlModel& model) : model_(model), mem_(model.init_memory(1)) {}
  void reset() override { mem_ = model_.init_memory(1); }
  Tensor feed(const Batch& tokens) override;
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::size_t window() const override { return model_.config().seg_len; }

 private:
  const XlModel& model_;
  XLMemory mem_;
};

// log p framed as SOS + tokens + EOS; length counts every predicted
// position, EOS included, so an empty sentence scores one position.
std::pair<double, std::size_t> sentence_log_prob_ar(ArStream& stream, const EncodedSentence& ids);

// carry_memory keeps the stream state across sentence boundaries instead of
// resetting per sentence.
EvalReport corpus_perplexity_ar(ArStream& stream, const EncodedCorpus& corpus,
                                bool carry_memory = false);
EvalReport corpus_perplexity_ar(const XlModel& model, const EncodedCorpus& corpus,
                                bool carry_memory = false);

// Eval-mode masked scorer: batch of single-mask variants in, logits out.
// The masked position of each row carries its original id in targets.
using MaskedScorer = std::function<Tensor(const MaskedBatch&)>;

// Pseudo log-probability: one variant per real token, scored with full
// two-sided context, variants batched up to variant_batch rows.
std::pair<double, std::size_t> sentence_pseudo_log_prob(const MaskedScorer& scorer,
                                                        const EncodedSentence& ids,
                                                        std::size_t variant_batch = 64);
std::pair<double, std::size_t> sentence_pseudo_log_prob(const MlmModel& model,
                                                        const EncodedSentence& ids,
                                                        std::size_t variant_batch = 64);

EvalReport corpus_pseudo_perplexity(const MaskedScorer& scorer, const EncodedCorpus& corpus,
                                    std::size_t variant_batch = 64);
EvalReport corpus_pseudo_perplexity(const MlmModel& model, const EncodedCorpus& corpus,
                                    std::size_t variant_batch = 64);

// "mode=<ar|pseudo> T=<int> logprob=<float> ppl=<float> unk=<int>"
std::string summary_line(const EvalReport& report);

// Tab-separated per-sentence records: id, length, log_prob.
void write_report(const EvalReport& report, const std::string& path);

}  // namespace sppl
