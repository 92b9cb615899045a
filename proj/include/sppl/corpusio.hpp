// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sppl/subseg.hpp"

namespace sppl {

struct SourceFile {
  std::string path;
  std::size_t lines_read = 0;
  std::size_t lines_kept = 0;
};

struct Corpus {
  std::vector<std::string> sentences;
  std::vector<SourceFile> manifest;
  std::string preprocess_version = "v1";
  std::uint64_t split_seed = 0;
};

// Strips punctuation/symbol code points, collapses whitespace runs to single
// spaces and trims; nullopt when nothing remains. Case and digits survive.
// `lineno` (1-based) is reported in UTF-8 errors when nonzero.
std::optional<std::string> preprocess_line(const std::string& raw, std::size_t lineno = 0);

Corpus load_corpus(const std::vector<std::string>& paths);

// Seeded sentence-level split; both halves keep the original corpus order.
std::pair<Corpus, Corpus> load_and_split(const std::vector<std::string>& paths,
                                         double valid_fraction, std::uint64_t seed);

void write_manifest(const Corpus& corpus, const std::string& path);

using EncodedSentence = std::vector<int>;
using EncodedCorpus = std::vector<EncodedSentence>;

// Marked-subword ids without SOS/EOS framing; framing happens at batch time.
EncodedSentence encode_sentence(const std::string& sentence, const SegmentationModel& model,
                                const SubwordVocab& vocab, MarkingScheme scheme);
EncodedCorpus encode_corpus(const Corpus& corpus, const SegmentationModel& model,
                            const SubwordVocab& vocab, MarkingScheme scheme);

struct Batch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;  // rows*cols row-major, SOS..EOS framed, PAD-padded

  int at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

// Padded framed batches in seeded shuffle order; sentences whose framed
// length exceeds max_len are skipped and counted into *skipped.
std::vector<Batch> epoch_batches(const EncodedCorpus& corpus, std::size_t batch_size,
                                 std::size_t max_len, std::uint64_t seed, std::uint64_t epoch,
                                 std::size_t* skipped = nullptr);

std::vector<Batch> epoch_batches(const Corpus& corpus, const SegmentationModel& model,
                                 const SubwordVocab& vocab, MarkingScheme scheme,
                                 std::size_t batch_size, std::size_t max_len, std::uint64_t seed,
                                 std::uint64_t epoch, std::size_t* skipped = nullptr);

void write_records(const EncodedCorpus& corpus, std::size_t vocab_size, const std::string& path);
EncodedCorpus read_records(const std::string& path, std::size_t* vocab_size_out = nullptr);

}  // namespace sppl
