// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace sppl {

enum class MarkingScheme { left_right_marked, left_marked };

std::string marking_scheme_name(MarkingScheme s);
MarkingScheme parse_marking_scheme(const std::string& name);

// Unigram subword lexicon trained with the Morfessor-Baseline objective
// C = C_lexicon + alpha * C_corpus. Keys are code-point strings so splits
// never land inside a UTF-8 sequence.
struct SegmentationModel {
  std::map<std::u32string, std::int64_t> lexicon;
  double alpha = 0.0;
  std::set<char32_t> alphabet;
  std::int64_t total_tokens = 0;

  // Viterbi split into lexicon units; unseen single characters are usable
  // everywhere with probability (1/total_tokens) * (1/|alphabet|).
  std::vector<std::string> segment(const std::string& word) const;
};

SegmentationModel train_segmentation(const std::map<std::string, std::int64_t>& word_counts,
                                     double alpha, double epsilon, std::uint64_t seed);

// Total code length in bits of a lexicon given as aggregated piece counts;
// exposed so tests can evaluate candidate segmentations directly.
double segmentation_cost(const std::map<std::u32string, std::int64_t>& lexicon, double alpha,
                         std::size_t alphabet_size);

std::vector<std::string> apply_marking(const std::vector<std::vector<std::string>>& words,
                                       MarkingScheme scheme);
std::string detokenize(const std::vector<std::string>& tokens, MarkingScheme scheme);

struct SubwordVocab {
  static constexpr int kPad = 0, kUnk = 1, kMask = 2, kSos = 3, kEos = 4;
  static const std::vector<std::string>& specials();

  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  std::size_t size() const { return id_to_token.size(); }
  int lookup(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
};

// Counts marked subwords over whitespace-clean sentences; ids by descending
// frequency, ties broken lexicographically.
SubwordVocab build_vocab(const std::vector<std::string>& sentences, const SegmentationModel& model,
                         MarkingScheme scheme);

void save_lexicon(const SegmentationModel& model, const std::string& path);
SegmentationModel load_lexicon(const std::string& path);

void save_vocab(const SubwordVocab& vocab, const std::string& path);
SubwordVocab load_vocab(const std::string& path);

}  // namespace sppl
