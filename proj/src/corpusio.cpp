// SPDX-License-Identifier: Apache-2.0
#include "sppl/corpusio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sppl/error.hpp"
#include "sppl/rng.hpp"
#include "sppl/text.hpp"

namespace sppl {

std::optional<std::string> preprocess_line(const std::string& raw, std::size_t lineno) {
  const std::string context = lineno ? "line " + std::to_string(lineno) : std::string{};
  const std::u32string cps = utf8_decode(raw, context);
  std::u32string kept;
  kept.reserve(cps.size());
  for (const char32_t cp : cps) {
    if (is_punct_or_symbol_cp(cp)) continue;  // deleted in place, may join neighbours
    kept.push_back(is_space_cp(cp) ? U' ' : cp);
  }
  std::string out;
  bool pending_space = false;
  bool any = false;
  for (const char32_t cp : kept) {
    if (cp == U' ') {
      pending_space = any;
      continue;
    }
    if (pending_space) {
      out += ' ';
      pending_space = false;
    }
    out += utf8_encode(cp);
    any = true;
  }
  if (!any) return std::nullopt;
  return out;
}

Corpus load_corpus(const std::vector<std::string>& paths) {
  if (paths.empty()) throw_usage("no input files");
  Corpus corpus;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open: " + path);
    SourceFile src;
    src.path = path;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto s = preprocess_line(line, lineno)) {
        corpus.sentences.push_back(std::move(*s));
        ++src.lines_kept;
      }
    }
    src.lines_read = lineno;
    corpus.manifest.push_back(std::move(src));
  }
  if (corpus.sentences.empty()) throw_data("no sentences after preprocessing");
  return corpus;
}

std::pair<Corpus, Corpus> load_and_split(const std::vector<std::string>& paths,
                                         double valid_fraction, std::uint64_t seed) {
  if (!(valid_fraction > 0.0) || !(valid_fraction < 1.0)) {
    throw_data("validation fraction must be in (0, 1)");
  }
  Corpus all = load_corpus(paths);
  const std::size_t n = all.sentences.size();
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * valid_fraction));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(idx);
  std::vector<bool> is_valid(n, false);
  for (std::size_t i = 0; i < k; ++i) is_valid[idx[i]] = true;

  Corpus train, valid;
  train.manifest = all.manifest;
  valid.manifest = all.manifest;
  train.preprocess_version = valid.preprocess_version = all.preprocess_version;
  train.split_seed = valid.split_seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    (is_valid[i] ? valid : train).sentences.push_back(std::move(all.sentences[i]));
  }
  return {std::move(train), std::move(valid)};
}

void write_manifest(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  out << "#corpus-manifest v1\n";
  out << "preprocess_version\t" << corpus.preprocess_version << "\n";
  out << "split_seed\t" << corpus.split_seed << "\n";
  out << "sentences\t" << corpus.sentences.size() << "\n";
  for (const auto& src : corpus.manifest) {
    out << "file\t" << src.path << "\t" << src.lines_read << "\t" << src.lines_kept << "\n";
  }
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

EncodedSentence encode_sentence(const std::string& sentence, const SegmentationModel& model,
                                const SubwordVocab& vocab, MarkingScheme scheme) {
  const auto words = split_spaces(sentence);
  if (words.empty()) throw_data("empty sentence");
  std::vector<std::vector<std::string>> segmented;
  segmented.reserve(words.size());
  for (const auto& w : words) segmented.push_back(model.segment(w));
  EncodedSentence ids;
  for (const auto& tok : apply_marking(segmented, scheme)) ids.push_back(vocab.lookup(tok));
  return ids;
}

EncodedCorpus encode_corpus(const Corpus& corpus, const SegmentationModel& model,
                            const SubwordVocab& vocab, MarkingScheme scheme) {
  EncodedCorpus out;
  out.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) out.push_back(encode_sentence(s, model, vocab, scheme));
  return out;
}

std::vector<Batch> epoch_batches(const EncodedCorpus& corpus, std::size_t batch_size,
                                 std::size_t max_len, std::uint64_t seed, std::uint64_t epoch,
                                 std::size_t* skipped) {
  if (batch_size == 0) throw_data("batch size must be positive");
  if (max_len < 3) throw_data("maximum length must allow SOS, one token and EOS");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "data", epoch));
  rng.shuffle(order);

  std::vector<std::size_t> usable;
  std::size_t skip_count = 0;
  for (const std::size_t i : order) {
    if (corpus[i].size() + 2 > max_len) {
      ++skip_count;
    } else {
      usable.push_back(i);
    }
  }
  if (skipped) *skipped = skip_count;

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < usable.size(); start += batch_size) {
    const std::size_t rows = std::min(batch_size, usable.size() - start);
    std::size_t cols = 0;
    for (std::size_t r = 0; r < rows; ++r) cols = std::max(cols, corpus[usable[start + r]].size() + 2);
    Batch b;
    b.rows = rows;
    b.cols = cols;
    b.ids.assign(rows * cols, SubwordVocab::kPad);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto& sent = corpus[usable[start + r]];
      int* row = b.ids.data() + r * cols;
      row[0] = SubwordVocab::kSos;
      for (std::size_t j = 0; j < sent.size(); ++j) row[j + 1] = sent[j];
      row[sent.size() + 1] = SubwordVocab::kEos;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> epoch_batches(const Corpus& corpus, const SegmentationModel& model,
                                 const SubwordVocab& vocab, MarkingScheme scheme,
                                 std::size_t batch_size, std::size_t max_len, std::uint64_t seed,
                                 std::uint64_t epoch, std::size_t* skipped) {
  return epoch_batches(encode_corpus(corpus, model, vocab, scheme), batch_size, max_len, seed,
                       epoch, skipped);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFu));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

struct ByteReader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  bool need(std::size_t k) const { return pos + k <= n; }
  std::uint32_t u32() {
    if (!need(4)) throw_data("truncated record file");
    const std::uint32_t v = static_cast<std::uint32_t>(p[pos]) |
                            (static_cast<std::uint32_t>(p[pos + 1]) << 8) |
                            (static_cast<std::uint32_t>(p[pos + 2]) << 16) |
                            (static_cast<std::uint32_t>(p[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }
};

}  // namespace

void write_records(const EncodedCorpus& corpus, std::size_t vocab_size, const std::string& path) {
  std::string buf;
  buf += "SPPL";
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(vocab_size));
  put_u64(buf, corpus.size());
  for (const auto& sent : corpus) {
    put_u32(buf, static_cast<std::uint32_t>(sent.size()));
    for (const int id : sent) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw_data("token id exceeds header vocab size: " + std::to_string(id));
      }
      put_u32(buf, static_cast<std::uint32_t>(id));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

EncodedCorpus read_records(const std::string& path, std::size_t* vocab_size_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};

  if (!r.need(4)) throw_data("truncated record file");
  if (buf.compare(0, 4, "SPPL") != 0) throw_data("bad record magic");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != 1) throw_data("unsupported record version: " + std::to_string(version));
  const std::uint32_t vocab_size = r.u32();
  const std::uint64_t count = r.u64();

  EncodedCorpus corpus;
  corpus.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (!r.need(static_cast<std::size_t>(len) * 4)) throw_data("truncated record file");
    EncodedSentence sent;
    sent.reserve(len);
    for (std::uint32_t j = 0; j < len; ++j) {
      const std::uint32_t id = r.u32();
      if (id >= vocab_size) throw_data("token id exceeds header vocab size: " + std::to_string(id));
      sent.push_back(static_cast<int>(id));
    }
    corpus.push_back(std::move(sent));
  }
  if (r.pos != r.n) throw_data("trailing bytes in record file");
  if (vocab_size_out) *vocab_size_out = vocab_size;
  return corpus;
}

}  // namespace sppl
