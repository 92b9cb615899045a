// SPDX-License-Identifier: Apache-2.0
#include "sppl/subseg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include "sppl/error.hpp"
#include "sppl/rng.hpp"
#include "sppl/text.hpp"

namespace sppl {

std::string marking_scheme_name(MarkingScheme s) {
  return s == MarkingScheme::left_right_marked ? "mm" : "m";
}

MarkingScheme parse_marking_scheme(const std::string& name) {
  if (name == "mm") return MarkingScheme::left_right_marked;
  if (name == "m") return MarkingScheme::left_marked;
  throw_usage("unknown marking scheme '" + name + "' (expected m or mm)");
}

namespace {

// Rissanen universal code length for positive integers, in bits.
double log_star(std::int64_t n) {
  double bits = std::log2(2.865064);
  double x = std::log2(static_cast<double>(n));
  while (x > 0.0) {
    bits += x;
    x = std::log2(x);
  }
  return bits;
}

double xlog2x(std::int64_t c) {
  return c > 0 ? static_cast<double>(c) * std::log2(static_cast<double>(c)) : 0.0;
}

// Incremental accumulator for C = C_lexicon + alpha * C_corpus so candidate
// splits are evaluated in O(1) aside from the hash lookup.
struct CostState {
  std::unordered_map<std::u32string, std::int64_t> lex;
  double alpha = 0.0;
  double char_unit_bits = 0.0;  // log2(|alphabet| + 1)
  std::int64_t n = 0;           // corpus tokens
  double s = 0.0;               // sum over types of c * log2 c
  double charbits = 0.0;
  double logstarsum = 0.0;

  void add(const std::u32string& u, std::int64_t c) {
    auto& cnt = lex[u];
    if (cnt > 0) {
      s -= xlog2x(cnt);
      logstarsum -= log_star(cnt);
    } else {
      charbits += static_cast<double>(u.size() + 1) * char_unit_bits;
    }
    cnt += c;
    s += xlog2x(cnt);
    logstarsum += log_star(cnt);
    n += c;
  }

  void remove(const std::u32string& u, std::int64_t c) {
    const auto it = lex.find(u);
    if (it == lex.end() || it->second < c) throw_data("lexicon underflow (internal)");
    s -= xlog2x(it->second);
    logstarsum -= log_star(it->second);
    it->second -= c;
    if (it->second == 0) {
      charbits -= static_cast<double>(u.size() + 1) * char_unit_bits;
      lex.erase(it);
    } else {
      s += xlog2x(it->second);
      logstarsum += log_star(it->second);
    }
    n -= c;
  }

  double cost() const {
    if (n == 0) return 0.0;
    return charbits + logstarsum + alpha * (static_cast<double>(n) * std::log2(static_cast<double>(n)) - s);
  }
};

struct TrainWord {
  std::u32string word;
  std::int64_t count = 0;
  std::vector<std::u32string> pieces;
};

std::vector<std::u32string> optimize_unit(CostState& st, const std::u32string& u, std::int64_t c) {
  st.add(u, c);
  double best = st.cost();
  st.remove(u, c);
  std::size_t best_i = 0;
  for (std::size_t i = 1; i < u.size(); ++i) {
    const std::u32string a = u.substr(0, i);
    const std::u32string b = u.substr(i);
    st.add(a, c);
    st.add(b, c);
    const double ci = st.cost();
    st.remove(b, c);
    st.remove(a, c);
    if (ci < best) {
      best = ci;
      best_i = i;
    }
  }
  if (best_i == 0) {
    st.add(u, c);
    return {u};
  }
  auto left = optimize_unit(st, u.substr(0, best_i), c);
  auto right = optimize_unit(st, u.substr(best_i), c);
  left.insert(left.end(), std::make_move_iterator(right.begin()), std::make_move_iterator(right.end()));
  return left;
}

// Re-derives the word's segmentation; reverts when the recursive greedy
// lands above the previous cost so passes are non-increasing.
void resplit(CostState& st, TrainWord& w) {
  const double old_cost = st.cost();
  for (const auto& p : w.pieces) st.remove(p, w.count);
  auto np = optimize_unit(st, w.word, w.count);
  if (st.cost() > old_cost) {
    for (const auto& p : np) st.remove(p, w.count);
    for (const auto& p : w.pieces) st.add(p, w.count);
  } else {
    w.pieces = std::move(np);
  }
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

double segmentation_cost(const std::map<std::u32string, std::int64_t>& lexicon, double alpha,
                         std::size_t alphabet_size) {
  CostState st;
  st.alpha = alpha;
  st.char_unit_bits = std::log2(static_cast<double>(alphabet_size) + 1.0);
  for (const auto& [u, c] : lexicon) st.add(u, c);
  return st.cost();
}

SegmentationModel train_segmentation(const std::map<std::string, std::int64_t>& word_counts,
                                     double alpha, double epsilon, std::uint64_t seed) {
  if (word_counts.empty()) throw_data("empty input");
  if (!(alpha > 0.0)) throw_data("invalid corpus weight");
  if (!(epsilon > 0.0)) throw_data("invalid epsilon");

  std::vector<TrainWord> words;
  words.reserve(word_counts.size());
  std::set<char32_t> alphabet;
  for (const auto& [w8, c] : word_counts) {
    if (w8.empty()) throw_data("empty word in corpus");
    if (c <= 0) throw_data("non-positive count for word '" + w8 + "'");
    TrainWord tw;
    tw.word = utf8_decode(w8, "corpus word");
    tw.count = c;
    for (const char32_t cp : tw.word) alphabet.insert(cp);
    words.push_back(std::move(tw));
  }

  CostState st;
  st.alpha = alpha;
  st.char_unit_bits = std::log2(static_cast<double>(alphabet.size()) + 1.0);
  for (auto& w : words) {
    w.pieces = {w.word};
    st.add(w.word, w.count);
  }

  Rng rng(derive_seed(seed, "segtrain"));
  std::vector<std::size_t> order(words.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double prev = st.cost();
  for (;;) {
    rng.shuffle(order);
    for (const std::size_t idx : order) resplit(st, words[idx]);
    const double now = st.cost();
    if (prev - now < epsilon) break;
    prev = now;
  }

  SegmentationModel model;
  model.alpha = alpha;
  model.alphabet = std::move(alphabet);
  model.total_tokens = st.n;
  for (auto& [u, c] : st.lex) model.lexicon.emplace(u, c);
  return model;
}

std::vector<std::string> SegmentationModel::segment(const std::string& word) const {
  if (word.empty()) throw_data("unsegmentable: empty word");
  if (total_tokens <= 0 || alphabet.empty()) throw_data("unsegmentable: empty model");
  const std::u32string w = utf8_decode(word, "word");
  const std::size_t n = w.size();
  const double log_n = std::log2(static_cast<double>(total_tokens));
  const double fallback_lp = -log_n - std::log2(static_cast<double>(alphabet.size()));
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();

  std::vector<double> best(n + 1, kNegInf);
  std::vector<std::size_t> back(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] == kNegInf) continue;
    for (std::size_t j = i + 1; j <= n; ++j) {
      const std::u32string sub = w.substr(i, j - i);
      double lp;
      if (const auto it = lexicon.find(sub); it != lexicon.end()) {
        lp = std::log2(static_cast<double>(it->second)) - log_n;
      } else if (j - i == 1) {
        lp = fallback_lp;
      } else {
        continue;
      }
      if (best[i] + lp > best[j]) {
        best[j] = best[i] + lp;
        back[j] = i;
      }
    }
  }
  if (best[n] == kNegInf) throw_data("unsegmentable: " + word);

  std::vector<std::string> pieces;
  std::size_t j = n;
  while (j > 0) {
    const std::size_t i = back[j];
    pieces.push_back(utf8_encode(std::u32string_view(w).substr(i, j - i)));
    j = i;
  }
  std::reverse(pieces.begin(), pieces.end());
  return pieces;
}

std::vector<std::string> apply_marking(const std::vector<std::vector<std::string>>& words,
                                       MarkingScheme scheme) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (w.empty()) throw_data("empty word in marking input");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const std::string& s = w[k];
      if (s.empty()) throw_data("empty subword in marking input");
      if (s.front() == '+' || s.back() == '+') throw_data("marker collision: '" + s + "'");
      std::string t;
      if (k > 0) t += '+';
      t += s;
      if (scheme == MarkingScheme::left_right_marked && k + 1 < w.size()) t += '+';
      out.push_back(std::move(t));
    }
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens, MarkingScheme scheme) {
  std::string out;
  bool any = false;
  bool expecting_cont = false;
  for (const auto& tok : tokens) {
    if (tok.empty()) throw_data("empty token");
    std::string_view s(tok);
    const bool lead = s.front() == '+';
    if (lead) s.remove_prefix(1);
    bool trail = false;
    if (scheme == MarkingScheme::left_right_marked && !s.empty() && s.back() == '+') {
      trail = true;
      s.remove_suffix(1);
    }
    if (s.empty()) throw_data("empty token payload: '" + tok + "'");
    if (scheme == MarkingScheme::left_right_marked) {
      if (lead && !expecting_cont) throw_data("orphan continuation: '" + tok + "'");
      if (!lead && expecting_cont) throw_data("dangling continuation before '" + tok + "'");
    } else {
      if (lead && !any) throw_data("orphan continuation: '" + tok + "'");
    }
    if (!lead && any) out += ' ';
    out.append(s);
    any = true;
    expecting_cont = trail;
  }
  if (expecting_cont) throw_data("dangling continuation at end of sequence");
  return out;
}

const std::vector<std::string>& SubwordVocab::specials() {
  static const std::vector<std::string> kSpecials{"<pad>", "<unk>", "<mask>", "<sos>", "<eos>"};
  return kSpecials;
}

int SubwordVocab::lookup(const std::string& token) const {
  const auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& SubwordVocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token.size()) {
    throw_data("token id out of range: " + std::to_string(id));
  }
  return id_to_token[static_cast<std::size_t>(id)];
}

namespace {

SubwordVocab vocab_from_tokens(std::vector<std::string> tokens) {
  SubwordVocab v;
  v.id_to_token = std::move(tokens);
  for (std::size_t i = 0; i < v.id_to_token.size(); ++i) {
    if (!v.token_to_id.emplace(v.id_to_token[i], static_cast<int>(i)).second) {
      throw_data("duplicate vocab token: '" + v.id_to_token[i] + "'");
    }
  }
  return v;
}

}  // namespace

SubwordVocab build_vocab(const std::vector<std::string>& sentences, const SegmentationModel& model,
                         MarkingScheme scheme) {
  std::unordered_map<std::string, std::int64_t> freq;
  for (const auto& sent : sentences) {
    const auto ws = split_spaces(sent);
    if (ws.empty()) continue;
    std::vector<std::vector<std::string>> segmented;
    segmented.reserve(ws.size());
    for (const auto& w : ws) segmented.push_back(model.segment(w));
    for (const auto& tok : apply_marking(segmented, scheme)) ++freq[tok];
  }
  if (freq.empty()) {
    std::cerr << "warning: empty corpus, building specials-only vocabulary\n";
    return vocab_from_tokens(SubwordVocab::specials());
  }
  std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = SubwordVocab::specials();
  tokens.reserve(tokens.size() + items.size());
  for (auto& [tok, c] : items) tokens.push_back(std::move(tok));
  return vocab_from_tokens(std::move(tokens));
}

void save_lexicon(const SegmentationModel& model, const std::string& path) {
  std::vector<std::pair<std::string, std::int64_t>> items;
  items.reserve(model.lexicon.size());
  for (const auto& [u, c] : model.lexicon) items.emplace_back(utf8_encode(u), c);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  out << "#morfessor-baseline alpha=" << format_double(model.alpha) << "\n";
  for (const auto& [tok, c] : items) out << c << "\t" << tok << "\n";
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

SegmentationModel load_lexicon(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw_data("empty lexicon file: " + path);
  const std::string prefix = "#morfessor-baseline alpha=";
  if (line.rfind(prefix, 0) != 0) throw_data("bad lexicon header: " + path);
  SegmentationModel model;
  {
    const std::string num = line.substr(prefix.size());
    const auto res = std::from_chars(num.data(), num.data() + num.size(), model.alpha);
    if (res.ec != std::errc{} || res.ptr != num.data() + num.size() || !(model.alpha > 0.0)) {
      throw_data("bad alpha in lexicon header: " + path);
    }
  }
  std::int64_t prev_count = std::numeric_limits<std::int64_t>::max();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) throw_data("empty line " + std::to_string(lineno) + " in " + path);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw_data("missing tab on line " + std::to_string(lineno) + " in " + path);
    std::int64_t count = 0;
    const auto res = std::from_chars(line.data(), line.data() + tab, count);
    if (res.ec != std::errc{} || res.ptr != line.data() + tab || count < 1) {
      throw_data("bad count on line " + std::to_string(lineno) + " in " + path);
    }
    if (count > prev_count) throw_data("lexicon not sorted by count at line " + std::to_string(lineno));
    prev_count = count;
    const std::string tok = line.substr(tab + 1);
    if (tok.empty()) throw_data("empty subword on line " + std::to_string(lineno) + " in " + path);
    const std::u32string u = utf8_decode(tok, "lexicon entry");
    if (!model.lexicon.emplace(u, count).second) {
      throw_data("duplicate lexicon entry on line " + std::to_string(lineno) + " in " + path);
    }
    for (const char32_t cp : u) model.alphabet.insert(cp);
    model.total_tokens += count;
  }
  if (model.lexicon.empty()) throw_data("lexicon has no entries: " + path);
  return model;
}

void save_vocab(const SubwordVocab& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  for (const auto& tok : vocab.id_to_token) out << tok << "\n";
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

SubwordVocab load_vocab(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) throw_data("empty line in vocab: " + path);
    tokens.push_back(line);
  }
  if (tokens.size() < SubwordVocab::specials().size()) throw_data("vocab missing specials: " + path);
  for (std::size_t i = 0; i < SubwordVocab::specials().size(); ++i) {
    if (tokens[i] != SubwordVocab::specials()[i]) throw_data("vocab missing specials: " + path);
  }
  return vocab_from_tokens(std::move(tokens));
}

}  // namespace sppl
