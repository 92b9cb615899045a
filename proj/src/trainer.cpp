// SPDX-License-Identifier: Apache-2.0
#include "sppl/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sppl/corpusio.hpp"
#include "sppl/error.hpp"
#include "sppl/mlm_model.hpp"
#include "sppl/optim.hpp"
#include "sppl/scorer.hpp"
#include "sppl/subseg.hpp"
#include "sppl/xl_model.hpp"

namespace sppl {

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

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct CkReader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  bool need(std::size_t k) const { return pos + k <= n; }
  std::uint32_t u32() {
    if (!need(4)) throw_data("truncated checkpoint");
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
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t k) {
    if (!need(k)) throw_data("truncated checkpoint");
    std::string s(reinterpret_cast<const char*>(p + pos), k);
    pos += k;
    return s;
  }
};

void put_doubles(std::string& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  for (const double d : v) put_f64(out, d);
}

std::vector<double> read_doubles(CkReader& r) {
  const std::uint64_t n = r.u64();
  if (!r.need(static_cast<std::size_t>(n) * 8)) throw_data("truncated checkpoint");
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) v.push_back(r.f64());
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string buf;
  buf += "SPCK";
  put_u32(buf, 1);
  put_u64(buf, ck.step);
  put_u64(buf, ck.config_echo.size());
  buf += ck.config_echo;
  for (const std::uint64_t w : ck.train_rng) put_u64(buf, w);

  put_u64(buf, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put_u64(buf, name.size());
    buf += name;
    put_u64(buf, t.rank());
    for (const std::size_t d : t.shape()) put_u64(buf, d);
    put_doubles(buf, t.values());
  }

  put_u64(buf, ck.adam_t);
  put_u64(buf, ck.adam_slots.size());
  for (const auto& [m, v] : ck.adam_slots) {
    put_doubles(buf, m);
    put_doubles(buf, v);
  }

  buf.push_back(ck.xl_memory.empty() ? '\0' : '\1');
  if (!ck.xl_memory.empty()) {
    put_u64(buf, ck.xl_memory.size());
    for (const Tensor& t : ck.xl_memory) {
      put_u64(buf, t.dim(0));
      put_u64(buf, t.dim(1));
      put_u64(buf, t.dim(2));
      put_doubles(buf, t.values());
    }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw_data("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CkReader r{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};

  if (!r.need(4)) throw_data("truncated checkpoint");
  if (buf.compare(0, 4, "SPCK") != 0) throw_data("bad checkpoint magic");
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != 1) throw_data("unsupported checkpoint version: " + std::to_string(version));

  Checkpoint ck;
  ck.step = r.u64();
  ck.config_echo = r.bytes(static_cast<std::size_t>(r.u64()));
  for (auto& w : ck.train_rng) w = r.u64();

  const std::uint64_t tensor_count = r.u64();
  for (std::uint64_t i = 0; i < tensor_count; ++i) {
    const std::string name = r.bytes(static_cast<std::size_t>(r.u64()));
    const std::uint64_t rank = r.u64();
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64()));
    std::vector<double> values = read_doubles(r);
    if (values.size() != shape_size(shape)) throw_data("checkpoint tensor size mismatch: " + name);
    ck.tensors.emplace_back(name, Tensor::from_data(shape, std::move(values)));
  }

  ck.adam_t = r.u64();
  const std::uint64_t slot_count = r.u64();
  for (std::uint64_t i = 0; i < slot_count; ++i) {
    auto m = read_doubles(r);
    auto v = read_doubles(r);
    ck.adam_slots.emplace_back(std::move(m), std::move(v));
  }

  const std::string flag = r.bytes(1);
  if (flag[0] == '\1') {
    const std::uint64_t layers = r.u64();
    for (std::uint64_t i = 0; i < layers; ++i) {
      const auto d0 = static_cast<std::size_t>(r.u64());
      const auto d1 = static_cast<std::size_t>(r.u64());
      const auto d2 = static_cast<std::size_t>(r.u64());
      std::vector<double> values = read_doubles(r);
      if (values.size() != d0 * d1 * d2) throw_data("checkpoint memory size mismatch");
      ck.xl_memory.push_back(Tensor::from_data({d0, d1, d2}, std::move(values)));
    }
  } else if (flag[0] != '\0') {
    throw_data("checkpoint memory flag corrupt");
  }

  if (r.pos != r.n) throw_data("trailing bytes in checkpoint");
  return ck;
}

void resolve_vocab_size(RunConfig& run) {
  const SubwordVocab vocab = load_vocab(run.vocab);
  if (run.vocab_size == 0) {
    run.vocab_size = vocab.size();
  } else if (run.vocab_size != vocab.size()) {
    throw_data("config vocab_size disagrees with the vocab file");
  }
}

void load_parameters(const Checkpoint& ck, ParamStore& params) {
  if (ck.tensors.size() != params.count()) throw_data("config mismatch: parameter table");
  for (std::size_t i = 0; i < params.count(); ++i) {
    auto& [name, dst] = params.entries()[i];
    const auto& [ck_name, src] = ck.tensors[i];
    if (ck_name != name || src.shape() != dst.shape()) {
      throw_data("config mismatch: parameter " + name);
    }
    dst.mutable_values() = src.values();
  }
}

namespace {

constexpr std::uint64_t kNoEpoch = ~std::uint64_t{0};

void check_launch_paths(const RunConfig& run) {
  if (run.train_data.empty()) throw_usage("config: train_data is required for training");
  if (run.vocab.empty()) throw_usage("config: vocab is required for training");
  for (const std::string& p : {run.train_data, run.valid_data, run.vocab}) {
    if (!p.empty() && !std::filesystem::exists(p)) throw_data("missing file at launch: " + p);
  }
}

EncodedCorpus read_training_records(const std::string& path, std::size_t vocab_size) {
  std::size_t rec_vocab = 0;
  EncodedCorpus corpus = read_records(path, &rec_vocab);
  if (rec_vocab != vocab_size) {
    throw_data("record file vocab size disagrees with the vocab file: " + path);
  }
  if (corpus.empty()) throw_data("no sentences in record file: " + path);
  return corpus;
}

Checkpoint make_checkpoint(std::uint64_t step, const std::string& echo, const Rng& rng,
                           const ParamStore& params, const Adam& adam,
                           std::vector<Tensor> memory) {
  Checkpoint ck;
  ck.step = step;
  ck.config_echo = echo;
  ck.train_rng = rng.state();
  for (const auto& [name, t] : params.entries()) ck.tensors.emplace_back(name, t.detach());
  ck.adam_t = adam.t();
  for (const auto& slot : adam.slots()) ck.adam_slots.emplace_back(slot.m, slot.v);
  ck.xl_memory = std::move(memory);
  return ck;
}

void restore_state(const Checkpoint& ck, const std::string& echo, ParamStore& params, Adam& adam,
                   Rng& rng) {
  if (ck.config_echo != echo) throw_data("config mismatch");
  load_parameters(ck, params);
  adam.set_t(ck.adam_t);
  adam.slots().clear();
  for (const auto& [m, v] : ck.adam_slots) adam.slots().push_back({m, v});
  rng.set_state(ck.train_rng);
}

class MetricLog {
 public:
  MetricLog(const std::string& path, bool append)
      : out_(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc)) {
    if (!out_) throw_data("cannot open metric log: " + path);
  }

  void line(std::uint64_t step, double lr, double loss, double metric, const char* split) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%llu\t%.17g\t%.17g\t%.17g\t%s\n",
                  static_cast<unsigned long long>(step), lr, loss, metric, split);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

[[noreturn]] void emergency_save(const Checkpoint& ck, const std::string& out_dir,
                                 const std::string& why) {
  const std::string path = out_dir + "/emergency.spck";
  save_checkpoint(ck, path);
  throw Error(ErrKind::numeric, why + " (emergency checkpoint: " + path + ")");
}

}  // namespace

TrainOutput train_mlm(const RunConfig& run_in, const std::string& out_dir,
                      const std::string& resume_from, std::uint64_t stop_after) {
  RunConfig run = run_in;
  if (run.kind != "mlm") throw_usage("train_mlm: config kind is '" + run.kind + "', expected mlm");
  check_launch_paths(run);
  resolve_vocab_size(run);
  const std::string echo = echo_config(run);
  std::filesystem::create_directories(out_dir);

  const EncodedCorpus train_corpus = read_training_records(run.train_data, run.vocab_size);
  EncodedCorpus valid_corpus;
  if (!run.valid_data.empty()) {
    valid_corpus = read_training_records(run.valid_data, run.vocab_size);
  }

  MlmModel model(run.encoder_config(), run.seed);
  Adam adam;
  Rng train_rng(derive_seed(run.seed, "train"));
  std::uint64_t start_step = 0;
  if (!resume_from.empty()) {
    const Checkpoint ck = load_checkpoint(resume_from);
    restore_state(ck, echo, model.params(), adam, train_rng);
    start_step = ck.step;
    if (start_step > run.schedule.total_steps) {
      throw_data("checkpoint step exceeds total_steps");
    }
  }

  const std::string log_path = out_dir + "/metrics.tsv";
  MetricLog log(log_path, !resume_from.empty());

  std::uint64_t cached_epoch = kNoEpoch;
  std::vector<Batch> batches;
  const auto load_epoch = [&](std::uint64_t e) {
    std::size_t skipped = 0;
    batches = epoch_batches(train_corpus, run.batch_size, run.max_len, run.seed, e, &skipped);
    if (batches.empty()) throw_data("no usable training batches: every sentence exceeds max_len");
    if (skipped > 0 && cached_epoch == kNoEpoch) {
      std::cerr << "note: " << skipped << " sentences longer than max_len are skipped\n";
    }
    cached_epoch = e;
  };
  load_epoch(0);
  const std::size_t steps_per_epoch = batches.size();
  const MaskPolicy policy{run.mask_prob, 0.8, 0.1};
  std::uint64_t end_step = run.schedule.total_steps;
  if (stop_after > 0 && stop_after < end_step) end_step = stop_after;
  if (end_step < start_step) end_step = start_step;

  const auto validate = [&](std::uint64_t step, double lr) {
    if (valid_corpus.empty()) return;
    Rng val_rng(derive_seed(run.seed, "valmask", step));
    double loss_sum = 0.0, acc_sum = 0.0;
    std::size_t total = 0;
    for (const Batch& b : epoch_batches(valid_corpus, run.batch_size, run.max_len, run.seed, 0)) {
      const MaskedBatch mb = mask_tokens(b, policy, run.vocab_size, val_rng);
      const std::size_t n = mb.target_count();
      if (n == 0) continue;
      const MlmMetrics met = mlm_metrics(model.encode(mb), mb);
      loss_sum += met.loss.item() * static_cast<double>(n);
      acc_sum += met.accuracy * static_cast<double>(n);
      total += n;
    }
    if (total == 0) return;
    log.line(step, lr, loss_sum / static_cast<double>(total),
             acc_sum / static_cast<double>(total), "valid");
  };

  for (std::uint64_t step = start_step + 1; step <= end_step; ++step) {
    const std::uint64_t e = (step - 1) / steps_per_epoch;
    const std::size_t idx = (step - 1) % steps_per_epoch;
    if (e != cached_epoch) load_epoch(e);

    MaskedBatch mb = mask_tokens(batches[idx], policy, run.vocab_size, train_rng);
    for (int tries = 0; mb.target_count() == 0 && tries < 100; ++tries) {
      mb = mask_tokens(batches[idx], policy, run.vocab_size, train_rng);
    }
    if (mb.target_count() == 0) throw_data("masking produced no supervised positions");

    const double lr = run.schedule.lr_at(step);
    double loss_val = 0.0, acc = 0.0;
    try {
      model.params().zero_grads();
      Tape tape;
      const MlmMetrics met = mlm_metrics(model.encode(mb, true, train_rng), mb);
      loss_val = met.loss.item();
      acc = met.accuracy;
      if (!std::isfinite(loss_val)) throw_numeric("non-finite training loss");
      tape.backward(met.loss);
      clip_global_norm(model.params(), run.grad_clip);
      adam.step(model.params(), lr);
    } catch (const Error& err) {
      if (err.kind() != ErrKind::numeric) throw;
      emergency_save(make_checkpoint(step - 1, echo, train_rng, model.params(), adam, {}),
                     out_dir, std::string(err.what()) + " at step " + std::to_string(step));
    }

    log.line(step, lr, loss_val, acc, "train");
    if (run.validate_every > 0 && step % run.validate_every == 0) validate(step, lr);
    if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0) {
      save_checkpoint(make_checkpoint(step, echo, train_rng, model.params(), adam, {}),
                      out_dir + "/checkpoint_" + std::to_string(step) + ".spck");
    }
  }

  TrainOutput out;
  out.checkpoint = make_checkpoint(end_step, echo, train_rng, model.params(), adam, {});
  out.checkpoint_path = out_dir + "/model.spck";
  out.log_path = log_path;
  save_checkpoint(out.checkpoint, out.checkpoint_path);
  return out;
}

TrainOutput train_xl(const RunConfig& run_in, const std::string& out_dir,
                     const std::string& resume_from, std::uint64_t stop_after) {
  RunConfig run = run_in;
  if (run.kind != "xl") throw_usage("train_xl: config kind is '" + run.kind + "', expected xl");
  check_launch_paths(run);
  resolve_vocab_size(run);
  const std::string echo = echo_config(run);
  std::filesystem::create_directories(out_dir);

  const EncodedCorpus train_corpus = read_training_records(run.train_data, run.vocab_size);
  EncodedCorpus valid_corpus;
  if (!run.valid_data.empty()) {
    valid_corpus = read_training_records(run.valid_data, run.vocab_size);
  }

  XlModel model(run.xl_config(), run.seed);
  Adam adam;
  Rng train_rng(derive_seed(run.seed, "train"));
  std::uint64_t start_step = 0;
  std::vector<Tensor> resumed_memory;
  if (!resume_from.empty()) {
    const Checkpoint ck = load_checkpoint(resume_from);
    restore_state(ck, echo, model.params(), adam, train_rng);
    start_step = ck.step;
    resumed_memory = ck.xl_memory;
    if (start_step > run.schedule.total_steps) {
      throw_data("checkpoint step exceeds total_steps");
    }
  }

  const std::string log_path = out_dir + "/metrics.tsv";
  MetricLog log(log_path, !resume_from.empty());

  // One continuous token stream per epoch, cut into batch_size parallel
  // rows; the final position is kept as the target of the previous one.
  std::uint64_t stream_len = 0;
  for (const auto& sent : train_corpus) stream_len += sent.size() + 2;
  const std::size_t rows = run.batch_size;
  const std::size_t cols = static_cast<std::size_t>((stream_len - 1) / rows);
  if (cols == 0) throw_data("corpus too small for xl batch size");
  const std::size_t steps_per_epoch = (cols + run.seg_len - 1) / run.seg_len;

  std::uint64_t cached_epoch = kNoEpoch;
  std::vector<int> stream;
  const auto load_epoch = [&](std::uint64_t e) {
    std::vector<std::size_t> order(train_corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(run.seed, "data", e));
    shuffle_rng.shuffle(order);
    stream.clear();
    stream.reserve(static_cast<std::size_t>(stream_len));
    for (const std::size_t i : order) {
      stream.push_back(SubwordVocab::kSos);
      stream.insert(stream.end(), train_corpus[i].begin(), train_corpus[i].end());
      stream.push_back(SubwordVocab::kEos);
    }
    cached_epoch = e;
  };

  XLMemory memory = model.init_memory(rows);
  if (!resumed_memory.empty()) {
    if (resumed_memory.size() != model.config().num_layers ||
        resumed_memory[0].dim(0) != rows) {
      throw_data("config mismatch: checkpoint memory");
    }
    memory.layers = resumed_memory;
  }

  const auto validate = [&](std::uint64_t step, double lr) {
    if (valid_corpus.empty()) return;
    const EvalReport r = corpus_perplexity_ar(model, valid_corpus);
    log.line(step, lr, std::log(r.perplexity), r.perplexity, "valid");
  };

  std::uint64_t end_step = run.schedule.total_steps;
  if (stop_after > 0 && stop_after < end_step) end_step = stop_after;
  if (end_step < start_step) end_step = start_step;

  for (std::uint64_t step = start_step + 1; step <= end_step; ++step) {
    const std::uint64_t e = (step - 1) / steps_per_epoch;
    const std::size_t k = (step - 1) % steps_per_epoch;
    if (e != cached_epoch) load_epoch(e);
    if (k == 0) memory = model.init_memory(rows);

    const std::size_t col0 = k * run.seg_len;
    const std::size_t len = std::min(run.seg_len, cols - col0);
    Batch part;
    part.rows = rows;
    part.cols = len;
    std::vector<int> targets;
    part.ids.reserve(rows * len);
    targets.reserve(rows * len);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < len; ++c) {
        part.ids.push_back(stream[r * cols + col0 + c]);
        targets.push_back(stream[r * cols + col0 + c + 1]);
      }
    }

    const double lr = run.schedule.lr_at(step);
    double loss_val = 0.0;
    try {
      model.params().zero_grads();
      Tape tape;
      auto out = model.forward_segment(part, memory, true, train_rng);
      const Tensor loss = xl_loss(out.logits, targets);
      loss_val = loss.item();
      if (!std::isfinite(loss_val)) throw_numeric("non-finite training loss");
      tape.backward(loss);
      clip_global_norm(model.params(), run.grad_clip);
      adam.step(model.params(), lr);
      memory = std::move(out.memory);
    } catch (const Error& err) {
      if (err.kind() != ErrKind::numeric) throw;
      emergency_save(
          make_checkpoint(step - 1, echo, train_rng, model.params(), adam, memory.layers),
          out_dir, std::string(err.what()) + " at step " + std::to_string(step));
    }

    log.line(step, lr, loss_val, std::exp(loss_val), "train");
    if (run.validate_every > 0 && step % run.validate_every == 0) validate(step, lr);
    if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0) {
      save_checkpoint(
          make_checkpoint(step, echo, train_rng, model.params(), adam, memory.layers),
          out_dir + "/checkpoint_" + std::to_string(step) + ".spck");
    }
  }

  TrainOutput out;
  out.checkpoint = make_checkpoint(end_step, echo, train_rng, model.params(), adam, memory.layers);
  out.checkpoint_path = out_dir + "/model.spck";
  out.log_path = log_path;
  save_checkpoint(out.checkpoint, out.checkpoint_path);
  return out;
}

}  // namespace sppl
