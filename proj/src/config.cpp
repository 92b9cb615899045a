// SPDX-License-Identifier: Apache-2.0
#include "sppl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sppl/error.hpp"

namespace sppl {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw_usage("config: " + key + " expects a nonnegative integer, got '" + value + "'");
  }
  return out;
}

double parse_f64(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw_usage("config: " + key + " expects a number, got '" + value + "'");
  }
  return out;
}

void require_positive(const std::string& key, std::uint64_t v) {
  if (v == 0) throw_usage("config: " + key + " must be positive");
}

const std::set<std::string>& shared_keys() {
  static const std::set<std::string> keys{
      "kind",         "seed",          "scheme",         "batch_size",  "peak_lr",
      "min_lr",       "warmup_steps",  "total_steps",    "checkpoint_every",
      "validate_every", "grad_clip",   "dropout_prob",   "num_layers",  "hidden_size",
      "num_heads",    "intermediate_size", "vocab_size", "train_data",  "valid_data",
      "vocab"};
  return keys;
}

bool key_allowed(const std::string& kind, const std::string& key) {
  if (shared_keys().count(key)) return true;
  if (kind == "mlm") return key == "max_position" || key == "mask_prob" || key == "max_len";
  return key == "head_size" || key == "seg_len" || key == "mem_len";
}

}  // namespace

EncoderConfig RunConfig::encoder_config() const {
  if (kind != "mlm") throw_usage("config: encoder settings requested for kind '" + kind + "'");
  EncoderConfig cfg;
  cfg.num_layers = num_layers;
  cfg.hidden_size = hidden_size;
  cfg.num_heads = num_heads;
  cfg.intermediate_size = intermediate_size;
  cfg.max_position = max_position;
  cfg.dropout_prob = dropout_prob;
  cfg.vocab_size = vocab_size;
  return cfg;
}

XLConfig RunConfig::xl_config() const {
  if (kind != "xl") throw_usage("config: xl settings requested for kind '" + kind + "'");
  XLConfig cfg;
  cfg.num_layers = num_layers;
  cfg.hidden_size = hidden_size;
  cfg.num_heads = num_heads;
  cfg.head_size = head_size;
  cfg.intermediate_size = intermediate_size;
  cfg.seg_len = seg_len;
  cfg.mem_len = mem_len;
  cfg.dropout_prob = dropout_prob;
  cfg.vocab_size = vocab_size;
  return cfg;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw_usage("config " + origin + " line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw_usage("config " + origin + " line " + std::to_string(lineno) + ": empty key");
    }
    if (!kv.emplace(key, value).second) {
      throw_usage("config " + origin + ": duplicate key '" + key + "'");
    }
  }

  const auto kind_it = kv.find("kind");
  if (kind_it == kv.end()) throw_usage("config " + origin + ": missing required key 'kind'");
  RunConfig run;
  run.kind = kind_it->second;
  if (run.kind != "mlm" && run.kind != "xl") {
    throw_usage("config: kind must be 'mlm' or 'xl', got '" + run.kind + "'");
  }

  // Desk-scale defaults per kind.
  if (run.kind == "mlm") {
    run.num_layers = 4;
    run.hidden_size = 128;
    run.num_heads = 4;
    run.intermediate_size = 512;
  } else {
    run.num_layers = 2;
    run.hidden_size = 64;
    run.num_heads = 2;
    run.intermediate_size = 256;
  }

  for (const auto& [key, value] : kv) {
    if (!key_allowed(run.kind, key)) {
      throw_usage("config: unknown key '" + key + "' for kind '" + run.kind + "'");
    }
    if (key == "kind") continue;
    if (key == "seed") run.seed = parse_u64(key, value);
    else if (key == "scheme") run.scheme = parse_marking_scheme(value);
    else if (key == "batch_size") run.batch_size = parse_u64(key, value);
    else if (key == "peak_lr") run.schedule.peak_lr = parse_f64(key, value);
    else if (key == "min_lr") run.schedule.min_lr = parse_f64(key, value);
    else if (key == "warmup_steps") run.schedule.warmup_steps = parse_u64(key, value);
    else if (key == "total_steps") run.schedule.total_steps = parse_u64(key, value);
    else if (key == "checkpoint_every") run.checkpoint_every = parse_u64(key, value);
    else if (key == "validate_every") run.validate_every = parse_u64(key, value);
    else if (key == "grad_clip") run.grad_clip = parse_f64(key, value);
    else if (key == "dropout_prob") run.dropout_prob = parse_f64(key, value);
    else if (key == "num_layers") run.num_layers = parse_u64(key, value);
    else if (key == "hidden_size") run.hidden_size = parse_u64(key, value);
    else if (key == "num_heads") run.num_heads = parse_u64(key, value);
    else if (key == "intermediate_size") run.intermediate_size = parse_u64(key, value);
    else if (key == "max_position") run.max_position = parse_u64(key, value);
    else if (key == "mask_prob") run.mask_prob = parse_f64(key, value);
    else if (key == "max_len") run.max_len = parse_u64(key, value);
    else if (key == "head_size") run.head_size = parse_u64(key, value);
    else if (key == "seg_len") run.seg_len = parse_u64(key, value);
    else if (key == "mem_len") run.mem_len = parse_u64(key, value);
    else if (key == "vocab_size") run.vocab_size = parse_u64(key, value);
    else if (key == "train_data") run.train_data = value;
    else if (key == "valid_data") run.valid_data = value;
    else if (key == "vocab") run.vocab = value;
  }

  require_positive("num_layers", run.num_layers);
  require_positive("hidden_size", run.hidden_size);
  require_positive("num_heads", run.num_heads);
  require_positive("intermediate_size", run.intermediate_size);
  require_positive("batch_size", run.batch_size);
  if (run.kind == "mlm") {
    require_positive("max_position", run.max_position);
    if (run.max_len < 3) throw_usage("config: max_len must be at least 3");
    if (run.mask_prob < 0.0 || run.mask_prob > 1.0) {
      throw_usage("config: mask_prob must lie in [0, 1]");
    }
  } else {
    require_positive("head_size", run.head_size);
    require_positive("seg_len", run.seg_len);
  }
  if (run.schedule.total_steps < run.schedule.warmup_steps) {
    throw_usage("config: total_steps must be at least warmup_steps");
  }
  if (run.schedule.peak_lr <= 0.0) throw_usage("config: peak_lr must be positive");
  if (run.schedule.min_lr < 0.0) throw_usage("config: min_lr must be nonnegative");
  if (run.grad_clip < 0.0) throw_usage("config: grad_clip must be nonnegative");
  if (run.dropout_prob < 0.0 || run.dropout_prob >= 1.0) {
    throw_usage("config: dropout_prob must lie in [0, 1)");
  }
  return run;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

std::string echo_config(const RunConfig& run) {
  std::string out;
  char buf[64];
  const auto put_u = [&](const char* key, std::uint64_t v) {
    std::snprintf(buf, sizeof(buf), "%s=%llu\n", key, static_cast<unsigned long long>(v));
    out += buf;
  };
  const auto put_f = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s=%.17g\n", key, v);
    out += buf;
  };
  out += "kind=" + run.kind + "\n";
  put_u("seed", run.seed);
  out += "scheme=" + marking_scheme_name(run.scheme) + "\n";
  put_u("batch_size", run.batch_size);
  put_f("peak_lr", run.schedule.peak_lr);
  put_f("min_lr", run.schedule.min_lr);
  put_u("warmup_steps", run.schedule.warmup_steps);
  put_u("total_steps", run.schedule.total_steps);
  put_u("checkpoint_every", run.checkpoint_every);
  put_u("validate_every", run.validate_every);
  put_f("grad_clip", run.grad_clip);
  put_f("dropout_prob", run.dropout_prob);
  put_u("num_layers", run.num_layers);
  put_u("hidden_size", run.hidden_size);
  put_u("num_heads", run.num_heads);
  put_u("intermediate_size", run.intermediate_size);
  if (run.kind == "mlm") {
    put_u("max_position", run.max_position);
    put_f("mask_prob", run.mask_prob);
    put_u("max_len", run.max_len);
  } else {
    put_u("head_size", run.head_size);
    put_u("seg_len", run.seg_len);
    put_u("mem_len", run.mem_len);
  }
  put_u("vocab_size", run.vocab_size);
  out += "train_data=" + run.train_data + "\n";
  out += "valid_data=" + run.valid_data + "\n";
  out += "vocab=" + run.vocab + "\n";
  return out;
}

}  // namespace sppl
