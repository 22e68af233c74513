#include "kronquant/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "kronquant/rng.hpp"

namespace kronquant {

ExperimentConfig::ExperimentConfig() {
  for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": " + v);
  }
}

long long parse_int(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return i;
  } catch (...) {
    throw std::invalid_argument("config: bad integer for " + key + ": " + v);
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T, typename F>
std::string join_list(const std::vector<T>& v, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt(v[i]);
  }
  return s;
}

void apply_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "bits") {
    cfg.pipe.bits = static_cast<int>(parse_int(value, key));
  } else if (key == "block_n") {
    cfg.pipe.block_n = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "alpha") {
    cfg.pipe.alpha = parse_double(value, key);
  } else if (key == "cd_iters") {
    cfg.pipe.cd_iters = static_cast<int>(parse_int(value, key));
  } else if (key == "damping") {
    cfg.pipe.damping = parse_double(value, key);
  } else if (key == "candidates") {
    cfg.pipe.candidates.clear();
    for (const auto& s : split_list(value)) cfg.pipe.candidates.push_back(parse_double(s, key));
  } else if (key == "range_mode") {
    if (value == "signed_symmetric")
      cfg.pipe.range_mode = RangeMode::signed_symmetric;
    else if (value == "unsigned")
      cfg.pipe.range_mode = RangeMode::unsigned_affine;
    else
      throw std::invalid_argument("config: bad range_mode: " + value);
  } else if (key == "f2_residual") {
    cfg.pipe.f2_residual = parse_bool(value, key);
  } else if (key == "f3_grid") {
    cfg.pipe.f3_grid = parse_bool(value, key);
  } else if (key == "d") {
    cfg.d = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "d_h") {
    cfg.d_h = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "heads") {
    cfg.heads = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "seq_len") {
    cfg.seq_len = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "blocks") {
    cfg.blocks = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "outlier_channels") {
    cfg.outlier_channels = static_cast<std::size_t>(parse_int(value, key));
  } else if (key == "outlier_gain") {
    cfg.outlier_gain = parse_double(value, key);
  } else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& s : split_list(value))
      cfg.seeds.push_back(static_cast<std::uint64_t>(parse_int(s, key)));
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "n_list") {
    cfg.n_list.clear();
    for (const auto& s : split_list(value))
      cfg.n_list.push_back(static_cast<std::size_t>(parse_int(s, key)));
  } else if (key == "alpha_list") {
    cfg.alpha_list.clear();
    for (const auto& s : split_list(value)) cfg.alpha_list.push_back(parse_double(s, key));
  } else if (key == "cd_list") {
    cfg.cd_list.clear();
    for (const auto& s : split_list(value))
      cfg.cd_list.push_back(static_cast<int>(parse_int(s, key)));
  } else {
    throw std::invalid_argument("config: unknown key: " + key);
  }
}

std::string serialize_internal(const ExperimentConfig& cfg, bool include_out) {
  std::ostringstream os;
  os << "bits = " << cfg.pipe.bits << "\n";
  os << "block_n = " << cfg.pipe.block_n << "\n";
  os << "alpha = " << fmt_double(cfg.pipe.alpha) << "\n";
  os << "cd_iters = " << cfg.pipe.cd_iters << "\n";
  os << "damping = " << fmt_double(cfg.pipe.damping) << "\n";
  os << "candidates = " << join_list(cfg.pipe.candidates, fmt_double) << "\n";
  os << "range_mode = "
     << (cfg.pipe.range_mode == RangeMode::signed_symmetric ? "signed_symmetric" : "unsigned")
     << "\n";
  os << "f2_residual = " << (cfg.pipe.f2_residual ? "true" : "false") << "\n";
  os << "f3_grid = " << (cfg.pipe.f3_grid ? "true" : "false") << "\n";
  os << "d = " << cfg.d << "\n";
  os << "d_h = " << cfg.d_h << "\n";
  os << "heads = " << cfg.heads << "\n";
  os << "seq_len = " << cfg.seq_len << "\n";
  os << "blocks = " << cfg.blocks << "\n";
  os << "outlier_channels = " << cfg.outlier_channels << "\n";
  os << "outlier_gain = " << fmt_double(cfg.outlier_gain) << "\n";
  os << "seeds = " << join_list(cfg.seeds, [](std::uint64_t v) { return std::to_string(v); })
     << "\n";
  if (include_out) os << "out = " << cfg.out << "\n";
  os << "n_list = " << join_list(cfg.n_list, [](std::size_t v) { return std::to_string(v); })
     << "\n";
  os << "alpha_list = " << join_list(cfg.alpha_list, fmt_double) << "\n";
  os << "cd_list = " << join_list(cfg.cd_list, [](int v) { return std::to_string(v); }) << "\n";
  return os.str();
}

std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_preamble(const ExperimentConfig& cfg, std::ostream& os) {
  char hash[20];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  os << "# kronquant " << kVersion << "\n";
  os << "# config " << hash << "\n";
  os << "# generated " << iso_timestamp() << "\n";
}

std::string fmt_loss(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string fmt_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

constexpr int kTimingRepeats = 3;

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.seeds.clear();  // a config file states its own seed list
  std::stringstream ss(text);
  std::string line;
  bool saw_seeds = false;
  while (std::getline(ss, line)) {
    const auto hashpos = line.find('#');
    if (hashpos != std::string::npos) line = line.substr(0, hashpos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value, got: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "seeds") saw_seeds = true;
    apply_key(cfg, key, value);
  }
  if (!saw_seeds) cfg.seeds = ExperimentConfig().seeds;
  if (cfg.seeds.empty()) throw std::invalid_argument("config: empty seed list");
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  return serialize_internal(cfg, true);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string canon = serialize_internal(cfg, false);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

RunStats run_toy_quantization(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::vector<AttnBlock> blocks;
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    blocks.push_back(AttnBlock::random(derive_seed(seed, 1000 + b), cfg.d, cfg.d_h, cfg.heads));
  const Matrix x0 = gen_calibration(derive_seed(seed, 7), cfg.d, cfg.seq_len,
                                    cfg.outlier_channels, cfg.outlier_gain);
  const PropagateResult res =
      propagate_blocks(blocks, x0, cfg.pipe.alpha, make_block_quantizer(cfg.pipe));

  RunStats st;
  st.final_dev = res.final_mse;
  for (std::size_t b = 0; b < res.reports.size(); ++b) {
    for (const QuantDiag& diag : res.reports[b]) {
      st.steps_per_layer = diag.sequential_steps;
      st.block_ms += diag.block_loop_ms;
      st.loss_layer += diag.loss_layer_post;
      st.loss_attn += diag.loss_attn_post;
      st.loss_attn_dev += diag.loss_attn_dev_post;
      if (b == 0) st.loss_attn_block0 += diag.loss_attn_post;
    }
  }
  return st;
}

void cmd_ablate_n(const ExperimentConfig& cfg, std::ostream& os) {
  write_preamble(cfg, os);
  os << "seed,n,steps,time_ms,loss_layer,loss_attn\n";
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<std::size_t> ns = cfg.n_list;
  std::sort(ns.begin(), ns.end());
  for (std::uint64_t seed : seeds) {
    for (std::size_t n : ns) {
      ExperimentConfig c = cfg;
      c.pipe.block_n = n;
      RunStats st = run_toy_quantization(c, seed);
      // wall time: best of a few identical runs to damp scheduler noise
      double ms = st.block_ms;
      for (int rep = 1; rep < kTimingRepeats; ++rep)
        ms = std::min(ms, run_toy_quantization(c, seed).block_ms);
      os << seed << "," << n << "," << st.steps_per_layer << "," << fmt_ms(ms) << ","
         << fmt_loss(st.loss_layer) << "," << fmt_loss(st.loss_attn) << "\n";
    }
  }
}

void cmd_ablate_features(const ExperimentConfig& cfg, std::ostream& os) {
  write_preamble(cfg, os);
  os << "seed,flags,loss_layer,loss_attn,deviation\n";
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  const struct {
    const char* name;
    bool f2, f3;
  } combos[] = {{"base", false, false}, {"f2", true, false}, {"f3", false, true},
                {"f2f3", true, true}};
  for (std::uint64_t seed : seeds) {
    for (const auto& combo : combos) {
      ExperimentConfig c = cfg;
      c.pipe.f2_residual = combo.f2;
      c.pipe.f3_grid = combo.f3;
      const RunStats st = run_toy_quantization(c, seed);
      os << seed << "," << combo.name << "," << fmt_loss(st.loss_layer) << ","
         << fmt_loss(st.loss_attn_dev) << "," << fmt_loss(st.final_dev) << "\n";
    }
  }
}

void cmd_ablate_cd(const ExperimentConfig& cfg, std::ostream& os) {
  write_preamble(cfg, os);
  os << "seed,cd_iters,loss_attn\n";
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<int> iters = cfg.cd_list;
  std::sort(iters.begin(), iters.end());
  for (std::uint64_t seed : seeds) {
    for (int it : iters) {
      // first block only, refinement active: isolates the scale-refinement
      // effect from cross-block error propagation
      ExperimentConfig c = cfg;
      c.blocks = 1;
      c.pipe.f3_grid = true;
      c.pipe.cd_iters = it;
      const RunStats st = run_toy_quantization(c, seed);
      os << seed << "," << it << "," << fmt_loss(st.loss_attn_block0) << "\n";
    }
  }
}

void cmd_pipeline_report(const ExperimentConfig& cfg, std::ostream& os) {
  write_preamble(cfg, os);
  os << "seed,block,head,layer,steps,time_ms,loss_layer,loss_attn,loss_attn_dev,final_dev\n";
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  static const char* layer_names[] = {"q", "k", "v"};
  for (std::uint64_t seed : seeds) {
    std::vector<AttnBlock> blocks;
    for (std::size_t b = 0; b < cfg.blocks; ++b)
      blocks.push_back(
          AttnBlock::random(derive_seed(seed, 1000 + b), cfg.d, cfg.d_h, cfg.heads));
    const Matrix x0 = gen_calibration(derive_seed(seed, 7), cfg.d, cfg.seq_len,
                                      cfg.outlier_channels, cfg.outlier_gain);
    const PropagateResult res =
        propagate_blocks(blocks, x0, cfg.pipe.alpha, make_block_quantizer(cfg.pipe));
    for (std::size_t b = 0; b < res.reports.size(); ++b) {
      for (std::size_t i = 0; i < res.reports[b].size(); ++i) {
        const QuantDiag& diag = res.reports[b][i];
        os << seed << "," << b << "," << (i / 3) << "," << layer_names[i % 3] << ","
           << diag.sequential_steps << "," << fmt_ms(diag.block_loop_ms) << ","
           << fmt_loss(diag.loss_layer_post) << "," << fmt_loss(diag.loss_attn_post) << ","
           << fmt_loss(diag.loss_attn_dev_post) << "," << fmt_loss(res.final_mse) << "\n";
      }
    }
  }
}

}  // namespace kronquant
