#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"

namespace aesmpfp {

// Run configuration, loaded from a flat key = value text file ('#' starts a
// comment, seeds take a space-separated list, booleans are true/false/0/1).
// Every field has a default; unknown keys are a load error.
//
// total_steps defaults to the desk-scale budget of 2e5 interaction steps; the
// reference setup uses 5e6. Horizon and learning-rate schedules are defined
// over total_steps, so the desk-scale run keeps both endpoint pairs exact.
struct RunConfig {
  std::string scenario = "scenarios/cross_room_a.scn";
  std::string eval_scenario;  // empty: evaluate on the training scenario

  size_t total_steps = 200000;
  double gamma = 0.99;

  // priority weights of the composite score
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;

  // planner
  size_t L = 50;
  size_t K = 10;
  size_t cem_iters = 4;
  size_t h_min = 1;
  size_t h_max = 8;
  double sigma_floor = 0.05;
  bool latent_prior = false;  // imagination steps via prior head instead of re-encoding

  // optimization schedule
  double lr_start = 1e-4;
  double lr_end = 1e-6;

  std::vector<uint64_t> seeds = {0, 1, 2};

  // ablation flags
  bool aes_off = false;
  bool aes_no_ptc = false;
  bool aes_no_pice = false;
  bool mpfp_off_train = false;
  bool mpfp_off_eval = false;
  bool uniform_rssm_sampling = false;

  // model sizing
  size_t rssm_d_h = 128;
  size_t rssm_d_z = 32;
  size_t rssm_hidden = 256;
  size_t rssm_pool_block = 1;
  size_t sac_hidden = 256;

  // experience selection
  size_t replay_capacity = 100000;
  size_t fragment_capacity = 4096;
  size_t fragment_width = 16;
  size_t max_fragments = 4;
  size_t lof_k = 10;
  double lof_lambda = 1.0;
  double p_tc = 1.0;

  // training cadence
  size_t warmup_steps = 2000;
  size_t sac_batch = 64;
  size_t sac_every = 1;
  size_t rssm_batch = 16;
  size_t rssm_every = 8;
  size_t checkpoint_every = 50000;
  size_t trailing_window = 20;  // episodes in the trailing TCR window
  size_t eval_episodes = 100;

  void validate() const {
    if (scenario.empty()) throw ConfigError("config: scenario path is empty");
    if (w1 < 0 || w2 < 0 || w3 < 0) throw ConfigError("config: negative weight");
    if (K == 0 || K > L) throw ConfigError("config: need 1 <= K <= L");
    if (cem_iters == 0) throw ConfigError("config: cem_iters must be >= 1");
    if (h_min < 1 || h_min > h_max) throw ConfigError("config: need 1 <= h_min <= h_max");
    if (sigma_floor < 0) throw ConfigError("config: negative sigma_floor");
    if (lr_start <= 0 || lr_end <= 0) throw ConfigError("config: learning rates must be positive");
    if (seeds.empty()) throw ConfigError("config: seeds list is empty");
    if (rssm_d_h == 0 || rssm_d_z == 0 || rssm_hidden == 0 || sac_hidden == 0)
      throw ConfigError("config: model sizes must be positive");
    if (rssm_pool_block == 0 || 30 % rssm_pool_block != 0)
      throw ConfigError("config: rssm_pool_block must divide the 30-cell map side");
    if (replay_capacity == 0 || fragment_capacity == 0)
      throw ConfigError("config: buffer capacities must be positive");
    if (fragment_width == 0 || max_fragments == 0)
      throw ConfigError("config: fragment_width and max_fragments must be positive");
    if (lof_k == 0) throw ConfigError("config: lof_k must be >= 1");
    if (lof_lambda < 0) throw ConfigError("config: negative lof_lambda");
    if (sac_batch == 0 || rssm_batch == 0 || sac_every == 0 || rssm_every == 0)
      throw ConfigError("config: batch sizes and cadences must be positive");
    if (trailing_window == 0) throw ConfigError("config: trailing_window must be >= 1");
    if (eval_episodes == 0) throw ConfigError("config: eval_episodes must be >= 1");
  }
};

namespace config_detail {

inline bool parse_bool(const std::string& v, int line_no) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config line " + std::to_string(line_no) + ": bad boolean '" + v + "'");
}

inline double parse_num(const std::string& v, int line_no) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config line " + std::to_string(line_no) + ": bad number '" + v + "'");
  }
}

inline size_t parse_size(const std::string& v, int line_no) {
  const double x = parse_num(v, line_no);
  if (x < 0 || x != std::floor(x))
    throw ConfigError("config line " + std::to_string(line_no) +
                      ": expected a non-negative integer, got '" + v + "'");
  return static_cast<size_t>(x);
}

}  // namespace config_detail

inline RunConfig parse_config(std::istream& is) {
  using namespace config_detail;
  RunConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": missing '='");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string rest = line.substr(eq + 1);
    std::istringstream vs(rest);
    std::vector<std::string> v;
    std::string tok;
    while (vs >> tok) v.push_back(tok);
    auto one = [&]() -> const std::string& {
      if (v.size() != 1)
        throw ConfigError("config line " + std::to_string(line_no) + ": key '" + key +
                          "' expects one value");
      return v[0];
    };

    if (key == "scenario") cfg.scenario = one();
    else if (key == "eval_scenario") cfg.eval_scenario = one();
    else if (key == "total_steps") cfg.total_steps = parse_size(one(), line_no);
    else if (key == "gamma") cfg.gamma = parse_num(one(), line_no);
    else if (key == "w1") cfg.w1 = parse_num(one(), line_no);
    else if (key == "w2") cfg.w2 = parse_num(one(), line_no);
    else if (key == "w3") cfg.w3 = parse_num(one(), line_no);
    else if (key == "L") cfg.L = parse_size(one(), line_no);
    else if (key == "K") cfg.K = parse_size(one(), line_no);
    else if (key == "cem_iters") cfg.cem_iters = parse_size(one(), line_no);
    else if (key == "h_min") cfg.h_min = parse_size(one(), line_no);
    else if (key == "h_max") cfg.h_max = parse_size(one(), line_no);
    else if (key == "sigma_floor") cfg.sigma_floor = parse_num(one(), line_no);
    else if (key == "latent_prior") cfg.latent_prior = parse_bool(one(), line_no);
    else if (key == "lr_start") cfg.lr_start = parse_num(one(), line_no);
    else if (key == "lr_end") cfg.lr_end = parse_num(one(), line_no);
    else if (key == "seeds") {
      if (v.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty seeds list");
      cfg.seeds.clear();
      for (const std::string& s : v)
        cfg.seeds.push_back(static_cast<uint64_t>(parse_size(s, line_no)));
    } else if (key == "aes_off") cfg.aes_off = parse_bool(one(), line_no);
    else if (key == "aes_no_ptc") cfg.aes_no_ptc = parse_bool(one(), line_no);
    else if (key == "aes_no_pice") cfg.aes_no_pice = parse_bool(one(), line_no);
    else if (key == "mpfp_off_train") cfg.mpfp_off_train = parse_bool(one(), line_no);
    else if (key == "mpfp_off_eval") cfg.mpfp_off_eval = parse_bool(one(), line_no);
    else if (key == "uniform_rssm_sampling")
      cfg.uniform_rssm_sampling = parse_bool(one(), line_no);
    else if (key == "rssm_d_h") cfg.rssm_d_h = parse_size(one(), line_no);
    else if (key == "rssm_d_z") cfg.rssm_d_z = parse_size(one(), line_no);
    else if (key == "rssm_hidden") cfg.rssm_hidden = parse_size(one(), line_no);
    else if (key == "rssm_pool_block") cfg.rssm_pool_block = parse_size(one(), line_no);
    else if (key == "sac_hidden") cfg.sac_hidden = parse_size(one(), line_no);
    else if (key == "replay_capacity") cfg.replay_capacity = parse_size(one(), line_no);
    else if (key == "fragment_capacity") cfg.fragment_capacity = parse_size(one(), line_no);
    else if (key == "fragment_width") cfg.fragment_width = parse_size(one(), line_no);
    else if (key == "max_fragments") cfg.max_fragments = parse_size(one(), line_no);
    else if (key == "lof_k") cfg.lof_k = parse_size(one(), line_no);
    else if (key == "lof_lambda") cfg.lof_lambda = parse_num(one(), line_no);
    else if (key == "p_tc") cfg.p_tc = parse_num(one(), line_no);
    else if (key == "warmup_steps") cfg.warmup_steps = parse_size(one(), line_no);
    else if (key == "sac_batch") cfg.sac_batch = parse_size(one(), line_no);
    else if (key == "sac_every") cfg.sac_every = parse_size(one(), line_no);
    else if (key == "rssm_batch") cfg.rssm_batch = parse_size(one(), line_no);
    else if (key == "rssm_every") cfg.rssm_every = parse_size(one(), line_no);
    else if (key == "checkpoint_every") cfg.checkpoint_every = parse_size(one(), line_no);
    else if (key == "trailing_window") cfg.trailing_window = parse_size(one(), line_no);
    else if (key == "eval_episodes") cfg.eval_episodes = parse_size(one(), line_no);
    else
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" +
                        key + "'");
  }
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  return parse_config(is);
}

inline const std::vector<std::string>& ablation_presets() {
  static const std::vector<std::string> names = {
      "full", "aes_off", "aes_no_ptc", "aes_no_pice", "mpfp_off_train", "mpfp_off_eval"};
  return names;
}

// aes_off removes the whole composite (all weights zero) and falls back to
// uniform fragment sampling; the other presets toggle exactly one switch.
inline RunConfig apply_preset(RunConfig cfg, const std::string& preset) {
  cfg.aes_off = cfg.aes_no_ptc = cfg.aes_no_pice = false;
  cfg.mpfp_off_train = cfg.mpfp_off_eval = cfg.uniform_rssm_sampling = false;
  if (preset == "full") return cfg;
  if (preset == "aes_off") {
    cfg.aes_off = true;
    cfg.w1 = cfg.w2 = cfg.w3 = 0.0;
    cfg.uniform_rssm_sampling = true;
    return cfg;
  }
  if (preset == "aes_no_ptc") {
    cfg.aes_no_ptc = true;
    return cfg;
  }
  if (preset == "aes_no_pice") {
    cfg.aes_no_pice = true;
    return cfg;
  }
  if (preset == "mpfp_off_train") {
    cfg.mpfp_off_train = true;
    return cfg;
  }
  if (preset == "mpfp_off_eval") {
    cfg.mpfp_off_eval = true;
    return cfg;
  }
  throw ConfigError("unknown ablation preset: " + preset);
}

}  // namespace aesmpfp
