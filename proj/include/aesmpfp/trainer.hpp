#pragma once

#include <deque>
#include <filesystem>

#include "checkpoint.hpp"
#include "config.hpp"
#include "metrics.hpp"
#include "planner.hpp"
#include "priority.hpp"
#include "replay.hpp"

namespace aesmpfp {

inline RssmConfig rssm_config_from(const RunConfig& cfg) {
  RssmConfig r;
  r.d_h = cfg.rssm_d_h;
  r.d_z = cfg.rssm_d_z;
  r.hidden = cfg.rssm_hidden;
  r.pool_block = cfg.rssm_pool_block;
  return r;
}

inline SacConfig sac_config_from(const RunConfig& cfg) {
  SacConfig s;
  s.hidden = cfg.sac_hidden;
  s.gamma = cfg.gamma;
  return s;
}

inline PlanConfig plan_config_from(const RunConfig& cfg, size_t H, double v_max) {
  PlanConfig p;
  p.H = H;
  p.L = cfg.L;
  p.K = cfg.K;
  p.iters = cfg.cem_iters;
  p.gamma = cfg.gamma;
  p.sigma_floor = cfg.sigma_floor;
  p.action_limit = v_max;
  p.mode = cfg.latent_prior ? ImagineMode::LatentPrior : ImagineMode::DecodeReencode;
  return p;
}

// World model and policy built from one seed; the construction order fixes
// the draw order from the shared init stream.
struct Models {
  RngStream init_rng;
  Rssm rssm;
  Sac sac;

  Models(const RunConfig& cfg, uint64_t seed)
      : init_rng(derive_seed(seed, 0x6D6F64656C73ULL)),
        rssm(rssm_config_from(cfg), init_rng),
        sac(sac_config_from(cfg), init_rng) {}
};

inline std::vector<ParamBlock> model_blocks(Rssm& rssm, Sac& sac) {
  std::vector<ParamBlock> bs = rssm.blocks();
  for (ParamBlock& b : sac.blocks()) bs.push_back(std::move(b));
  return bs;
}

inline void stored_obs_into_row(const StoredObs& s, Tensor& t, size_t row) {
  for (size_t i = 0; i < kMapCells; ++i)
    t.at2(row, i) = s.map[i] / 255.0;
  for (size_t i = 0; i < kObsVecDim; ++i)
    t.at2(row, kMapCells + i) = s.vec[i];
}

// Interleaved training loop: planned (or raw-actor) environment interaction,
// per-step SAC updates from uniform replay, episode-end priority scoring and
// fragment insertion, and periodic model updates from the prioritized
// fragment store with priority write-back.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, uint64_t seed, std::string out_dir)
      : cfg_((cfg.validate(), cfg)),
        seed_(seed),
        out_(std::move(out_dir)),
        env_(load_scenario(cfg.scenario)),
        models_(cfg, seed),
        replay_(cfg.replay_capacity),
        fragments_(cfg.fragment_capacity),
        env_seed_base_(derive_seed(seed, 0x656E76ULL)),
        rng_action_(derive_seed(seed, 0x616374ULL)),
        rng_plan_(derive_seed(seed, 0x706C616EULL)),
        rng_sac_batch_(derive_seed(seed, 0x73616342ULL)),
        rng_sac_noise_(derive_seed(seed, 0x7361634EULL)),
        rng_rssm_batch_(derive_seed(seed, 0x7273426ULL)),
        rng_rssm_noise_(derive_seed(seed, 0x72734EULL)) {
    std::filesystem::create_directories(out_);
  }

  Rssm& rssm() { return models_.rssm; }
  Sac& sac() { return models_.sac; }
  size_t episodes_finished() const { return episodes_done_; }

  std::string checkpoint_path() const { return out_ + "/checkpoint.ckpt"; }
  std::string curve_path() const { return out_ + "/curve.jsonl"; }

  void run() {
    curve_.open(curve_path(), std::ios::trunc);
    if (!curve_) throw Error("trainer: cannot open " + curve_path());
    if (cfg_.total_steps == 0) {
      save_models();
      return;
    }
    Observation obs = env_.reset(next_episode_seed());
    begin_episode(obs);
    for (size_t step = 0; step < cfg_.total_steps; ++step) {
      const Vec2 a = select_action(obs, step);
      const StepResult sr = env_.step(a);
      record_transition(a, sr);
      obs = sr.obs;
      learn(step);
      if (sr.done) {
        finish_episode(step + 1);
        obs = env_.reset(next_episode_seed());
        begin_episode(obs);
      }
      if (cfg_.checkpoint_every && (step + 1) % cfg_.checkpoint_every == 0)
        save_models();
    }
    save_models();
  }

 private:
  RunConfig cfg_;
  uint64_t seed_;
  std::string out_;
  Env env_;
  Models models_;
  ReplayBuffer replay_;
  FragmentBuffer fragments_;
  uint64_t env_seed_base_;
  RngStream rng_action_, rng_plan_, rng_sac_batch_, rng_sac_noise_,
      rng_rssm_batch_, rng_rssm_noise_;

  std::ofstream curve_;
  size_t episode_counter_ = 0;
  size_t episodes_done_ = 0;
  std::deque<bool> trailing_tcr_;

  std::vector<StoredObs> ep_obs_;
  std::vector<Vec2> ep_actions_;
  std::vector<double> ep_rewards_;
  std::vector<uint8_t> ep_ik_;

  uint64_t next_episode_seed() { return derive_seed(env_seed_base_, episode_counter_++); }

  void begin_episode(const Observation& obs) {
    ep_obs_.assign(1, quantize_obs(obs));
    ep_actions_.clear();
    ep_rewards_.clear();
    ep_ik_.clear();
  }

  void record_transition(Vec2 a, const StepResult& sr) {
    const double vm = env_.config().v_max;
    ep_actions_.push_back({clip(a.x, -vm, vm), clip(a.y, -vm, vm)});
    ep_rewards_.push_back(sr.reward);
    ep_ik_.push_back(sr.ik_failure ? 1 : 0);
    ep_obs_.push_back(quantize_obs(sr.obs));
  }

  Vec2 select_action(const Observation& obs, size_t step) {
    const double vm = env_.config().v_max;
    if (step < cfg_.warmup_steps)
      return {rng_action_.uniform(-vm, vm), rng_action_.uniform(-vm, vm)};
    if (cfg_.mpfp_off_train)
      return models_.sac.act_one(obs, Sac::ActMode::Sample, &rng_action_);
    const size_t H =
        horizon_schedule(step, cfg_.total_steps, cfg_.h_min, cfg_.h_max);
    const Tensor row = obs_row(obs);
    const PlanResult pr =
        plan(row, models_.rssm, models_.sac, plan_config_from(cfg_, H, vm), rng_plan_);
    // Keep the executed action exploratory for off-policy learning: add the
    // actor's own sampled deviation from its mean.
    const PolicyOutput mean = models_.sac.act(row, Sac::ActMode::Mean);
    const PolicyOutput samp = models_.sac.act(row, Sac::ActMode::Sample, &rng_action_);
    return {clip(pr.action.x + samp.action.at2(0, 0) - mean.action.at2(0, 0), -vm, vm),
            clip(pr.action.y + samp.action.at2(0, 1) - mean.action.at2(0, 1), -vm, vm)};
  }

  void learn(size_t step) {
    if (step < cfg_.warmup_steps) return;
    const double lr =
        lr_schedule(step, cfg_.total_steps, cfg_.lr_start, cfg_.lr_end);
    if (step % cfg_.sac_every == 0 && replay_.size() >= cfg_.sac_batch)
      sac_update(lr, step);
    if (step % cfg_.rssm_every == 0 && replay_.size() > 0) rssm_update(lr, step);
  }

  void sac_update(double lr, size_t step) {
    const size_t B = cfg_.sac_batch;
    const size_t D = kMapCells + kObsVecDim;
    SacBatch b;
    b.obs = Tensor({B, D});
    b.action = Tensor({B, 2});
    b.reward = Tensor({B, 1});
    b.next_obs = Tensor({B, D});
    b.done = Tensor({B, 1});
    for (size_t i = 0; i < B; ++i) {
      const TransitionRef tr = replay_.sample(rng_sac_batch_);
      const StoredEpisode& ep = *tr.episode;
      stored_obs_into_row(ep.obs[tr.t], b.obs, i);
      stored_obs_into_row(ep.obs[tr.t + 1], b.next_obs, i);
      b.action.at2(i, 0) = ep.actions[tr.t].x;
      b.action.at2(i, 1) = ep.actions[tr.t].y;
      b.reward.at2(i, 0) = ep.rewards[tr.t];
      b.done.at2(i, 0) = tr.done() ? 1.0 : 0.0;
    }
    try {
      models_.sac.update(b, lr, rng_sac_noise_);
    } catch (const NonFiniteValue& e) {
      throw NonFiniteValue("train step " + std::to_string(step) + ": " + e.what());
    }
  }

  void rssm_update(double lr, size_t step) {
    const size_t B = cfg_.rssm_batch;
    const size_t W = cfg_.fragment_width;
    const bool uniform = cfg_.aes_off || cfg_.uniform_rssm_sampling ||
                         fragments_.size() == 0 || fragments_.total_priority() <= 0.0;

    struct RowSrc {
      const StoredObs* obs = nullptr;  // len + 1 entries
      const Vec2* actions = nullptr;
      const double* rewards = nullptr;
      size_t len = 0;
      size_t slot = SIZE_MAX;  // fragment slot for priority write-back
    };
    std::vector<RowSrc> rows(B);
    for (size_t i = 0; i < B; ++i) {
      if (uniform) {
        // Uniform over transitions: anchor a uniformly drawn transition, then
        // take the enclosing window clamped to the episode.
        const TransitionRef tr = replay_.sample(rng_rssm_batch_);
        const StoredEpisode& ep = *tr.episode;
        const size_t len = std::min(W, ep.length());
        const size_t start = std::min(tr.t, ep.length() - len);
        rows[i] = {ep.obs.data() + start, ep.actions.data() + start,
                   ep.rewards.data() + start, len, SIZE_MAX};
      } else {
        const FragmentSample fs = fragments_.sample(rng_rssm_batch_);
        const FragmentData& f = *fs.fragment;
        rows[i] = {f.obs.data(), f.actions.data(), f.rewards.data(), f.length(),
                   fs.slot};
      }
    }

    FragmentBatch batch;
    const size_t D = kMapCells + kObsVecDim;
    for (size_t k = 0; k <= W; ++k) {
      Tensor obs = Tensor::zeros({B, D});
      for (size_t i = 0; i < B; ++i)
        if (k <= rows[i].len) stored_obs_into_row(rows[i].obs[k], obs, i);
      batch.obs.push_back(std::move(obs));
    }
    for (size_t k = 0; k < W; ++k) {
      Tensor a = Tensor::zeros({B, 2}), r = Tensor::zeros({B, 1}),
             m = Tensor::zeros({B, 1});
      for (size_t i = 0; i < B; ++i) {
        if (k >= rows[i].len) continue;
        a.at2(i, 0) = rows[i].actions[k].x;
        a.at2(i, 1) = rows[i].actions[k].y;
        r.at2(i, 0) = rows[i].rewards[k];
        m.at2(i, 0) = 1.0;
      }
      batch.actions.push_back(std::move(a));
      batch.rewards.push_back(std::move(r));
      batch.mask.push_back(std::move(m));
    }

    RssmTrainResult res;
    try {
      res = models_.rssm.train_step(batch, lr, rng_rssm_noise_);
    } catch (const NonFiniteValue& e) {
      throw NonFiniteValue("train step " + std::to_string(step) + ": " + e.what());
    }

    if (uniform) return;
    // Refresh sampled fragments with their new model error, keeping each
    // transition's normalizer from insert time (raised if the loss outgrew it).
    for (size_t i = 0; i < B; ++i) {
      const FragmentData& f = fragments_.fragment(rows[i].slot);
      double total = 0.0;
      for (size_t k = 0; k < f.length(); ++k) {
        const double loss = res.per_transition[i][k];
        total += f.static_priority[k] +
                 cfg_.w3 * loss / std::max(f.loss_norm[k], loss);
      }
      fragments_.update_priority(rows[i].slot, total);
    }
  }

  void finish_episode(size_t steps_done) {
    const Metrics m = episode_metrics(env_.log(), env_.config().failure_threshold);
    trailing_tcr_.push_back(m.tcr_flag);
    if (trailing_tcr_.size() > cfg_.trailing_window) trailing_tcr_.pop_front();
    double tcr = 0.0;
    for (bool f : trailing_tcr_) tcr += f ? 1.0 : 0.0;
    tcr /= static_cast<double>(trailing_tcr_.size());

    CurvePoint p;
    p.step = steps_done;
    p.episodic_return = 0.0;
    for (double r : ep_rewards_) p.episodic_return += r;
    p.trailing_tcr = tcr;
    curve_ << curve_point_json(p).dump() << "\n";
    curve_.flush();

    StoredEpisode ep;
    ep.obs = ep_obs_;
    ep.actions = ep_actions_;
    ep.rewards = ep_rewards_;
    ep.ik = ep_ik_;
    ep.reason = env_.log().reason;

    const bool score = !(cfg_.aes_off || cfg_.uniform_rssm_sampling);
    if (score) insert_fragments(ep);
    replay_.add_episode(std::move(ep));
    ++episodes_done_;
  }

  void insert_fragments(const StoredEpisode& ep) {
    const size_t T = ep.length();
    std::vector<FeaturePoint> points(T);
    std::vector<Tensor> obs_rows(T + 1, Tensor({1, kMapCells + kObsVecDim}));
    for (size_t t = 0; t <= T; ++t) {
      stored_obs_into_row(ep.obs[t], obs_rows[t], 0);
      if (t == T) break;
      points[t].map.assign(obs_rows[t].data(), obs_rows[t].data() + kMapCells);
      points[t].vec.assign(obs_rows[t].data() + kMapCells,
                           obs_rows[t].data() + kMapCells + kObsVecDim);
    }
    const std::vector<double> losses =
        models_.rssm.episode_losses(obs_rows, ep.actions, ep.rewards);

    PriorityWeights w;
    w.w1 = cfg_.aes_no_pice ? 0.0 : cfg_.w1;
    w.w2 = cfg_.aes_no_ptc ? 0.0 : cfg_.w2;
    w.w3 = cfg_.w3;
    std::vector<bool> ik(T);
    for (size_t t = 0; t < T; ++t) ik[t] = ep.ik[t] != 0;
    const std::vector<PrioritySignals> sig = compute_priorities(
        points, ik, losses, w, cfg_.lof_k, cfg_.lof_lambda, cfg_.p_tc);

    std::vector<double> prefix_max(T);
    double run = 0.0;
    for (size_t t = 0; t < T; ++t) {
      run = std::max(run, losses[t]);
      prefix_max[t] = run;
    }

    for (const Fragment& fr :
         extract_fragments(sig, cfg_.fragment_width, cfg_.max_fragments)) {
      FragmentData fd;
      fd.start = static_cast<uint32_t>(fr.start);
      for (size_t t = fr.start; t <= fr.start + fr.length; ++t)
        fd.obs.push_back(ep.obs[t]);
      for (size_t t = fr.start; t < fr.start + fr.length; ++t) {
        fd.actions.push_back(ep.actions[t]);
        fd.rewards.push_back(ep.rewards[t]);
        fd.static_priority.push_back(w.w1 * std::max(0.0, sig[t].p_ice - 1.0) +
                                     w.w2 * sig[t].p_tc * (sig[t].ik_flag ? 1.0 : 0.0));
        fd.loss_norm.push_back(prefix_max[t]);
      }
      fragments_.insert(std::move(fd), fr.total_priority);
    }
  }

  void save_models() {
    save_checkpoint(checkpoint_path(), model_blocks(models_.rssm, models_.sac));
  }
};

// Evaluation: full-horizon planning (or raw actor mean under mpfp_off_eval),
// no learning, no exploration noise.
inline EvalReport run_eval(const Rssm& rssm, const Sac& sac, const RunConfig& cfg,
                           const std::string& scenario_path, size_t episodes,
                           uint64_t seed) {
  Env env(load_scenario(scenario_path));
  const double vm = env.config().v_max;
  EvalReport rep;
  const uint64_t env_base = derive_seed(seed, 0x6576656EULL);
  const uint64_t plan_base = derive_seed(seed, 0x6576706CULL);
  for (size_t e = 0; e < episodes; ++e) {
    Observation obs = env.reset(derive_seed(env_base, e));
    RngStream plan_rng(derive_seed(plan_base, e));
    while (!env.done()) {
      Vec2 a;
      if (cfg.mpfp_off_eval) {
        a = sac.act_one(obs, Sac::ActMode::Mean);
      } else {
        a = plan(obs_row(obs), rssm, sac, plan_config_from(cfg, cfg.h_max, vm),
                 plan_rng)
                .action;
      }
      obs = env.step(a).obs;
    }
    const Metrics m = episode_metrics(env.log(), env.config().failure_threshold);
    rep.rows.push_back({seed, e, m.aikf, m.abc, m.tcr_flag, m.psr_flag});
  }
  rep.agg = compute_aggregates(rep.rows);
  return rep;
}

inline void train_run(const RunConfig& cfg, uint64_t seed, const std::string& out_dir) {
  Trainer t(cfg, seed, out_dir);
  t.run();
}

inline std::string eval_scenario_of(const RunConfig& cfg) {
  return cfg.eval_scenario.empty() ? cfg.scenario : cfg.eval_scenario;
}

inline EvalReport eval_checkpoint(const RunConfig& cfg, const std::string& ckpt_path,
                                  const std::string& scenario_path, size_t episodes,
                                  uint64_t seed) {
  Models m(cfg, seed);
  std::vector<ParamBlock> blocks = model_blocks(m.rssm, m.sac);
  load_checkpoint(ckpt_path, blocks);
  return run_eval(m.rssm, m.sac, cfg, scenario_path, episodes, seed);
}

// Preset grid of the ablation study. Every preset except mpfp_off_eval trains
// from scratch per seed; mpfp_off_eval only changes evaluation, so it reuses
// the full preset's checkpoints (the grid lists full first).
inline void ablation_suite(const RunConfig& base, const std::string& out_dir) {
  base.validate();
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> lines;
  lines.push_back(csv_header());
  for (const std::string& preset : ablation_presets()) {
    const RunConfig pc = apply_preset(base, preset);
    std::vector<EvalRow> all_rows;
    for (uint64_t seed : pc.seeds) {
      const std::string run_dir =
          out_dir + "/" + preset + "/seed" + std::to_string(seed);
      std::string ckpt;
      if (preset == "mpfp_off_eval") {
        ckpt = out_dir + "/full/seed" + std::to_string(seed) + "/checkpoint.ckpt";
        std::filesystem::create_directories(run_dir);
      } else {
        train_run(pc, seed, run_dir);
        ckpt = run_dir + "/checkpoint.ckpt";
      }
      const EvalReport rep =
          eval_checkpoint(pc, ckpt, eval_scenario_of(pc), pc.eval_episodes, seed);
      write_eval_report(run_dir + "/eval.jsonl", rep);
      for (const EvalRow& r : rep.rows) all_rows.push_back(r);
    }
    lines.push_back(csv_row(preset, compute_aggregates(all_rows)));
  }
  std::ofstream os(out_dir + "/ablation.csv", std::ios::trunc);
  if (!os) throw Error("ablate: cannot open " + out_dir + "/ablation.csv");
  for (const std::string& l : lines) os << l << "\n";
}

// Runs planning episodes and logs one JSONL line per CEM iteration.
inline void plan_trace(const RunConfig& cfg, const std::string& ckpt_path,
                       const std::string& scenario_path, uint64_t seed,
                       size_t episodes, const std::string& out_path) {
  Models m(cfg, seed);
  std::vector<ParamBlock> blocks = model_blocks(m.rssm, m.sac);
  load_checkpoint(ckpt_path, blocks);
  Env env(load_scenario(scenario_path));
  const double vm = env.config().v_max;
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) throw Error("plan-trace: cannot open " + out_path);
  const uint64_t env_base = derive_seed(seed, 0x7074656EULL);
  const uint64_t plan_base = derive_seed(seed, 0x7074706CULL);
  for (size_t e = 0; e < episodes; ++e) {
    Observation obs = env.reset(derive_seed(env_base, e));
    RngStream plan_rng(derive_seed(plan_base, e));
    size_t t = 0;
    while (!env.done()) {
      const PlanResult pr = plan(obs_row(obs), m.rssm, m.sac,
                                 plan_config_from(cfg, cfg.h_max, vm), plan_rng);
      for (size_t it = 0; it < pr.elite_returns.size(); ++it) {
        const nlohmann::json j = {{"episode", e},
                                  {"step", t},
                                  {"iteration", it},
                                  {"elite_returns", pr.elite_returns[it]},
                                  {"chosen_action", {pr.action.x, pr.action.y}}};
        os << j.dump() << "\n";
      }
      obs = env.step(pr.action).obs;
      ++t;
    }
  }
}

}  // namespace aesmpfp
