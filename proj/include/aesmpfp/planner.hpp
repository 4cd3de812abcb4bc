#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <thread>
#include <vector>

#include "rssm.hpp"
#include "sac.hpp"

namespace aesmpfp {

// Linear horizon ramp with round-half-up; evaluation always plans at the
// full horizon.
inline size_t horizon_schedule(size_t step, size_t total_steps, size_t h_min = 1,
                               size_t h_max = 8, bool eval = false) {
  if (eval || total_steps == 0) return h_max;
  if (step > total_steps) throw ConfigError("horizon_schedule: step > total");
  const double f = static_cast<double>(step) / static_cast<double>(total_steps);
  const double h = static_cast<double>(h_min) +
                   (static_cast<double>(h_max) - static_cast<double>(h_min)) * f;
  return static_cast<size_t>(std::floor(h + 0.5));
}

// H-step discounted return with a terminal value bootstrap:
//   sum_k gamma^k r_k + gamma^H * q
inline double cem_return(const std::vector<double>& rewards, double terminal_q,
                         double gamma) {
  double value = 0.0, g = 1.0;
  for (double r : rewards) {
    value += g * r;
    g *= gamma;
  }
  return value + g * terminal_q;
}

enum class ImagineMode { DecodeReencode, LatentPrior };

struct ImaginedBatch {
  std::vector<std::vector<double>> rewards;  // [candidate][step]
  Tensor final_obs_rows;                     // (L, obs_dim) decoded observations
};

// Unrolls the model over a batch of candidate action sequences. Latents are
// advanced with the posterior mean of the re-encoded decoded observation
// (default) or with the prior head; prior_noise, when given, supplies one
// shared noise row per step so every candidate sees identical draws.
inline ImaginedBatch imagine_rollout(const Rssm& rssm, Tensor h, Tensor z,
                                     const std::vector<Tensor>& actions,
                                     ImagineMode mode,
                                     const std::vector<Tensor>* prior_noise = nullptr) {
  const size_t H = actions.size();
  if (H == 0) throw ConfigError("imagine_rollout: empty action sequence");
  const size_t L = h.rows();
  if (z.rows() != L) throw ShapeMismatch("imagine_rollout: h/z rows disagree");

  ImaginedBatch out;
  out.rewards.assign(L, {});
  Tensor obs_rows;
  for (size_t k = 0; k < H; ++k) {
    if (actions[k].rows() != L) throw ShapeMismatch("imagine_rollout: action rows");
    h = rssm.dynamics(h, z, actions[k]);
    const DecodedBatch dec = rssm.decode(h);
    for (size_t c = 0; c < L; ++c) out.rewards[c].push_back(dec.reward.at2(c, 0));
    obs_rows = fast::concat_cols(dec.map_probs, dec.vec);
    if (k + 1 == H) break;
    if (mode == ImagineMode::DecodeReencode) {
      z = rssm.encode_dist(obs_rows).mu;
    } else {
      const GaussBatch prior = rssm.prior_dist(h);
      if (prior_noise) {
        const Tensor& eps = (*prior_noise)[k];
        z = prior.mu;
        for (size_t c = 0; c < L; ++c)
          for (size_t i = 0; i < z.cols(); ++i)
            z.at2(c, i) = prior.mu.at2(c, i) + prior.sigma.at2(c, i) * eps[i];
      } else {
        z = prior.mu;
      }
    }
  }
  out.final_obs_rows = obs_rows;
  return out;
}

// Terminal value for one batch of final imagined observations: the critic
// evaluated at the actor's mean action, per Eq-8-style bootstrapping.
inline Tensor terminal_values(const Sac& sac, const Tensor& final_obs_rows) {
  const PolicyOutput pol = sac.act(final_obs_rows, Sac::ActMode::Mean);
  return sac.q_min(final_obs_rows, pol.action);
}

inline double score_candidate(const std::vector<double>& rewards,
                              const Tensor& final_obs_row, const Sac& sac,
                              double gamma) {
  const double q = terminal_values(sac, final_obs_row).value();
  return cem_return(rewards, q, gamma);
}

struct PlanConfig {
  size_t H = 8;
  size_t L = 50;           // candidates per iteration
  size_t K = 10;           // elites
  size_t iters = 4;
  double gamma = 0.99;
  double sigma_floor = 0.05;
  double action_limit = 0.3;
  ImagineMode mode = ImagineMode::DecodeReencode;

  void validate() const {
    if (H == 0) throw ConfigError("plan: H must be >= 1");
    if (K == 0 || K > L) throw ConfigError("plan: need 1 <= K <= L");
    if (iters == 0) throw ConfigError("plan: need at least one iteration");
    if (sigma_floor < 0.0) throw ConfigError("plan: negative sigma floor");
  }
};

struct CemState {
  Tensor mu;     // (H, A)
  Tensor sigma;  // (H, A)
  std::vector<double> elite_returns;
};

struct PlanResult {
  Vec2 action;
  std::vector<std::vector<double>> elite_returns;  // per iteration, sorted desc
  Tensor final_mu;                                 // (H, A)
};

// candidates[k] is the (L, A) action tensor for step k; returns L scores.
using CandidateScorer =
    std::function<std::vector<double>(const std::vector<Tensor>&)>;

namespace plan_detail {

inline size_t rollout_threads() {
  const char* env = std::getenv("AESMPFP_THREADS");
  if (!env) return 1;
  const long v = std::atol(env);
  return v < 1 ? 1 : static_cast<size_t>(v);
}

}  // namespace plan_detail

// Generic CEM loop: sample candidates around (mu, sigma) with clipping,
// score, select top-K (ties break toward the lower candidate index), refit.
// Previous elites are re-injected as the first K candidates of the next
// iteration, so with a deterministic scorer the mean elite return never
// decreases.
inline PlanResult cem_optimize(CemState st, const PlanConfig& cfg, RngStream& rng,
                               const CandidateScorer& scorer) {
  cfg.validate();
  const size_t H = st.mu.rows(), A = st.mu.cols();
  if (H != cfg.H) throw ShapeMismatch("cem: state horizon mismatch");

  std::vector<std::vector<Tensor>> elites;  // [K] of [H] rows (1, A)
  PlanResult result;
  for (size_t iter = 0; iter < cfg.iters; ++iter) {
    std::vector<Tensor> cand(cfg.H, Tensor({cfg.L, A}));
    for (size_t c = 0; c < cfg.L; ++c) {
      const bool carried = iter > 0 && c < elites.size();
      for (size_t k = 0; k < cfg.H; ++k)
        for (size_t d = 0; d < A; ++d) {
          const double v = carried
                               ? elites[c][k].at2(0, d)
                               : st.mu.at2(k, d) + st.sigma.at2(k, d) * rng.normal();
          cand[k].at2(c, d) = clip(v, -cfg.action_limit, cfg.action_limit);
        }
    }

    const std::vector<double> scores = scorer(cand);
    if (scores.size() != cfg.L) throw ShapeMismatch("cem: scorer output length");
    for (double s : scores)
      if (!std::isfinite(s)) throw NonFiniteValue("cem: candidate score");

    std::vector<size_t> order(cfg.L);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    elites.assign(cfg.K, std::vector<Tensor>(cfg.H, Tensor({1, A})));
    st.elite_returns.assign(cfg.K, 0.0);
    for (size_t e = 0; e < cfg.K; ++e) {
      const size_t c = order[e];
      st.elite_returns[e] = scores[c];
      for (size_t k = 0; k < cfg.H; ++k)
        for (size_t d = 0; d < A; ++d) elites[e][k].at2(0, d) = cand[k].at2(c, d);
    }
    result.elite_returns.push_back(st.elite_returns);

    for (size_t k = 0; k < cfg.H; ++k)
      for (size_t d = 0; d < A; ++d) {
        double mean = 0.0;
        for (size_t e = 0; e < cfg.K; ++e) mean += elites[e][k].at2(0, d);
        mean /= static_cast<double>(cfg.K);
        double var = 0.0;
        for (size_t e = 0; e < cfg.K; ++e) {
          const double dv = elites[e][k].at2(0, d) - mean;
          var += dv * dv;
        }
        const double sd =
            cfg.K > 1 ? std::sqrt(var / static_cast<double>(cfg.K - 1)) : 0.0;
        st.mu.at2(k, d) = clip(mean, -cfg.action_limit, cfg.action_limit);
        st.sigma.at2(k, d) = std::max(sd, cfg.sigma_floor);
      }
  }

  result.action = {st.mu.at2(0, 0), st.mu.at2(0, 1)};
  result.final_mu = st.mu;
  return result;
}

// Seeds the CEM distribution by rolling the actor's mean action through an
// imagination pass; sigma starts from the actor's predicted spread.
inline CemState init_distribution(const Tensor& obs_row, const Rssm& rssm,
                                  const Sac& sac, const PlanConfig& cfg) {
  cfg.validate();
  const size_t A = 2;
  CemState st;
  st.mu = Tensor({cfg.H, A});
  st.sigma = Tensor({cfg.H, A});
  Tensor h = Tensor::zeros({1, rssm.config().d_h});
  Tensor z = rssm.encode_dist(obs_row).mu;
  Tensor obs = obs_row;
  for (size_t k = 0; k < cfg.H; ++k) {
    const PolicyOutput pol = sac.act(obs, Sac::ActMode::Mean);
    for (size_t d = 0; d < A; ++d) {
      st.mu.at2(k, d) = pol.action.at2(0, d);
      st.sigma.at2(k, d) =
          std::max(std::exp(pol.log_sigma.at2(0, d)), cfg.sigma_floor);
    }
    if (k + 1 == cfg.H) break;
    Tensor a({1, A});
    a[0] = st.mu.at2(k, 0);
    a[1] = st.mu.at2(k, 1);
    h = rssm.dynamics(h, z, a);
    const DecodedBatch dec = rssm.decode(h);
    obs = fast::concat_cols(dec.map_probs, dec.vec);
    z = cfg.mode == ImagineMode::DecodeReencode ? rssm.encode_dist(obs).mu
                                                : rssm.prior_dist(h).mu;
  }
  return st;
}

// Full planner: CEM over imagined rollouts, scored by discounted imagined
// reward plus the critic bootstrap at the final decoded observation. Returns
// the first action of the converged mean. Candidate rollouts are independent
// row computations; AESMPFP_THREADS > 1 splits them into index-contiguous
// chunks whose results are identical to the single-threaded evaluation.
inline PlanResult plan(const Tensor& obs_row, const Rssm& rssm, const Sac& sac,
                       const PlanConfig& cfg, RngStream& rng) {
  cfg.validate();
  CemState st = init_distribution(obs_row, rssm, sac, cfg);

  std::vector<Tensor> prior_noise;
  if (cfg.mode == ImagineMode::LatentPrior) {
    for (size_t k = 0; k + 1 < cfg.H; ++k) {
      Tensor eps({1, rssm.config().d_z});
      for (size_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
      prior_noise.push_back(eps);
    }
  }

  const Tensor z0_row = rssm.encode_dist(obs_row).mu;

  auto score_chunk = [&](const std::vector<Tensor>& cand, size_t lo, size_t hi,
                         std::vector<double>& out) {
    const size_t n = hi - lo;
    Tensor h = Tensor::zeros({n, rssm.config().d_h});
    Tensor z({n, rssm.config().d_z});
    for (size_t c = 0; c < n; ++c)
      for (size_t i = 0; i < z.cols(); ++i) z.at2(c, i) = z0_row[i];
    std::vector<Tensor> acts(cfg.H, Tensor({n, 2}));
    for (size_t k = 0; k < cfg.H; ++k)
      for (size_t c = 0; c < n; ++c) {
        acts[k].at2(c, 0) = cand[k].at2(lo + c, 0);
        acts[k].at2(c, 1) = cand[k].at2(lo + c, 1);
      }
    const ImaginedBatch im =
        imagine_rollout(rssm, h, z, acts, cfg.mode,
                        prior_noise.empty() ? nullptr : &prior_noise);
    const Tensor q = terminal_values(sac, im.final_obs_rows);
    for (size_t c = 0; c < n; ++c)
      out[lo + c] = cem_return(im.rewards[c], q.at2(c, 0), cfg.gamma);
  };

  CandidateScorer scorer = [&](const std::vector<Tensor>& cand) {
    std::vector<double> scores(cfg.L);
    const size_t threads = std::min(plan_detail::rollout_threads(), cfg.L);
    if (threads <= 1) {
      score_chunk(cand, 0, cfg.L, scores);
      return scores;
    }
    std::vector<std::thread> pool;
    const size_t per = (cfg.L + threads - 1) / threads;
    for (size_t t = 0; t < threads; ++t) {
      const size_t lo = t * per, hi = std::min(cfg.L, lo + per);
      if (lo >= hi) break;
      pool.emplace_back(score_chunk, std::cref(cand), lo, hi, std::ref(scores));
    }
    for (std::thread& th : pool) th.join();
    return scores;
  };

  return cem_optimize(std::move(st), cfg, rng, scorer);
}

}  // namespace aesmpfp
