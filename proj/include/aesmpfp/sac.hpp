#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "envsim.hpp"
#include "nn.hpp"

namespace aesmpfp {

struct SacConfig {
  size_t hidden = 256;
  double gamma = 0.99;
  double tau = 0.005;            // Polyak rate: target = (1-tau)*target + tau*online
  double target_entropy = -2.0;  // -dim(A)
  double action_scale = 0.3;     // v_max
  double log_sigma_min = -5.0;
  double log_sigma_max = 2.0;
  size_t obs_dim = kMapCells + kObsVecDim;
  size_t action_dim = 2;
};

struct PolicyOutput {
  Tensor mu;         // (B, A) pre-squash mean
  Tensor log_sigma;  // (B, A) clamped
  Tensor action;     // (B, A) squashed and scaled
};

struct SacBatch {
  Tensor obs;       // (B, obs_dim)
  Tensor action;    // (B, A)
  Tensor reward;    // (B, 1)
  Tensor next_obs;  // (B, obs_dim)
  Tensor done;      // (B, 1) of 0/1; 1 only for true environment terminals
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha = 0.0;      // current temperature
  double mean_logpi = 0.0;
};

namespace sac_detail {
constexpr double kHalfLog2Pi = 0.91893853320467274;  // 0.5*log(2*pi)
constexpr double kSquashEps = 1e-6;
}  // namespace sac_detail

// Soft actor-critic over raw observation rows. The goal is already embedded
// in the observation vector, so no separate goal input exists.
class Sac {
 public:
  Sac(const SacConfig& cfg, RngStream& rng)
      : cfg_(cfg),
        actor_("sac/actor", cfg.obs_dim, {cfg.hidden, cfg.hidden},
               2 * cfg.action_dim, rng),
        q1_("sac/q1", cfg.obs_dim + cfg.action_dim, {cfg.hidden, cfg.hidden}, 1, rng),
        q2_("sac/q2", cfg.obs_dim + cfg.action_dim, {cfg.hidden, cfg.hidden}, 1, rng),
        q1_target_("sac/q1_target", cfg.obs_dim + cfg.action_dim,
                   {cfg.hidden, cfg.hidden}, 1, rng),
        q2_target_("sac/q2_target", cfg.obs_dim + cfg.action_dim,
                   {cfg.hidden, cfg.hidden}, 1, rng),
        log_alpha_("sac/log_alpha", Tensor::zeros({1})),
        opt_actor_(collect(actor_)),
        opt_critic_(collect_critics()),
        opt_alpha_({&log_alpha_}) {
    copy_params(q1_, q1_target_);
    copy_params(q2_, q2_target_);
  }

  // The optimizers hold pointers into the member networks, so the model must
  // stay where it was constructed.
  Sac(const Sac&) = delete;
  Sac& operator=(const Sac&) = delete;

  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_.value[0]); }

  std::vector<ParamBlock> blocks() {
    std::vector<ParamBlock> bs(6);
    bs[0].name = "sac/actor";
    actor_.collect(bs[0].params);
    bs[1].name = "sac/q1";
    q1_.collect(bs[1].params);
    bs[2].name = "sac/q2";
    q2_.collect(bs[2].params);
    bs[3].name = "sac/q1_target";
    q1_target_.collect(bs[3].params);
    bs[4].name = "sac/q2_target";
    q2_target_.collect(bs[4].params);
    bs[5].name = "sac/log_alpha";
    bs[5].params.push_back(&log_alpha_);
    return bs;
  }

  // --- inference ------------------------------------------------------------

  enum class ActMode { Sample, Mean };

  PolicyOutput act(const Tensor& obs_rows, ActMode mode, RngStream* rng = nullptr) const {
    PolicyOutput out = policy_dist(obs_rows);
    const size_t n = out.mu.numel();
    out.action = out.mu;
    if (mode == ActMode::Sample) {
      if (!rng) throw Error("sac: sampling requires an rng");
      for (size_t i = 0; i < n; ++i)
        out.action[i] = out.mu[i] + std::exp(out.log_sigma[i]) * rng->normal();
    }
    for (size_t i = 0; i < n; ++i)
      out.action[i] = cfg_.action_scale * std::tanh(out.action[i]);
    if (!all_finite(out.action.data(), n)) throw NonFiniteValue("sac: action");
    return out;
  }

  Vec2 act_one(const Observation& o, ActMode mode, RngStream* rng = nullptr) const {
    Tensor row({1, cfg_.obs_dim});
    for (size_t i = 0; i < kMapCells; ++i) row[i] = o.map[i];
    for (size_t i = 0; i < kObsVecDim; ++i) row[kMapCells + i] = o.vec[i];
    const PolicyOutput p = act(row, mode, rng);
    return {p.action[0], p.action[1]};
  }

  // Min over both target critics, used for TD targets.
  Tensor q_target_min(const Tensor& obs_rows, const Tensor& actions) const {
    Tensor x = fast::concat_cols(obs_rows, actions);
    Tensor qa = q1_target_.forward(x);
    Tensor qb = q2_target_.forward(x);
    for (size_t i = 0; i < qa.numel(); ++i) qa[i] = std::min(qa[i], qb[i]);
    return qa;
  }

  // Min over both online critics, used by the planner's terminal value.
  Tensor q_min(const Tensor& obs_rows, const Tensor& actions) const {
    Tensor x = fast::concat_cols(obs_rows, actions);
    Tensor qa = q1_.forward(x);
    Tensor qb = q2_.forward(x);
    for (size_t i = 0; i < qa.numel(); ++i) qa[i] = std::min(qa[i], qb[i]);
    return qa;
  }

  // --- training -------------------------------------------------------------

  SacLosses update(const SacBatch& batch, double lr, RngStream& noise_rng) {
    const size_t B = batch.obs.rows();
    if (batch.next_obs.rows() != B || batch.action.rows() != B ||
        batch.reward.rows() != B || batch.done.rows() != B)
      throw ShapeMismatch("sac: batch rows disagree");
    SacLosses out;
    out.alpha = alpha();

    // TD target from the frozen target critics (no gradients involved).
    Tensor y = batch.reward;
    {
      Tensor noise({B, cfg_.action_dim});
      for (size_t i = 0; i < noise.numel(); ++i) noise[i] = noise_rng.normal();
      Tensor next_logpi;
      Tensor next_a = sample_with_logprob(batch.next_obs, noise, nullptr, &next_logpi);
      Tensor qt = q_target_min(batch.next_obs, next_a);
      const double a = out.alpha;
      for (size_t b = 0; b < B; ++b)
        y.at2(b, 0) = batch.reward.at2(b, 0) +
                      cfg_.gamma * (1.0 - batch.done.at2(b, 0)) *
                          (qt.at2(b, 0) - a * next_logpi.at2(b, 0));
    }

    // Critic step.
    {
      Tape t;
      Var x = t.constant(fast::concat_cols(batch.obs, batch.action));
      Var l1 = t.mean_all(t.mse(q1_(t, x), y));
      Var l2 = t.mean_all(t.mse(q2_(t, x), y));
      Var loss = t.add(l1, l2);
      out.critic = t.value(loss).value();
      opt_critic_.zero_grad();
      t.backward(loss);
      opt_critic_.step(lr);
    }

    // Actor step (critic gradients are discarded: only the actor optimizer steps).
    double mean_logpi = 0.0;
    {
      Tensor noise({B, cfg_.action_dim});
      for (size_t i = 0; i < noise.numel(); ++i) noise[i] = noise_rng.normal();
      Tape t;
      Var obs = t.constant(batch.obs);
      auto [a_var, logpi_var] = sample_with_logprob_taped(t, obs, noise);
      Var x = t.concat_cols(obs, a_var);
      Var q = t.minimum(q1_(t, x), q2_(t, x));
      Var loss = t.mean_all(t.sub(t.scale(logpi_var, out.alpha), q));
      out.actor = t.value(loss).value();
      mean_logpi = t.value(t.mean_all(logpi_var)).value();
      opt_actor_.zero_grad();
      t.backward(loss);
      opt_actor_.step(lr);
    }
    out.mean_logpi = mean_logpi;

    // Temperature step in log space: dL/dlog_alpha = -alpha*(E[logpi] + H_target).
    opt_alpha_.zero_grad();
    log_alpha_.grad[0] = -out.alpha * (mean_logpi + cfg_.target_entropy);
    opt_alpha_.step(lr);

    polyak(q1_, q1_target_);
    polyak(q2_, q2_target_);
    return out;
  }

 private:
  PolicyOutput policy_dist(const Tensor& obs_rows) const {
    Tensor out = actor_.forward(obs_rows);
    PolicyOutput p;
    p.mu = fast::slice_cols(out, 0, cfg_.action_dim);
    p.log_sigma = fast::slice_cols(out, cfg_.action_dim, cfg_.action_dim);
    for (size_t i = 0; i < p.log_sigma.numel(); ++i)
      p.log_sigma[i] = clip(p.log_sigma[i], cfg_.log_sigma_min, cfg_.log_sigma_max);
    return p;
  }

  // a = scale*tanh(mu + sigma*eps); log pi under the squashed Gaussian.
  Tensor sample_with_logprob(const Tensor& obs_rows, const Tensor& noise,
                             Tensor* u_out, Tensor* logpi_out) const {
    using namespace sac_detail;
    const PolicyOutput p = policy_dist(obs_rows);
    const size_t B = p.mu.rows(), A = cfg_.action_dim;
    Tensor a({B, A});
    Tensor logpi({B, 1});
    for (size_t b = 0; b < B; ++b) {
      double lp = 0.0;
      for (size_t i = 0; i < A; ++i) {
        const double ls = p.log_sigma.at2(b, i);
        const double eps = noise.at2(b, i);
        const double u = p.mu.at2(b, i) + std::exp(ls) * eps;
        const double th = std::tanh(u);
        a.at2(b, i) = cfg_.action_scale * th;
        lp += -0.5 * eps * eps - ls - kHalfLog2Pi;
        lp -= std::log(cfg_.action_scale) + std::log(1.0 - th * th + kSquashEps);
        if (u_out) u_out->at2(b, i) = u;
      }
      logpi.at2(b, 0) = lp;
    }
    if (logpi_out) *logpi_out = logpi;
    return a;
  }

  std::pair<Var, Var> sample_with_logprob_taped(Tape& t, Var obs, const Tensor& noise) {
    using namespace sac_detail;
    Var out = actor_(t, obs);
    Var mu = t.slice_cols(out, 0, cfg_.action_dim);
    Var ls_raw = t.slice_cols(out, cfg_.action_dim, 2 * cfg_.action_dim);
    // clamp to [min, max]: max(x, lo) then -max(-x, -hi)
    Var ls = t.clamp_min(ls_raw, cfg_.log_sigma_min);
    ls = t.scale(t.clamp_min(t.scale(ls, -1.0), -cfg_.log_sigma_max), -1.0);
    Var sigma = t.exp(ls);
    Var u = gaussian_sample(t, mu, sigma, noise);
    Var th = t.tanh(u);
    Var a = t.scale(th, cfg_.action_scale);

    // log N(u; mu, sigma) written in terms of the constant noise eps
    Tensor eps_sq = noise;
    for (size_t i = 0; i < eps_sq.numel(); ++i) eps_sq[i] = -0.5 * eps_sq[i] * eps_sq[i];
    Var log_n = t.add(t.constant(eps_sq), t.scale(ls, -1.0));
    // squash correction per dim: log(scale) + log(1 - tanh^2 + eps)
    Var squash = t.log(t.affine_const(t.square(th), -1.0, 1.0 + kSquashEps));
    Var per_dim = t.sub(log_n, squash);
    Var logpi = t.row_sum(per_dim);
    const double c = cfg_.action_dim *
                     (-kHalfLog2Pi - std::log(cfg_.action_scale));
    logpi = t.affine_const(logpi, 1.0, c);
    return {a, logpi};
  }

  static std::vector<Param*> collect(Mlp& m) {
    std::vector<Param*> ps;
    m.collect(ps);
    return ps;
  }

  std::vector<Param*> collect_critics() {
    std::vector<Param*> ps;
    q1_.collect(ps);
    q2_.collect(ps);
    return ps;
  }

  static void copy_params(Mlp& src, Mlp& dst) {
    std::vector<Param*> s, d;
    src.collect(s);
    dst.collect(d);
    for (size_t i = 0; i < s.size(); ++i) d[i]->value = s[i]->value;
  }

  void polyak(Mlp& online, Mlp& target) {
    std::vector<Param*> o, tg;
    online.collect(o);
    target.collect(tg);
    for (size_t i = 0; i < o.size(); ++i)
      for (size_t j = 0; j < o[i]->value.numel(); ++j)
        tg[i]->value[j] =
            (1.0 - cfg_.tau) * tg[i]->value[j] + cfg_.tau * o[i]->value[j];
  }

  SacConfig cfg_;
  Mlp actor_;
  Mlp q1_, q2_;
  Mlp q1_target_, q2_target_;
  Param log_alpha_;
  Adam opt_actor_, opt_critic_, opt_alpha_;
};

}  // namespace aesmpfp
