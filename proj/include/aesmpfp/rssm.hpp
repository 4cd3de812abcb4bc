#pragma once

#include <string>
#include <vector>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "envsim.hpp"
#include "nn.hpp"

namespace aesmpfp {

struct RssmConfig {
  size_t d_h = 128;        // deterministic recurrent state width
  size_t d_z = 32;         // stochastic latent width
  size_t hidden = 256;     // dense stack width
  size_t pool_block = 1;   // map average-pool factor; must divide the map side
  double beta_kl = 0.1;
  double free_bits = 1.0;  // total nats across the latent dims
  size_t burn_in = 4;      // leading transitions initialize h, excluded from loss
  double sigma_min = 0.1;
  size_t action_dim = 2;
  Act activation = Act::Relu;

  size_t pooled_side() const { return kMapSide / pool_block; }
  size_t pooled_cells() const { return pooled_side() * pooled_side(); }
  size_t obs_dim() const { return kMapCells + kObsVecDim; }
  size_t enc_in() const { return pooled_cells() + kObsVecDim; }

  void validate() const {
    if (pool_block == 0 || kMapSide % pool_block != 0)
      throw ConfigError("rssm: pool_block must divide the map side");
    if (d_h == 0 || d_z == 0 || hidden == 0)
      throw ConfigError("rssm: zero-sized layer");
  }
};

struct GaussBatch {
  Tensor mu;     // (B, d_z)
  Tensor sigma;  // (B, d_z)
};

struct DecodedBatch {
  Tensor map_logits;  // (B, 900), pre-sigmoid
  Tensor map_probs;   // (B, 900), in [0,1]
  Tensor vec;         // (B, 14)
  Tensor reward;      // (B, 1)
};

// Time-major padded fragment batch. obs has one more entry than the
// per-transition fields; mask[t](b,0) = 1 marks a real transition and padding
// must be a suffix.
struct FragmentBatch {
  std::vector<Tensor> obs;      // W+1 of (B, obs_dim)
  std::vector<Tensor> actions;  // W of (B, action_dim)
  std::vector<Tensor> rewards;  // W of (B, 1)
  std::vector<Tensor> mask;     // W of (B, 1)
};

struct RssmTrainResult {
  double loss = 0.0;  // mean over scored transitions
  // per_transition[b] holds one total loss per real transition of fragment b
  std::vector<std::vector<double>> per_transition;
};

// Flattens an Observation into one (1, 900 + 14) feature row.
inline Tensor obs_row(const Observation& o) {
  Tensor r({1, kMapCells + kObsVecDim});
  for (size_t i = 0; i < kMapCells; ++i) r[i] = o.map[i];
  for (size_t i = 0; i < kObsVecDim; ++i) r[kMapCells + i] = o.vec[i];
  return r;
}

// Recurrent state-space model: encoder -> posterior z, GRU dynamics over
// [z, a], prior head for the KL target, observation and reward heads off h.
class Rssm {
 public:
  Rssm(const RssmConfig& cfg, RngStream& rng)
      : cfg_(validated(cfg)),
        encoder_("rssm/encoder", cfg_.enc_in(), {cfg_.hidden, cfg_.hidden},
                 2 * cfg_.d_z, rng, cfg_.activation),
        gru_("rssm/dynamics", cfg_.d_z + cfg_.action_dim, cfg_.d_h, rng),
        prior_("rssm/prior", cfg_.d_h, {cfg_.hidden}, 2 * cfg_.d_z, rng,
               cfg_.activation),
        obs_head_("rssm/obs_head", cfg_.d_h, {cfg_.hidden, cfg_.hidden},
                  cfg_.enc_in(), rng, cfg_.activation),
        reward_head_("rssm/reward_head", cfg_.d_h, {cfg_.hidden}, 1, rng,
                     cfg_.activation),
        opt_(all_params()) {}

  // The optimizer holds pointers into the member networks, so the model must
  // stay where it was constructed.
  Rssm(const Rssm&) = delete;
  Rssm& operator=(const Rssm&) = delete;

  const RssmConfig& config() const { return cfg_; }

  std::vector<Param*> all_params() {
    std::vector<Param*> ps;
    encoder_.collect(ps);
    gru_.collect(ps);
    prior_.collect(ps);
    obs_head_.collect(ps);
    reward_head_.collect(ps);
    return ps;
  }

  std::vector<ParamBlock> blocks() {
    std::vector<ParamBlock> bs(5);
    bs[0].name = "rssm/encoder";
    encoder_.collect(bs[0].params);
    bs[1].name = "rssm/dynamics";
    gru_.collect(bs[1].params);
    bs[2].name = "rssm/prior";
    prior_.collect(bs[2].params);
    bs[3].name = "rssm/obs_head";
    obs_head_.collect(bs[3].params);
    bs[4].name = "rssm/reward_head";
    reward_head_.collect(bs[4].params);
    return bs;
  }

  // --- fast inference (no gradients) ---------------------------------------
  // Mirrors the taped path operation-for-operation so both produce identical
  // bits for identical inputs.

  GaussBatch encode_dist(const Tensor& obs_rows) const {
    Tensor x = encoder_input(obs_rows);
    Tensor out = encoder_.forward(x);
    return split_gauss(out);
  }

  static Tensor sample(const GaussBatch& g, const Tensor& noise) {
    Tensor z = g.mu;
    for (size_t i = 0; i < z.numel(); ++i) z[i] = g.mu[i] + g.sigma[i] * noise[i];
    return z;
  }

  Tensor dynamics(const Tensor& h, const Tensor& z, const Tensor& a) const {
    return gru_.forward(fast::concat_cols(z, a), h);
  }

  GaussBatch prior_dist(const Tensor& h) const {
    return split_gauss(prior_.forward(h));
  }

  DecodedBatch decode(const Tensor& h) const {
    Tensor out = obs_head_.forward(h);
    DecodedBatch d;
    d.map_logits = fast::slice_cols(out, 0, cfg_.pooled_cells());
    if (cfg_.pool_block > 1)
      d.map_logits = fast::upsample(d.map_logits, cfg_.pooled_side(), cfg_.pool_block);
    d.map_probs = d.map_logits;
    fast::sigmoid_(d.map_probs);
    d.vec = fast::slice_cols(out, cfg_.pooled_cells(), kObsVecDim);
    d.reward = reward_head_.forward(h);
    return d;
  }

  // --- taped graph pieces ---------------------------------------------------

  std::pair<Var, Var> encode_taped(Tape& t, Var obs) {
    Var map = t.slice_cols(obs, 0, kMapCells);
    Var vec = t.slice_cols(obs, kMapCells, cfg_.obs_dim());
    if (cfg_.pool_block > 1) map = t.avg_pool(map, kMapSide, cfg_.pool_block);
    Var out = encoder_(t, t.concat_cols(map, vec));
    return split_gauss_taped(t, out);
  }

  std::pair<Var, Var> prior_taped(Tape& t, Var h) {
    return split_gauss_taped(t, prior_(t, h));
  }

  Var dynamics_taped(Tape& t, Var h, Var z, Var a) {
    return gru_(t, t.concat_cols(z, a), h);
  }

  // Returns (map logits over the full grid, vec prediction, reward prediction).
  std::tuple<Var, Var, Var> decode_taped(Tape& t, Var h) {
    Var out = obs_head_(t, h);
    Var logits = t.slice_cols(out, 0, cfg_.pooled_cells());
    if (cfg_.pool_block > 1)
      logits = t.upsample(logits, cfg_.pooled_side(), cfg_.pool_block);
    Var vec = t.slice_cols(out, cfg_.pooled_cells(), cfg_.enc_in());
    Var reward = reward_head_(t, h);
    return {logits, vec, reward};
  }

  // Builds the full unrolled loss on the tape; shared by training and the
  // gradient-check harness. Appends the (B,1) per-transition loss values to
  // loss_rows when provided.
  Var build_loss(Tape& t, const FragmentBatch& batch, RngStream& noise_rng,
                 std::vector<Tensor>* loss_rows = nullptr) {
    const size_t W = batch.actions.size();
    if (batch.obs.size() != W + 1 || batch.rewards.size() != W ||
        batch.mask.size() != W || W == 0)
      throw ShapeMismatch("rssm: fragment batch field lengths disagree");
    const size_t B = batch.obs[0].rows();

    const std::vector<size_t> lengths = mask_lengths(batch);
    size_t n_scored = 0;
    std::vector<Tensor> scored(W, Tensor::zeros({B, 1}));
    for (size_t b = 0; b < B; ++b) {
      if (lengths[b] == 0) continue;
      const size_t burn = std::min(cfg_.burn_in, lengths[b] - 1);
      for (size_t k = burn; k < lengths[b]; ++k) {
        scored[k].at2(b, 0) = 1.0;
        ++n_scored;
      }
    }

    Var h = t.constant(Tensor::zeros({B, cfg_.d_h}));
    Var total = t.constant(Tensor::zeros({}));
    for (size_t k = 0; k < W; ++k) {
      auto [mu, sigma] = encode_taped(t, t.constant(batch.obs[k]));
      Var z = gaussian_sample(t, mu, sigma, make_normal({B, cfg_.d_z}, noise_rng));
      auto [pmu, psigma] = prior_taped(t, h);
      Var kl = t.kl_diag(mu, sigma, pmu, psigma);
      if (cfg_.free_bits > 0.0)
        kl = t.clamp_min(kl, cfg_.free_bits / static_cast<double>(cfg_.d_z));
      Var kl_row = t.row_sum(kl);

      h = dynamics_taped(t, h, z, t.constant(batch.actions[k]));
      auto [logits, vec_pred, rew_pred] = decode_taped(t, h);
      const Tensor& next = batch.obs[k + 1];
      Var bce_row = t.row_sum(t.bce_logits(logits, fast::slice_cols(next, 0, kMapCells)));
      Var vec_row = t.row_sum(t.mse(vec_pred, fast::slice_cols(next, kMapCells, kObsVecDim)));
      Var rew_row = t.mse(rew_pred, batch.rewards[k]);
      Var loss_row = t.add(t.add(bce_row, vec_row),
                           t.add(rew_row, t.scale(kl_row, cfg_.beta_kl)));
      if (loss_rows) loss_rows->push_back(t.value(loss_row));
      total = t.add(total, t.sum_all(t.mul(loss_row, t.constant(scored[k]))));
    }
    return t.scale(total, 1.0 / static_cast<double>(std::max<size_t>(1, n_scored)));
  }

  RssmTrainResult train_step(const FragmentBatch& batch, double lr,
                             RngStream& noise_rng) {
    Tape t;
    std::vector<Tensor> loss_rows;
    Var loss = build_loss(t, batch, noise_rng, &loss_rows);
    const double loss_value = t.value(loss).value();
    if (!std::isfinite(loss_value))
      throw NonFiniteValue("rssm: non-finite training loss");
    opt_.zero_grad();
    t.backward(loss);
    opt_.step(lr);

    RssmTrainResult res;
    res.loss = loss_value;
    const std::vector<size_t> lengths = mask_lengths(batch);
    res.per_transition.resize(lengths.size());
    for (size_t b = 0; b < lengths.size(); ++b)
      for (size_t k = 0; k < lengths[b]; ++k)
        res.per_transition[b].push_back(loss_rows[k].at2(b, 0));
    return res;
  }

  // Deterministic per-transition losses for one episode (z = posterior mean;
  // no noise, no parameter update). open_loop switches to the prior mean after
  // burn-in so prior-only rollouts can be compared against posterior ones.
  std::vector<double> episode_losses(const std::vector<Tensor>& obs_rows,
                                     const std::vector<Vec2>& actions,
                                     const std::vector<double>& rewards,
                                     bool open_loop = false) const {
    const size_t T = actions.size();
    if (obs_rows.size() != T + 1 || rewards.size() != T)
      throw ShapeMismatch("rssm: episode field lengths disagree");
    std::vector<double> losses;
    losses.reserve(T);
    Tensor h = Tensor::zeros({1, cfg_.d_h});
    const double fb = cfg_.free_bits / static_cast<double>(cfg_.d_z);
    for (size_t k = 0; k < T; ++k) {
      const GaussBatch post = encode_dist(obs_rows[k]);
      const GaussBatch prior = prior_dist(h);
      double kl_sum = 0.0;
      for (size_t i = 0; i < cfg_.d_z; ++i) {
        const double dm = post.mu[i] - prior.mu[i];
        const double s1 = post.sigma[i], s2 = prior.sigma[i];
        double kl = std::log(s2 / s1) + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
        if (cfg_.free_bits > 0.0) kl = std::max(kl, fb);
        kl_sum += kl;
      }
      const Tensor& z = (open_loop && k >= cfg_.burn_in) ? prior.mu : post.mu;
      Tensor a({1, 2});
      a[0] = actions[k].x;
      a[1] = actions[k].y;
      h = dynamics(h, z, a);
      const DecodedBatch dec = decode(h);
      double bce = 0.0, vec_mse = 0.0;
      const Tensor& next = obs_rows[k + 1];
      for (size_t i = 0; i < kMapCells; ++i) {
        const double zl = dec.map_logits[i], tgt = next[i];
        bce += std::max(zl, 0.0) - zl * tgt + std::log1p(std::exp(-std::abs(zl)));
      }
      for (size_t i = 0; i < kObsVecDim; ++i) {
        const double d = dec.vec[i] - next[kMapCells + i];
        vec_mse += d * d;
      }
      const double dr = dec.reward[0] - rewards[k];
      losses.push_back(bce + vec_mse + dr * dr + cfg_.beta_kl * kl_sum);
    }
    return losses;
  }

 private:
  static RssmConfig validated(RssmConfig cfg) {
    cfg.validate();
    return cfg;
  }

  Tensor encoder_input(const Tensor& obs_rows) const {
    Tensor map = fast::slice_cols(obs_rows, 0, kMapCells);
    Tensor vec = fast::slice_cols(obs_rows, kMapCells, kObsVecDim);
    if (cfg_.pool_block > 1) map = fast::avg_pool(map, kMapSide, cfg_.pool_block);
    return fast::concat_cols(map, vec);
  }

  GaussBatch split_gauss(const Tensor& out) const {
    GaussBatch g;
    g.mu = fast::slice_cols(out, 0, cfg_.d_z);
    g.sigma = fast::slice_cols(out, cfg_.d_z, cfg_.d_z);
    fast::softplus_(g.sigma);
    for (size_t i = 0; i < g.sigma.numel(); ++i) g.sigma[i] += cfg_.sigma_min;
    return g;
  }

  std::pair<Var, Var> split_gauss_taped(Tape& t, Var out) const {
    Var mu = t.slice_cols(out, 0, cfg_.d_z);
    Var raw = t.slice_cols(out, cfg_.d_z, 2 * cfg_.d_z);
    Var sigma = t.affine_const(t.softplus(raw), 1.0, cfg_.sigma_min);
    return {mu, sigma};
  }

  static std::vector<size_t> mask_lengths(const FragmentBatch& batch) {
    const size_t W = batch.mask.size(), B = batch.mask[0].rows();
    std::vector<size_t> lengths(B, 0);
    for (size_t b = 0; b < B; ++b) {
      bool ended = false;
      for (size_t k = 0; k < W; ++k) {
        const double m = batch.mask[k].at2(b, 0);
        if (m != 0.0 && m != 1.0)
          throw Error("rssm: mask entries must be 0 or 1");
        if (m == 1.0) {
          if (ended) throw Error("rssm: mask padding must be a suffix");
          ++lengths[b];
        } else {
          ended = true;
        }
      }
    }
    return lengths;
  }

  RssmConfig cfg_;
  Mlp encoder_;
  GruCell gru_;
  Mlp prior_;
  Mlp obs_head_;
  Mlp reward_head_;
  Adam opt_;
};

}  // namespace aesmpfp
