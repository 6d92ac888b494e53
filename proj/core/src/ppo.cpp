#include "softreach/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "softreach/csv.hpp"
#include "softreach/errors.hpp"
#include "softreach/stats.hpp"

namespace softreach {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;
constexpr std::uint64_t kActTag = 0x616374;
constexpr std::uint64_t kUpdateTag = 0x757064;
constexpr std::uint64_t kEvalTag = 0x6576616c;

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const double kGaussEntropyConst = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// log(1 - tanh(u)^2), stable for large |u|
double log_dtanh(double u) { return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u)); }

nn::Batch scaled_obs(const PolicyParams& p, std::span<const Observation> obs) {
  const std::size_t D = p.obs_dim();
  nn::Batch x(D, obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t k = 0; k < D; ++k) {
      if (!std::isfinite(obs[i][k])) throw ConfigError("policy: non-finite observation");
      x(k, i) = (obs[i][k] - p.obs_offset[k]) / p.obs_scale[k];
    }
  }
  return x;
}


double entropy_of(const PolicyParams& p) {
  double h = 0.0;
  for (double ls : p.log_std) h += ls + kGaussEntropyConst;
  return h;
}

}  // namespace

std::string to_string(PolicyKind kind) {
  return kind == PolicyKind::recurrent ? "recurrent" : "feedforward";
}

PolicyKind parse_policy_kind(const std::string& text) {
  if (text == "feedforward") return PolicyKind::feedforward;
  if (text == "recurrent") return PolicyKind::recurrent;
  throw ConfigError("unknown policy kind '" + text + "' (feedforward|recurrent)");
}

void PolicyParams::validate() const {
  actor.validate();
  critic.validate();
  const std::size_t n = log_std.size();
  if (n == 0) throw ConfigError("policy: no action dimensions");
  if (actor.output_dim() != n || critic.output_dim() != 1) {
    throw ConfigError("policy: head output dims must be n_valves and 1");
  }
  if (action_low.size() != n || action_high.size() != n) {
    throw ConfigError("policy: action bounds do not match n_valves");
  }
  if (obs_offset.size() != obs_scale.size()) throw ConfigError("policy: obs scaling mismatch");
  for (double s : obs_scale) {
    if (!(s > 0.0)) throw ConfigError("policy: obs scale must be > 0");
  }
  const std::size_t feat = kind == PolicyKind::recurrent ? trunk.hidden_dim : obs_dim();
  if (kind == PolicyKind::recurrent) {
    trunk.validate();
    if (trunk.input_dim != obs_dim() || trunk.output_dim != 0) {
      throw ConfigError("policy: trunk shape mismatch");
    }
  }
  if (actor.input_dim() != feat || critic.input_dim() != feat) {
    throw ConfigError("policy: head input dims do not match the features");
  }
}

PolicyParams make_policy(const PolicyShape& shape, std::span<const double> obs_offset,
                         std::span<const double> obs_scale, std::span<const double> action_low,
                         std::span<const double> action_high, Rng& rng) {
  PolicyParams p;
  p.kind = shape.kind;
  const std::size_t D = obs_offset.size();
  const std::size_t n = action_low.size();
  const std::size_t h = shape.hidden;
  if (shape.kind == PolicyKind::feedforward) {
    const std::size_t actor_dims[] = {D, h, h, n};
    const std::size_t critic_dims[] = {D, h, h, 1};
    p.actor = nn::make_mlp(actor_dims, nn::Activation::tanh, nn::Activation::identity, rng,
                           shape.actor_output_scale);
    p.critic = nn::make_mlp(critic_dims, nn::Activation::tanh, nn::Activation::identity, rng);
  } else {
    p.trunk = nn::make_lstm(D, h, 0, rng);
    const std::size_t actor_dims[] = {h, n};
    const std::size_t critic_dims[] = {h, 1};
    p.actor = nn::make_mlp(actor_dims, nn::Activation::identity, nn::Activation::identity, rng,
                           shape.actor_output_scale);
    p.critic = nn::make_mlp(critic_dims, nn::Activation::identity, nn::Activation::identity, rng);
  }
  p.log_std.assign(n, shape.init_log_std);
  p.obs_offset.assign(obs_offset.begin(), obs_offset.end());
  p.obs_scale.assign(obs_scale.begin(), obs_scale.end());
  p.action_low.assign(action_low.begin(), action_low.end());
  p.action_high.assign(action_high.begin(), action_high.end());
  p.validate();
  return p;
}

PolicyParams make_policy_for_env(const PolicyShape& shape, const EnvParams& env, Rng& rng) {
  std::vector<double> offset, scale;
  for (int half = 0; half < 2; ++half) {
    for (std::size_t k = 0; k < 3; ++k) {
      offset.push_back(env.initial_pose[k]);
      scale.push_back(std::max(env.perturbation[k], 1.0));
    }
  }
  return make_policy(shape, offset, scale, env.action_low, env.action_high, rng);
}

nlohmann::json to_json(const PolicyParams& p) {
  nlohmann::json j = {{"format", "softreach-model"},
                      {"format_version", 1},
                      {"kind", "policy"},
                      {"policy_kind", to_string(p.kind)},
                      {"obs_offset", p.obs_offset},
                      {"obs_scale", p.obs_scale},
                      {"action_low", p.action_low},
                      {"action_high", p.action_high},
                      {"log_std", p.log_std},
                      {"actor", nn::to_json(p.actor)},
                      {"critic", nn::to_json(p.critic)}};
  if (p.kind == PolicyKind::recurrent) j["trunk"] = nn::to_json(p.trunk);
  return j;
}

PolicyParams policy_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "policy") throw FormatError("not a policy", 0);
  PolicyParams p;
  p.kind = parse_policy_kind(j.at("policy_kind").get<std::string>());
  p.obs_offset = j.at("obs_offset").get<std::vector<double>>();
  p.obs_scale = j.at("obs_scale").get<std::vector<double>>();
  p.action_low = j.at("action_low").get<std::vector<double>>();
  p.action_high = j.at("action_high").get<std::vector<double>>();
  p.log_std = j.at("log_std").get<std::vector<double>>();
  p.actor = nn::mlp_from_json(j.at("actor"));
  p.critic = nn::mlp_from_json(j.at("critic"));
  if (p.kind == PolicyKind::recurrent) p.trunk = nn::lstm_from_json(j.at("trunk"));
  p.validate();
  return p;
}

double squash(double u, double low, double high) {
  return low + (high - low) * 0.5 * (std::tanh(u) + 1.0);
}

double unsquash(double a, double low, double high) {
  return std::atanh(2.0 * (a - low) / (high - low) - 1.0);
}

double squashed_log_prob(std::span<const double> u, std::span<const double> mean,
                         std::span<const double> log_std, std::span<const double> low,
                         std::span<const double> high) {
  double lp = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    const double z = (u[k] - mean[k]) * std::exp(-log_std[k]);
    lp += -0.5 * z * z - log_std[k] - kHalfLog2Pi;
    lp -= log_dtanh(u[k]) + std::log(0.5 * (high[k] - low[k]));
  }
  return lp;
}

BatchAct act_batch(const PolicyParams& p, std::span<const Observation> obs,
                   const nn::LstmState* hidden, std::span<Rng> rngs, bool deterministic) {
  const std::size_t N = obs.size();
  const std::size_t n = p.n_valves();
  if (rngs.size() != N) throw ConfigError("act_batch: one rng per observation required");
  nn::Batch feats = scaled_obs(p, obs);
  BatchAct out;
  if (p.kind == PolicyKind::recurrent) {
    const std::size_t H = p.trunk.hidden_dim;
    if (!hidden || hidden->h.rows != H || hidden->h.batch != N) {
      throw ConfigError("act_batch: recurrent policy needs an N-column hidden state");
    }
    out.hidden = nn::LstmState{nn::Batch(H, N), nn::Batch(H, N)};
    nn::lstm_step_batch(p.trunk, N, feats.data.data(), hidden->h.data.data(),
                        hidden->c.data.data(), out.hidden.h.data.data(),
                        out.hidden.c.data.data(), nullptr, nullptr);
    feats = out.hidden.h;
  }
  const nn::Batch mean = nn::mlp_forward(p.actor, feats);
  const nn::Batch value = nn::mlp_forward(p.critic, feats);
  out.actions.resize(N * n);
  out.pre_squash.resize(N * n);
  out.mean.resize(N * n);
  out.log_prob.resize(N);
  out.value.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double mu = mean(k, i);
      const double u = deterministic ? mu : mu + std::exp(p.log_std[k]) * rngs[i].normal();
      out.mean[i * n + k] = mu;
      out.pre_squash[i * n + k] = u;
      out.actions[i * n + k] = squash(u, p.action_low[k], p.action_high[k]);
    }
    out.log_prob[i] = squashed_log_prob(std::span(out.pre_squash).subspan(i * n, n),
                                        std::span(out.mean).subspan(i * n, n), p.log_std,
                                        p.action_low, p.action_high);
    out.value[i] = value(0, i);
  }
  return out;
}

ActResult act(const PolicyParams& params, const Observation& obs,
              const std::optional<nn::LstmState>& hidden, Rng& rng, bool deterministic) {
  std::optional<nn::LstmState> h = hidden;
  if (params.kind == PolicyKind::recurrent && !h) {
    h = nn::zero_state(params.trunk, 1);
  }
  auto b = act_batch(params, std::span(&obs, 1), h ? &*h : nullptr, std::span(&rng, 1),
                     deterministic);
  ActResult r;
  r.action = std::move(b.actions);
  r.pre_squash = std::move(b.pre_squash);
  r.log_prob = b.log_prob[0];
  r.value = b.value[0];
  if (params.kind == PolicyKind::recurrent) r.hidden = std::move(b.hidden);
  return r;
}

Gae compute_gae(std::span<const double> rewards, std::span<const double> values,
                std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T) {
    throw ConfigError("compute_gae: need T rewards, T dones and T + 1 values");
  }
  Gae g;
  g.advantages.assign(T, 0.0);
  g.returns.assign(T, 0.0);
  double next = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double keep = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * keep - values[t];
    next = delta + gamma * lambda * keep * next;
    g.advantages[t] = next;
    g.returns[t] = next + values[t];
  }
  return g;
}

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in (0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
  if (n_envs == 0 || rollout_length == 0) throw ConfigError("n_envs and rollout_length must be >= 1");
  if (epochs_per_update == 0 || minibatches == 0) {
    throw ConfigError("epochs_per_update and minibatches must be >= 1");
  }
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (hidden == 0) throw ConfigError("hidden must be >= 1");
  if (!(reward_scale > 0.0)) throw ConfigError("reward_scale must be > 0");
  if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) {
    throw ConfigError("loss coefficients must be >= 0");
  }
}

void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = {{"total_updates", c.total_updates},
       {"n_envs", c.n_envs},
       {"rollout_length", c.rollout_length},
       {"gamma", c.gamma},
       {"gae_lambda", c.gae_lambda},
       {"clip_eps", c.clip_eps},
       {"epochs_per_update", c.epochs_per_update},
       {"minibatches", c.minibatches},
       {"lr", c.lr},
       {"entropy_coef", c.entropy_coef},
       {"value_coef", c.value_coef},
       {"max_grad_norm", c.max_grad_norm},
       {"seed", c.seed},
       {"policy_kind", to_string(c.policy_kind)},
       {"hidden", c.hidden},
       {"init_log_std", c.init_log_std},
       {"reward_scale", c.reward_scale},
       {"stop_on_convergence", c.stop_on_convergence},
       {"convergence_updates", c.convergence_updates},
       {"ema_factor", c.ema_factor}};
}

void from_json(const nlohmann::json& j, PpoConfig& c) {
  const PpoConfig d;
  c.total_updates = j.value("total_updates", d.total_updates);
  c.n_envs = j.value("n_envs", d.n_envs);
  c.rollout_length = j.value("rollout_length", d.rollout_length);
  c.gamma = j.value("gamma", d.gamma);
  c.gae_lambda = j.value("gae_lambda", d.gae_lambda);
  c.clip_eps = j.value("clip_eps", d.clip_eps);
  c.epochs_per_update = j.value("epochs_per_update", d.epochs_per_update);
  c.minibatches = j.value("minibatches", d.minibatches);
  c.lr = j.value("lr", d.lr);
  c.entropy_coef = j.value("entropy_coef", d.entropy_coef);
  c.value_coef = j.value("value_coef", d.value_coef);
  c.max_grad_norm = j.value("max_grad_norm", d.max_grad_norm);
  c.seed = j.value("seed", d.seed);
  c.policy_kind = parse_policy_kind(j.value("policy_kind", to_string(d.policy_kind)));
  c.hidden = j.value("hidden", d.hidden);
  c.init_log_std = j.value("init_log_std", d.init_log_std);
  c.reward_scale = j.value("reward_scale", d.reward_scale);
  c.stop_on_convergence = j.value("stop_on_convergence", d.stop_on_convergence);
  c.convergence_updates = j.value("convergence_updates", d.convergence_updates);
  c.ema_factor = j.value("ema_factor", d.ema_factor);
}

SurrogateTerms clipped_surrogate(std::span<const double> new_log_prob,
                                 std::span<const double> old_log_prob,
                                 std::span<const double> advantages, double clip_eps) {
  const std::size_t M = new_log_prob.size();
  if (old_log_prob.size() != M || advantages.size() != M || M == 0) {
    throw ConfigError("clipped_surrogate: size mismatch or empty batch");
  }
  SurrogateTerms s;
  s.d_log_prob.assign(M, 0.0);
  const double inv = 1.0 / static_cast<double>(M);
  for (std::size_t i = 0; i < M; ++i) {
    const double log_r = new_log_prob[i] - old_log_prob[i];
    const double r = std::exp(log_r);
    const double a = advantages[i];
    const double unclipped = r * a;
    const double clipped = std::clamp(r, 1.0 - clip_eps, 1.0 + clip_eps) * a;
    s.surrogate += std::min(unclipped, clipped);
    if (unclipped <= clipped) s.d_log_prob[i] = -a * r * inv;
    if (std::abs(r - 1.0) > clip_eps) s.clip_fraction += 1.0;
    s.approx_kl += (r - 1.0) - log_r;
    s.max_ratio_dev = std::max(s.max_ratio_dev, std::abs(r - 1.0));
  }
  s.surrogate *= inv;
  s.clip_fraction *= inv;
  s.approx_kl *= inv;
  return s;
}

namespace {

void normalize_advantages(std::vector<double>& a) {
  const double m = mean(a);
  const double s = stddev(a);
  for (double& v : a) v = (v - m) / (s + 1e-8);
}

// Head inputs for a minibatch: one column per sample in `samples` order.
struct MinibatchForward {
  std::vector<std::size_t> samples;
  nn::Batch features;
  nn::LstmTape trunk_tape;  // recurrent only
  std::size_t n_seq = 0;    // recurrent: sequences in the minibatch
};

MinibatchForward forward_features(const PolicyParams& params, const RolloutBatch& batch,
                                  std::span<const std::size_t> units) {
  MinibatchForward mf;
  if (params.kind == PolicyKind::feedforward) {
    mf.samples.assign(units.begin(), units.end());
    std::vector<Observation> obs;
    for (std::size_t s : mf.samples) {
      if (s >= batch.obs.size()) throw ConfigError("ppo: sample index out of range");
      obs.push_back(batch.obs[s]);
    }
    mf.features = scaled_obs(params, obs);
    return mf;
  }
  const std::size_t T = batch.steps;
  const std::size_t H = params.trunk.hidden_dim;
  const std::size_t B = units.size();
  mf.n_seq = B;
  nn::Sequence x(T, params.obs_dim(), B);
  std::vector<std::uint8_t> starts(T * B);
  nn::LstmState init{nn::Batch(H, B), nn::Batch(H, B)};
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t e = units[b];
    if (e >= batch.n_envs) throw ConfigError("ppo: env index out of range");
    for (std::size_t k = 0; k < H; ++k) {
      init.h(k, b) = batch.initial_hidden.h(k, e);
      init.c(k, b) = batch.initial_hidden.c(k, e);
    }
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t s = units[b] * T + t;
      mf.samples.push_back(s);
      starts[t * B + b] = batch.starts[s];
      for (std::size_t k = 0; k < params.obs_dim(); ++k) {
        x(t, k, b) = (batch.obs[s][k] - params.obs_offset[k]) / params.obs_scale[k];
      }
    }
  }
  nn::lstm_forward(params.trunk, x, init, starts, &mf.trunk_tape);
  mf.features = nn::Batch(H, T * B);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h = mf.trunk_tape.h.at(t + 1);
    for (std::size_t k = 0; k < H; ++k) {
      for (std::size_t b = 0; b < B; ++b) mf.features(k, t * B + b) = h[k * B + b];
    }
  }
  return mf;
}

}  // namespace

PpoLoss ppo_loss(const PolicyParams& params, const RolloutBatch& batch,
                 std::span<const std::size_t> units, const PpoConfig& cfg) {
  if (units.empty()) throw ConfigError("ppo_loss: empty minibatch");
  MinibatchForward mf = forward_features(params, batch, units);
  const std::size_t M = mf.samples.size();
  const std::size_t n = params.n_valves();
  nn::MlpTape actor_tape, critic_tape;
  const nn::Batch mean_b = nn::mlp_forward(params.actor, mf.features, &actor_tape);
  const nn::Batch value_b = nn::mlp_forward(params.critic, mf.features, &critic_tape);

  std::vector<double> new_lp(M), old_lp(M), adv(M);
  std::vector<double> mu(n);
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t s = mf.samples[i];
    for (std::size_t k = 0; k < n; ++k) mu[k] = mean_b(k, i);
    new_lp[i] = squashed_log_prob(std::span(batch.pre_squash).subspan(s * n, n), mu,
                                  params.log_std, params.action_low, params.action_high);
    old_lp[i] = batch.log_prob[s];
    adv[i] = batch.advantages[s];
  }
  normalize_advantages(adv);

  PpoLoss out;
  out.terms = clipped_surrogate(new_lp, old_lp, adv, cfg.clip_eps);
  out.mean_advantage = mean(adv);
  nn::Batch d_value(1, M);
  for (std::size_t i = 0; i < M; ++i) {
    const double r = value_b(0, i) - batch.returns[mf.samples[i]];
    out.value_loss += r * r;
    d_value(0, i) = cfg.value_coef * 2.0 * r / static_cast<double>(M);
  }
  out.value_loss /= static_cast<double>(M);
  out.entropy = entropy_of(params);
  out.loss = -out.terms.surrogate + cfg.value_coef * out.value_loss - cfg.entropy_coef * out.entropy;
  if (!std::isfinite(out.loss)) throw NumericError("ppo: non-finite loss");

  out.grads = nn::zeros_like(params);
  auto& grads = out.grads;
  nn::Batch d_mean(n, M);
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t s = mf.samples[i];
    for (std::size_t k = 0; k < n; ++k) {
      const double inv_var = std::exp(-2.0 * params.log_std[k]);
      const double diff = batch.pre_squash[s * n + k] - mean_b(k, i);
      d_mean(k, i) = out.terms.d_log_prob[i] * diff * inv_var;
      grads.log_std[k] += out.terms.d_log_prob[i] * (diff * diff * inv_var - 1.0);
    }
  }
  for (std::size_t k = 0; k < n; ++k) grads.log_std[k] -= cfg.entropy_coef;

  if (params.kind == PolicyKind::feedforward) {
    nn::mlp_backward(params.actor, actor_tape, d_mean, grads.actor);
    nn::mlp_backward(params.critic, critic_tape, d_value, grads.critic);
    return out;
  }
  nn::Batch d_feat_a, d_feat_c;
  nn::mlp_backward(params.actor, actor_tape, d_mean, grads.actor, &d_feat_a);
  nn::mlp_backward(params.critic, critic_tape, d_value, grads.critic, &d_feat_c);
  const std::size_t H = params.trunk.hidden_dim;
  const std::size_t B = mf.n_seq;
  const std::size_t T = batch.steps;
  nn::Sequence d_hidden(T, H, B);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < H; ++k) {
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t col = t * B + b;
        d_hidden(t, k, b) = d_feat_a(k, col) + d_feat_c(k, col);
      }
    }
  }
  nn::lstm_backward(params.trunk, mf.trunk_tape, nn::Sequence(), &d_hidden, grads.trunk);
  return out;
}

UpdateDiagnostics ppo_update(PolicyParams& params, const RolloutBatch& batch,
                             const PpoConfig& cfg, nn::AdamState& adam, Rng& rng) {
  const bool recurrent = params.kind == PolicyKind::recurrent;
  const std::size_t total = recurrent ? batch.n_envs : batch.n_envs * batch.steps;
  if (total == 0) throw ConfigError("ppo_update: empty batch");
  const std::size_t mbs = std::min(cfg.minibatches, total);
  UpdateDiagnostics diag;
  std::size_t count = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs_per_update; ++epoch) {
    const auto perm = permutation(total, rng);
    for (std::size_t m = 0; m < mbs; ++m) {
      const std::size_t lo = m * total / mbs, hi = (m + 1) * total / mbs;
      auto l = ppo_loss(params, batch, std::span(perm).subspan(lo, hi - lo), cfg);
      auto g = nn::tensor_spans(l.grads);
      nn::clip_global_norm(g, cfg.max_grad_norm);
      nn::adam_update(params, l.grads, adam);
      if (count == 0) {
        diag.first_max_ratio_dev = l.terms.max_ratio_dev;
        diag.first_surrogate = l.terms.surrogate;
        diag.first_mean_advantage = l.mean_advantage;
      }
      diag.policy_loss += -l.terms.surrogate;
      diag.value_loss += l.value_loss;
      diag.entropy += l.entropy;
      diag.clip_fraction += l.terms.clip_fraction;
      diag.approx_kl += l.terms.approx_kl;
      ++count;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  diag.policy_loss *= inv;
  diag.value_loss *= inv;
  diag.entropy *= inv;
  diag.clip_fraction *= inv;
  diag.approx_kl *= inv;
  return diag;
}


std::vector<double> TrainingCurve::returns() const {
  std::vector<double> v;
  for (const auto& p : points) v.push_back(p.mean_return);
  return v;
}

std::vector<double> TrainingCurve::terminal_distances() const {
  std::vector<double> v;
  for (const auto& p : points) v.push_back(p.mean_terminal_dist);
  return v;
}

void write_curve_csv(std::ostream& out, const TrainingCurve& curve) {
  csv::write_row(out, {"update", "mean_return", "std_return", "env_steps", "mean_terminal_dist_mm"});
  for (const auto& p : curve.points) {
    csv::write_row(out, {std::to_string(p.update), csv::format_number(p.mean_return),
                         csv::format_number(p.std_return), std::to_string(p.env_steps),
                         csv::format_number(p.mean_terminal_dist)});
  }
}

PolicyTrainResult train_policy(const EnvParams& env, const PpoConfig& cfg,
                               const PolicyProgress& progress) {
  env.validate();
  cfg.validate();
  const std::size_t N = cfg.n_envs;
  const std::size_t T = cfg.rollout_length;
  const std::size_t n = env.n_valves();

  PolicyTrainResult result;
  Rng init_rng = Rng(cfg.seed).split(kInitTag);
  PolicyShape shape{cfg.policy_kind, cfg.hidden, cfg.init_log_std};
  result.params = make_policy_for_env(shape, env, init_rng);
  result.curve.seed = cfg.seed;
  auto& params = result.params;
  const bool recurrent = cfg.policy_kind == PolicyKind::recurrent;
  const std::size_t H = recurrent ? params.trunk.hidden_dim : 0;

  std::vector<EnvState> states;
  std::vector<Rng> act_rngs;
  for (std::size_t e = 0; e < N; ++e) {
    states.push_back(reset_episode(env, env_stream(cfg.seed, e), 0).state);
    act_rngs.push_back(Rng(cfg.seed).split(kActTag).split(e));
  }
  nn::LstmState hidden{nn::Batch(H, N), nn::Batch(H, N)};
  std::vector<std::uint8_t> fresh(N, 1);
  std::vector<double> ep_return(N, 0.0);
  auto adam = nn::make_adam(params, nn::AdamConfig{.lr = cfg.lr});
  Rng update_rng = Rng(cfg.seed).split(kUpdateTag);
  std::size_t env_steps = 0;
  double dist_ema = std::nan("");
  std::size_t below = 0;

  std::vector<Observation> obs(N);
  for (std::size_t u = 0; u < cfg.total_updates; ++u) {
    RolloutBatch batch;
    batch.n_envs = N;
    batch.steps = T;
    batch.n_valves = n;
    batch.obs.resize(N * T);
    batch.pre_squash.resize(N * T * n);
    batch.log_prob.resize(N * T);
    batch.values.resize(N * T);
    batch.starts.resize(N * T);
    batch.initial_hidden = hidden;
    std::vector<double> rewards(N * T);
    std::vector<std::uint8_t> dones(N * T);
    std::vector<double> finished_returns, finished_dists;

    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t e = 0; e < N; ++e) obs[e] = observe(states[e]);
      auto ba = act_batch(params, obs, recurrent ? &hidden : nullptr, act_rngs, false);
      auto results = step_batch(states, ba.actions, env);
      for (std::size_t e = 0; e < N; ++e) {
        const std::size_t s = e * T + t;
        batch.obs[s] = obs[e];
        std::copy_n(ba.pre_squash.begin() + static_cast<std::ptrdiff_t>(e * n), n,
                    batch.pre_squash.begin() + static_cast<std::ptrdiff_t>(s * n));
        batch.log_prob[s] = ba.log_prob[e];
        batch.values[s] = ba.value[e];
        batch.starts[s] = fresh[e];
        auto& r = results[e];
        rewards[s] = r.reward * cfg.reward_scale;
        dones[s] = r.done ? 1 : 0;
        ep_return[e] += r.reward;
        if (r.done) {
          finished_returns.push_back(ep_return[e]);
          finished_dists.push_back(r.distance);
          ep_return[e] = 0.0;
          states[e] = auto_reset(r.state, env).state;
          fresh[e] = 1;
          if (recurrent) {
            for (std::size_t k = 0; k < H; ++k) {
              ba.hidden.h(k, e) = 0.0;
              ba.hidden.c(k, e) = 0.0;
            }
          }
        } else {
          states[e] = std::move(r.state);
          fresh[e] = 0;
        }
      }
      if (recurrent) hidden = std::move(ba.hidden);
    }
    env_steps += N * T;

    for (std::size_t e = 0; e < N; ++e) obs[e] = observe(states[e]);
    std::vector<Rng> scratch_rngs = act_rngs;
    const auto boot = act_batch(params, obs, recurrent ? &hidden : nullptr, scratch_rngs, true);
    batch.advantages.resize(N * T);
    batch.returns.resize(N * T);
    for (std::size_t e = 0; e < N; ++e) {
      std::vector<double> v(T + 1);
      std::copy_n(batch.values.begin() + static_cast<std::ptrdiff_t>(e * T), T, v.begin());
      v[T] = boot.value[e];
      const auto g = compute_gae(std::span(rewards).subspan(e * T, T), v,
                                 std::span(dones).subspan(e * T, T), cfg.gamma, cfg.gae_lambda);
      std::copy(g.advantages.begin(), g.advantages.end(),
                batch.advantages.begin() + static_cast<std::ptrdiff_t>(e * T));
      std::copy(g.returns.begin(), g.returns.end(),
                batch.returns.begin() + static_cast<std::ptrdiff_t>(e * T));
    }

    UpdateDiagnostics diag;
    try {
      diag = ppo_update(params, batch, cfg, adam, update_rng);
    } catch (const NumericError& err) {
      result.diverged = true;
      result.failure = std::string(err.what()) + " at update " + std::to_string(u);
      break;
    }
    result.diagnostics.push_back(diag);

    CurvePoint pt;
    pt.update = u;
    pt.env_steps = env_steps;
    pt.episodes = finished_returns.size();
    pt.mean_return = mean(finished_returns);
    pt.std_return = stddev(finished_returns);
    pt.mean_terminal_dist = mean(finished_dists);
    result.curve.points.push_back(pt);
    if (progress) progress(pt, diag);

    if (std::isfinite(pt.mean_terminal_dist)) {
      dist_ema = std::isfinite(dist_ema)
                     ? dist_ema + cfg.ema_factor * (pt.mean_terminal_dist - dist_ema)
                     : pt.mean_terminal_dist;
    }
    below = dist_ema < env.success_radius ? below + 1 : 0;
    if (below >= cfg.convergence_updates) {
      result.converged = true;
      if (cfg.stop_on_convergence) break;
    }
  }
  return result;
}

PolicyEval evaluate_policy(const PolicyParams& params, const EnvParams& env,
                           std::size_t episodes, std::uint64_t seed, bool deterministic) {
  env.validate();
  if (episodes == 0) throw ConfigError("evaluate_policy: need at least one episode");
  const std::size_t N = episodes;
  const bool recurrent = params.kind == PolicyKind::recurrent;
  const std::size_t H = recurrent ? params.trunk.hidden_dim : 0;
  std::vector<EnvState> states;
  std::vector<Rng> rngs;
  for (std::size_t e = 0; e < N; ++e) {
    states.push_back(reset_episode(env, env_stream(seed, e), 0).state);
    rngs.push_back(Rng(seed).split(kEvalTag).split(e));
  }
  nn::LstmState hidden{nn::Batch(H, N), nn::Batch(H, N)};
  std::vector<std::uint8_t> done(N, 0);
  std::vector<double> ret(N, 0.0), dist(N, 0.0);
  std::vector<Observation> obs(N);
  for (std::size_t t = 0; t < env.max_steps; ++t) {
    for (std::size_t e = 0; e < N; ++e) obs[e] = observe(states[e]);
    auto ba = act_batch(params, obs, recurrent ? &hidden : nullptr, rngs, deterministic);
    auto results = step_batch(states, ba.actions, env);
    bool all_done = true;
    for (std::size_t e = 0; e < N; ++e) {
      if (done[e]) continue;
      ret[e] += results[e].reward;
      dist[e] = results[e].distance;
      done[e] = results[e].done ? 1 : 0;
      states[e] = std::move(results[e].state);
      all_done = all_done && done[e];
    }
    if (recurrent) hidden = std::move(ba.hidden);
    if (all_done) break;
  }
  PolicyEval ev;
  ev.episodes = N;
  ev.mean_terminal_dist = mean(dist);
  ev.mean_return = mean(ret);
  std::size_t hits = 0;
  for (double d : dist) hits += d < env.success_radius ? 1 : 0;
  ev.success_rate = static_cast<double>(hits) / static_cast<double>(N);
  return ev;
}

nlohmann::json to_json(const PolicyEval& e) {
  return {{"mean_terminal_dist_mm", e.mean_terminal_dist},
          {"mean_return", e.mean_return},
          {"success_rate", e.success_rate},
          {"episodes", e.episodes}};
}

}  // namespace softreach
