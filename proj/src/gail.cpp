#include "cfpolicy/gail.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cfpolicy/errors.hpp"

namespace cfpolicy {

using nn::Matrix;
using nn::Vector;

std::string to_string(GailConvention c) { return c == GailConvention::generated_positive ? "generated-positive" : "expert-positive"; }

GailConvention parse_convention(const std::string& text) {
  if (text == "generated-positive") return GailConvention::generated_positive;
  if (text == "expert-positive") return GailConvention::expert_positive;
  throw ConfigError("unknown GAIL convention '" + text + "' (expected generated-positive or expert-positive)");
}

void GailConfig::validate() const {
  if (!(lr > 0.0) || !(disc_lr > 0.0)) throw ConfigError("GAIL learning rates must be positive");
  if (batch < 1) throw ConfigError("GAIL batch must be >= 1");
  if (!(kl_beta > 0.0)) throw ConfigError("KL penalty beta must be positive");
  if (entropy_coef < 0.0) throw ConfigError("entropy coefficient must be >= 0");
  if (!(kl_target > 0.0) || !(kl_max > 0.0)) throw ConfigError("KL targets must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("discount must lie in (0, 1]");
  if (iterations < 0 || horizon < 1 || episodes < 1 || policy_steps < 1 || disc_epochs < 1)
    throw ConfigError("GAIL iteration counts must be positive");
  if (start_step < 0) throw ConfigError("start_step must be >= 0");
}

// ---------------------------------------------------------------------------

StochasticPolicy::StochasticPolicy(int input_width, bool discrete, const std::vector<int>& hidden, std::uint64_t seed,
                                   int n_actions)
    : discrete_(discrete) {
  nn::MlpSpec spec;
  spec.input = input_width;
  spec.hidden = hidden;
  spec.output = discrete ? n_actions : kActionDims;
  spec.head = discrete ? nn::Head::softmax : nn::Head::linear;
  net = nn::Mlp(spec, seed);
}

Matrix StochasticPolicy::head(const Matrix& windows) { return net.forward(windows, nn::Mode::eval); }

Matrix StochasticPolicy::probabilities(const Matrix& windows) {
  if (!discrete_) throw PreconditionError("continuous policy has no class probabilities");
  return nn::softmax_rows(head(windows));
}

Eigen::RowVectorXd StochasticPolicy::stddev() const { return log_std.value.row(0).array().exp().matrix(); }

namespace {

Vector row_entropy(const Matrix& logits) {
  const Matrix logp = nn::log_softmax_rows(logits);
  return -(logp.array().exp() * logp.array()).rowwise().sum().matrix();
}

double gaussian_entropy(const nn::ParamTensor& log_std) {
  return log_std.value.sum() + 0.5 * static_cast<double>(log_std.value.size()) * std::log(2.0 * std::numbers::pi * std::numbers::e);
}

}  // namespace

double StochasticPolicy::entropy(const Matrix& windows) {
  if (!discrete_) return gaussian_entropy(log_std);
  return row_entropy(head(windows)).mean();
}

nn::ParamRefs StochasticPolicy::params() {
  auto p = net.params();
  if (!discrete_) p.push_back(&log_std);
  return p;
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(int state_width_, int action_width_, const std::vector<int>& hidden,
                             GailConvention convention_, double lr, std::uint64_t seed)
    : convention(convention_),
      state_width(state_width_),
      action_width(action_width_),
      opt(nn::OptimizerConfig{nn::OptimizerKind::adam, lr}) {
  nn::MlpSpec spec;
  spec.input = state_width + action_width;
  spec.hidden = hidden;
  spec.output = 1;
  net = nn::Mlp(spec, seed);
}

namespace {

double clamp_prob(double d) { return std::clamp(d, kDiscClamp, 1.0 - kDiscClamp); }

}  // namespace

Vector Discriminator::scores(const Matrix& pairs) {
  const Matrix logits = net.forward(pairs, nn::Mode::eval);
  Vector d(logits.rows());
  for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = clamp_prob(1.0 / (1.0 + std::exp(-logits(i, 0))));
  return d;
}

Vector Discriminator::prob_generated(const Matrix& pairs) {
  Vector d = scores(pairs);
  if (convention == GailConvention::expert_positive) d = (1.0 - d.array()).matrix();
  return d;
}

Matrix encode_discrete_pairs(const Matrix& states, const std::vector<int>& labels, int n_actions) {
  if (static_cast<std::size_t>(states.rows()) != labels.size()) throw ShapeError("pair encoding: row count mismatch");
  Matrix x = Matrix::Zero(states.rows(), states.cols() + n_actions);
  x.leftCols(states.cols()) = states;
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_actions) throw ShapeError("pair encoding: action out of range");
    x(i, states.cols() + labels[i]) = 1.0;
  }
  return x;
}

Matrix encode_continuous_pairs(const Matrix& states, const Matrix& actions) {
  if (states.rows() != actions.rows()) throw ShapeError("pair encoding: row count mismatch");
  Matrix x(states.rows(), states.cols() + actions.cols());
  x << states, actions;
  return x;
}

DiscStep disc_evaluate(Discriminator& disc, const Matrix& expert, const Matrix& generated) {
  if (expert.rows() == 0 || generated.rows() == 0) throw PreconditionError("discriminator batches must be non-empty");
  const Vector pe = disc.prob_generated(expert);
  const Vector pg = disc.prob_generated(generated);
  DiscStep s;
  s.loss = -(1.0 - pe.array()).log().mean() - pg.array().log().mean();
  const double acc_e = (pe.array() < 0.5).cast<double>().mean();
  const double acc_g = (pg.array() > 0.5).cast<double>().mean();
  s.accuracy = 0.5 * (acc_e + acc_g);
  return s;
}

DiscStep disc_update(Discriminator& disc, const Matrix& expert, const Matrix& generated) {
  if (expert.rows() == 0 || generated.rows() == 0) throw PreconditionError("discriminator batches must be non-empty");
  if (expert.cols() != generated.cols() || expert.cols() != disc.net.input_width())
    throw ShapeError("discriminator input width mismatch");
  Matrix x(expert.rows() + generated.rows(), expert.cols());
  x << expert, generated;
  // Target of D: 1 for generated pairs under generated-positive, 1 for expert pairs under expert-positive.
  const double y_gen = disc.convention == GailConvention::generated_positive ? 1.0 : 0.0;
  const Matrix logits = disc.net.forward(x, nn::Mode::train);
  Matrix grad(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const bool gen = i >= expert.rows();
    const double y = gen ? y_gen : 1.0 - y_gen;
    const double n = static_cast<double>(gen ? generated.rows() : expert.rows());
    grad(i, 0) = (1.0 / (1.0 + std::exp(-logits(i, 0))) - y) / n;
  }
  disc.net.zero_grad();
  disc.net.backward(grad);
  disc.opt.step(disc.net.params());
  return disc_evaluate(disc, expert, generated);
}

Vector policy_reward(Discriminator& disc, const Matrix& pairs) {
  return (-disc.prob_generated(pairs).array().log()).matrix();
}

// ---------------------------------------------------------------------------

Matrix returns_to_go(const Matrix& rewards, double gamma) {
  Matrix g(rewards.rows(), rewards.cols());
  if (rewards.cols() == 0) return g;
  const auto H = rewards.cols();
  g.col(H - 1) = rewards.col(H - 1);
  for (auto t = H - 1; t-- > 0;) g.col(t) = rewards.col(t) + gamma * g.col(t + 1);
  return g;
}

Matrix advantages(const Matrix& rewards, const std::vector<Matrix>& states, double gamma, double ridge) {
  const auto E = rewards.rows();
  const auto H = rewards.cols();
  if (static_cast<std::size_t>(E) != states.size()) throw ShapeError("advantages: one state block per episode");
  const Matrix g = returns_to_go(rewards, gamma);
  const auto M = states.empty() ? 0 : states.front().cols();
  Matrix phi(E * H, M + 2);
  Vector target(E * H);
  for (Eigen::Index e = 0; e < E; ++e)
    for (Eigen::Index t = 0; t < H; ++t) {
      const Eigen::Index r = e * H + t;
      phi.block(r, 0, 1, M) = states[e].row(t);
      phi(r, M) = 1.0;
      const double left = static_cast<double>(H - t);
      phi(r, M + 1) = gamma == 1.0 ? left : (1.0 - std::pow(gamma, left)) / (1.0 - gamma);
      target(r) = g(e, t);
    }
  Matrix gram = phi.transpose() * phi;
  gram.diagonal().array() += ridge;
  const Vector w = gram.ldlt().solve(phi.transpose() * target);
  const Vector baseline = phi * w;
  Matrix adv(E, H);
  for (Eigen::Index e = 0; e < E; ++e)
    for (Eigen::Index t = 0; t < H; ++t) adv(e, t) = target(e * H + t) - baseline(e * H + t);
  if (!adv.allFinite()) throw TrainingDivergenceError("non-finite advantage estimate");
  return adv;
}

// ---------------------------------------------------------------------------

namespace {

struct Snapshot {
  std::vector<Matrix> values;
};

Snapshot snapshot(const nn::ParamRefs& params) {
  Snapshot s;
  for (const auto* p : params) s.values.push_back(p->value);
  return s;
}

void blend(const nn::ParamRefs& params, const Snapshot& from, const Snapshot& to, double w) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = from.values[k] + w * (to.values[k] - from.values[k]);
}

struct OldDistribution {
  Matrix probs;  // discrete
  Matrix logp;
  Matrix mean;   // continuous
  Eigen::RowVectorXd log_std;
};

OldDistribution capture(StochasticPolicy& policy, const Matrix& windows) {
  OldDistribution d;
  const Matrix z = policy.head(windows);
  if (policy.discrete()) {
    d.logp = nn::log_softmax_rows(z);
    d.probs = d.logp.array().exp();
  } else {
    d.mean = z;
    d.log_std = policy.log_std.value.row(0);
  }
  return d;
}

double mean_kl(StochasticPolicy& policy, const Matrix& windows, const OldDistribution& old) {
  const Matrix z = policy.head(windows);
  if (policy.discrete()) {
    const Matrix logp = nn::log_softmax_rows(z);
    return (old.probs.array() * (old.logp - logp).array()).rowwise().sum().mean();
  }
  const Eigen::RowVectorXd ls = policy.log_std.value.row(0);
  const Eigen::ArrayXd var_new = (2.0 * ls.array()).exp();
  const Eigen::ArrayXd var_old = (2.0 * old.log_std.array()).exp();
  double total = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index d = 0; d < z.cols(); ++d) {
      const double dm = old.mean(i, d) - z(i, d);
      total += ls(d) - old.log_std(d) + (var_old(d) + dm * dm) / (2.0 * var_new(d)) - 0.5;
    }
  return total / static_cast<double>(z.rows());
}

}  // namespace

PolicyUpdateStats policy_update(StochasticPolicy& policy, const PolicyBatch& batch, const GailConfig& config,
                                double& beta) {
  const auto N = batch.windows.rows();
  if (N == 0) throw PreconditionError("policy update needs a non-empty batch");
  if (batch.advantages.size() != N) throw ShapeError("one advantage per batch row");
  if (!batch.advantages.allFinite()) throw TrainingDivergenceError("non-finite advantage in policy update");
  if (policy.discrete() && static_cast<Eigen::Index>(batch.labels.size()) != N)
    throw ShapeError("one action label per batch row");
  if (!policy.discrete() && batch.actions.rows() != N) throw ShapeError("one action per batch row");

  const auto params = policy.params();
  const Snapshot before = snapshot(params);
  const OldDistribution old = capture(policy, batch.windows);
  nn::Optimizer opt(nn::OptimizerConfig{nn::OptimizerKind::adam, config.lr});
  const double n = static_cast<double>(N);
  const Vector& A = batch.advantages;

  for (int step = 0; step < config.policy_steps; ++step) {
    for (auto* p : params) p->zero_grad();
    const Matrix z = policy.net.forward(batch.windows, nn::Mode::eval);
    Matrix dz(z.rows(), z.cols());
    if (policy.discrete()) {
      const Matrix logp = nn::log_softmax_rows(z);
      const Matrix p = logp.array().exp();
      const Vector H = -(p.array() * logp.array()).rowwise().sum().matrix();
      for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index k = 0; k < z.cols(); ++k) {
          const double onehot = k == batch.labels[i] ? 1.0 : 0.0;
          dz(i, k) = -A(i) * (onehot - p(i, k)) + config.entropy_coef * p(i, k) * (logp(i, k) + H(i)) +
                     beta * (p(i, k) - old.probs(i, k));
        }
      }
    } else {
      const Eigen::RowVectorXd ls = policy.log_std.value.row(0);
      Eigen::RowVectorXd dls = Eigen::RowVectorXd::Zero(ls.size());
      for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index d = 0; d < z.cols(); ++d) {
          const double var = std::exp(2.0 * ls(d));
          const double diff = batch.actions(i, d) - z(i, d);
          const double var_old = std::exp(2.0 * old.log_std(d));
          const double dm = old.mean(i, d) - z(i, d);
          dz(i, d) = -A(i) * diff / var + beta * (z(i, d) - old.mean(i, d)) / var;
          dls(d) += -A(i) * (diff * diff / var - 1.0) + beta * (1.0 - (var_old + dm * dm) / var);
        }
      policy.log_std.grad.row(0) = dls / n - Eigen::RowVectorXd::Constant(ls.size(), config.entropy_coef);
    }
    policy.net.backward(dz / n);
    opt.step(params);
  }

  PolicyUpdateStats stats;
  stats.kl = mean_kl(policy, batch.windows, old);
  if (!std::isfinite(stats.kl)) throw TrainingDivergenceError("non-finite KL after policy update");
  if (stats.kl > config.kl_target * 1.5)
    beta *= 1.5;
  else if (stats.kl < config.kl_target / 1.5)
    beta /= 1.5;
  if (stats.kl > config.kl_max) {
    const Snapshot after = snapshot(params);
    double w = 1.0;
    while (stats.kl > config.kl_max && stats.backtracks < 30) {
      w *= 0.5;
      ++stats.backtracks;
      blend(params, before, after, w);
      stats.kl = mean_kl(policy, batch.windows, old);
    }
    if (stats.kl > config.kl_max) {
      blend(params, before, after, 0.0);
      stats.kl = 0.0;
    }
  }
  stats.beta = beta;
  stats.entropy = policy.entropy(batch.windows);
  return stats;
}

// ---------------------------------------------------------------------------

ExpertPool build_expert_pool(const PreparedCohort& data, const GailConfig& config) {
  ExpertPool pool;
  auto start_idx = data.data.indices(Split::test);
  if (start_idx.empty()) start_idx = data.data.indices(Split::train);
  for (auto i : start_idx) {
    const auto& traj = data.data.trajectories[i];
    if (traj.length() > config.start_step) pool.starts.push_back(make_window(traj, config.start_step));
  }
  if (pool.starts.empty()) throw PreconditionError("no trajectories long enough to start rollouts");

  const auto train = data.data.indices(Split::train);
  std::vector<std::pair<std::size_t, int>> cells;
  for (auto i : train) {
    const int T = data.data.trajectories[i].length();
    for (int t = config.start_step; t < std::min(T, config.start_step + config.horizon); ++t) cells.emplace_back(i, t);
  }
  if (cells.empty()) throw PreconditionError("no expert state-action pairs in the train split");
  const auto M = data.data.trajectories[train.front()].states.cols();
  pool.states.resize(static_cast<Eigen::Index>(cells.size()), M);
  pool.actions.resize(static_cast<Eigen::Index>(cells.size()), kActionDims);
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto [i, t] = cells[k];
    const auto& traj = data.data.trajectories[i];
    pool.states.row(static_cast<Eigen::Index>(k)) = traj.states.row(t);
    pool.actions.row(static_cast<Eigen::Index>(k)) = traj.actions.row(t);
    pool.labels.push_back(data.labels[i][t]);
  }
  return pool;
}

RolloutPolicy as_rollout_policy(StochasticPolicy& policy, const Preprocessing& artifacts, bool greedy) {
  return [&policy, artifacts, greedy](const Matrix& windows, Rng& rng) {
    PolicyStep step;
    step.actions.resize(windows.rows(), kActionDims);
    if (policy.discrete()) {
      const Matrix p = policy.probabilities(windows);
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        int label = 0;
        if (greedy) {
          p.row(i).maxCoeff(&label);
        } else {
          const double u = rng.uniform();
          double acc = 0.0;
          label = static_cast<int>(p.cols()) - 1;
          for (Eigen::Index k = 0; k < p.cols(); ++k) {
            acc += p(i, k);
            if (u < acc) {
              label = static_cast<int>(k);
              break;
            }
          }
        }
        step.labels.push_back(label);
        const double fluid = artifacts.binning.fluid.representative(label / kBinsPerDrug);
        const double vaso = artifacts.binning.vaso.representative(label % kBinsPerDrug);
        step.actions(i, 0) = artifacts.norm.actions[0].transform(fluid);
        step.actions(i, 1) = artifacts.norm.actions[1].transform(vaso);
      }
    } else {
      const Matrix mu = policy.head(windows);
      const Eigen::RowVectorXd sd = policy.stddev();
      for (Eigen::Index i = 0; i < mu.rows(); ++i)
        for (Eigen::Index d = 0; d < mu.cols(); ++d) step.actions(i, d) = greedy ? mu(i, d) : mu(i, d) + sd(d) * rng.normal();
    }
    return step;
  };
}

namespace {

struct Generated {
  RolloutBatch batch;
  Matrix windows;  // (E*H) x 3M, the windows the actions were chosen from
  Matrix states;   // (E*H) x M
  Matrix actions;  // (E*H) x 2
  std::vector<int> labels;
  std::vector<Matrix> per_episode_states;  // E x (H x M)
};

Generated generate(TransitionModel& model, StochasticPolicy& policy, const Preprocessing& artifacts,
                   const std::vector<HistoryWindow>& starts, int horizon, const std::optional<RewardContext>& clinical,
                   Rng& rng) {
  Generated g;
  g.batch = rollout(model, as_rollout_policy(policy, artifacts), starts, horizon, clinical, rng);
  const auto E = static_cast<Eigen::Index>(starts.size());
  const auto M = starts.front().states.cols();
  g.windows.resize(E * horizon, kContextSteps * M);
  g.states.resize(E * horizon, M);
  g.actions.resize(E * horizon, kActionDims);
  for (Eigen::Index e = 0; e < E; ++e) {
    const auto& s = g.batch.states[e];
    Matrix seq(horizon + kContextSteps - 1, M);
    seq.topRows(kContextSteps - 1) = starts[e].states.topRows(kContextSteps - 1);
    seq.bottomRows(horizon) = s.topRows(horizon);
    for (int t = 0; t < horizon; ++t) {
      const Eigen::Index r = e * horizon + t;
      for (int k = 0; k < kContextSteps; ++k) g.windows.block(r, k * M, 1, M) = seq.row(t + k);
      g.states.row(r) = s.row(t);
      g.actions.row(r) = g.batch.actions[e].row(t);
      if (!g.batch.labels[e].empty()) g.labels.push_back(g.batch.labels[e][t]);
    }
    g.per_episode_states.push_back(s.topRows(horizon));
  }
  return g;
}

Matrix encode(const Discriminator& disc, const Matrix& states, const std::vector<int>& labels, const Matrix& actions) {
  return disc.action_width == kActionDims && labels.empty() ? encode_continuous_pairs(states, actions)
                                                             : encode_discrete_pairs(states, labels, disc.action_width);
}

double mean_margin(Discriminator& disc, const Matrix& pairs) { return (disc.scores(pairs).array() - 0.5).abs().mean(); }

}  // namespace

GailResult train_gail(const PreparedCohort& data, TransitionModel& model, const GailConfig& config,
                      const std::optional<RewardContext>& clinical) {
  config.validate();
  const ExpertPool pool = build_expert_pool(data, config);
  const auto M = pool.states.cols();
  if (M != model.feature_count()) throw SchemaError("cohort feature count differs from the transition model");
  const Preprocessing& artifacts = data.artifacts;

  const Rng rng(config.seed);
  GailResult res;
  res.policy = StochasticPolicy(static_cast<int>(kContextSteps * M), config.discrete, config.policy_hidden,
                                rng.derive(1).next());
  res.initial_policy = res.policy;
  const int action_width = config.discrete ? kActionClasses : kActionDims;
  res.disc = Discriminator(static_cast<int>(M), action_width, config.disc_hidden, config.convention, config.disc_lr,
                           rng.derive(2).next());
  double beta = config.kl_beta;
  const auto n_pool = static_cast<std::size_t>(pool.states.rows());

  for (int it = 1; it <= config.iterations; ++it) {
    Rng it_rng = rng.derive(100 + static_cast<std::uint64_t>(it));
    std::vector<HistoryWindow> starts;
    for (int e = 0; e < config.episodes; ++e) starts.push_back(pool.starts[it_rng.below(pool.starts.size())]);

    Rng roll_rng = it_rng.derive(1);
    Generated gen;
    try {
      gen = generate(model, res.policy, artifacts, starts, config.horizon, clinical, roll_rng);
    } catch (const RolloutBlowupError& e) {
      throw RolloutBlowupError("GAIL iteration " + std::to_string(it), e.step());
    }
    const auto N = gen.states.rows();

    Rng pair_rng = it_rng.derive(2);
    Matrix es(N, M), ea(N, kActionDims);
    std::vector<int> el(N);
    for (Eigen::Index k = 0; k < N; ++k) {
      const auto j = static_cast<Eigen::Index>(pair_rng.below(n_pool));
      es.row(k) = pool.states.row(j);
      ea.row(k) = pool.actions.row(j);
      el[k] = pool.labels[j];
    }
    const Matrix xe = config.discrete ? encode_discrete_pairs(es, el, action_width) : encode_continuous_pairs(es, ea);
    const Matrix xg = encode(res.disc, gen.states, gen.labels, gen.actions);

    std::vector<Eigen::Index> order(N);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng disc_rng = it_rng.derive(3);
    for (int epoch = 0; epoch < config.disc_epochs; ++epoch) {
      disc_rng.shuffle(order);
      for (Eigen::Index start = 0; start < N; start += config.batch) {
        const Eigen::Index len = std::min<Eigen::Index>(config.batch, N - start);
        Matrix be(len, xe.cols()), bg(len, xg.cols());
        for (Eigen::Index k = 0; k < len; ++k) {
          be.row(k) = xe.row(order[start + k]);
          bg.row(k) = xg.row(order[start + k]);
        }
        disc_update(res.disc, be, bg);
      }
    }
    const DiscStep ds = disc_evaluate(res.disc, xe, xg);

    const Vector r = policy_reward(res.disc, xg);
    Matrix rewards(config.episodes, config.horizon);
    for (Eigen::Index e = 0; e < rewards.rows(); ++e)
      for (Eigen::Index t = 0; t < rewards.cols(); ++t) rewards(e, t) = r(e * config.horizon + t);
    const Matrix adv = advantages(rewards, gen.per_episode_states, config.gamma, config.baseline_ridge);

    PolicyBatch pb;
    pb.windows = gen.windows;
    pb.labels = gen.labels;
    pb.actions = gen.actions;
    pb.advantages.resize(N);
    for (Eigen::Index e = 0; e < adv.rows(); ++e)
      for (Eigen::Index t = 0; t < adv.cols(); ++t) pb.advantages(e * config.horizon + t) = adv(e, t);
    PolicyUpdateStats upd;
    if (config.freeze_policy) {
      upd.beta = beta;
      upd.entropy = res.policy.entropy(pb.windows);
    } else {
      upd = policy_update(res.policy, pb, config, beta);
    }

    GailLogEntry entry;
    entry.iteration = it;
    entry.disc_accuracy = ds.accuracy;
    entry.disc_loss = ds.loss;
    entry.mean_reward = r.mean();
    if (clinical) {
      double total = 0.0;
      for (const auto& ep : gen.batch.rewards) total += std::accumulate(ep.begin(), ep.end(), 0.0);
      entry.mean_clinical_reward = total / static_cast<double>(N);
    }
    entry.entropy = upd.entropy;
    entry.kl = upd.kl;
    entry.beta = upd.beta;
    entry.mean_margin = mean_margin(res.disc, xg);
    res.log.push_back(entry);
  }

  // Before/after comparison under the final discriminator, same starts and noise.
  Rng eval_rng = rng.derive(7);
  std::vector<HistoryWindow> starts;
  const std::size_t n_eval = std::min<std::size_t>(pool.starts.size(), 256);
  for (std::size_t e = 0; e < n_eval; ++e) starts.push_back(pool.starts[eval_rng.below(pool.starts.size())]);
  Rng a = eval_rng.derive(1), b = eval_rng.derive(1);
  const Generated g0 = generate(model, res.initial_policy, artifacts, starts, config.horizon, std::nullopt, a);
  const Generated g1 = generate(model, res.policy, artifacts, starts, config.horizon, std::nullopt, b);
  res.initial_margin = mean_margin(res.disc, encode(res.disc, g0.states, g0.labels, g0.actions));
  res.final_margin = mean_margin(res.disc, encode(res.disc, g1.states, g1.labels, g1.actions));
  return res;
}

// ---------------------------------------------------------------------------

Json gail_log_line(const GailLogEntry& e) {
  Json j = {{"iteration", e.iteration}, {"disc_accuracy", e.disc_accuracy}, {"disc_loss", e.disc_loss},
            {"mean_reward", e.mean_reward}, {"entropy", e.entropy},       {"kl", e.kl},
            {"beta", e.beta},               {"mean_margin", e.mean_margin}};
  if (e.mean_clinical_reward) j["mean_clinical_reward"] = *e.mean_clinical_reward;
  return j;
}

Json to_json_config(const GailConfig& c) {
  return {{"lr", c.lr},
          {"disc_lr", c.disc_lr},
          {"batch", c.batch},
          {"entropy_coef", c.entropy_coef},
          {"kl_beta", c.kl_beta},
          {"kl_target", c.kl_target},
          {"kl_max", c.kl_max},
          {"gamma", c.gamma},
          {"iterations", c.iterations},
          {"horizon", c.horizon},
          {"episodes", c.episodes},
          {"policy_steps", c.policy_steps},
          {"disc_epochs", c.disc_epochs},
          {"start_step", c.start_step},
          {"baseline_ridge", c.baseline_ridge},
          {"policy_hidden", c.policy_hidden},
          {"disc_hidden", c.disc_hidden},
          {"discrete", c.discrete},
          {"freeze_policy", c.freeze_policy},
          {"convention", to_string(c.convention)},
          {"seed", c.seed}};
}

GailConfig gail_config_from_json(const Json& j, GailConfig c) {
  c.lr = j.value("lr", c.lr);
  c.disc_lr = j.value("disc_lr", c.disc_lr);
  c.batch = j.value("batch", c.batch);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.kl_beta = j.value("kl_beta", c.kl_beta);
  c.kl_target = j.value("kl_target", c.kl_target);
  c.kl_max = j.value("kl_max", c.kl_max);
  c.gamma = j.value("gamma", c.gamma);
  c.iterations = j.value("iterations", c.iterations);
  c.horizon = j.value("horizon", c.horizon);
  c.episodes = j.value("episodes", c.episodes);
  c.policy_steps = j.value("policy_steps", c.policy_steps);
  c.disc_epochs = j.value("disc_epochs", c.disc_epochs);
  c.start_step = j.value("start_step", c.start_step);
  c.baseline_ridge = j.value("baseline_ridge", c.baseline_ridge);
  c.policy_hidden = j.value("policy_hidden", c.policy_hidden);
  c.disc_hidden = j.value("disc_hidden", c.disc_hidden);
  c.discrete = j.value("discrete", c.discrete);
  c.freeze_policy = j.value("freeze_policy", c.freeze_policy);
  c.convention = parse_convention(j.value("convention", to_string(c.convention)));
  c.seed = j.value("seed", c.seed);
  return c;
}

Json policy_to_json(const StochasticPolicy& policy) {
  return {{"format", "gail-policy"},
          {"version", 1},
          {"discrete", policy.discrete()},
          {"log_std", nn::matrix_to_json(policy.log_std.value)},
          {"network", nn::mlp_to_json(policy.net)}};
}

StochasticPolicy policy_from_json(const Json& j) {
  if (j.value("format", std::string()) != "gail-policy") throw SchemaError("not a GAIL policy");
  const nn::Mlp net = nn::mlp_from_json(j.at("network"));
  const bool discrete = j.at("discrete").get<bool>();
  StochasticPolicy p(net.input_width(), discrete, net.spec().hidden, 0, discrete ? net.output_width() : kActionClasses);
  p.net = net;
  p.log_std.value = nn::matrix_from_json(j.at("log_std"));
  p.log_std.zero_grad();
  return p;
}

Json disc_to_json(const Discriminator& disc) {
  return {{"format", "gail-discriminator"},
          {"version", 1},
          {"convention", to_string(disc.convention)},
          {"state_width", disc.state_width},
          {"action_width", disc.action_width},
          {"network", nn::mlp_to_json(disc.net)}};
}

Discriminator disc_from_json(const Json& j) {
  if (j.value("format", std::string()) != "gail-discriminator") throw SchemaError("not a GAIL discriminator");
  Discriminator d;
  d.convention = parse_convention(j.at("convention").get<std::string>());
  d.state_width = j.at("state_width").get<int>();
  d.action_width = j.at("action_width").get<int>();
  d.net = nn::mlp_from_json(j.at("network"));
  return d;
}

}  // namespace cfpolicy
