#include "cfpolicy/dynamics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cfpolicy/errors.hpp"

namespace cfpolicy {

using nn::Matrix;

HistoryWindow make_window(const PatientTrajectory& traj, int t) {
  if (t < 0 || t >= traj.length()) throw PreconditionError("window index outside the trajectory");
  const auto M = traj.states.cols();
  HistoryWindow w{Matrix(kContextSteps, M), Matrix::Zero(kContextSteps, kActionDims)};
  for (int k = 0; k < kContextSteps; ++k) {
    const int tau = t - (kContextSteps - 1) + k;
    if (tau < 0) {
      w.states.row(k) = traj.states.row(0);
    } else {
      w.states.row(k) = traj.states.row(tau);
      w.actions.row(k) = traj.actions.row(tau);
    }
  }
  return w;
}

void DynHyperparams::validate() const {
  if (epochs < 1 || batch < 1 || hidden < 1) throw ConfigError("dynamics epochs, batch and hidden must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (patience < 0) throw ConfigError("patience must be >= 0");
}

TransitionModel::TransitionModel(nn::RecurrentRegressor net, int feature_count)
    : net_(std::move(net)), feature_count_(feature_count) {
  if (net_.cell.input() != feature_count + kActionDims || net_.head.out() != feature_count)
    throw ShapeError("transition network does not match the feature count");
}

TransitionModel TransitionModel::zero(int feature_count, int hidden) {
  return TransitionModel(nn::RecurrentRegressor(feature_count + kActionDims, hidden, feature_count), feature_count);
}

std::vector<Matrix> window_steps(const std::vector<HistoryWindow>& windows) {
  if (windows.empty()) throw PreconditionError("no history windows");
  const auto M = windows.front().states.cols();
  const auto n = static_cast<Eigen::Index>(windows.size());
  std::vector<Matrix> steps(kContextSteps, Matrix(n, M + kActionDims));
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& w = windows[b];
    if (w.states.rows() != kContextSteps || w.states.cols() != M || w.actions.rows() != kContextSteps ||
        w.actions.cols() != kActionDims)
      throw ShapeError("history window has the wrong shape");
    for (int k = 0; k < kContextSteps; ++k) {
      steps[k].block(b, 0, 1, M) = w.states.row(k);
      steps[k].block(b, M, 1, kActionDims) = w.actions.row(k);
    }
  }
  return steps;
}

Matrix TransitionModel::predict_delta(const std::vector<HistoryWindow>& windows) {
  if (!windows.empty() && windows.front().states.cols() != feature_count_)
    throw SchemaError("window has " + std::to_string(windows.front().states.cols()) + " features, model expects " +
                      std::to_string(feature_count_));
  return net_.forward(window_steps(windows));
}

Matrix TransitionModel::predict_next(const std::vector<HistoryWindow>& windows) {
  Matrix next = predict_delta(windows);
  for (std::size_t b = 0; b < windows.size(); ++b)
    next.row(static_cast<Eigen::Index>(b)) += windows[b].states.row(kContextSteps - 1);
  return next;
}

namespace {

struct TransitionSet {
  std::vector<Matrix> steps;  // 3 x (n x (M + 2))
  Matrix targets;             // n x M

  Eigen::Index size() const { return targets.rows(); }
};

TransitionSet build_transitions(const PreparedCohort& data, Split split) {
  TransitionSet set;
  const auto idx = data.data.indices(split);
  Eigen::Index n = 0;
  for (auto i : idx) n += std::max(0, data.data.trajectories[i].length() - 1);
  if (n == 0) return set;
  const auto M = data.data.trajectories[idx.front()].states.cols();
  set.steps.assign(kContextSteps, Matrix(n, M + kActionDims));
  set.targets.resize(n, M);
  Eigen::Index r = 0;
  for (auto i : idx) {
    const auto& traj = data.data.trajectories[i];
    for (int t = 0; t + 1 < traj.length(); ++t, ++r) {
      for (int k = 0; k < kContextSteps; ++k) {
        const int tau = t - (kContextSteps - 1) + k;
        set.steps[k].block(r, 0, 1, M) = traj.states.row(std::max(tau, 0));
        if (tau < 0)
          set.steps[k].block(r, M, 1, kActionDims).setZero();
        else
          set.steps[k].block(r, M, 1, kActionDims) = traj.actions.row(tau);
      }
      set.targets.row(r) = traj.states.row(t + 1) - traj.states.row(t);
    }
  }
  return set;
}

std::vector<Matrix> gather(const std::vector<Matrix>& steps, std::span<const Eigen::Index> rows) {
  std::vector<Matrix> out;
  for (const auto& s : steps) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), s.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = s.row(rows[k]);
    out.push_back(std::move(m));
  }
  return out;
}

double set_mse(nn::RecurrentRegressor& net, const TransitionSet& set) {
  constexpr Eigen::Index kChunk = 8192;
  double se = 0.0;
  for (Eigen::Index start = 0; start < set.size(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, set.size() - start);
    std::vector<Matrix> steps;
    for (const auto& s : set.steps) steps.push_back(s.middleRows(start, len));
    se += (net.forward(steps) - set.targets.middleRows(start, len)).squaredNorm();
  }
  return se / static_cast<double>(set.targets.size());
}

}  // namespace

DynTrainResult train_dynamics(const PreparedCohort& data, const DynHyperparams& hp) {
  hp.validate();
  const TransitionSet train = build_transitions(data, Split::train);
  if (train.size() == 0) throw PreconditionError("dynamics needs train trajectories with at least two steps");
  const TransitionSet val = build_transitions(data, Split::val);
  const int M = static_cast<int>(train.targets.cols());

  Rng rng(hp.seed);
  nn::RecurrentRegressor net(M + kActionDims, hp.hidden, M, rng.derive(1).next());
  nn::Optimizer opt(net.params(), {nn::OptimizerKind::adam, hp.lr});

  DynTrainResult result;
  nn::RecurrentRegressor best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Eigen::Index> order(train.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng shuffle_rng = rng.derive(1000 + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    for (Eigen::Index start = 0; start < train.size(); start += hp.batch) {
      const Eigen::Index len = std::min<Eigen::Index>(hp.batch, train.size() - start);
      const std::span<const Eigen::Index> batch(order.data() + start, static_cast<std::size_t>(len));
      const auto steps = gather(train.steps, batch);
      Matrix target(len, M);
      for (Eigen::Index k = 0; k < len; ++k) target.row(k) = train.targets.row(batch[k]);
      const auto loss = nn::mse_loss(net.forward(steps), target);
      if (!std::isfinite(loss.value))
        throw TrainingDivergenceError("non-finite dynamics loss at epoch " + std::to_string(epoch));
      net.zero_grad();
      net.backward(loss.grad);
      opt.step();
      total += loss.value * static_cast<double>(len);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train.size());
    rec.val_loss = val.size() > 0 ? set_mse(net, val) : rec.train_loss;
    if (!std::isfinite(rec.val_loss))
      throw TrainingDivergenceError("non-finite dynamics validation loss at epoch " + std::to_string(epoch));
    result.history.push_back(rec);
    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      best = net;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (hp.patience > 0 && ++since_best >= hp.patience) {
      break;
    }
  }
  result.model = TransitionModel(std::move(best), M);
  result.model.artifacts = data.artifacts;
  result.model.source = data.source;
  return result;
}

double dynamics_mse(TransitionModel& model, const PreparedCohort& data, Split split) {
  const TransitionSet set = build_transitions(data, split);
  if (set.size() == 0) throw PreconditionError("no transitions in split");
  if (set.targets.cols() != model.feature_count()) throw SchemaError("cohort feature count differs from the model");
  return set_mse(model.net(), set);
}

double zero_delta_mse(const PreparedCohort& data, Split split) {
  const TransitionSet set = build_transitions(data, split);
  if (set.size() == 0) throw PreconditionError("no transitions in split");
  return set.targets.squaredNorm() / static_cast<double>(set.targets.size());
}

Matrix state_windows(const std::vector<HistoryWindow>& windows) {
  if (windows.empty()) return Matrix(0, 0);
  const auto M = windows.front().states.cols();
  Matrix x(static_cast<Eigen::Index>(windows.size()), kContextSteps * M);
  for (std::size_t b = 0; b < windows.size(); ++b)
    for (int k = 0; k < kContextSteps; ++k)
      x.block(static_cast<Eigen::Index>(b), k * M, 1, M) = windows[b].states.row(k);
  return x;
}

RolloutBatch rollout(TransitionModel& model, const RolloutPolicy& policy, const std::vector<HistoryWindow>& starts,
                     int horizon, const std::optional<RewardContext>& reward, Rng& rng) {
  if (horizon < 1) throw PreconditionError("rollout horizon must be >= 1");
  if (starts.empty()) throw PreconditionError("rollout needs at least one start window");
  const std::size_t n = starts.size();
  const auto M = starts.front().states.cols();

  RolloutBatch out;
  out.states.assign(n, RowMatrix(horizon + 1, M));
  out.actions.assign(n, ActionMatrix(horizon, kActionDims));
  out.labels.assign(n, {});
  out.rewards.assign(n, std::vector<double>(horizon, 0.0));
  std::vector<HistoryWindow> windows = starts;
  for (std::size_t b = 0; b < n; ++b) out.states[b].row(0) = windows[b].states.row(kContextSteps - 1);

  for (int t = 0; t < horizon; ++t) {
    const auto step = policy(state_windows(windows), rng);
    if (step.actions.rows() != static_cast<Eigen::Index>(n) || step.actions.cols() != kActionDims)
      throw ShapeError("rollout policy returned the wrong action shape");
    for (std::size_t b = 0; b < n; ++b) windows[b].actions.row(kContextSteps - 1) = step.actions.row(b);
    Matrix next = model.predict_next(windows);
    for (std::size_t b = 0; b < n; ++b) {
      const auto row = next.row(static_cast<Eigen::Index>(b));
      if (!row.allFinite()) throw RolloutBlowupError("non-finite state in rollout", t);
      next.row(static_cast<Eigen::Index>(b)) = row.cwiseMax(-kStateClip).cwiseMin(kStateClip);
    }
    for (std::size_t b = 0; b < n; ++b) {
      const auto bi = static_cast<Eigen::Index>(b);
      out.actions[b].row(t) = step.actions.row(bi);
      if (!step.labels.empty()) out.labels[b].push_back(step.labels[b]);
      out.states[b].row(t + 1) = next.row(bi);
      if (reward) {
        const auto s = next.row(bi);
        out.rewards[b][t] = hemodynamic_reward(reward->fn, reward->view.map(s), reward->view.sbp(s));
      }
      auto& w = windows[b];
      for (int k = 0; k + 1 < kContextSteps; ++k) {
        w.states.row(k) = w.states.row(k + 1);
        w.actions.row(k) = w.actions.row(k + 1);
      }
      w.states.row(kContextSteps - 1) = next.row(bi);
      w.actions.row(kContextSteps - 1).setZero();
    }
  }
  return out;
}

void write_rollout(const std::filesystem::path& path, const RolloutBatch& batch, const CohortSchema& schema,
                   const NormStats& stats) {
  CohortDataset ds;
  ds.schema = schema;
  ds.schema.attributes.clear();
  ExtraColumn reward{"reward", {}};
  for (std::size_t b = 0; b < batch.episodes(); ++b) {
    PatientTrajectory traj;
    traj.id = "rollout" + std::to_string(b + 1);
    traj.states = batch.states[b];
    const auto H = batch.actions[b].rows();
    traj.actions = ActionMatrix::Zero(H + 1, kActionDims);
    traj.actions.topRows(H) = batch.actions[b];
    PatientTrajectory raw = invert_norm(traj, stats);
    // The padded final action stays an exact zero dose.
    raw.actions.row(H).setZero();
    for (Eigen::Index t = 0; t < H; ++t)
      for (int d = 0; d < kActionDims; ++d) raw.actions(t, d) = std::max(0.0, raw.actions(t, d));
    std::vector<double> r(batch.rewards[b].begin(), batch.rewards[b].end());
    r.push_back(kMissing);
    reward.values.push_back(std::move(r));
    ds.trajectories.push_back(std::move(raw));
    ds.splits.push_back(Split::unassigned);
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_cohort(out, ds, &reward);
}

Json dynamics_to_json(const TransitionModel& model) {
  return {{"format", "transition-model"},
          {"version", 1},
          {"feature_count", model.feature_count()},
          {"clip", kStateClip},
          {"source_subgroup", subgroup_to_json(model.source)},
          {"preprocessing", model.artifacts},
          {"network", nn::recurrent_to_json(model.net())}};
}

TransitionModel dynamics_from_json(const Json& j) {
  if (j.value("format", std::string()) != "transition-model") throw SchemaError("not a transition-model checkpoint");
  if (j.value("version", 0) != 1) throw SchemaError("unsupported transition-model checkpoint version");
  TransitionModel m(nn::recurrent_from_json(j.at("network")), j.at("feature_count").get<int>());
  m.artifacts = j.at("preprocessing").get<Preprocessing>();
  m.source = subgroup_from_json(j.at("source_subgroup"));
  return m;
}

}  // namespace cfpolicy
