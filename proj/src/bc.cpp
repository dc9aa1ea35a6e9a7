#include "cfpolicy/bc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cfpolicy/errors.hpp"
#include "cfpolicy/rng.hpp"

namespace cfpolicy {

using nn::Matrix;

std::string to_string(BcMode mode) { return mode == BcMode::regression ? "regression" : "classification"; }

BcMode parse_bc_mode(const std::string& text) {
  if (text == "regression") return BcMode::regression;
  if (text == "classification") return BcMode::classification;
  throw ConfigError("unknown BC mode '" + text + "'");
}

void BcHyperparams::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  for (int w : hidden)
    if (w <= 0) throw ConfigError("hidden widths must be positive");
}

Matrix context_windows(const PatientTrajectory& traj) {
  const int T = traj.length();
  const auto M = traj.states.cols();
  Matrix x(T, kContextSteps * M);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < kContextSteps; ++k) {
      const int src = std::max(0, t - (kContextSteps - 1) + k);
      x.block(t, k * M, 1, M) = traj.states.row(src);
    }
  return x;
}

namespace {

Matrix flatten_encounter(const PatientTrajectory& traj) {
  const int T = traj.length();
  const auto M = traj.states.cols();
  Matrix x(1, T * M);
  for (int t = 0; t < T; ++t) x.block(0, t * M, 1, M) = traj.states.row(t);
  return x;
}

// Sample-major outputs (n x R*K) to row-major timesteps ((n*R) x K).
Matrix unfold(const Matrix& out, int k) {
  const auto r = out.cols() / k;
  Matrix rows(out.rows() * r, k);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index t = 0; t < r; ++t) rows.row(i * r + t) = out.block(i, t * k, 1, k);
  return rows;
}

Matrix fold(const Matrix& rows, Eigen::Index n) {
  const auto r = rows.rows() / n;
  const auto k = rows.cols();
  Matrix out(n, r * k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < r; ++t) out.block(i, t * k, 1, k) = rows.row(i * r + t);
  return out;
}

struct TrainingSet {
  Matrix inputs;                // n x D
  Matrix targets;               // (n*R) x 2, regression
  std::vector<int> labels;      // n*R, classification
  int rows_per_sample = 1;

  Eigen::Index size() const { return inputs.rows(); }
};

TrainingSet build_set(const PreparedCohort& data, Split split, bool full_encounter) {
  TrainingSet set;
  const auto idx = data.data.indices(split);
  if (idx.empty()) return set;
  const auto M = data.data.trajectories[idx.front()].states.cols();
  std::size_t rows = 0;
  for (auto i : idx) rows += data.data.trajectories[i].length();
  const int T = data.data.trajectories[idx.front()].length();
  if (full_encounter) {
    for (auto i : idx)
      if (data.data.trajectories[i].length() != T) throw ShapeError("full-encounter inputs need equal trajectory lengths");
    set.rows_per_sample = T;
    set.inputs.resize(static_cast<Eigen::Index>(idx.size()), T * M);
  } else {
    set.inputs.resize(static_cast<Eigen::Index>(rows), kContextSteps * M);
  }
  set.targets.resize(static_cast<Eigen::Index>(rows), kActionDims);
  set.labels.reserve(rows);
  Eigen::Index r = 0;
  Eigen::Index s = 0;
  for (auto i : idx) {
    const auto& traj = data.data.trajectories[i];
    const Eigen::Index len = traj.length();
    if (full_encounter) {
      set.inputs.row(s++) = flatten_encounter(traj);
    } else {
      set.inputs.middleRows(r, len) = context_windows(traj);
    }
    set.targets.middleRows(r, len) = traj.actions;
    set.labels.insert(set.labels.end(), data.labels[i].begin(), data.labels[i].end());
    r += len;
  }
  return set;
}

// Loss over samples [rows of set] given raw network outputs; grad is in output layout.
nn::LossResult sample_loss(BcMode mode, const Matrix& out, const TrainingSet& set, std::span<const Eigen::Index> samples) {
  const int R = set.rows_per_sample;
  const int K = mode == BcMode::classification ? kActionClasses : kActionDims;
  const Matrix rows = unfold(out, K);
  nn::LossResult loss;
  if (mode == BcMode::classification) {
    std::vector<int> labels;
    labels.reserve(samples.size() * R);
    for (auto s : samples)
      for (int t = 0; t < R; ++t) labels.push_back(set.labels[s * R + t]);
    loss = nn::nll_loss(rows, labels);
  } else {
    Matrix target(static_cast<Eigen::Index>(samples.size()) * R, kActionDims);
    Eigen::Index k = 0;
    for (auto s : samples)
      for (int t = 0; t < R; ++t) target.row(k++) = set.targets.row(s * R + t);
    loss = nn::rmse_loss(rows, target);
  }
  loss.grad = fold(loss.grad, out.rows());
  return loss;
}

Matrix gather_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

double evaluate_loss(nn::Mlp& net, BcMode mode, const TrainingSet& set) {
  std::vector<Eigen::Index> all(set.size());
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  const Matrix out = net.forward(set.inputs, nn::Mode::eval);
  return sample_loss(mode, out, set, all).value;
}

}  // namespace

BcTrainResult train_bc(const PreparedCohort& data, BcMode mode, const BcHyperparams& hp) {
  hp.validate();
  const TrainingSet train = build_set(data, Split::train, hp.full_encounter);
  if (train.size() == 0) throw PreconditionError("BC needs a non-empty train split");
  const TrainingSet val = build_set(data, Split::val, hp.full_encounter);

  BcTrainResult result;
  auto& policy = result.policy;
  policy.mode = mode;
  policy.full_encounter = hp.full_encounter;
  policy.feature_count = data.data.schema.features.size();
  policy.horizon = hp.full_encounter ? train.rows_per_sample : 0;
  policy.source = data.source;
  policy.artifacts = data.artifacts;
  policy.feature_names = data.data.schema.features.names;

  nn::MlpSpec spec;
  spec.input = static_cast<int>(train.inputs.cols());
  spec.hidden = hp.hidden;
  spec.output = train.rows_per_sample * policy.head_width();
  spec.batch_norm = hp.batch_norm;
  spec.head = mode == BcMode::classification ? nn::Head::softmax : nn::Head::linear;

  Rng rng(hp.seed);
  nn::Mlp net(spec, rng.derive(1).next());
  nn::Optimizer opt(net.params(), {hp.optimizer, hp.lr});

  nn::Mlp best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::vector<Eigen::Index> order(train.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 1; epoch <= hp.epochs; ++epoch) {
    Rng shuffle_rng = rng.derive(1000 + static_cast<std::uint64_t>(epoch));
    shuffle_rng.shuffle(order);
    double total = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < train.size(); start += hp.batch) {
      const Eigen::Index len = std::min<Eigen::Index>(hp.batch, train.size() - start);
      if (hp.batch_norm && len < 2) continue;
      const std::span<const Eigen::Index> batch(order.data() + start, static_cast<std::size_t>(len));
      const Matrix out = net.forward(gather_rows(train.inputs, batch), nn::Mode::train);
      const auto loss = sample_loss(mode, out, train, batch);
      if (!std::isfinite(loss.value))
        throw TrainingDivergenceError("non-finite BC loss at epoch " + std::to_string(epoch));
      opt.zero_grad();
      net.backward(loss.grad);
      opt.step();
      total += loss.value * static_cast<double>(len);
      seen += len;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = seen > 0 ? total / static_cast<double>(seen) : 0.0;
    rec.val_loss = val.size() > 0 ? evaluate_loss(net, mode, val) : rec.train_loss;
    if (!std::isfinite(rec.val_loss))
      throw TrainingDivergenceError("non-finite BC validation loss at epoch " + std::to_string(epoch));
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
  policy.net = std::move(best);
  return result;
}

BcTrainResult train_bc(const CohortDataset& cohort, const Subgroup& subgroup, BcMode mode, const BcHyperparams& hp) {
  return train_bc(prepare_subgroup(cohort, subgroup), mode, hp);
}

Matrix policy_inputs(const BcPolicy& policy, const PatientTrajectory& traj) {
  if (traj.states.cols() != policy.feature_count)
    throw SchemaError("trajectory has " + std::to_string(traj.states.cols()) + " features, policy expects " +
                      std::to_string(policy.feature_count));
  if (!policy.full_encounter) return context_windows(traj);
  if (traj.length() != policy.horizon) throw SchemaError("encounter length differs from the policy's horizon");
  return flatten_encounter(traj);
}

BcPrediction predict(BcPolicy& policy, const Matrix& inputs) {
  if (inputs.cols() != policy.input_width())
    throw SchemaError("policy input width is " + std::to_string(policy.input_width()) + ", got " +
                      std::to_string(inputs.cols()));
  BcPrediction p;
  const Matrix rows = unfold(policy.net.forward(inputs, nn::Mode::eval), policy.head_width());
  if (policy.mode == BcMode::regression) {
    p.values = rows;
    return p;
  }
  p.values = nn::softmax_rows(rows);
  p.labels.resize(p.values.rows());
  for (Eigen::Index r = 0; r < p.values.rows(); ++r) p.values.row(r).maxCoeff(&p.labels[r]);
  return p;
}

BcPrediction predict_trajectory(BcPolicy& policy, const PatientTrajectory& traj) {
  return predict(policy, policy_inputs(policy, traj));
}

namespace {

// Predictions for every timestep of the split, stacked in trajectory order.
BcPrediction predict_split(BcPolicy& policy, const PreparedCohort& data, Split split) {
  const auto idx = data.data.indices(split);
  BcPrediction all;
  std::vector<Matrix> chunks;
  Eigen::Index rows = 0;
  for (auto i : idx) {
    auto p = predict_trajectory(policy, data.data.trajectories[i]);
    rows += p.values.rows();
    chunks.push_back(std::move(p.values));
    all.labels.insert(all.labels.end(), p.labels.begin(), p.labels.end());
  }
  all.values.resize(rows, policy.head_width());
  Eigen::Index r = 0;
  for (const auto& c : chunks) {
    all.values.middleRows(r, c.rows()) = c;
    r += c.rows();
  }
  return all;
}

DrugRmse rmse_against(const Matrix& pred, const PreparedCohort& data, Split split) {
  const auto idx = data.data.indices(split);
  if (idx.empty()) throw PreconditionError("RMSE over an empty split");
  double se[2] = {0.0, 0.0};
  Eigen::Index r = 0;
  for (auto i : idx) {
    const auto& a = data.data.trajectories[i].actions;
    for (Eigen::Index t = 0; t < a.rows(); ++t, ++r)
      for (int d = 0; d < 2; ++d) {
        const double e = pred(r, d) - a(t, d);
        se[d] += e * e;
      }
  }
  return {std::sqrt(se[0] / static_cast<double>(r)), std::sqrt(se[1] / static_cast<double>(r))};
}

std::size_t split_rows(const PreparedCohort& data, Split split) {
  std::size_t n = 0;
  for (auto i : data.data.indices(split)) n += data.data.trajectories[i].length();
  return n;
}

}  // namespace

DrugRmse eval_rmse(BcPolicy& policy, const PreparedCohort& data, Split split) {
  if (policy.mode != BcMode::regression) throw PreconditionError("RMSE needs a regression policy");
  return rmse_against(predict_split(policy, data, split).values, data, split);
}

DrugRmse zero_baseline_rmse(const PreparedCohort& data, Split split) {
  return rmse_against(Matrix::Zero(static_cast<Eigen::Index>(split_rows(data, split)), 2), data, split);
}

double auroc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (positive[order[k]]) {
        rank_sum += avg_rank;
        n_pos += 1.0;
      }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw UndefinedMetricError("AUROC needs both positive and negative samples");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

AurocResult macro_auroc(const Matrix& probabilities, std::span<const int> labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size())
    throw ShapeError("macro_auroc: probability rows differ from label count");
  std::vector<int> counts(probabilities.cols(), 0);
  for (int y : labels) {
    if (y < 0 || y >= probabilities.cols()) throw ShapeError("macro_auroc: label out of range");
    ++counts[y];
  }
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2)
    throw UndefinedMetricError("AUROC needs at least two distinct labels");

  AurocResult res;
  std::vector<double> scores(labels.size());
  std::vector<int> positive(labels.size());
  for (int k = 0; k < probabilities.cols(); ++k) {
    if (counts[k] == 0) {
      res.skipped.push_back(k);
      continue;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probabilities(static_cast<Eigen::Index>(i), k);
      positive[i] = labels[i] == k;
    }
    res.classes.push_back(k);
    res.per_class.push_back(auroc(scores, positive));
  }
  res.macro = std::accumulate(res.per_class.begin(), res.per_class.end(), 0.0) / static_cast<double>(res.per_class.size());
  return res;
}

AurocResult eval_auroc(BcPolicy& policy, const PreparedCohort& data, Split split) {
  if (policy.mode != BcMode::classification) throw PreconditionError("AUROC needs a classification policy");
  const auto pred = predict_split(policy, data, split);
  std::vector<int> labels;
  for (auto i : data.data.indices(split)) labels.insert(labels.end(), data.labels[i].begin(), data.labels[i].end());
  return macro_auroc(pred.values, labels);
}

Json bc_to_json(const BcPolicy& policy) {
  return {{"format", "bc-policy"},
          {"version", 1},
          {"mode", to_string(policy.mode)},
          {"full_encounter", policy.full_encounter},
          {"feature_count", policy.feature_count},
          {"horizon", policy.horizon},
          {"source_subgroup", subgroup_to_json(policy.source)},
          {"features", policy.feature_names},
          {"preprocessing", policy.artifacts},
          {"network", nn::mlp_to_json(policy.net)}};
}

BcPolicy bc_from_json(const Json& j) {
  if (j.value("format", std::string()) != "bc-policy") throw SchemaError("not a BC policy checkpoint");
  if (j.value("version", 0) != 1) throw SchemaError("unsupported BC checkpoint version");
  BcPolicy p;
  p.mode = parse_bc_mode(j.at("mode").get<std::string>());
  p.full_encounter = j.at("full_encounter").get<bool>();
  p.feature_count = j.at("feature_count").get<int>();
  p.horizon = j.at("horizon").get<int>();
  p.source = subgroup_from_json(j.at("source_subgroup"));
  p.feature_names = j.at("features").get<std::vector<std::string>>();
  p.artifacts = j.at("preprocessing").get<Preprocessing>();
  p.net = nn::mlp_from_json(j.at("network"));
  return p;
}

Json history_to_json(const std::vector<EpochRecord>& history) {
  Json arr = Json::array();
  for (const auto& e : history) arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  return arr;
}

}  // namespace cfpolicy
