#pragma once

// Grid search on the validation split and the repeated split/tune/test loop.

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <string>
#include <vector>

#include "mtonmkl/data.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/kernels.hpp"
#include "mtonmkl/trainer.hpp"

namespace mtonmkl {

struct Grid {
  std::vector<double> C;
  std::vector<double> eta;
  std::vector<double> beta;
};

/// C in {2^-13..2^13}; eta, beta in {1, 2, .., 2^40}.
inline Grid default_grid() {
  Grid g;
  for (int e = -13; e <= 13; ++e) g.C.push_back(std::ldexp(1.0, e));
  for (int e = 0; e <= 40; ++e) {
    g.eta.push_back(std::ldexp(1.0, e));
    g.beta.push_back(std::ldexp(1.0, e));
  }
  return g;
}

struct GridPoint {
  double C = 1.0;
  double eta = 1.0;
  double beta = 0.0;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// Smaller C first, then smaller eta, then smaller beta.
inline bool tie_order(const GridPoint& a, const GridPoint& b) {
  if (a.C != b.C) return a.C < b.C;
  if (a.eta != b.eta) return a.eta < b.eta;
  return a.beta < b.beta;
}

/// Cartesian product, keeping only eta > 4 beta when the method uses the
/// neighborhood terms; other methods ignore eta and beta and get one point per C.
inline std::vector<GridPoint> expand_grid(const Grid& g, Method method, const HyperParams& base = {}) {
  std::vector<GridPoint> out;
  for (double c : g.C) {
    if (!has_neighborhood(method)) {
      out.push_back({c, base.eta, base.beta});
      continue;
    }
    for (double e : g.eta)
      for (double b : g.beta)
        if (e > 4.0 * b) out.push_back({c, e, b});
  }
  std::sort(out.begin(), out.end(), tie_order);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw DomainError("hyperparameter grid is empty after filtering to eta > 4 beta");
  return out;
}

/// Cross-kernel blocks [t][m] between evaluation rows and training rows.
using CrossBank = std::vector<std::vector<Matrix>>;

inline CrossBank build_cross_bank(const MultiTaskDataset& queries, const MultiTaskDataset& train,
                                  const std::vector<KernelSpec>& specs) {
  detail::require_dims(queries.tasks.size() == train.tasks.size(), "cross bank: task count mismatch");
  CrossBank out(train.tasks.size());
  for (std::size_t t = 0; t < train.tasks.size(); ++t)
    for (const auto& s : specs) out[t].push_back(cross_gram(s, queries.tasks[t].features, train.tasks[t].features));
  return out;
}

/// evaluate() with precomputed cross-kernel blocks.
inline Metrics evaluate(const TrainedModel& model, const CrossBank& cross, const MultiTaskDataset& test) {
  detail::require_dims(test.tasks.size() == model.tasks() && cross.size() == model.tasks(),
                       "evaluate: task count mismatch");
  Metrics out;
  out.kind = model.training.front().kind;
  for (std::size_t t = 0; t < test.tasks.size(); ++t) {
    const auto& task = test.tasks[t];
    if (task.size() == 0) throw DomainError("evaluate: empty test split for task '" + task.id + "'");
    const Vector w = model.theta.task_weights(t);
    Matrix k = Matrix::Zero(task.size(), model.training[t].size());
    for (std::size_t m = 0; m < model.specs.size(); ++m)
      if (w[static_cast<Eigen::Index>(m)] != 0.0) k += w[static_cast<Eigen::Index>(m)] * cross[t][m];
    const Vector scores = predict(model.svms[t], k);
    double metric = 0.0;
    if (task.kind == TaskKind::classification) {
      for (Eigen::Index i = 0; i < scores.size(); ++i) metric += predict_label(scores[i]) == task.targets[i] ? 1.0 : 0.0;
    } else {
      metric = (scores - task.targets).squaredNorm();
    }
    out.per_task.push_back(metric / static_cast<double>(task.size()));
  }
  out.mean = std::accumulate(out.per_task.begin(), out.per_task.end(), 0.0) / static_cast<double>(out.per_task.size());
  return out;
}

/// Higher is better: accuracy, or negated MSE.
inline double score(const Metrics& m) { return m.kind == TaskKind::classification ? m.mean : -m.mean; }

struct GridResult {
  GridPoint point;
  double validation = 0.0;  // accuracy or MSE
  bool failed = false;
  std::string error;
};

struct TuneResult {
  GridPoint best;
  std::vector<GridResult> grid;  // in tie order
};

/// Trains on `train` at every grid point and selects by validation metric.
inline TuneResult tune(Method method, const KernelBank& bank, const MultiTaskDataset& train,
                       const MultiTaskDataset& validation, const std::vector<GridPoint>& points,
                       const TrainOptions& base, unsigned workers = 1) {
  if (points.empty()) throw DomainError("tune: empty grid");
  const CrossBank cross = build_cross_bank(validation, train, bank.specs());
  TuneResult out;
  out.grid.resize(points.size());
  auto run = [&](std::size_t i) {
    GridResult r;
    r.point = points[i];
    try {
      TrainOptions opts = base;
      opts.workers = 1;
      opts.hp.C = points[i].C;
      opts.hp.eta = points[i].eta;
      opts.hp.beta = points[i].beta;
      const auto model = train_baseline(method, bank, train, opts);
      r.validation = evaluate(model, cross, validation).mean;
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
    }
    out.grid[i] = std::move(r);
  };
  if (workers <= 1) {
    for (std::size_t i = 0; i < points.size(); ++i) run(i);
  } else {
    for (std::size_t start = 0; start < points.size(); start += workers) {
      std::vector<std::future<void>> jobs;
      for (std::size_t i = start; i < std::min(points.size(), start + workers); ++i)
        jobs.push_back(std::async(std::launch::async, run, i));
      for (auto& j : jobs) j.get();
    }
  }
  const bool classification = train.tasks.front().kind == TaskKind::classification;
  const GridResult* best = nullptr;
  for (const auto& r : out.grid) {
    if (r.failed) continue;
    const double s = classification ? r.validation : -r.validation;
    const double bs = best == nullptr ? 0.0 : (classification ? best->validation : -best->validation);
    if (best == nullptr || s > bs) best = &r;  // strict: earlier (tie-ordered) points win ties
  }
  if (best == nullptr) throw NumericError("tune: training failed at every grid point (" + out.grid.front().error + ")");
  out.best = best->point;
  return out;
}

struct RepeatResult {
  int repeat = 0;
  std::uint64_t seed = 0;
  GridPoint chosen;
  Metrics test;
};

/// One split/tune/train/test round. `fixed` skips tuning.
inline RepeatResult run_repeat(Method method, const MultiTaskDataset& data, const std::vector<KernelSpec>& specs,
                               const std::vector<GridPoint>& points, const TrainOptions& base, SplitPlan plan,
                               int repeat, const GridPoint* fixed = nullptr, unsigned workers = 1,
                               bool standardize = false) {
  RepeatResult out;
  out.repeat = repeat;
  out.seed = plan.seed;
  auto parts = split(data, plan);
  if (standardize) {
    const auto z = Standardizer::fit(parts.train);
    parts.train = z.apply(std::move(parts.train));
    parts.validation = z.apply(std::move(parts.validation));
    parts.test = z.apply(std::move(parts.test));
  }
  const KernelBank bank = build_bank(parts.train, specs);
  out.chosen = fixed != nullptr ? *fixed : tune(method, bank, parts.train, parts.validation, points, base, workers).best;
  TrainOptions opts = base;
  opts.hp.C = out.chosen.C;
  opts.hp.eta = out.chosen.eta;
  opts.hp.beta = out.chosen.beta;
  const auto model = train_baseline(method, bank, parts.train, opts);
  out.test = evaluate(model, build_cross_bank(parts.test, parts.train, specs), parts.test);
  return out;
}

}  // namespace mtonmkl
