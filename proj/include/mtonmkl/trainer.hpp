#pragma once

// Block-coordinate training of MT-ONMKL and the in-house baselines, plus
// out-of-sample prediction, evaluation, and the alignment report.

#include <cctype>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mtonmkl/blocks.hpp"
#include "mtonmkl/bounds.hpp"
#include "mtonmkl/data.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/kernels.hpp"
#include "mtonmkl/params.hpp"
#include "mtonmkl/subproblems.hpp"
#include "mtonmkl/svm.hpp"

namespace mtonmkl {

enum class Method : std::uint32_t { mtonmkl = 0, itl = 1, avmtmkl = 2, mtmkl = 3, kta = 4 };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::mtonmkl: return "MT-ONMKL";
    case Method::itl: return "ITL";
    case Method::avmtmkl: return "AVMTMKL";
    case Method::mtmkl: return "MT-MKL";
    case Method::kta: return "KTA";
  }
  return "?";
}

inline Method parse_method(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  if (s == "MT-ONMKL" || s == "MTONMKL") return Method::mtonmkl;
  if (s == "ITL") return Method::itl;
  if (s == "AVMTMKL") return Method::avmtmkl;
  if (s == "MT-MKL" || s == "MTMKL") return Method::mtmkl;
  if (s == "KTA") return Method::kta;
  throw DomainError("unknown method '" + s + "' (expected MT-ONMKL, ITL, AVMTMKL, MT-MKL or KTA)");
}

inline bool has_neighborhood(Method m) { return m == Method::mtonmkl || m == Method::kta; }

enum class Step : std::uint32_t { neighborhood = 0, svm = 1, theta = 2 };

inline const char* to_string(Step s) {
  switch (s) {
    case Step::neighborhood: return "neighborhood";
    case Step::svm: return "svm";
    case Step::theta: return "theta";
  }
  return "?";
}

/// Objective value after one block step, split into its terms:
/// total = svm + (eta/2) fit + (beta/2) omega.
struct TraceEntry {
  int iteration = 0;
  Step step = Step::svm;
  double objective = 0.0;
  double svm = 0.0;
  double fit = 0.0;
  double omega = 0.0;
};

enum class BlockOrder : std::uint32_t {
  neighborhood_first = 0,  // K_hat -> SVM -> theta
  svm_first = 1,           // SVM -> theta -> K_hat, K_hat starts at zero
};

struct TrainOptions {
  HyperParams hp;
  BlockOrder order = BlockOrder::neighborhood_first;
  bool theta_line_search = true;   // backtrack the theta step until the objective does not increase
  bool printed_theta_objective = false;
  int line_search_halvings = 30;
  QpOptions qp;
  RidgeOptions ridge;
  unsigned workers = 1;  // parallel per-task SVM solves
};

struct TrainedModel {
  Method method = Method::mtonmkl;
  HyperParams hp;
  std::vector<KernelSpec> specs;
  ThetaParams theta;
  std::vector<SvmSolution> svms;
  std::optional<NeighborhoodSet> neighborhood;
  std::vector<Task> training;
  std::vector<TraceEntry> trace;

  std::size_t tasks() const { return training.size(); }
};

/// Maps the current theta to a neighborhood set. Returning std::nullopt
/// leaves the current set unchanged.
using NeighborhoodStep = std::function<NeighborhoodSet(const ThetaParams&)>;

namespace detail {

inline void check_bank_matches(const KernelBank& bank, const MultiTaskDataset& data) {
  detail::require_dims(bank.tasks() == data.tasks.size(), "kernel bank and dataset have different task counts");
  for (std::size_t t = 0; t < bank.tasks(); ++t) {
    detail::require_dims(bank.task_size(t) == data.tasks[t].size(),
                         "kernel bank and dataset disagree on the size of task " + std::to_string(t));
  }
}

inline SvmSolution solve_task(const Matrix& k, const Task& task, const HyperParams& hp, const SvmSolution* warm) {
  SvmOptions opts;
  opts.tol = hp.svm_tol;
  if (task.kind == TaskKind::classification) {
    const Vector* start = (warm != nullptr && warm->alpha.size() == task.size()) ? &warm->alpha : nullptr;
    return solve_svc(k, task.targets, hp.C, opts, start);
  }
  return solve_svr(k, task.targets, hp.C, hp.epsilon, opts, warm);
}

struct SvmPass {
  std::vector<SvmSolution> solutions;
  double primal = 0.0;
};

inline SvmPass solve_all(const KernelBank& bank, const MultiTaskDataset& data, const ThetaParams& theta,
                         const HyperParams& hp, const std::vector<SvmSolution>& warm, unsigned workers) {
  const auto T = bank.tasks();
  SvmPass pass;
  pass.solutions.resize(T);
  std::vector<double> primal(T, 0.0);
  auto one = [&](std::size_t t) {
    const Matrix k = combined_kernel(bank, theta, t);
    const SvmSolution* w = t < warm.size() ? &warm[t] : nullptr;
    pass.solutions[t] = solve_task(k, data.tasks[t], hp, w);
    primal[t] = primal_objective(pass.solutions[t], k, data.tasks[t].targets, hp.C, hp.epsilon);
  };
  if (workers <= 1 || T <= 1) {
    for (std::size_t t = 0; t < T; ++t) one(t);
  } else {
    std::vector<std::future<void>> jobs;
    for (std::size_t t = 0; t < T; ++t) jobs.push_back(std::async(std::launch::async, one, t));
    for (auto& j : jobs) j.get();
  }
  for (double p : primal) pass.primal += p;  // fixed summation order
  return pass;
}

inline std::vector<Vector> expansions(const std::vector<SvmSolution>& svms) {
  std::vector<Vector> out;
  out.reserve(svms.size());
  for (const auto& s : svms) out.push_back(s.expansion);
  return out;
}

// theta'A theta - theta'b + c.
inline double fit_term(const StructureCache& cache, const Vector& theta, const Vector& b, double c) {
  return theta.dot(cache.A * theta) - theta.dot(b) + c;
}

}  // namespace detail

/// K_hat_t = y_t y_t'.
inline NeighborhoodSet label_neighborhood(const MultiTaskDataset& data) {
  NeighborhoodSet out;
  for (const auto& task : data.tasks) out.matrices.push_back(task.targets * task.targets.transpose());
  return out;
}

/// Alternating minimization over (K_hat, SVM duals, theta).
///
/// `nbhd_step` empty means the neighborhood is frozen at `frozen` (KTA).
/// The theta block solves the nonnegative QP with the duals fixed and then,
/// when line search is on, backtracks along the segment from the previous
/// theta until the objective (re-evaluated with fresh SVM solves) does not
/// increase.
inline TrainedModel train_alternating(Method tag, const KernelBank& bank, const MultiTaskDataset& data,
                                      const TrainOptions& opts, const NeighborhoodStep& nbhd_step,
                                      std::optional<NeighborhoodSet> frozen = std::nullopt) {
  const auto& hp = opts.hp;
  hp.validate();
  validate(data);
  detail::check_bank_matches(bank, data);
  const StructureCache cache = build_A(bank, opts.ridge);
  const auto& L = cache.layout;

  TrainedModel model;
  model.method = tag;
  model.hp = hp;
  model.specs = bank.specs();
  model.training = data.tasks;
  model.theta = ThetaParams::uniform(L);

  NeighborhoodSet nbhd;
  if (frozen) {
    nbhd = std::move(*frozen);
  } else {
    for (std::size_t t = 0; t < bank.tasks(); ++t) nbhd.matrices.push_back(Matrix::Zero(bank.task_size(t), bank.task_size(t)));
  }
  check_neighborhood(bank, nbhd);
  Vector b = build_b(bank, nbhd);
  double c = build_c(nbhd);
  double omega_value = omega(cache, b, c);

  double svm_value = 0.0;
  bool have_svm = false;
  auto total = [&](double svm, const Vector& theta) {
    return svm + 0.5 * hp.eta * detail::fit_term(cache, theta, b, c) + 0.5 * hp.beta * omega_value;
  };
  auto record = [&](int iteration, Step step) {
    TraceEntry e;
    e.iteration = iteration;
    e.step = step;
    e.svm = svm_value;
    e.fit = detail::fit_term(cache, model.theta.theta, b, c);
    e.omega = omega_value;
    e.objective = total(svm_value, model.theta.theta);
    model.trace.push_back(e);
  };

  auto neighborhood_block = [&](int iteration) {
    if (!nbhd_step) return;
    nbhd = nbhd_step(model.theta);
    check_neighborhood(bank, nbhd);
    b = build_b(bank, nbhd);
    c = build_c(nbhd);
    omega_value = omega(cache, b, c);
    if (have_svm) record(iteration, Step::neighborhood);
  };
  auto svm_block = [&](int iteration) {
    auto pass = detail::solve_all(bank, data, model.theta, hp, model.svms, opts.workers);
    model.svms = std::move(pass.solutions);
    svm_value = pass.primal;
    have_svm = true;
    record(iteration, Step::svm);
  };
  auto theta_block = [&](int iteration) {
    const Vector q = build_q(bank, detail::expansions(model.svms));
    const auto candidate =
        solve_theta(cache, b, q, hp.eta, opts.qp, &model.theta.theta, opts.printed_theta_objective);
    if (!opts.theta_line_search) {
      model.theta = candidate.params;
      auto pass = detail::solve_all(bank, data, model.theta, hp, model.svms, opts.workers);
      model.svms = std::move(pass.solutions);
      svm_value = pass.primal;
      record(iteration, Step::theta);
      return;
    }
    const double current = total(svm_value, model.theta.theta);
    const Vector direction = candidate.params.theta - model.theta.theta;
    double step = 1.0;
    for (int k = 0; k <= opts.line_search_halvings; ++k, step *= 0.5) {
      const Vector trial = (model.theta.theta + step * direction).cwiseMax(0.0);
      const ThetaParams trial_params(L, trial);
      auto pass = detail::solve_all(bank, data, trial_params, hp, model.svms, opts.workers);
      if (total(pass.primal, trial) <= current) {
        model.theta = trial_params;
        model.svms = std::move(pass.solutions);
        svm_value = pass.primal;
        break;
      }
    }
    record(iteration, Step::theta);
  };

  double previous = std::numeric_limits<double>::infinity();
  for (int iteration = 1; iteration <= hp.max_outer; ++iteration) {
    if (opts.order == BlockOrder::neighborhood_first) {
      neighborhood_block(iteration);
      svm_block(iteration);
      theta_block(iteration);
    } else {
      svm_block(iteration);
      theta_block(iteration);
      neighborhood_block(iteration);
    }
    const double now = model.trace.back().objective;
    if (std::isfinite(previous) && previous - now <= hp.relative_decrease * std::abs(previous)) break;
    previous = now;
  }
  model.neighborhood = std::move(nbhd);
  return model;
}

inline TrainedModel train_mtonmkl(const KernelBank& bank, const MultiTaskDataset& data, const TrainOptions& opts) {
  const StructureCache cache = build_A(bank, opts.ridge);
  const double eta = opts.hp.eta, beta = opts.hp.beta;
  NeighborhoodStep step = [&bank, cache, eta, beta](const ThetaParams& theta) {
    return solve_neighborhood(bank, cache, theta, eta, beta);
  };
  return train_alternating(Method::mtonmkl, bank, data, opts, step);
}

inline TrainedModel train_kta(const KernelBank& bank, const MultiTaskDataset& data, const TrainOptions& opts) {
  return train_alternating(Method::kta, bank, data, opts, {}, label_neighborhood(data));
}

namespace detail {

// Sum over groups (mu, lambda_1..lambda_T) of the group's Euclidean norm.
inline double group_norm(const ThetaParams& theta) {
  double s = theta.mu().norm();
  for (std::size_t t = 0; t < theta.layout.tasks; ++t) s += theta.lambda(t).norm();
  return s;
}

inline ThetaParams rescale_to_ball(ThetaParams theta) {
  const double s = group_norm(theta);
  if (s > 0.0) theta.theta /= s;
  return theta;
}

// Maximizer of theta'q over {theta >= 0, |mu|_2 + sum_t |lambda_t|_2 <= 1}: the
// group whose (nonnegative) q-slice has the largest norm, normalized; ties go
// to mu.
inline ThetaParams group_ball_vertex(const ThetaLayout& L, const Vector& q) {
  const ThetaParams qp(L, q.cwiseMax(0.0));
  Vector out = Vector::Zero(L.size());
  double best = qp.mu().norm();
  int best_group = -1;
  for (std::size_t t = 0; t < L.tasks; ++t) {
    const double v = qp.lambda(t).norm();
    if (v > best) {
      best = v;
      best_group = static_cast<int>(t);
    }
  }
  if (best <= 0.0) return ThetaParams(L, Vector::Constant(L.size(), 0.0));
  for (std::size_t m = 0; m < L.bases; ++m) {
    const auto idx = best_group < 0 ? L.mu(m) : L.lambda(static_cast<std::size_t>(best_group), m);
    out[idx] = qp.theta[idx] / best;
  }
  return ThetaParams(L, out);
}

}  // namespace detail

/// Multi-task MKL without neighborhood terms: alternates SVM solves with a
/// conditional-gradient theta step over the group-norm ball
/// |mu|_2 + sum_t |lambda_t|_2 <= 1, followed by rescaling onto the ball's
/// boundary and backtracking until the SVM objective does not increase.
inline TrainedModel train_mtmkl(const KernelBank& bank, const MultiTaskDataset& data, const TrainOptions& opts,
                                Method tag = Method::mtmkl) {
  const auto& hp = opts.hp;
  if (!(hp.C > 0.0)) throw DomainError("hyperparameter C must be positive");
  validate(data);
  detail::check_bank_matches(bank, data);
  const ThetaLayout L{bank.bases(), bank.tasks()};

  TrainedModel model;
  model.method = tag;
  model.hp = hp;
  model.specs = bank.specs();
  model.training = data.tasks;
  model.theta = detail::rescale_to_ball(ThetaParams::uniform(L));

  auto pass = detail::solve_all(bank, data, model.theta, hp, {}, opts.workers);
  model.svms = std::move(pass.solutions);
  double value = pass.primal;
  model.trace.push_back({1, Step::svm, value, value, 0.0, 0.0});
  for (int iteration = 1; iteration <= hp.max_outer; ++iteration) {
    const double before = value;
    const Vector q = build_q(bank, detail::expansions(model.svms));
    const ThetaParams vertex = detail::group_ball_vertex(L, q);
    const Vector direction = vertex.theta - model.theta.theta;
    double step = 1.0;
    for (int k = 0; k <= opts.line_search_halvings; ++k, step *= 0.5) {
      const ThetaParams trial = detail::rescale_to_ball(ThetaParams(L, model.theta.theta + step * direction));
      auto trial_pass = detail::solve_all(bank, data, trial, hp, model.svms, opts.workers);
      if (trial_pass.primal <= value) {
        model.theta = trial;
        model.svms = std::move(trial_pass.solutions);
        value = trial_pass.primal;
        break;
      }
    }
    model.trace.push_back({iteration, Step::theta, value, value, 0.0, 0.0});
    if (before - value <= hp.relative_decrease * std::abs(before)) break;
  }
  return model;
}

/// One independent single-task MKL per task (shared weights unused).
inline TrainedModel train_itl(const KernelBank& bank, const MultiTaskDataset& data, const TrainOptions& opts) {
  validate(data);
  detail::check_bank_matches(bank, data);
  const ThetaLayout L{bank.bases(), bank.tasks()};
  TrainedModel model;
  model.method = Method::itl;
  model.hp = opts.hp;
  model.specs = bank.specs();
  model.training = data.tasks;
  model.theta = ThetaParams(L, Vector::Zero(L.size()));
  std::vector<std::vector<TraceEntry>> traces;
  for (std::size_t t = 0; t < bank.tasks(); ++t) {
    std::vector<Matrix> grams;
    for (std::size_t m = 0; m < bank.bases(); ++m) grams.push_back(bank.gram(t, m));
    const KernelBank single(bank.specs(), {grams});
    MultiTaskDataset one;
    one.tasks.push_back(data.tasks[t]);
    auto sub = train_mtmkl(single, one, opts, Method::itl);
    const Vector w = sub.theta.task_weights(0);
    for (std::size_t m = 0; m < bank.bases(); ++m) model.theta.theta[L.lambda(t, m)] = w[static_cast<Eigen::Index>(m)];
    model.svms.push_back(std::move(sub.svms.front()));
    traces.push_back(std::move(sub.trace));
  }
  // Sum the per-task traces entry by entry, holding each finished task at its last value.
  std::size_t longest = 0;
  for (const auto& tr : traces) longest = std::max(longest, tr.size());
  for (std::size_t i = 0; i < longest; ++i) {
    TraceEntry e;
    for (const auto& tr : traces) {
      const auto& src = tr[std::min(i, tr.size() - 1)];
      e.objective += src.objective;
      e.svm += src.svm;
    }
    e.iteration = static_cast<int>(i == 0 ? 1 : i);
    e.step = i == 0 ? Step::svm : Step::theta;
    model.trace.push_back(e);
  }
  return model;
}

/// Fixed uniform weights theta_t^m = 1/M; one SVM solve per task.
inline TrainedModel train_avmtmkl(const KernelBank& bank, const MultiTaskDataset& data, const TrainOptions& opts) {
  if (!(opts.hp.C > 0.0)) throw DomainError("hyperparameter C must be positive");
  validate(data);
  detail::check_bank_matches(bank, data);
  TrainedModel model;
  model.method = Method::avmtmkl;
  model.hp = opts.hp;
  model.specs = bank.specs();
  model.training = data.tasks;
  model.theta = ThetaParams::uniform({bank.bases(), bank.tasks()});
  auto pass = detail::solve_all(bank, data, model.theta, opts.hp, {}, opts.workers);
  model.svms = std::move(pass.solutions);
  model.trace.push_back({1, Step::svm, pass.primal, pass.primal, 0.0, 0.0});
  return model;
}

inline TrainedModel train_baseline(Method method, const KernelBank& bank, const MultiTaskDataset& data,
                                   const TrainOptions& opts) {
  switch (method) {
    case Method::itl: return train_itl(bank, data, opts);
    case Method::avmtmkl: return train_avmtmkl(bank, data, opts);
    case Method::mtmkl: return train_mtmkl(bank, data, opts);
    case Method::kta: return train_kta(bank, data, opts);
    case Method::mtonmkl: return train_mtonmkl(bank, data, opts);
  }
  throw DomainError("unknown method");
}

inline TrainedModel train(Method method, const KernelBank& bank, const MultiTaskDataset& data,
                          const TrainOptions& opts) {
  return train_baseline(method, bank, data, opts);
}

/// Combined kernel values between query rows and task t's training points.
inline Matrix task_kernel_rows(const TrainedModel& model, std::size_t task, const Matrix& queries) {
  if (task >= model.tasks()) throw DomainError("task index out of range");
  const Vector w = model.theta.task_weights(task);
  const auto& train_x = model.training[task].features;
  Matrix k = Matrix::Zero(queries.rows(), train_x.rows());
  for (std::size_t m = 0; m < model.specs.size(); ++m) {
    const double wm = w[static_cast<Eigen::Index>(m)];
    if (wm != 0.0) k += wm * cross_gram(model.specs[m], queries, train_x);
  }
  return k;
}

/// Decision values (classification) or predicted targets (regression).
inline Vector predict_task(const TrainedModel& model, std::size_t task, const Matrix& queries) {
  return predict(model.svms.at(task), task_kernel_rows(model, task, queries));
}

struct Metrics {
  TaskKind kind = TaskKind::classification;
  std::vector<double> per_task;  // accuracy in [0,1] or MSE
  double mean = 0.0;
};

inline Metrics evaluate(const TrainedModel& model, const MultiTaskDataset& test) {
  detail::require_dims(test.tasks.size() == model.tasks(), "evaluate: task count mismatch");
  Metrics out;
  out.kind = model.training.front().kind;
  for (std::size_t t = 0; t < test.tasks.size(); ++t) {
    const auto& task = test.tasks[t];
    if (task.size() == 0) throw DomainError("evaluate: empty test split for task '" + task.id + "'");
    const Vector scores = predict_task(model, t, task.features);
    double metric = 0.0;
    if (model.training[t].kind == TaskKind::classification) {
      for (Eigen::Index i = 0; i < scores.size(); ++i) metric += predict_label(scores[i]) == task.targets[i] ? 1.0 : 0.0;
    } else {
      metric = (scores - task.targets).squaredNorm();
    }
    out.per_task.push_back(metric / static_cast<double>(task.size()));
  }
  for (double v : out.per_task) out.mean += v;
  out.mean /= static_cast<double>(out.per_task.size());
  return out;
}

/// Rebuilds the training kernel bank from the features stored in the model.
inline KernelBank training_bank(const TrainedModel& model) {
  MultiTaskDataset data;
  data.tasks = model.training;
  return build_bank(data, model.specs);
}

/// entry (s, t) = alignment(K_s(theta), K_hat_t); NaN where task sizes differ.
inline Matrix alignment_report(const TrainedModel& model, const KernelBank& bank) {
  if (!model.neighborhood) throw DomainError("alignment_report: model '" + to_string(model.method) + "' has no neighborhood matrices");
  const auto T = model.tasks();
  Matrix out(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(T));
  std::vector<Matrix> optimal;
  for (std::size_t s = 0; s < T; ++s) optimal.push_back(combined_kernel(bank, model.theta, s));
  for (std::size_t s = 0; s < T; ++s)
    for (std::size_t t = 0; t < T; ++t) {
      const auto& khat = model.neighborhood->matrices[t];
      out(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
          optimal[s].rows() == khat.rows() ? alignment(optimal[s], khat) : std::numeric_limits<double>::quiet_NaN();
    }
  return out;
}

inline Matrix alignment_report(const TrainedModel& model) { return alignment_report(model, training_bank(model)); }

}  // namespace mtonmkl
