#pragma once

// Single-file binary model format (layout in docs/model_format.md).

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mtonmkl/binary_io.hpp"
#include "mtonmkl/trainer.hpp"

namespace mtonmkl {

inline constexpr char kModelMagic[4] = {'M', 'T', 'O', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_hyper(std::ostream& out, const HyperParams& hp) {
  binary::put_f64(out, hp.C);
  binary::put_f64(out, hp.eta);
  binary::put_f64(out, hp.beta);
  binary::put_f64(out, hp.epsilon);
  binary::put_f64(out, hp.theta_tol);
  binary::put_u32(out, static_cast<std::uint32_t>(hp.max_outer));
  binary::put_f64(out, hp.relative_decrease);
  binary::put_f64(out, hp.svm_tol);
}

inline HyperParams get_hyper(std::istream& in) {
  HyperParams hp;
  hp.C = binary::get_f64(in);
  hp.eta = binary::get_f64(in);
  hp.beta = binary::get_f64(in);
  hp.epsilon = binary::get_f64(in);
  hp.theta_tol = binary::get_f64(in);
  hp.max_outer = static_cast<int>(binary::get_u32(in));
  hp.relative_decrease = binary::get_f64(in);
  hp.svm_tol = binary::get_f64(in);
  return hp;
}

}  // namespace detail

inline void save_model(const TrainedModel& model, std::ostream& out) {
  out.write(kModelMagic, 4);
  binary::put_u32(out, kModelVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(model.method));
  const auto T = model.tasks();
  const auto M = model.specs.size();
  binary::put_u32(out, static_cast<std::uint32_t>(T));
  binary::put_u32(out, static_cast<std::uint32_t>(M));
  for (const auto& s : model.specs) detail::put_spec(out, s);
  detail::put_hyper(out, model.hp);
  binary::put_vector(out, model.theta.theta);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& task = model.training[t];
    const auto& svm = model.svms[t];
    binary::put_string(out, task.id);
    binary::put_u32(out, static_cast<std::uint32_t>(task.kind));
    binary::put_matrix(out, task.features);
    binary::put_vector(out, task.targets);
    binary::put_vector(out, svm.alpha);
    binary::put_vector(out, svm.alpha_star);
    binary::put_f64(out, svm.bias);
    binary::put_f64(out, svm.objective);
  }
  std::uint32_t nbhd_tag = 0;
  if (model.neighborhood) nbhd_tag = model.neighborhood->coefficients ? 1 : 2;
  binary::put_u32(out, nbhd_tag);
  if (nbhd_tag == 1) binary::put_matrix(out, *model.neighborhood->coefficients);
  if (nbhd_tag == 2)
    for (const auto& k : model.neighborhood->matrices) binary::put_matrix(out, k);
  binary::put_u64(out, model.trace.size());
  for (const auto& e : model.trace) {
    binary::put_u32(out, static_cast<std::uint32_t>(e.iteration));
    binary::put_u32(out, static_cast<std::uint32_t>(e.step));
    binary::put_f64(out, e.objective);
    binary::put_f64(out, e.svm);
    binary::put_f64(out, e.fit);
    binary::put_f64(out, e.omega);
  }
  if (!out) throw FormatError("save_model: write failed");
}

inline TrainedModel load_model(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kModelMagic, 4)) throw FormatError("load_model: not a model file");
  const auto version = binary::get_u32(in);
  if (version != kModelVersion) throw FormatError("load_model: unsupported version " + std::to_string(version));
  TrainedModel model;
  const auto method = binary::get_u32(in);
  if (method > 4) throw FormatError("load_model: bad method tag");
  model.method = static_cast<Method>(method);
  const auto T = binary::get_u32(in);
  const auto M = binary::get_u32(in);
  if (T == 0 || M == 0 || T > (1u << 16) || M > (1u << 16)) throw FormatError("load_model: bad dimensions");
  for (std::uint32_t m = 0; m < M; ++m) model.specs.push_back(detail::get_spec(in));
  model.hp = detail::get_hyper(in);
  const ThetaLayout L{M, T};
  Vector theta = binary::get_vector(in);
  if (theta.size() != L.size()) throw FormatError("load_model: theta length does not match layout");
  model.theta = ThetaParams(L, std::move(theta));
  for (std::uint32_t t = 0; t < T; ++t) {
    Task task;
    task.id = binary::get_string(in);
    const auto kind = binary::get_u32(in);
    if (kind > 1) throw FormatError("load_model: bad task kind");
    task.kind = static_cast<TaskKind>(kind);
    task.features = binary::get_matrix(in);
    task.targets = binary::get_vector(in);
    SvmSolution svm;
    svm.kind = task.kind;
    svm.alpha = binary::get_vector(in);
    svm.alpha_star = binary::get_vector(in);
    svm.bias = binary::get_f64(in);
    svm.objective = binary::get_f64(in);
    if (task.targets.size() != task.size() || svm.alpha.size() != task.size() ||
        (task.kind == TaskKind::regression && svm.alpha_star.size() != task.size())) {
      throw FormatError("load_model: inconsistent sizes for task " + std::to_string(t));
    }
    svm.expansion = task.kind == TaskKind::classification ? Vector(task.targets.cwiseProduct(svm.alpha))
                                                          : Vector(svm.alpha - svm.alpha_star);
    model.training.push_back(std::move(task));
    model.svms.push_back(std::move(svm));
  }
  const auto nbhd_tag = binary::get_u32(in);
  if (nbhd_tag > 2) throw FormatError("load_model: bad neighborhood tag");
  if (nbhd_tag == 1) {
    Matrix coef = binary::get_matrix(in);
    if (coef.rows() != static_cast<Eigen::Index>(M) || coef.cols() != static_cast<Eigen::Index>(T))
      throw FormatError("load_model: neighborhood coefficients must be M x T");
    model.neighborhood = neighborhood_from_coefficients(training_bank(model), coef);
  } else if (nbhd_tag == 2) {
    NeighborhoodSet set;
    for (std::uint32_t t = 0; t < T; ++t) set.matrices.push_back(binary::get_matrix(in));
    model.neighborhood = std::move(set);
  }
  const auto entries = binary::get_u64(in);
  if (entries > (1u << 24)) throw FormatError("load_model: trace too long");
  for (std::uint64_t i = 0; i < entries; ++i) {
    TraceEntry e;
    e.iteration = static_cast<int>(binary::get_u32(in));
    const auto step = binary::get_u32(in);
    if (step > 2) throw FormatError("load_model: bad trace step");
    e.step = static_cast<Step>(step);
    e.objective = binary::get_f64(in);
    e.svm = binary::get_f64(in);
    e.fit = binary::get_f64(in);
    e.omega = binary::get_f64(in);
    model.trace.push_back(e);
  }
  if (!in) throw FormatError("load_model: truncated file");
  return model;
}

inline void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_model: cannot open " + path.string());
  save_model(model, out);
}

inline TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model: cannot open " + path.string());
  return load_model(in);
}

}  // namespace mtonmkl
