#pragma once

// Base kernels, cosine-normalized Gram matrices, and Frobenius alignment.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtonmkl/binary_io.hpp"
#include "mtonmkl/data.hpp"
#include "mtonmkl/error.hpp"
#include "mtonmkl/linalg.hpp"

namespace mtonmkl {

enum class KernelKind : std::uint32_t { linear = 0, polynomial = 1, gaussian = 2 };

/// How a Gaussian spread s enters the exponent.
enum class GaussianForm : std::uint32_t {
  two_sigma_squared = 0,  // exp(-|x-y|^2 / (2 s^2))
  sigma = 1,              // exp(-|x-y|^2 / s)
};

struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  int degree = 2;       // polynomial
  double offset = 1.0;  // polynomial
  double spread = 1.0;  // gaussian
  GaussianForm form = GaussianForm::two_sigma_squared;

  static KernelSpec linear() { return {}; }
  static KernelSpec polynomial(int degree, double offset = 1.0) {
    KernelSpec s;
    s.kind = KernelKind::polynomial;
    s.degree = degree;
    s.offset = offset;
    return s;
  }
  static KernelSpec gaussian(double spread, GaussianForm form = GaussianForm::two_sigma_squared) {
    KernelSpec s;
    s.kind = KernelKind::gaussian;
    s.spread = spread;
    s.form = form;
    return s;
  }

  void validate() const {
    if (kind == KernelKind::polynomial && degree < 1) throw DomainError("polynomial kernel degree must be >= 1");
    if (kind == KernelKind::gaussian && !(spread > 0.0 && std::isfinite(spread))) {
      throw DomainError("gaussian kernel spread must be positive");
    }
  }

  std::string describe() const {
    switch (kind) {
      case KernelKind::linear: return "linear";
      case KernelKind::polynomial:
        return "poly(d=" + std::to_string(degree) + ",c=" + detail::format_double(offset) + ")";
      case KernelKind::gaussian: return "gauss(s=" + detail::format_double(spread) + ")";
    }
    return "?";
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// One linear, one inhomogeneous quadratic, and Gaussians with spreads 2^1..2^8.
inline std::vector<KernelSpec> default_kernel_specs(GaussianForm form = GaussianForm::two_sigma_squared) {
  std::vector<KernelSpec> specs{KernelSpec::linear(), KernelSpec::polynomial(2, 1.0)};
  for (int e = 1; e <= 8; ++e) specs.push_back(KernelSpec::gaussian(std::ldexp(1.0, e), form));
  return specs;
}

template <class X, class Y>
double evaluate_kernel(const KernelSpec& spec, const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& y) {
  detail::require_dims(x.size() == y.size(), "evaluate_kernel: vectors of length " + std::to_string(x.size()) +
                                                 " and " + std::to_string(y.size()));
  switch (spec.kind) {
    case KernelKind::linear: return x.dot(y);
    case KernelKind::polynomial: return std::pow(spec.offset + x.dot(y), spec.degree);
    case KernelKind::gaussian: {
      const double dist2 = (x - y).squaredNorm();
      const double denom = spec.form == GaussianForm::sigma ? spec.spread : 2.0 * spec.spread * spec.spread;
      return std::exp(-dist2 / denom);
    }
  }
  throw DomainError("unknown kernel kind");
}

/// Raw (unnormalized) Gram matrix of the rows of `x`.
inline Matrix raw_gram(const KernelSpec& spec, const Matrix& x) {
  spec.validate();
  const auto n = x.rows();
  Matrix k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = evaluate_kernel(spec, x.row(i), x.row(j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// K[i][j] / sqrt(K[i][i] K[j][j]).
inline Matrix normalize_gram(const Matrix& k) {
  detail::require_dims(k.rows() == k.cols(), "normalize_gram: matrix is not square");
  const auto n = k.rows();
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(k(i, i) > 0.0)) {
      throw DomainError("normalize_gram: nonpositive diagonal entry " + detail::format_double(k(i, i)) +
                        " at index " + std::to_string(i));
    }
    inv_sqrt[i] = 1.0 / std::sqrt(k(i, i));
  }
  Matrix out = inv_sqrt.asDiagonal() * k * inv_sqrt.asDiagonal();
  out.diagonal().setOnes();
  return out;
}

/// Normalized kernel values between query rows and training rows:
/// out(q, i) = k(xq, xi) / sqrt(k(xq, xq) k(xi, xi)).
inline Matrix cross_gram(const KernelSpec& spec, const Matrix& queries, const Matrix& train) {
  spec.validate();
  detail::require_dims(queries.cols() == train.cols(), "cross_gram: feature dimension mismatch");
  Vector dq(queries.rows()), dt(train.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) dq[i] = evaluate_kernel(spec, queries.row(i), queries.row(i));
  for (Eigen::Index i = 0; i < train.rows(); ++i) dt[i] = evaluate_kernel(spec, train.row(i), train.row(i));
  Matrix out(queries.rows(), train.rows());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    if (!(dq[q] > 0.0)) throw DomainError("cross_gram: query " + std::to_string(q) + " has nonpositive self-kernel");
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
      if (!(dt[i] > 0.0)) throw DomainError("cross_gram: training point " + std::to_string(i) + " has nonpositive self-kernel");
      out(q, i) = evaluate_kernel(spec, queries.row(q), train.row(i)) / std::sqrt(dq[q] * dt[i]);
    }
  }
  return out;
}

/// Normalized base Gram matrices K_t^m for every task t and base kernel m.
class KernelBank {
 public:
  KernelBank() = default;
  KernelBank(std::vector<KernelSpec> specs, std::vector<std::vector<Matrix>> grams)
      : specs_(std::move(specs)), grams_(std::move(grams)) {
    for (const auto& per_task : grams_) {
      detail::require_dims(per_task.size() == specs_.size(), "KernelBank: gram count does not match spec count");
      for (const auto& g : per_task) {
        detail::require_dims(g.rows() == g.cols() && g.rows() == per_task.front().rows(),
                             "KernelBank: task Gram matrices must be square and equally sized");
      }
    }
  }

  std::size_t tasks() const { return grams_.size(); }
  std::size_t bases() const { return specs_.size(); }
  const std::vector<KernelSpec>& specs() const { return specs_; }
  const Matrix& gram(std::size_t task, std::size_t base) const { return grams_.at(task).at(base); }
  Eigen::Index task_size(std::size_t task) const { return grams_.at(task).empty() ? 0 : grams_[task].front().rows(); }

  bool operator==(const KernelBank& other) const {
    if (specs_ != other.specs_ || grams_.size() != other.grams_.size()) return false;
    for (std::size_t t = 0; t < grams_.size(); ++t)
      for (std::size_t m = 0; m < specs_.size(); ++m)
        if (grams_[t][m] != other.grams_[t][m]) return false;
    return true;
  }

 private:
  std::vector<KernelSpec> specs_;
  std::vector<std::vector<Matrix>> grams_;
};

inline KernelBank build_bank(const MultiTaskDataset& data, const std::vector<KernelSpec>& specs) {
  if (data.tasks.empty()) throw DomainError("build_bank: dataset has no tasks");
  if (specs.empty()) throw DomainError("build_bank: no kernel specs");
  std::vector<std::vector<Matrix>> grams(data.tasks.size());
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    grams[t].reserve(specs.size());
    for (const auto& spec : specs) grams[t].push_back(normalize_gram(raw_gram(spec, data.tasks[t].features)));
  }
  return KernelBank(specs, std::move(grams));
}

/// <K1, K2>_F / (|K1|_F |K2|_F).
inline double alignment(const Matrix& k1, const Matrix& k2) {
  detail::require_dims(k1.rows() == k2.rows() && k1.cols() == k2.cols(), "alignment: shape mismatch");
  const double n1 = k1.norm();
  const double n2 = k2.norm();
  if (!(n1 > 0.0) || !(n2 > 0.0)) throw DomainError("alignment: zero-norm input");
  const double a = frobenius_dot(k1, k2) / (n1 * n2);
  return std::clamp(a, -1.0, 1.0);
}

// Bank cache layout (little-endian):
//   "MTKB" magic, u32 version = 1, u32 T, u32 M,
//   T x u64 task sizes,
//   M x spec {u32 kind, i32 degree, f64 offset, f64 spread, u32 gaussian form},
//   then for t in tasks, m in bases: n_t*n_t f64 entries of K_t^m, row-major.

namespace detail {

inline void put_spec(std::ostream& out, const KernelSpec& s) {
  binary::put_u32(out, static_cast<std::uint32_t>(s.kind));
  binary::put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(s.degree)));
  binary::put_f64(out, s.offset);
  binary::put_f64(out, s.spread);
  binary::put_u32(out, static_cast<std::uint32_t>(s.form));
}

inline KernelSpec get_spec(std::istream& in) {
  KernelSpec s;
  const auto kind = binary::get_u32(in);
  if (kind > 2) throw FormatError("unknown kernel kind " + std::to_string(kind));
  s.kind = static_cast<KernelKind>(kind);
  s.degree = static_cast<std::int32_t>(binary::get_u32(in));
  s.offset = binary::get_f64(in);
  s.spread = binary::get_f64(in);
  const auto form = binary::get_u32(in);
  if (form > 1) throw FormatError("unknown gaussian form " + std::to_string(form));
  s.form = static_cast<GaussianForm>(form);
  s.validate();
  return s;
}

}  // namespace detail

inline void save_bank(const KernelBank& bank, std::ostream& out) {
  out.write("MTKB", 4);
  binary::put_u32(out, 1);
  binary::put_u32(out, static_cast<std::uint32_t>(bank.tasks()));
  binary::put_u32(out, static_cast<std::uint32_t>(bank.bases()));
  for (std::size_t t = 0; t < bank.tasks(); ++t) binary::put_u64(out, static_cast<std::uint64_t>(bank.task_size(t)));
  for (const auto& s : bank.specs()) detail::put_spec(out, s);
  for (std::size_t t = 0; t < bank.tasks(); ++t)
    for (std::size_t m = 0; m < bank.bases(); ++m) {
      const auto& g = bank.gram(t, m);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) binary::put_f64(out, g(i, j));
    }
  if (!out) throw FormatError("failed writing kernel bank");
}

inline KernelBank load_bank(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "MTKB") throw FormatError("not a kernel bank file");
  const auto version = binary::get_u32(in);
  if (version != 1) throw FormatError("unsupported kernel bank version " + std::to_string(version));
  const auto T = binary::get_u32(in);
  const auto M = binary::get_u32(in);
  std::vector<std::uint64_t> sizes(T);
  for (auto& n : sizes) {
    n = binary::get_u64(in);
    if (n > (1u << 16)) throw FormatError("task size out of range");
  }
  std::vector<KernelSpec> specs(M);
  for (auto& s : specs) s = detail::get_spec(in);
  std::vector<std::vector<Matrix>> grams(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    const auto n = static_cast<Eigen::Index>(sizes[t]);
    for (std::uint32_t m = 0; m < M; ++m) {
      Matrix g(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) g(i, j) = binary::get_f64(in);
      grams[t].push_back(std::move(g));
    }
  }
  return KernelBank(std::move(specs), std::move(grams));
}

inline void save_bank(const KernelBank& bank, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  save_bank(bank, out);
}

inline KernelBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return load_bank(in);
}

}  // namespace mtonmkl
