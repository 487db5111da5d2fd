#pragma once

// Multi-task datasets: CSV/manifest ingestion, the train/validation/test split
// protocol, and a seeded generator of related linear tasks.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtonmkl/error.hpp"
#include "mtonmkl/linalg.hpp"

namespace mtonmkl {

enum class TaskKind : std::uint32_t { classification = 0, regression = 1 };

inline const char* to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "regression"; }

struct Task {
  std::string id;
  Matrix features;  // n x p, one sample per row
  Vector targets;   // n
  TaskKind kind = TaskKind::classification;

  Eigen::Index size() const { return features.rows(); }
};

struct MultiTaskDataset {
  std::vector<Task> tasks;

  std::size_t task_count() const { return tasks.size(); }
  Eigen::Index feature_dim() const { return tasks.empty() ? 0 : tasks.front().features.cols(); }
  bool empty() const { return tasks.empty(); }
};

/// Checks the dataset invariants: shared feature dimension, finite values,
/// +-1 targets for classification tasks.
inline void validate(const MultiTaskDataset& data) {
  if (data.tasks.empty()) throw DomainError("dataset has no tasks");
  const auto p = data.tasks.front().features.cols();
  for (const auto& task : data.tasks) {
    if (task.features.cols() != p) {
      throw DimensionError("task '" + task.id + "' has " + std::to_string(task.features.cols()) +
                           " features, expected " + std::to_string(p));
    }
    if (task.features.rows() != task.targets.size()) {
      throw DimensionError("task '" + task.id + "': feature rows and target count differ");
    }
    if (!task.features.allFinite() || !task.targets.allFinite()) {
      throw DomainError("task '" + task.id + "' contains non-finite values");
    }
    if (task.kind == TaskKind::classification) {
      for (Eigen::Index i = 0; i < task.targets.size(); ++i) {
        if (task.targets[i] != 1.0 && task.targets[i] != -1.0) {
          throw DomainError("task '" + task.id + "': classification target at row " + std::to_string(i) +
                            " is not +-1");
        }
      }
    }
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses one task CSV: first column is the target, the rest are features.
/// A first row that does not parse as numbers is treated as a header.
/// Targets drawn from {-1, 0, 1} mark a classification task (0 is remapped
/// to -1); anything else is regression.
inline Task parse_task_csv(std::istream& in, const std::string& id) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto view = detail::trim(line);
    if (view.empty()) continue;
    const auto cells = detail::split_commas(view);
    std::vector<double> values(cells.size());
    bool numeric = true;
    std::size_t bad_col = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!detail::parse_double(cells[c], values[c])) {
        numeric = false;
        bad_col = c + 1;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && width == 0) {  // header row
        width = cells.size();
        continue;
      }
      throw FormatError(id + ": non-numeric cell at row " + std::to_string(line_no) + ", column " +
                        std::to_string(bad_col));
    }
    if (width == 0) width = cells.size();
    if (cells.size() != width) {
      throw FormatError(id + ": ragged row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                        " cells, expected " + std::to_string(width));
    }
    for (double v : values) {
      if (!std::isfinite(v)) throw FormatError(id + ": non-finite value at row " + std::to_string(line_no));
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw FormatError(id + ": no data rows");
  if (width < 2) throw FormatError(id + ": need a target column and at least one feature column");

  Task task;
  task.id = id;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(width - 1);
  task.features.resize(n, p);
  task.targets.resize(n);
  bool binary = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    task.targets[i] = r[0];
    if (r[0] != 1.0 && r[0] != -1.0 && r[0] != 0.0) binary = false;
    for (Eigen::Index j = 0; j < p; ++j) task.features(i, j) = r[static_cast<std::size_t>(j + 1)];
  }
  task.kind = binary ? TaskKind::classification : TaskKind::regression;
  if (binary) {
    for (Eigen::Index i = 0; i < n; ++i) task.targets[i] = task.targets[i] == 0.0 ? -1.0 : task.targets[i];
  }
  return task;
}

/// Reads a manifest: one CSV path per line (relative to the manifest's
/// directory), '#' starts a comment. The task id is the file stem.
inline MultiTaskDataset load_csv(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest " + manifest.string());
  const auto base = manifest.parent_path();
  MultiTaskDataset data;
  std::string line;
  while (std::getline(in, line)) {
    auto view = line.substr(0, line.find('#'));
    const auto entry = std::string(detail::trim(view));
    if (entry.empty()) continue;
    const std::filesystem::path path = std::filesystem::path(entry).is_absolute() ? std::filesystem::path(entry) : base / entry;
    std::ifstream task_in(path);
    if (!task_in) throw FormatError("cannot open task file " + path.string());
    data.tasks.push_back(parse_task_csv(task_in, path.stem().string()));
  }
  if (data.tasks.empty()) throw FormatError("manifest " + manifest.string() + " lists no tasks");
  const auto p = data.tasks.front().features.cols();
  for (const auto& t : data.tasks) {
    if (t.features.cols() != p) {
      throw FormatError("inconsistent feature dimension: task '" + t.id + "' has " +
                        std::to_string(t.features.cols()) + ", first task has " + std::to_string(p));
    }
  }
  return data;
}

inline void write_task_csv(std::ostream& out, const Task& task) {
  for (Eigen::Index i = 0; i < task.size(); ++i) {
    out << detail::format_double(task.targets[i]);
    for (Eigen::Index j = 0; j < task.features.cols(); ++j) out << ',' << detail::format_double(task.features(i, j));
    out << '\n';
  }
}

/// Writes one CSV per task plus `manifest.txt` into `dir`; returns the manifest path.
inline std::filesystem::path save_csv(const MultiTaskDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream m(manifest);
  if (!m) throw FormatError("cannot write " + manifest.string());
  m << "# one task CSV per line: target,feature_1,...,feature_p\n";
  for (const auto& task : data.tasks) {
    const auto name = task.id + ".csv";
    std::ofstream f(dir / name);
    if (!f) throw FormatError("cannot write " + (dir / name).string());
    write_task_csv(f, task);
    m << name << '\n';
  }
  return manifest;
}

struct SplitPlan {
  std::uint64_t seed = 0;
  double train = 0.2;
  double validation = 0.4;
  double test = 0.4;
  bool stratified = true;
};

struct SplitIndices {
  std::vector<Eigen::Index> train, validation, test;
};

struct DatasetSplit {
  MultiTaskDataset train, validation, test;
  std::vector<SplitIndices> indices;  // per task
};

inline Task subset(const Task& task, const std::vector<Eigen::Index>& rows) {
  Task out;
  out.id = task.id;
  out.kind = task.kind;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), task.features.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = task.features.row(rows[i]);
    out.targets[static_cast<Eigen::Index>(i)] = task.targets[rows[i]];
  }
  return out;
}

namespace detail {

// Seed for task t derived from the plan seed so tasks shuffle independently.
inline std::uint64_t task_seed(std::uint64_t seed, std::size_t t) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(t), 0x5eedu};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline void partition_group(std::vector<Eigen::Index> group, const SplitPlan& plan, std::mt19937_64& rng,
                            SplitIndices& into) {
  std::shuffle(group.begin(), group.end(), rng);
  const auto n = static_cast<double>(group.size());
  const auto n_train = static_cast<std::size_t>(std::llround(plan.train * n));
  const auto n_val = std::min(group.size() - n_train, static_cast<std::size_t>(std::llround(plan.validation * n)));
  into.train.insert(into.train.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_train));
  into.validation.insert(into.validation.end(), group.begin() + static_cast<std::ptrdiff_t>(n_train),
                         group.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  into.test.insert(into.test.end(), group.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), group.end());
}

}  // namespace detail

/// Per-task disjoint partition into train/validation/test. Stratification
/// (classification tasks only) splits each class separately, so class ratios
/// are preserved to within one sample. Deterministic for a fixed seed.
inline DatasetSplit split(const MultiTaskDataset& data, const SplitPlan& plan) {
  if (!(plan.train > 0 && plan.validation > 0 && plan.test > 0) ||
      std::abs(plan.train + plan.validation + plan.test - 1.0) > 1e-9) {
    throw DomainError("split fractions must be positive and sum to 1");
  }
  DatasetSplit out;
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    const auto& task = data.tasks[t];
    std::mt19937_64 rng(detail::task_seed(plan.seed, t));
    SplitIndices idx;
    if (plan.stratified && task.kind == TaskKind::classification) {
      std::vector<Eigen::Index> pos, neg;
      for (Eigen::Index i = 0; i < task.size(); ++i) (task.targets[i] > 0 ? pos : neg).push_back(i);
      if (pos.size() < 5 || neg.size() < 5) {
        throw DomainError("task '" + task.id + "' is too small to stratify: " + std::to_string(pos.size()) +
                          " positive, " + std::to_string(neg.size()) + " negative (need >= 5 each)");
      }
      detail::partition_group(std::move(pos), plan, rng, idx);
      detail::partition_group(std::move(neg), plan, rng, idx);
    } else {
      if (task.size() < 5) throw DomainError("task '" + task.id + "' has fewer than 5 samples");
      std::vector<Eigen::Index> all(static_cast<std::size_t>(task.size()));
      std::iota(all.begin(), all.end(), Eigen::Index{0});
      detail::partition_group(std::move(all), plan, rng, idx);
    }
    if (idx.train.empty() || idx.validation.empty() || idx.test.empty()) {
      throw DomainError("task '" + task.id + "' is too small for the requested split");
    }
    out.train.tasks.push_back(subset(task, idx.train));
    out.validation.tasks.push_back(subset(task, idx.validation));
    out.test.tasks.push_back(subset(task, idx.test));
    out.indices.push_back(std::move(idx));
  }
  return out;
}

struct SynthOptions {
  std::uint64_t seed = 1;
  std::size_t tasks = 3;
  std::size_t samples = 60;     // per task
  std::size_t features = 5;
  double relatedness = 0.9;     // in [0, 1]
  double noise = 0.3;
  TaskKind kind = TaskKind::classification;
};

/// Related linear tasks: w_t = r*w0 + (1-r)*u_t with w0, u_t standard normal,
/// x ~ N(0, I), target w_t'x + noise*N(0,1) (sign of it for classification).
inline MultiTaskDataset synth_related_tasks(const SynthOptions& opts) {
  if (opts.tasks == 0 || opts.samples == 0 || opts.features == 0) throw DomainError("synth: sizes must be positive");
  if (!(opts.relatedness >= 0.0 && opts.relatedness <= 1.0)) throw DomainError("synth: relatedness must be in [0,1]");
  if (!(opts.noise >= 0.0)) throw DomainError("synth: noise must be >= 0");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto p = static_cast<Eigen::Index>(opts.features);
  Vector w0(p);
  for (Eigen::Index j = 0; j < p; ++j) w0[j] = normal(rng);

  MultiTaskDataset data;
  for (std::size_t t = 0; t < opts.tasks; ++t) {
    Vector u(p);
    for (Eigen::Index j = 0; j < p; ++j) u[j] = normal(rng);
    const Vector w = opts.relatedness * w0 + (1.0 - opts.relatedness) * u;
    Task task;
    task.id = "task" + std::to_string(t);
    task.kind = opts.kind;
    const auto n = static_cast<Eigen::Index>(opts.samples);
    task.features.resize(n, p);
    task.targets.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) task.features(i, j) = normal(rng);
      const double value = task.features.row(i).dot(w) + opts.noise * normal(rng);
      task.targets[i] = opts.kind == TaskKind::classification ? (value >= 0.0 ? 1.0 : -1.0) : value;
    }
    data.tasks.push_back(std::move(task));
  }
  return data;
}

/// Column-wise z-scoring fitted on one dataset (pooled over tasks) and
/// applied to others. Constant columns are centered only.
struct Standardizer {
  Vector mean;
  Vector scale;

  static Standardizer fit(const MultiTaskDataset& data) {
    const auto p = data.feature_dim();
    Standardizer s;
    s.mean = Vector::Zero(p);
    s.scale = Vector::Ones(p);
    Eigen::Index count = 0;
    for (const auto& t : data.tasks) {
      s.mean += t.features.colwise().sum().transpose();
      count += t.size();
    }
    if (count == 0) return s;
    s.mean /= static_cast<double>(count);
    Vector var = Vector::Zero(p);
    for (const auto& t : data.tasks) var += (t.features.rowwise() - s.mean.transpose()).colwise().squaredNorm().transpose();
    var /= static_cast<double>(count);
    for (Eigen::Index j = 0; j < p; ++j) s.scale[j] = var[j] > 0 ? std::sqrt(var[j]) : 1.0;
    return s;
  }

  MultiTaskDataset apply(MultiTaskDataset data) const {
    for (auto& t : data.tasks) {
      t.features = ((t.features.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array()).matrix();
    }
    return data;
  }
};

}  // namespace mtonmkl
