// mtonmkl: synth | gram | train | tune | evaluate | report.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mtonmkl/bounds.hpp"
#include "mtonmkl/data.hpp"
#include "mtonmkl/experiment.hpp"
#include "mtonmkl/kernels.hpp"
#include "mtonmkl/model_io.hpp"
#include "mtonmkl/trainer.hpp"

namespace fs = std::filesystem;
using namespace mtonmkl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// INI reader that maps "[section] key" and "section.key" to the option
// "--section.key"; every option lives on the root command.
class DottedIni : public CLI::ConfigINI {
 public:
  DottedIni() { commentChar = '#'; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::vector<CLI::ConfigItem> out;
    for (auto item : CLI::ConfigINI::from_config(input)) {
      if (item.name == "++" || item.name == "--") continue;  // section markers
      if (!item.parents.empty()) {
        item.name = item.fullname();
        item.parents.clear();
      }
      if (item.inputs.size() > 1) item.inputs = {CLI::detail::join(item.inputs, ",")};  // lists stay comma strings
      out.push_back(std::move(item));
    }
    return out;
  }
};

struct Settings {
  std::string command;
  std::string out = "out";
  std::string manifest;
  std::string model_path;
  std::string method = "mtonmkl";
  int repeats = 1;
  std::uint64_t seed_base = 0;
  unsigned workers = 0;
  bool tune_once = false;
  bool standardize = false;

  std::string kernels = "default";
  std::string gaussian_form = "two_sigma_squared";

  HyperParams hp;
  std::string order = "neighborhood_first";
  bool printed_theta = false;

  SplitPlan split;
  std::string grid_C = "pow2:-13:13";
  std::string grid_eta = "pow2:0:40";
  std::string grid_beta = "pow2:0:40";

  SynthOptions synth;
  std::string synth_kind = "classification";

  double R = 1.0;
  double rho_margin = 1.0;  // rho = c + margin
  int draws = 0;            // Monte-Carlo estimate when > 0
};

std::string num(double v) { return detail::format_double(v); }

// "pow2:LO:HI[:STEP]" for powers of two, or a comma list of numbers.
std::vector<double> parse_grid(const std::string& text, const std::string& name) {
  std::vector<double> out;
  if (text.rfind("pow2:", 0) == 0) {
    int lo = 0, hi = 0, step = 1;
    const int got = std::sscanf(text.c_str() + 5, "%d:%d:%d", &lo, &hi, &step);
    if (got < 2 || step <= 0 || hi < lo) throw ConfigError(name + ": bad range '" + text + "'");
    for (int e = lo; e <= hi; e += step) out.push_back(std::ldexp(1.0, e));
    return out;
  }
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    double v = 0.0;
    if (!detail::parse_double(detail::trim(cell), v) || !(v > 0.0)) {
      throw ConfigError(name + ": '" + cell + "' is not a positive number");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(name + ": empty grid");
  return out;
}

std::vector<KernelSpec> kernel_specs(const Settings& s) {
  GaussianForm form;
  if (s.gaussian_form == "two_sigma_squared") {
    form = GaussianForm::two_sigma_squared;
  } else if (s.gaussian_form == "sigma") {
    form = GaussianForm::sigma;
  } else {
    throw ConfigError("kernels.gaussian_form must be two_sigma_squared or sigma");
  }
  if (s.kernels == "default") return default_kernel_specs(form);
  std::vector<KernelSpec> out;
  std::stringstream ss(s.kernels);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const std::string k(detail::trim(cell));
    double v = 0.0;
    if (k == "linear") {
      out.push_back(KernelSpec::linear());
    } else if (k.rfind("poly", 0) == 0 && detail::parse_double(std::string_view(k).substr(4), v) && v >= 1.0) {
      out.push_back(KernelSpec::polynomial(static_cast<int>(v)));
    } else if (k.rfind("gauss", 0) == 0 && detail::parse_double(std::string_view(k).substr(5), v) && v > 0.0) {
      out.push_back(KernelSpec::gaussian(v, form));
    } else {
      throw ConfigError("kernels: unknown kernel '" + k + "' (linear, polyD, gaussS)");
    }
  }
  if (out.empty()) throw ConfigError("kernels: empty kernel list");
  return out;
}

TrainOptions train_options(const Settings& s) {
  TrainOptions o;
  o.hp = s.hp;
  o.printed_theta_objective = s.printed_theta;
  if (s.order == "neighborhood_first") {
    o.order = BlockOrder::neighborhood_first;
  } else if (s.order == "svm_first") {
    o.order = BlockOrder::svm_first;
  } else {
    throw ConfigError("order must be neighborhood_first or svm_first");
  }
  o.workers = 1;
  return o;
}

Method method_of(const Settings& s) {
  try {
    return parse_method(s.method);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

MultiTaskDataset load_data(const Settings& s) {
  if (s.manifest.empty()) throw ConfigError("--data is required");
  if (!fs::exists(s.manifest)) throw ConfigError("manifest not found: " + s.manifest);
  try {
    auto data = load_csv(s.manifest);
    validate(data);
    return data;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

TrainedModel load_model_file(const Settings& s) {
  if (s.model_path.empty()) throw ConfigError("--model is required");
  if (!fs::exists(s.model_path)) throw ConfigError("model not found: " + s.model_path);
  try {
    return load_model(fs::path(s.model_path));
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write " + path.string());
  return f;
}

const char* metric_name(TaskKind k) { return k == TaskKind::classification ? "accuracy" : "mse"; }

void write_metrics(std::ostream& out, const std::string& split_name, const MultiTaskDataset& data, const Metrics& m) {
  for (std::size_t t = 0; t < m.per_task.size(); ++t)
    out << split_name << ',' << t << ',' << data.tasks[t].id << ',' << metric_name(m.kind) << ','
        << num(m.per_task[t]) << '\n';
  out << split_name << ",mean,," << metric_name(m.kind) << ',' << num(m.mean) << '\n';
}

void write_trace(const fs::path& path, const TrainedModel& model) {
  auto f = open_out(path);
  f << "iteration,step,objective,svm,fit,omega\n";
  for (const auto& e : model.trace)
    f << e.iteration << ',' << to_string(e.step) << ',' << num(e.objective) << ',' << num(e.svm) << ','
      << num(e.fit) << ',' << num(e.omega) << '\n';
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const Settings& s) {
  SynthOptions o = s.synth;
  if (s.synth_kind == "classification") {
    o.kind = TaskKind::classification;
  } else if (s.synth_kind == "regression") {
    o.kind = TaskKind::regression;
  } else {
    throw ConfigError("synth.kind must be classification or regression");
  }
  MultiTaskDataset data;
  try {
    data = synth_related_tasks(o);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  const auto manifest = save_csv(data, s.out);
  std::cout << manifest.string() << '\n';
  return 0;
}

int cmd_gram(const Settings& s) {
  auto data = load_data(s);
  const auto specs = kernel_specs(s);
  if (s.standardize) data = Standardizer::fit(data).apply(std::move(data));
  fs::create_directories(s.out);
  const auto bank = build_bank(data, specs);
  save_bank(bank, fs::path(s.out) / "bank.bin");
  auto f = open_out(fs::path(s.out) / "gram_summary.csv");
  f << "task,id,kernel,index,n,trace,frobenius\n";
  for (std::size_t t = 0; t < bank.tasks(); ++t)
    for (std::size_t m = 0; m < bank.bases(); ++m)
      f << t << ',' << data.tasks[t].id << ',' << specs[m].describe() << ',' << m << ',' << bank.task_size(t) << ','
        << num(bank.gram(t, m).trace()) << ',' << num(bank.gram(t, m).norm()) << '\n';
  return 0;
}

int cmd_train(const Settings& s) {
  const auto data = load_data(s);
  const auto specs = kernel_specs(s);
  const auto method = method_of(s);
  auto opts = train_options(s);
  if (has_neighborhood(method)) {
    try {
      opts.hp.validate();
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
  }
  SplitPlan plan = s.split;
  plan.seed = s.seed_base;
  DatasetSplit parts;
  try {
    parts = split(data, plan);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  if (s.standardize) {
    const auto z = Standardizer::fit(parts.train);
    parts.train = z.apply(std::move(parts.train));
    parts.validation = z.apply(std::move(parts.validation));
    parts.test = z.apply(std::move(parts.test));
  }
  opts.workers = s.workers;
  const auto bank = build_bank(parts.train, specs);
  const auto model = train(method, bank, parts.train, opts);
  fs::create_directories(s.out);
  save_model(model, fs::path(s.out) / "model.bin");
  write_trace(fs::path(s.out) / "trace.csv", model);
  auto f = open_out(fs::path(s.out) / "metrics.csv");
  f << "split,task,id,metric,value\n";
  write_metrics(f, "train", parts.train, evaluate(model, parts.train));
  write_metrics(f, "validation", parts.validation, evaluate(model, parts.validation));
  write_metrics(f, "test", parts.test, evaluate(model, parts.test));
  return 0;
}

int cmd_tune(const Settings& s) {
  const auto data = load_data(s);
  const auto specs = kernel_specs(s);
  const auto method = method_of(s);
  const auto opts = train_options(s);
  if (s.repeats < 1) throw ConfigError("--repeats must be >= 1");
  Grid grid{parse_grid(s.grid_C, "grid.C"), parse_grid(s.grid_eta, "grid.eta"), parse_grid(s.grid_beta, "grid.beta")};
  std::vector<GridPoint> points;
  try {
    points = expand_grid(grid, method, opts.hp);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }

  fs::create_directories(s.out);
  auto grid_csv = open_out(fs::path(s.out) / "grid.csv");
  auto rep_csv = open_out(fs::path(s.out) / "repeats.csv");
  grid_csv << "repeat,C,eta,beta,validation,status\n";
  rep_csv << "repeat,seed,C,eta,beta,metric,test\n";

  std::optional<GridPoint> fixed;
  std::vector<double> scores;
  TaskKind kind = data.tasks.front().kind;
  for (int r = 0; r < s.repeats; ++r) {
    SplitPlan plan = s.split;
    plan.seed = s.seed_base + static_cast<std::uint64_t>(r);
    DatasetSplit parts;
    try {
      parts = split(data, plan);
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    if (s.standardize) {
      const auto z = Standardizer::fit(parts.train);
      parts.train = z.apply(std::move(parts.train));
      parts.validation = z.apply(std::move(parts.validation));
      parts.test = z.apply(std::move(parts.test));
    }
    const auto bank = build_bank(parts.train, specs);
    GridPoint chosen;
    if (fixed) {
      chosen = *fixed;
    } else {
      const auto tuned = tune(method, bank, parts.train, parts.validation, points, opts, s.workers);
      for (const auto& g : tuned.grid)
        grid_csv << r << ',' << num(g.point.C) << ',' << num(g.point.eta) << ',' << num(g.point.beta) << ','
                 << (g.failed ? std::string() : num(g.validation)) << ',' << (g.failed ? "failed" : "ok") << '\n';
      chosen = tuned.best;
      if (s.tune_once) fixed = chosen;
    }
    TrainOptions final_opts = opts;
    final_opts.hp.C = chosen.C;
    final_opts.hp.eta = chosen.eta;
    final_opts.hp.beta = chosen.beta;
    final_opts.workers = s.workers;
    const auto model = train(method, bank, parts.train, final_opts);
    const auto m = evaluate(model, build_cross_bank(parts.test, parts.train, specs), parts.test);
    kind = m.kind;
    scores.push_back(m.mean);
    rep_csv << r << ',' << plan.seed << ',' << num(chosen.C) << ',' << num(chosen.eta) << ',' << num(chosen.beta)
            << ',' << metric_name(m.kind) << ',' << num(m.mean) << '\n';
  }
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  const double sd = scores.size() > 1 ? std::sqrt(var / static_cast<double>(scores.size() - 1)) : 0.0;
  auto summary = open_out(fs::path(s.out) / "summary.csv");
  summary << "method,metric,repeats,mean,std\n"
          << to_string(method) << ',' << metric_name(kind) << ',' << scores.size() << ',' << num(mean) << ','
          << num(sd) << '\n';
  std::cout << to_string(method) << ' ' << metric_name(kind) << ' ' << num(mean) << " +- " << num(sd) << '\n';
  return 0;
}

int cmd_evaluate(const Settings& s) {
  const auto model = load_model_file(s);
  auto data = load_data(s);
  if (data.tasks.size() != model.tasks()) {
    throw ConfigError("dataset has " + std::to_string(data.tasks.size()) + " tasks, model has " +
                      std::to_string(model.tasks()));
  }
  fs::create_directories(s.out);
  auto f = open_out(fs::path(s.out) / "metrics.csv");
  f << "split,task,id,metric,value\n";
  write_metrics(f, "data", data, evaluate(model, data));
  return 0;
}

int cmd_report(const Settings& s) {
  const auto model = load_model_file(s);
  const auto bank = training_bank(model);
  const auto cache = build_A(bank);
  NeighborhoodSet nbhd;
  if (model.neighborhood) {
    nbhd = *model.neighborhood;
  } else {
    for (std::size_t t = 0; t < bank.tasks(); ++t) nbhd.matrices.push_back(Matrix::Zero(bank.task_size(t), bank.task_size(t)));
  }
  const Vector b = build_b(bank, nbhd);
  const double c = build_c(nbhd);
  double n = 0.0;
  for (std::size_t t = 0; t < bank.tasks(); ++t) n += static_cast<double>(bank.task_size(t));
  n /= static_cast<double>(bank.tasks());
  BoundInputs in;
  in.R = s.R;
  in.rho = c + s.rho_margin;
  in.n = n;
  in.cache = &cache;
  in.b = b;
  in.c = c;

  fs::create_directories(s.out);
  auto f = open_out(fs::path(s.out) / "report.csv");
  f << "quantity,value\n";
  f << "method," << to_string(model.method) << '\n';
  f << "neighborhood," << (model.neighborhood ? "model" : "zero") << '\n';
  f << "omega," << num(omega(cache, b, c)) << '\n';
  f << "bound," << num(rademacher_bound(in)) << '\n';
  f << "trace_term," << num(trace_term(cache)) << '\n';
  f << "R," << num(in.R) << '\n';
  f << "rho," << num(in.rho) << '\n';
  f << "n," << num(n) << '\n';
  if (s.draws > 0) {
    MonteCarloOptions mc;
    mc.draws = s.draws;
    mc.seed = s.seed_base;
    f << "montecarlo," << num(montecarlo_complexity(bank, cache, b, c, in.R, in.rho, mc)) << '\n';
  }
  auto a = open_out(fs::path(s.out) / "alignment.csv");
  if (!model.neighborhood) {
    a << "alignment,unavailable\n";
    std::cout << "alignment unavailable: " << to_string(model.method) << " has no neighborhood matrices\n";
    return 0;
  }
  const Matrix r = alignment_report(model, bank);
  a << "optimal\\neighborhood";
  for (std::size_t t = 0; t < model.tasks(); ++t) a << ',' << model.training[t].id;
  a << '\n';
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    a << model.training[static_cast<std::size_t>(i)].id;
    for (Eigen::Index j = 0; j < r.cols(); ++j) a << ',' << num(r(i, j));
    a << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  s.workers = std::max(1u, std::thread::hardware_concurrency());

  CLI::App app{"Multi-task kernel learning with optimal neighborhoods"};
  app.config_formatter(std::make_shared<DottedIni>());
  app.set_config("--config", "", "INI file; [section] key = value sets --section.key");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);

  app.add_option("--out", s.out, "output directory")->capture_default_str();
  app.add_option("--data", s.manifest, "dataset manifest");
  app.add_option("--model", s.model_path, "model file (evaluate, report)");
  app.add_option("--method", s.method, "mtonmkl | itl | avmtmkl | mtmkl | kta")->capture_default_str();
  app.add_option("--repeats", s.repeats, "split/tune/test rounds")->capture_default_str();
  app.add_option("--seed-base", s.seed_base, "split seed of the first round")->capture_default_str();
  app.add_option("--workers", s.workers, "parallel grid points / task solves")->check(CLI::PositiveNumber);
  app.add_flag("--tune-once", s.tune_once, "tune on the first round only and reuse the point");
  app.add_flag("--standardize", s.standardize, "z-score features with training statistics");

  app.add_option("--kernels", s.kernels, "default, or a list like linear,poly2,gauss4")->capture_default_str();
  app.add_option("--kernels.gaussian_form", s.gaussian_form, "two_sigma_squared | sigma")->capture_default_str();

  app.add_option("--hp.C", s.hp.C)->capture_default_str();
  app.add_option("--hp.eta", s.hp.eta)->capture_default_str();
  app.add_option("--hp.beta", s.hp.beta)->capture_default_str();
  app.add_option("--hp.epsilon", s.hp.epsilon, "SVR tube width")->capture_default_str();
  app.add_option("--hp.max_outer", s.hp.max_outer)->capture_default_str();
  app.add_option("--hp.relative_decrease", s.hp.relative_decrease)->capture_default_str();
  app.add_option("--hp.theta_tol", s.hp.theta_tol)->capture_default_str();
  app.add_option("--hp.svm_tol", s.hp.svm_tol)->capture_default_str();
  app.add_option("--order", s.order, "neighborhood_first | svm_first")->capture_default_str();
  app.add_flag("--printed-theta", s.printed_theta, "theta step without the eta/2 weighting");

  app.add_option("--split.train", s.split.train)->capture_default_str();
  app.add_option("--split.validation", s.split.validation)->capture_default_str();
  app.add_option("--split.test", s.split.test)->capture_default_str();
  app.add_option("--split.stratified", s.split.stratified)->capture_default_str();

  app.add_option("--grid.C", s.grid_C, "pow2:LO:HI[:STEP] or a comma list")->capture_default_str();
  app.add_option("--grid.eta", s.grid_eta)->capture_default_str();
  app.add_option("--grid.beta", s.grid_beta)->capture_default_str();

  app.add_option("--synth.seed", s.synth.seed)->capture_default_str();
  app.add_option("--synth.tasks", s.synth.tasks)->capture_default_str();
  app.add_option("--synth.samples", s.synth.samples, "samples per task")->capture_default_str();
  app.add_option("--synth.features", s.synth.features)->capture_default_str();
  app.add_option("--synth.relatedness", s.synth.relatedness)->capture_default_str();
  app.add_option("--synth.noise", s.synth.noise)->capture_default_str();
  app.add_option("--synth.kind", s.synth_kind, "classification | regression")->capture_default_str();

  app.add_option("--report.R", s.R)->capture_default_str();
  app.add_option("--report.rho_margin", s.rho_margin, "rho = c + margin")->capture_default_str();
  app.add_option("--report.draws", s.draws, "Monte-Carlo draws (0 = skip)")->capture_default_str();

  for (const auto* name : {"synth", "gram", "train", "tune", "evaluate", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->fallthrough();
    sub->callback([&s, name] { s.command = name; });
  }
  app.get_subcommand("synth")->description("write a synthetic related-task dataset");
  app.get_subcommand("gram")->description("build and cache the normalized kernel bank");
  app.get_subcommand("train")->description("train one model on the training split");
  app.get_subcommand("tune")->description("grid search on validation, test on held-out data, per repeat");
  app.get_subcommand("evaluate")->description("score a saved model on a dataset");
  app.get_subcommand("report")->description("regularizer, complexity bound and alignment matrix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (s.command == "synth") return cmd_synth(s);
    if (s.command == "gram") return cmd_gram(s);
    if (s.command == "train") return cmd_train(s);
    if (s.command == "tune") return cmd_tune(s);
    if (s.command == "evaluate") return cmd_evaluate(s);
    if (s.command == "report") return cmd_report(s);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
