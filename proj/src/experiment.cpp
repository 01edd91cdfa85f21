#include "srdml/experiment.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <sstream>

#include "srdml/io.hpp"
#include "srdml/json_fields.hpp"

namespace srdml {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename Parse>
auto parse_field(const std::string& field, Parse parse, const std::string& value) {
  try {
    return parse(value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

void check(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json{{"mode", to_string(c.mode)},
           {"lambda", c.lambda},
           {"metric", to_string(c.metric.kind)},
           {"normalize_gradients", c.metric.normalize_gradients},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr_model", c.lr_model},
           {"lr_relation", c.lr_relation},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
           {"loss", to_string(c.loss)},
           {"penalty_rows", c.penalty_rows},
           {"track_bound", c.track_bound}};
}

void from_json(const json& j, TrainConfig& c) {
  FieldReader r(j, "");
  std::string mode = to_string(c.mode), metric = to_string(c.metric.kind), loss = to_string(c.loss);
  r.optional("mode", mode);
  r.optional("lambda", c.lambda);
  r.optional("metric", metric);
  r.optional("normalize_gradients", c.metric.normalize_gradients);
  r.optional("epochs", c.epochs);
  r.optional("batch_size", c.batch_size);
  r.optional("lr_model", c.lr_model);
  r.optional("lr_relation", c.lr_relation);
  if (const json* adam = r.child("adam")) {
    FieldReader a(*adam, "adam");
    a.optional("beta1", c.adam.beta1);
    a.optional("beta2", c.adam.beta2);
    a.optional("eps", c.adam.eps);
    a.finish();
  }
  r.optional("loss", loss);
  r.optional("penalty_rows", c.penalty_rows);
  r.optional("track_bound", c.track_bound);
  r.finish();
  c.mode = parse_field("mode", parse_train_mode, mode);
  c.metric.kind = parse_field("metric", parse_distance_kind, metric);
  c.loss = parse_field("loss", parse_loss_kind, loss);
}

void to_json(json& j, const ExperimentConfig& c) {
  json data{{"synthetic", c.data.synthetic}, {"test_fraction", c.data.test_fraction}};
  if (c.data.path) data["path"] = c.data.path->generic_string();
  j = json{{"data", data},
           {"model", c.model},
           {"train", c.train},
           {"output_dir", c.output_dir.generic_string()},
           {"seeds", c.seeds}};
}

void from_json(const json& j, ExperimentConfig& c) {
  FieldReader r(j, "");
  if (const json* data = r.child("data")) {
    FieldReader d(*data, "data");
    d.optional("synthetic", c.data.synthetic);
    std::string path;
    d.optional("path", path);
    if (!path.empty()) c.data.path = path;
    d.optional("test_fraction", c.data.test_fraction);
    d.finish();
  }
  r.optional("model", c.model);
  r.optional("train", c.train);
  std::string out = c.output_dir.generic_string();
  r.optional("output_dir", out);
  c.output_dir = out;
  r.optional("seeds", c.seeds);
  r.finish();
}

void ExperimentConfig::validate() const {
  const auto wrap = [](const std::string& field, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(field, e.what());
    }
  };
  wrap("data.synthetic", [&] { data.synthetic.validate(); });
  wrap("model", [&] { model.validate(); });
  wrap("train", [&] { train.validate(); });
  check(data.test_fraction >= 0 && data.test_fraction < 1, "data.test_fraction", "must lie in [0,1)");
  check(!seeds.empty(), "seeds", "must list at least one seed");
  check(!output_dir.empty(), "output_dir", "must not be empty");
  if (!data.path) {
    check(model.input_dim == data.synthetic.dim, "model.input_dim",
          "must equal data.synthetic.dim (" + std::to_string(data.synthetic.dim) + ")");
    check(model.num_tasks == data.synthetic.num_tasks, "model.num_tasks",
          "must equal data.synthetic.num_tasks (" + std::to_string(data.synthetic.num_tasks) + ")");
  }
  check(model.task_kind == TaskKind::Regression || train.loss == LossKind::Bce, "train.loss",
        "classification tasks need the bce loss");
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", e.what());
  }
  ExperimentConfig c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) { return parse_experiment_config(read_text(path)); }

MultiTaskDataset load_data(const ExperimentConfig& config, std::uint64_t seed) {
  MultiTaskDataset data = config.data.path ? read_dataset(*config.data.path) : generate_any(config.data.synthetic, seed);
  if (data.num_tasks() != config.model.num_tasks || data.dim() != config.model.input_dim) {
    throw ConfigError("model", "dataset has " + std::to_string(data.num_tasks()) + " tasks of dimension " +
                                   std::to_string(data.dim()) + ", model expects " +
                                   std::to_string(config.model.num_tasks) + " of " +
                                   std::to_string(config.model.input_dim));
  }
  return data;
}

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const MultiTaskDataset full = load_data(config, seed);
  TrainConfig train = config.train;
  train.seed = seed;
  SeedRun run{seed, {}, std::nullopt};
  if (config.data.test_fraction > 0) {
    const DatasetSplit split = split_dataset(full, config.data.test_fraction);
    run.result = fit(split.train, config.model, train);
    run.test = evaluate(run.result.model, split.test, train.loss);
  } else {
    run.result = fit(full, config.model, train);
  }
  return run;
}

namespace {

json task_metrics_json(const TaskMetrics& m) {
  json j = json::object();
  const auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("rmse", m.rmse);
  put("mae", m.mae);
  put("accuracy", m.accuracy);
  put("auc", m.auc);
  put("precision", m.precision);
  put("recall", m.recall);
  return j;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// RMSE-like headline number for a run: test metrics when held out, train otherwise.
const Metrics& headline(const SeedRun& run) { return run.test ? *run.test : run.result.train_metrics; }

double headline_error(const SeedRun& run, bool mae) {
  const TaskMetrics& avg = headline(run).average;
  const auto& v = mae ? avg.mae : avg.rmse;
  if (!v) throw ConfigError("model.task_kind", "sweep and ablation summaries need regression metrics");
  return *v;
}

std::string metrics_table(const RunResult& result, const std::optional<Metrics>& test) {
  std::ostringstream os;
  const bool regression = result.train_metrics.average.rmse.has_value();
  char line[160];
  if (regression) {
    std::snprintf(line, sizeof line, "%-8s %12s %12s %12s %12s\n", "task", "train_rmse", "train_mae", "test_rmse",
                  "test_mae");
  } else {
    std::snprintf(line, sizeof line, "%-8s %12s %12s %12s %12s\n", "task", "train_acc", "train_auc", "test_acc",
                  "test_auc");
  }
  os << line;
  const auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (v) {
      std::snprintf(buf, sizeof buf, "%12.6f", *v);
    } else {
      std::snprintf(buf, sizeof buf, "%12s", "-");
    }
    return std::string(buf);
  };
  const auto row = [&](const std::string& name, const TaskMetrics& tr, const TaskMetrics* te) {
    const TaskMetrics none;
    const TaskMetrics& t = te ? *te : none;
    if (regression) {
      os << std::string(name).append(8 > name.size() ? 8 - name.size() : 0, ' ') << ' ' << cell(tr.rmse) << ' '
         << cell(tr.mae) << ' ' << cell(t.rmse) << ' ' << cell(t.mae) << '\n';
    } else {
      os << std::string(name).append(8 > name.size() ? 8 - name.size() : 0, ' ') << ' ' << cell(tr.accuracy) << ' '
         << cell(tr.auc) << ' ' << cell(t.accuracy) << ' ' << cell(t.auc) << '\n';
    }
  };
  for (std::size_t t = 0; t < result.train_metrics.tasks.size(); ++t) {
    row(std::to_string(t), result.train_metrics.tasks[t], test ? &test->tasks[t] : nullptr);
  }
  row("average", result.train_metrics.average, test ? &test->average : nullptr);
  return os.str();
}

RelationMatrix mean_relation(const std::vector<SeedRun>& runs) {
  const auto T = runs.front().result.relation_matrix->size();
  SquareMatrix acc(T, std::vector<double>(T, 0.0));
  for (const auto& r : runs)
    for (std::size_t i = 0; i < T; ++i)
      for (std::size_t j = 0; j < T; ++j) acc[i][j] += r.result.relation_matrix->values[i][j];
  for (auto& row : acc)
    for (auto& v : row) v /= static_cast<double>(runs.size());
  return RelationMatrix{acc};
}

AblationArm run_arm(const ExperimentConfig& config) {
  AblationArm arm;
  std::vector<double> rmse, mae;
  for (auto seed : config.seeds) {
    arm.runs.push_back(run_seed(config, seed));
    rmse.push_back(headline_error(arm.runs.back(), false));
    mae.push_back(headline_error(arm.runs.back(), true));
  }
  arm.rmse_mean = mean_of(rmse);
  arm.mae_mean = mean_of(mae);
  arm.relation = mean_relation(arm.runs);
  return arm;
}

json arm_json(const AblationArm& arm) {
  json runs = json::array();
  for (const auto& r : arm.runs) {
    runs.push_back({{"seed", r.seed},
                    {"rmse", headline_error(r, false)},
                    {"mae", headline_error(r, true)},
                    {"relation_matrix", r.result.relation_matrix->values}});
  }
  return json{{"rmse_mean", arm.rmse_mean},
              {"mae_mean", arm.mae_mean},
              {"relation_matrix", arm.relation.values},
              {"runs", runs}};
}

/// Maps every failure mode of a command body onto the exit-code contract.
template <typename Body>
int guarded(std::ostream& err, Body body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::config;
  } catch (const TrainingError& e) {
    err << "training diverged: " << e.what();
    if (e.last_stable_epoch()) {
      err << " (last stable epoch " << *e.last_stable_epoch() << ")";
    } else {
      err << " (no stable epoch)";
    }
    err << '\n';
    return exit_code::divergence;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return exit_code::io;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return exit_code::io;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

}  // namespace

json metrics_json(const Metrics& m) {
  json tasks = json::object();
  for (std::size_t t = 0; t < m.tasks.size(); ++t) tasks[std::to_string(t)] = task_metrics_json(m.tasks[t]);
  return json{{"tasks", tasks}, {"average", task_metrics_json(m.average)}};
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,total";
  const std::size_t T = history.empty() ? 0 : history.front().task_losses.size();
  const bool bound = !history.empty() && history.front().bound.has_value();
  for (std::size_t t = 0; t < T; ++t) out += ",task_" + std::to_string(t);
  out += ",penalty";
  if (bound) out += ",bound";
  out += '\n';
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& r = history[e];
    out += std::to_string(e + 1) + "," + format_double(r.total);
    for (double v : r.task_losses) out += "," + format_double(v);
    out += "," + format_double(r.penalty);
    if (bound) out += "," + format_double(r.bound.value_or(NAN));
    out += '\n';
  }
  return out;
}

std::size_t sweep_threads() {
  if (const char* env = std::getenv("SRDML_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
  }
  return static_cast<std::size_t>(omp_get_max_threads());
}

SweepResult run_sweep(const ExperimentConfig& config, std::span<const double> lambdas, std::size_t threads) {
  const std::size_t S = config.seeds.size(), jobs = lambdas.size() * S;
  SweepResult out;
  out.runs.assign(lambdas.size(), std::vector<std::optional<SeedRun>>(S));
  std::vector<std::string> errors(jobs);
  const int workers = static_cast<int>(std::max<std::size_t>(1, std::min(threads, jobs)));
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (std::size_t job = 0; job < jobs; ++job) {
    const std::size_t l = job / S, s = job % S;
    ExperimentConfig c = config;
    c.train.lambda = lambdas[l];
    try {
      out.runs[l][s] = run_seed(c, config.seeds[s]);
    } catch (const TrainingError& e) {
      errors[job] = e.what();
    }
  }
  for (std::size_t l = 0; l < lambdas.size(); ++l) {
    SweepRow row;
    row.lambda = lambdas[l];
    std::vector<double> rmse, mae;
    for (const auto& r : out.runs[l]) {
      if (!r) {
        ++row.failures;
        continue;
      }
      rmse.push_back(headline_error(*r, false));
      mae.push_back(headline_error(*r, true));
    }
    row.runs = rmse.size();
    row.rmse_mean = mean_of(rmse);
    row.rmse_std = std_of(rmse);
    row.mae_mean = mean_of(mae);
    row.mae_std = std_of(mae);
    out.rows.push_back(row);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,runs,failures,rmse_mean,rmse_std,mae_mean,mae_std\n";
  for (const auto& r : rows) {
    out += format_double(r.lambda) + "," + std::to_string(r.runs) + "," + std::to_string(r.failures) + "," +
           format_double(r.rmse_mean) + "," + format_double(r.rmse_std) + "," + format_double(r.mae_mean) + "," +
           format_double(r.mae_std) + "\n";
  }
  return out;
}

std::vector<double> parse_lambda_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("lambdas", "'" + item + "' is not a number");
    }
    while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
    if (used != item.size()) throw ConfigError("lambdas", "'" + item + "' is not a number");
    if (!(v >= 0) || !std::isfinite(v)) throw ConfigError("lambdas", "values must be finite and non-negative");
    out.push_back(v);
  }
  if (out.size() < 2) throw ConfigError("lambdas", "need at least two values");
  return out;
}

AblationReport run_ablation(const ExperimentConfig& config) {
  if (config.train.mode != TrainMode::Srdml) throw ConfigError("train.mode", "ablation needs mode srdml");
  ExperimentConfig fixed = config;
  fixed.train.mode = TrainMode::SrdmlFixedOmega;
  return AblationReport{run_arm(config), run_arm(fixed)};
}

json ablation_json(const AblationReport& report, const ExperimentConfig& config) {
  return json{{"lambda", config.train.lambda},
              {"seeds", config.seeds},
              {"split", config.data.test_fraction > 0 ? "test" : "train"},
              {"adaptive", arm_json(report.adaptive)},
              {"fixed", arm_json(report.fixed)},
              {"adaptive_not_worse", report.adaptive.rmse_mean <= report.fixed.rmse_mean}};
}

int cmd_gen_data(const fs::path& config_path, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = load_experiment_config(config_path);
    const MultiTaskDataset data = generate_any(config.data.synthetic, config.seeds.front());
    if (!out_dir.parent_path().empty() && !fs::is_directory(out_dir.parent_path())) {
      throw IoError("parent directory " + out_dir.parent_path().string() + " does not exist");
    }
    ensure_dir(out_dir);
    write_dataset(data, out_dir);
    out << "wrote " << data.num_tasks() << " tasks to " << out_dir.string() << '\n';
    return exit_code::ok;
  });
}

int cmd_train(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = load_experiment_config(config_path);
    const SeedRun run = run_seed(config, config.seeds.front());
    const fs::path dir = config.output_dir;
    ensure_dir(dir);
    save_model(run.result.model, dir / "model.json");
    // Single-task and hard-sharing runs learn no relation, so no relation.csv is written.
    const fs::path relation = dir / "relation.csv";
    if (run.result.relation_matrix) {
      write_text(relation, matrix_csv(run.result.relation_matrix->values));
    } else {
      fs::remove(relation);
    }
    write_text(dir / "history.csv", history_csv(run.result.history));
    json metrics{{"seed", run.seed}, {"train", metrics_json(run.result.train_metrics)}};
    if (run.test) metrics["test"] = metrics_json(*run.test);
    write_json(dir / "metrics.json", metrics);
    write_json(dir / "config.json", json(config));
    out << metrics_table(run.result, run.test);
    return exit_code::ok;
  });
}

int cmd_sweep(const fs::path& config_path, const std::vector<double>& lambdas, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = load_experiment_config(config_path);
    if (lambdas.size() < 2) throw ConfigError("lambdas", "need at least two values");
    const SweepResult result = run_sweep(config, lambdas, sweep_threads());
    ensure_dir(config.output_dir);
    const std::string csv = sweep_csv(result.rows);
    write_text(config.output_dir / "sweep.csv", csv);
    out << csv;
    std::size_t failures = 0;
    for (const auto& r : result.rows) failures += r.failures;
    if (failures) {
      err << failures << " of " << lambdas.size() * config.seeds.size() << " runs diverged; partial results kept\n";
      return exit_code::partial_sweep;
    }
    return exit_code::ok;
  });
}

int cmd_ablation(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig config = load_experiment_config(config_path);
    const AblationReport report = run_ablation(config);
    ensure_dir(config.output_dir);
    const json j = ablation_json(report, config);
    write_json(config.output_dir / "ablation.json", j);
    char line[128];
    std::snprintf(line, sizeof line, "adaptive rmse %.6f  fixed rmse %.6f\n", report.adaptive.rmse_mean,
                  report.fixed.rmse_mean);
    out << line;
    return exit_code::ok;
  });
}

namespace {

/// Missing or unusable run artifacts are a usage error for export.
[[noreturn]] void missing(const std::string& what) { throw ConfigError("run", what); }

SquareMatrix read_relation_csv(const fs::path& path) {
  if (!fs::exists(path)) missing("no relation.csv in run directory (single-task and hard-sharing runs learn none)");
  return read_csv(path, false).rows;
}

ExperimentConfig run_config(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.json")) missing("no config.json in " + run_dir.string());
  try {
    return read_json(run_dir / "config.json").get<ExperimentConfig>();
  } catch (const json::exception& e) {
    missing(std::string("unreadable config.json: ") + e.what());
  }
}

MultiTaskModel run_model(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "model.json")) missing("no model.json in " + run_dir.string());
  try {
    return load_model(run_dir / "model.json");
  } catch (const json::exception& e) {
    missing(std::string("unreadable model.json: ") + e.what());
  }
}

/// Training inputs of the run's first seed, through the trunk of each task.
MultiTaskDataset run_train_data(const ExperimentConfig& config) {
  MultiTaskDataset full = load_data(config, config.seeds.front());
  if (config.data.test_fraction > 0) return split_dataset(full, config.data.test_fraction).train;
  return full;
}

}  // namespace

int cmd_export(const fs::path& run_dir, const std::string& kind, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (!fs::is_directory(run_dir)) missing("run directory " + run_dir.string() + " does not exist");
    if (kind == "relation_heatmap") {
      RelationMatrix m;
      try {
        m = relation_matrix_from(read_relation_csv(run_dir / "relation.csv"));
      } catch (const std::invalid_argument& e) {
        missing(std::string("bad relation.csv: ") + e.what());
      }
      const fs::path path = run_dir / "relation_heatmap.svg";
      write_text(path, relation_heatmap(m));
      out << "wrote " << path.string() << '\n';
      return exit_code::ok;
    }
    if (kind == "saliency") {
      const ExperimentConfig config = run_config(run_dir);
      const MultiTaskModel model = run_model(run_dir);
      const MultiTaskDataset data = run_train_data(config);
      for (std::size_t t = 0; t < model.heads.size(); ++t) {
        const Tensor rows = slice_rows(data.x[t], 0, std::min<std::size_t>(20, data.x[t].rows()));
        const Tensor features = trunk_forward(model, rows, t);
        const fs::path path = run_dir / ("saliency_task_" + std::to_string(t) + ".svg");
        write_text(path, saliency_heatmap(model, t, features));
        out << "wrote " << path.string() << '\n';
      }
      return exit_code::ok;
    }
    if (kind == "spectrum") {
      RelationMatrix m;
      try {
        m = relation_matrix_from(read_relation_csv(run_dir / "relation.csv"));
      } catch (const std::invalid_argument& e) {
        missing(std::string("bad relation.csv: ") + e.what());
      }
      const ExperimentConfig config = run_config(run_dir);
      const MultiTaskModel model = run_model(run_dir);
      const MultiTaskDataset data = run_train_data(config);
      Batch batch{data.x, data.y};
      const Tensor features = trunk_forward(model, penalty_inputs(batch, config.train.penalty_rows));
      const SquareMatrix l = laplacian(m);
      const auto eig = symmetric_eigenvalues(l);
      const auto lmin = lambda_min_nonzero(l);
      json j{{"eigenvalues", eig},
             {"lambda_min", lmin ? json(*lmin) : json(nullptr)},
             {"bound_B", bound_term_B(m, model, features, config.train.metric)},
             {"empirical_risk", empirical_risk(model, data, config.train.loss)}};
      const fs::path path = run_dir / "spectrum.json";
      write_json(path, j);
      out << j.dump(2) << '\n';
      return exit_code::ok;
    }
    throw ConfigError("kind", "unknown export kind '" + kind + "' (relation_heatmap, saliency, spectrum)");
  });
}

}  // namespace srdml
