#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "srdml/experiment.hpp"
#include "srdml/io.hpp"
#include "srdml/json_fields.hpp"

using namespace srdml;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Fresh scratch directory under the system temp dir.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("srdml_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json small_config(const fs::path& out) {
  return json{{"data", {{"synthetic", {{"samples_per_task", 30}}}, {"test_fraction", 0.2}}},
              {"model", {{"head_bias", false}}},
              {"train", {{"epochs", 15}, {"penalty_rows", 12}, {"metric", "l1_smoothed"}}},
              {"output_dir", out.generic_string()},
              {"seeds", {3, 4}}};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const fs::path p = dir / name;
  write_text(p, j.dump(2));
  return p;
}

std::string config_error(const std::string& text) {
  try {
    parse_experiment_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const ExperimentConfig c = parse_experiment_config("{}");
  CHECK(c.train.lambda == 0.5);
  CHECK(c.train.epochs == 1000);
  CHECK(c.train.lr_model == 1e-2);
  CHECK(c.train.lr_relation == 1e-1);
  CHECK(c.train.batch_size == 0);
  CHECK(c.train.metric.kind == DistanceKind::SquaredL2);
  CHECK(c.model.num_tasks == 12);
  CHECK(c.seeds.size() == 5);

  const ExperimentConfig d = parse_experiment_config(small_config("x").dump());
  const ExperimentConfig back = parse_experiment_config(json(d).dump());
  CHECK(json(back) == json(d));
  CHECK(back.train.metric.kind == DistanceKind::L1Smoothed);
  CHECK(back.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("config errors name the field or the position") {
  CHECK(config_error(R"({"train": {"bogus": 1}})").find("train.bogus") != std::string::npos);
  CHECK(config_error(R"({"data": {"synthetic": {"dimm": 3}}})").find("data.synthetic.dimm") != std::string::npos);
  CHECK(config_error(R"({"train": {"lambda": "big"}})").find("train.lambda") != std::string::npos);
  CHECK(config_error(R"({"train": {"lambda": -1}})").find("train") != std::string::npos);
  CHECK(config_error(R"({"train": {"mode": "mtl"}})").find("train.mode") != std::string::npos);
  const std::string syntax = config_error("{\n  \"train\": {,}\n}");
  CHECK(syntax.find("line 2") != std::string::npos);
  CHECK(config_error(R"({"model": {"input_dim": 10, "feature_dim": 10}})").find("model.input_dim") !=
        std::string::npos);
  CHECK(config_error(R"({"seeds": []})").find("seeds") != std::string::npos);
  CHECK(config_error(R"({"data": {"test_fraction": 1}})").find("data.test_fraction") != std::string::npos);
}

TEST_CASE("lambda lists") {
  CHECK(parse_lambda_list("0,0.5, 1") == std::vector<double>{0, 0.5, 1});
  CHECK_THROWS_AS(parse_lambda_list("0.5"), ConfigError);
  CHECK_THROWS_AS(parse_lambda_list("0.1,-1"), ConfigError);
  CHECK_THROWS_AS(parse_lambda_list("0.1,abc"), ConfigError);
  CHECK_THROWS_AS(parse_lambda_list("0.1,nan"), ConfigError);
}

TEST_CASE("gen-data writes a reproducible dataset") {
  const fs::path dir = scratch("gen");
  const fs::path cfg = write_config(dir, small_config(dir / "run"));
  std::ostringstream out, err;
  REQUIRE(cmd_gen_data(cfg, dir / "data", out, err) == exit_code::ok);
  for (int t = 0; t < 12; ++t) CHECK(fs::exists(dir / "data" / ("task_" + std::to_string(t) + ".csv")));
  const auto w = read_csv(dir / "data" / "true_w.csv", false);
  CHECK(w.rows.size() == 20);
  CHECK(w.rows.front().size() == 12);
  const std::string first = read_text(dir / "data" / "task_7.csv");
  const std::string weights = read_text(dir / "data" / "true_w.csv");
  REQUIRE(cmd_gen_data(cfg, dir / "data", out, err) == exit_code::ok);
  CHECK(read_text(dir / "data" / "task_7.csv") == first);
  CHECK(read_text(dir / "data" / "true_w.csv") == weights);

  CHECK(cmd_gen_data(cfg, dir / "missing" / "data", out, err) == exit_code::io);
  CHECK(cmd_gen_data(dir / "nope.json", dir / "data2", out, err) != exit_code::ok);
  fs::remove_all(dir);
}

TEST_CASE("training from a generated dataset matches inline generation") {
  const fs::path dir = scratch("from_path");
  json j = small_config(dir / "run");
  j["seeds"] = {3};
  const fs::path cfg = write_config(dir, j);
  std::ostringstream out, err;
  REQUIRE(cmd_gen_data(cfg, dir / "data", out, err) == exit_code::ok);
  const ExperimentConfig inline_cfg = load_experiment_config(cfg);
  j["data"]["path"] = (dir / "data").generic_string();
  const ExperimentConfig path_cfg = parse_experiment_config(j.dump());
  const SeedRun a = run_seed(inline_cfg, 3), b = run_seed(path_cfg, 3);
  CHECK(*a.test->average.rmse == *b.test->average.rmse);

  j["model"]["num_tasks"] = 6;
  j["model"]["input_dim"] = 20;
  CHECK_THROWS_AS(run_seed(parse_experiment_config(j.dump()), 3), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train writes byte-identical artifacts on rerun") {
  const fs::path dir = scratch("train");
  const fs::path cfg = write_config(dir, small_config(dir / "run"));
  std::ostringstream out, err;
  REQUIRE(cmd_train(cfg, out, err) == exit_code::ok);
  CHECK(out.str().find("rmse") != std::string::npos);
  const std::vector<std::string> files{"model.json", "relation.csv", "history.csv", "metrics.json", "config.json"};
  std::vector<std::string> first;
  for (const auto& f : files) {
    REQUIRE(fs::exists(dir / "run" / f));
    first.push_back(read_text(dir / "run" / f));
  }
  REQUIRE(cmd_train(cfg, out, err) == exit_code::ok);
  for (std::size_t i = 0; i < files.size(); ++i) CHECK(read_text(dir / "run" / files[i]) == first[i]);

  const auto history = read_csv(dir / "run" / "history.csv", true);
  CHECK(history.rows.size() == 15);
  CHECK(history.header.front() == "epoch");
  CHECK(history.header.size() == 2 + 12 + 1);
  const json metrics = json::parse(read_text(dir / "run" / "metrics.json"));
  CHECK(metrics.at("seed") == 3);
  CHECK(metrics.at("test").contains("average"));
  fs::remove_all(dir);
}

TEST_CASE("baselines without a relation skip relation.csv") {
  const fs::path dir = scratch("stl");
  json j = small_config(dir / "run");
  std::ostringstream out, err;
  REQUIRE(cmd_train(write_config(dir, j), out, err) == exit_code::ok);
  REQUIRE(fs::exists(dir / "run" / "relation.csv"));
  j["train"]["mode"] = "stl";
  REQUIRE(cmd_train(write_config(dir, j), out, err) == exit_code::ok);
  CHECK_FALSE(fs::exists(dir / "run" / "relation.csv"));
  CHECK(cmd_export(dir / "run", "relation_heatmap", out, err) == exit_code::config);
  fs::remove_all(dir);
}

TEST_CASE("zero lambda gives the hard-sharing metrics") {
  const fs::path dir = scratch("zero");
  json j = small_config(dir / "a");
  j["train"]["lambda"] = 0.0;
  std::ostringstream out, err;
  REQUIRE(cmd_train(write_config(dir, j), out, err) == exit_code::ok);
  j["train"]["mode"] = "hard_share";
  j["output_dir"] = (dir / "b").generic_string();
  REQUIRE(cmd_train(write_config(dir, j), out, err) == exit_code::ok);
  const json a = json::parse(read_text(dir / "a" / "metrics.json"));
  const json b = json::parse(read_text(dir / "b" / "metrics.json"));
  CHECK(a == b);
  CHECK(read_text(dir / "a" / "model.json") == read_text(dir / "b" / "model.json"));
  fs::remove_all(dir);
}

TEST_CASE("divergence maps to its exit code") {
  const fs::path dir = scratch("diverge");
  json j = small_config(dir / "run");
  j["train"]["lr_model"] = 1e300;
  j["train"]["lambda"] = 0.0;
  std::ostringstream out, err;
  CHECK(cmd_train(write_config(dir, j), out, err) == exit_code::divergence);
  CHECK(err.str().find("last stable epoch") != std::string::npos);

  // A sweep keeps the runs that did not diverge.
  CHECK(cmd_sweep(write_config(dir, j), {0.0, 0.1}, out, err) == exit_code::partial_sweep);
  fs::remove_all(dir);
}

TEST_CASE("sweep rows are deterministic and independent of position") {
  const ExperimentConfig c = parse_experiment_config(small_config("unused").dump());
  const std::vector<double> lambdas{0.1, 0.0, 0.1};
  const SweepResult r = run_sweep(c, lambdas, 3);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.rows[0].rmse_mean == r.rows[2].rmse_mean);
  CHECK(r.rows[0].mae_std == r.rows[2].mae_std);
  CHECK(r.rows[0].runs == 2);
  CHECK(r.rows[0].failures == 0);
  const SweepResult serial = run_sweep(c, lambdas, 1);
  CHECK(sweep_csv(serial.rows) == sweep_csv(r.rows));

  // Row statistics agree with the stored runs.
  double sum = 0.0;
  for (const auto& run : r.runs[1]) sum += *run->test->average.rmse;
  CHECK(r.rows[1].rmse_mean == doctest::Approx(sum / 2));
  const double a = *r.runs[1][0]->test->average.rmse, b = *r.runs[1][1]->test->average.rmse;
  CHECK(r.rows[1].rmse_std == doctest::Approx(std::abs(a - b) / std::sqrt(2.0)));
}

TEST_CASE("sweep command writes the table") {
  const fs::path dir = scratch("sweep");
  std::ostringstream out, err;
  REQUIRE(cmd_sweep(write_config(dir, small_config(dir / "run")), {0.0, 0.5}, out, err) == exit_code::ok);
  const auto csv = read_csv(dir / "run" / "sweep.csv", true);
  CHECK(csv.rows.size() == 2);
  CHECK(csv.header.front() == "lambda");
  CHECK(cmd_sweep(write_config(dir, small_config(dir / "run")), {0.5}, out, err) == exit_code::config);
  fs::remove_all(dir);
}

TEST_CASE("ablation report contains both relation matrices") {
  const fs::path dir = scratch("ablation");
  std::ostringstream out, err;
  REQUIRE(cmd_ablation(write_config(dir, small_config(dir / "run")), out, err) == exit_code::ok);
  const json j = json::parse(read_text(dir / "run" / "ablation.json"));
  for (const char* arm : {"adaptive", "fixed"}) {
    const auto& m = j.at(arm).at("relation_matrix");
    REQUIRE(m.size() == 12);
    CHECK(m[0].size() == 12);
    CHECK(j.at(arm).at("runs").size() == 2);
    CHECK(j.at(arm).at("rmse_mean").is_number());
  }
  CHECK(j.at("fixed").at("relation_matrix")[0][1].get<double>() == doctest::Approx(1.0 / 66));
  CHECK(j.at("adaptive_not_worse").is_boolean());

  json stl = small_config(dir / "run");
  stl["train"]["mode"] = "stl";
  CHECK(cmd_ablation(write_config(dir, stl), out, err) == exit_code::config);
  fs::remove_all(dir);
}

TEST_CASE("export kinds") {
  const fs::path dir = scratch("export");
  json j = small_config(dir / "run");
  j["data"]["synthetic"] = {{"mode", "contradicting"}, {"num_tasks", 3}, {"samples_per_task", 30}};
  j["model"]["num_tasks"] = 3;
  std::ostringstream out, err;
  REQUIRE(cmd_train(write_config(dir, j), out, err) == exit_code::ok);

  REQUIRE(cmd_export(dir / "run", "relation_heatmap", out, err) == exit_code::ok);
  CHECK(read_text(dir / "run" / "relation_heatmap.svg").rfind("<svg", 0) == 0);
  REQUIRE(cmd_export(dir / "run", "saliency", out, err) == exit_code::ok);
  for (int t = 0; t < 3; ++t) CHECK(fs::exists(dir / "run" / ("saliency_task_" + std::to_string(t) + ".svg")));

  // Uniform weights on three tasks: Laplacian spectrum {0, 1, 1}.
  const double w = 1.0 / 3;
  write_text(dir / "run" / "relation.csv", matrix_csv({{0, w, w}, {w, 0, w}, {w, w, 0}}));
  REQUIRE(cmd_export(dir / "run", "spectrum", out, err) == exit_code::ok);
  const json s = json::parse(read_text(dir / "run" / "spectrum.json"));
  CHECK(s.at("lambda_min").get<double>() == doctest::Approx(1.0).epsilon(1e-12));
  const auto eig = s.at("eigenvalues").get<std::vector<double>>();
  REQUIRE(eig.size() == 3);
  CHECK(std::abs(eig[0]) < 1e-12);
  CHECK(eig[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.at("bound_B").get<double>() >= 0.0);
  const double risk = s.at("empirical_risk").get<double>();
  CHECK(risk >= 0.0);
  CHECK(risk <= 1.0);

  CHECK(cmd_export(dir / "run", "movie", out, err) == exit_code::config);
  CHECK(cmd_export(dir / "absent", "spectrum", out, err) == exit_code::config);
  write_text(dir / "run" / "relation.csv", matrix_csv({{0, 1}, {2, 0}}));
  CHECK(cmd_export(dir / "run", "relation_heatmap", out, err) == exit_code::config);
  fs::remove_all(dir);
}
