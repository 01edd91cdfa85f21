#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "srdml/experiment.hpp"
#include "srdml/json_fields.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Saliency-regularized multi-task learning experiments"};
  app.require_subcommand(1);

  std::string config, out_dir, lambdas, run_dir, kind;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset as CSV files");
  gen->add_option("--config", config, "Experiment config JSON")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train on the first seed and write run artifacts");
  train->add_option("--config", config, "Experiment config JSON")->required();

  auto* sweep = app.add_subcommand("sweep", "Train every (lambda, seed) pair and aggregate test error");
  sweep->add_option("--config", config, "Experiment config JSON")->required();
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda values")
      ->default_val("0.001,0.005,0.01,0.05,0.1,0.5,1");

  auto* ablation = app.add_subcommand("ablation", "Compare learned and fixed uniform task relations");
  ablation->add_option("--config", config, "Experiment config JSON")->required();

  auto* exp = app.add_subcommand("export", "Render figures and spectra from a finished run");
  exp->add_option("--run", run_dir, "Run directory written by train")->required();
  exp->add_option("--kind", kind, "relation_heatmap, saliency or spectrum")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : srdml::exit_code::config;
  }

  if (*gen) return srdml::cmd_gen_data(config, out_dir, std::cout, std::cerr);
  if (*train) return srdml::cmd_train(config, std::cout, std::cerr);
  if (*sweep) {
    std::vector<double> grid;
    try {
      grid = srdml::parse_lambda_list(lambdas);
    } catch (const srdml::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return srdml::exit_code::config;
    }
    return srdml::cmd_sweep(config, grid, std::cout, std::cerr);
  }
  if (*ablation) return srdml::cmd_ablation(config, std::cout, std::cerr);
  return srdml::cmd_export(run_dir, kind, std::cout, std::cerr);
}
