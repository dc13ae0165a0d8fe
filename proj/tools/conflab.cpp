// conflab: dataset generation, single training runs and preset experiments.
//
//   conflab gen-data   --config cfg.json [--seed N] [--output DIR]
//   conflab train      --config cfg.json [--seed N] [--output DIR] [--jobs N]
//   conflab experiment (--config cfg.json | --preset NAME) [--seed N] [--output DIR] [--jobs N]
//   conflab preset     NAME      print a preset config as JSON
//
// The output directory is --output if given, else $CONFLAB_OUTPUT, else the
// config's output_dir.

#include "conflab/conflab.hpp"
#include "conflab/experiment.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace conflab;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::size_t jobs = 1;
};

ExperimentConfig load_config(const CommonOptions &o) {
  ExperimentConfig c;
  if (!o.preset_name.empty()) {
    c = preset(parse_experiment(o.preset_name));
  } else {
    c = parse_experiment_config(read_file(o.config_path));
  }
  if (o.seed) {
    c.train.seed = *o.seed;
  }
  if (!o.output.empty()) {
    c.output_dir = o.output;
  } else if (const char *env = std::getenv("CONFLAB_OUTPUT"); env && *env) {
    c.output_dir = env;
  }
  validate(c);
  return c;
}

int report(const std::vector<CellOutcome> &outcomes) {
  int failed = 0;
  for (const auto &o : outcomes) {
    if (!o.ok()) {
      std::cerr << "cell " << to_string(o.cell.method) << "/" << o.cell.name << " failed: " << o.error << "\n";
      ++failed;
    }
  }
  if (failed) {
    std::cerr << failed << " of " << outcomes.size() << " runs failed\n";
  }
  return failed ? 1 : 0;
}

int cmd_gen_data(const CommonOptions &o) {
  ExperimentConfig c = load_config(o);
  if (c.data.source != "gaussian_mixture") {
    throw std::invalid_argument("data.source: gen-data needs the gaussian_mixture generator");
  }
  const std::uint64_t seed = cell_seed(c, 0);
  const CellData data = build_cell_data(c, 0, seed);
  const fs::path root(c.output_dir);
  write_text(root / "train.csv", to_csv(data.train));
  write_text(root / "test.csv", to_csv(data.test));
  nlohmann::json side;
  side["base_seed"] = c.train.seed;
  side["seed"] = seed;
  side["data"] = to_json(c.data);
  side["train_clean_labels"] = *data.train.clean_labels;
  write_text(root / "data.json", side.dump(2) + "\n");
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test rows to " << root.string()
            << "\n";
  return 0;
}

int run_and_write(ExperimentConfig c, std::size_t jobs) {
  const fs::path root(c.output_dir);
  const auto outcomes = run_grid(c, jobs);
  for (const auto &o : outcomes) {
    write_cell(root, c, o);
  }
  if (c.replications > 1) {
    write_medians(root, c, outcomes);
  }
  const fs::path dir = root / std::string(to_string(c.experiment));
  write_text(dir / "config.json", serialize(c));
  switch (c.experiment) {
  case Experiment::noise_sweep:
    write_text(dir / "table.csv", noise_sweep_table(c, outcomes));
    break;
  case Experiment::random_labels:
    write_text(dir / "table.csv", random_labels_table(c, outcomes));
    break;
  case Experiment::imbalance:
    write_text(dir / "table.csv", imbalance_table(c, outcomes));
    write_text(dir / "curves.dat", imbalance_curves(c, outcomes));
    break;
  case Experiment::single_run:
    for (const auto &o : outcomes) {
      if (o.ok()) {
        std::cout << to_string(o.cell.method) << " " << o.cell.name << ": " << to_json(o.summary).dump() << "\n";
      }
    }
    break;
  case Experiment::variance_lab:
    break;
  }
  if (c.experiment != Experiment::single_run) {
    std::cout << "wrote " << (dir / "table.csv").string() << "\n";
  }
  return report(outcomes);
}

int cmd_train(const CommonOptions &o) {
  ExperimentConfig c = load_config(o);
  c.experiment = Experiment::single_run;
  return run_and_write(c, o.jobs);
}

int cmd_experiment(const CommonOptions &o) {
  ExperimentConfig c = load_config(o);
  if (c.experiment == Experiment::variance_lab) {
    const fs::path dir = fs::path(c.output_dir) / "variance_lab";
    write_text(dir / "config.json", serialize(c));
    write_text(dir / "table.csv", variance_table(run_variance_lab(c)));
    std::cout << "wrote " << (dir / "table.csv").string() << "\n";
    return 0;
  }
  return run_and_write(c, o.jobs);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"conflab: self-adaptive training and mixup on small networks"};
  app.require_subcommand(1);

  CommonOptions opts;
  auto add_common = [&](CLI::App *sub, bool with_jobs) {
    sub->add_option("--seed", opts.seed, "base seed, overrides train.seed");
    sub->add_option("--output", opts.output, "output directory");
    if (with_jobs) {
      sub->add_option("--jobs", opts.jobs, "concurrent runs")->check(CLI::PositiveNumber);
    }
  };

  auto *gen = app.add_subcommand("gen-data", "write train/test CSV and a JSON sidecar");
  gen->add_option("--config", opts.config_path, "JSON config")->required()->check(CLI::ExistingFile);
  add_common(gen, false);

  auto *train = app.add_subcommand("train", "train each configured method");
  train->add_option("--config", opts.config_path, "JSON config")->required()->check(CLI::ExistingFile);
  add_common(train, true);

  auto *exp = app.add_subcommand("experiment", "run an experiment grid");
  auto *cfg_opt = exp->add_option("--config", opts.config_path, "JSON config")->check(CLI::ExistingFile);
  auto *preset_opt = exp->add_option("--preset", opts.preset_name,
                                     "noise_sweep | random_labels | imbalance | variance_lab | single_run");
  cfg_opt->excludes(preset_opt);
  add_common(exp, true);

  std::string preset_name;
  auto *pre = app.add_subcommand("preset", "print a preset config");
  pre->add_option("name", preset_name, "preset name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      return cmd_gen_data(opts);
    }
    if (*train) {
      return cmd_train(opts);
    }
    if (*exp) {
      if (opts.config_path.empty() && opts.preset_name.empty()) {
        std::cerr << "error: experiment needs --config or --preset\n";
        return 2;
      }
      return cmd_experiment(opts);
    }
    if (*pre) {
      std::cout << serialize(preset(parse_experiment(preset_name)));
      return 0;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
