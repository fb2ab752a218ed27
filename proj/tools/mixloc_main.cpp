// Command-line front end: dataset generation, training, evaluation, map
// export, the loss ablation suite and the finite-difference gradient check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mixloc/gradcheck.hpp"
#include "mixloc/io.hpp"
#include "mixloc/metrics.hpp"
#include "mixloc/scenegen.hpp"
#include "mixloc/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using mixloc::io::format_double;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::string ckpt_path;
  std::string split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
};

mixloc::train::TrainConfig load_config(const CommonOpts& opts) {
  mixloc::train::TrainConfig config = mixloc::train::load_config_file(opts.config_path);
  if (opts.seed) {
    config.seed = *opts.seed;
    config.world.seed = *opts.seed;
  }
  if (opts.loss) {
    config.loss = *opts.loss;
    config.loss_weights.clear();
  }
  return config;
}

void print_report(const mixloc::metrics::MetricReport& report) {
  for (const auto& [name, value] : report.values()) {
    std::cout << name << " = " << format_double(value) << "\n";
  }
  for (const auto& [name, value] : report.diagnostics()) {
    std::cout << name << " = " << format_double(value) << "\n";
  }
}

void write_reports(const mixloc::metrics::MetricReport& report, const fs::path& dir,
                   const std::string& split) {
  fs::create_directories(dir);
  mixloc::metrics::write_report_csv(dir / ("report_" + split + ".csv"), report);
  mixloc::metrics::write_report_json(dir / ("report_" + split + ".json"), report);
}

int run_gen(const CommonOpts& opts) {
  const mixloc::train::TrainConfig config = load_config(opts);
  const mixloc::gen::World world = mixloc::gen::make_world(config.world);
  const mixloc::gen::Manifest manifest = mixloc::train::manifest_for(config);
  mixloc::gen::export_dataset(world, manifest, config.k, opts.out_dir);
  std::cout << "wrote dataset to " << opts.out_dir << "\n";
  return 0;
}

int run_train(const CommonOpts& opts) {
  const mixloc::train::TrainConfig config = load_config(opts);
  const fs::path out(opts.out_dir);
  fs::create_directories(out);

  const std::size_t report_every = std::max<std::size_t>(1, config.steps / 20);
  mixloc::train::Checkpoint ckpt = mixloc::train::train(
      config, [&](std::size_t step, double loss) {
        if (step == 1 || step % report_every == 0 || step == config.steps) {
          std::cout << "step " << step << "  loss " << format_double(loss) << "\n";
        }
      });

  mixloc::io::write_text_file(out / "config.json", mixloc::train::config_to_json(config));
  mixloc::train::save_checkpoint(ckpt, out / "final");
  std::cout << "checkpoint written to " << (out / "final").string() << ".{json,bin}\n";
  return 0;
}

int run_eval(const CommonOpts& opts) {
  const mixloc::train::Checkpoint ckpt = mixloc::train::load_checkpoint(opts.ckpt_path);
  const mixloc::metrics::MetricReport report = mixloc::train::evaluate_split(ckpt, opts.split);
  const fs::path dir = opts.out_dir.empty() ? fs::path(opts.ckpt_path).parent_path()
                                            : fs::path(opts.out_dir);
  write_reports(report, dir.empty() ? fs::path(".") : dir, opts.split);
  print_report(report);
  return 0;
}

int run_export(const CommonOpts& opts, std::size_t count) {
  const mixloc::train::Checkpoint ckpt = mixloc::train::load_checkpoint(opts.ckpt_path);
  mixloc::train::export_maps(ckpt, opts.split, count, opts.out_dir);
  std::cout << "wrote maps for " << count << " examples to " << opts.out_dir << "\n";
  return 0;
}

int run_ablate(const CommonOpts& opts, std::size_t num_seeds) {
  const mixloc::train::TrainConfig base = load_config(opts);
  const fs::path out(opts.out_dir);
  fs::create_directories(out);

  const std::vector<std::string> losses = {"cyc", "pit", "mixed_corresp", "isi"};
  // caps[loss][seed index]
  std::vector<std::vector<double>> caps(losses.size(), std::vector<double>(num_seeds, 0.0));

  std::ofstream table(out / "ablation.csv");
  table << "loss,seed,cap,piap,auc,ciou@0.30\n";
  for (std::size_t li = 0; li < losses.size(); ++li) {
    for (std::size_t si = 0; si < num_seeds; ++si) {
      mixloc::train::TrainConfig config = base;
      config.loss = losses[li];
      config.loss_weights.clear();
      config.seed = base.seed + si;
      config.world.seed = config.seed;
      std::cout << "training loss=" << losses[li] << " seed=" << config.seed << "\n";
      const mixloc::train::Checkpoint ckpt = mixloc::train::train(config);
      const mixloc::metrics::MetricReport report =
          mixloc::train::evaluate_split(ckpt, opts.split);
      caps[li][si] = report.at("cap");
      table << losses[li] << ',' << config.seed << ',' << format_double(report.at("cap"))
            << ',' << format_double(report.at("piap")) << ','
            << format_double(report.at("auc")) << ','
            << format_double(report.at("ciou@0.30")) << "\n";
    }
  }
  table.close();

  std::ofstream ranks(out / "rank_order.csv");
  ranks << "seed,cyc_cap,pit_cap,mixed_corresp_cap,isi_cap,cyc_beats_all\n";
  std::size_t cyc_wins = 0;
  for (std::size_t si = 0; si < num_seeds; ++si) {
    const bool wins =
        caps[0][si] > caps[1][si] && caps[0][si] > caps[2][si] && caps[0][si] > caps[3][si];
    cyc_wins += wins;
    ranks << (base.seed + si);
    for (std::size_t li = 0; li < losses.size(); ++li) {
      ranks << ',' << format_double(caps[li][si]);
    }
    ranks << ',' << (wins ? 1 : 0) << "\n";
  }
  ranks.close();
  std::cout << "cyc ranked first on " << cyc_wins << " of " << num_seeds << " seeds\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, std::size_t rounds) {
  const std::vector<mixloc::gradcheck::CheckResult> results =
      mixloc::gradcheck::run_standard_checks(seed, rounds);
  bool all_pass = true;
  for (const auto& r : results) {
    all_pass = all_pass && r.pass;
    std::cout << (r.pass ? "ok   " : "FAIL ") << r.name << "  rel "
              << format_double(r.max_rel_error) << "  abs " << format_double(r.max_abs_error)
              << "  coords " << r.coords_checked << "\n";
  }
  std::cout << (all_pass ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixloc: cycle-consistent audio-visual source localization on synthetic worlds"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::size_t export_count = 8;
  std::size_t ablate_seeds = 5;
  std::uint64_t gradcheck_seed = 0;
  std::size_t gradcheck_rounds = 10;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "JSON experiment config")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto add_seed_loss = [&](CLI::App* cmd) {
    cmd->add_option("--seed", opts.seed, "override config seed (also reseeds the world)");
    cmd->add_option("--loss", opts.loss, "override config loss")
        ->check(CLI::IsMember({"cyc", "isi", "mixed_corresp", "pit", "corresp"}));
  };
  auto add_ckpt = [&](CLI::App* cmd) {
    cmd->add_option("--ckpt", opts.ckpt_path, "checkpoint prefix or .json path")->required();
  };
  auto add_split = [&](CLI::App* cmd) {
    cmd->add_option("--split", opts.split, "manifest split")
        ->check(CLI::IsMember({"train", "val", "test"}));
  };

  CLI::App* gen = app.add_subcommand("gen", "generate and export a dataset");
  add_config(gen);
  gen->add_option("--out", opts.out_dir, "output directory")->required();
  add_seed_loss(gen);

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  add_config(train);
  train->add_option("--out", opts.out_dir, "checkpoint directory")->required();
  add_seed_loss(train);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_ckpt(eval);
  add_split(eval);
  eval->add_option("--out", opts.out_dir, "report directory (default: checkpoint directory)");

  CLI::App* exp = app.add_subcommand("export", "export localization maps and masks");
  add_ckpt(exp);
  add_split(exp);
  exp->add_option("--out", opts.out_dir, "output directory")->required();
  exp->add_option("--count", export_count, "number of examples");

  CLI::App* ablate = app.add_subcommand("ablate", "train every loss over shared seeds");
  add_config(ablate);
  ablate->add_option("--out", opts.out_dir, "output directory")->required();
  ablate->add_option("--seeds", ablate_seeds, "number of seeds");
  add_seed_loss(ablate);
  add_split(ablate);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--seed", gradcheck_seed, "base seed");
  gc->add_option("--rounds", gradcheck_rounds, "settings per loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen(opts);
    if (train->parsed()) return run_train(opts);
    if (eval->parsed()) return run_eval(opts);
    if (exp->parsed()) return run_export(opts, export_count);
    if (ablate->parsed()) return run_ablate(opts, ablate_seeds);
    if (gc->parsed()) return run_gradcheck(gradcheck_seed, gradcheck_rounds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
