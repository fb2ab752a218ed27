// Exercises the installed binary end to end through std::system. The path to
// the executable arrives via the MIXLOC_CLI_PATH compile definition.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "testutil.hpp"

namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

struct RunResult {
  int status = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log =
      fs::temp_directory_path() / ("mixloc_cli_log_" + std::to_string(::getpid()) + "_" +
                                   std::to_string(counter++) + ".txt");
  const std::string cmd =
      std::string(MIXLOC_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log, std::ios::binary);
  r.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  fs::remove(log);
  return r;
}

// Small world, four steps: each invocation finishes in a fraction of a second.
const char* kMicroConfig = R"({
  "loss": "cyc",
  "k": 2,
  "embed_dim": 6,
  "hidden_dim": 8,
  "learning_rate": 0.001,
  "batch_size": 2,
  "steps": 4,
  "seed": 3,
  "world": {
    "num_classes": 3,
    "visual_dim": 8,
    "audio_dim": 8,
    "grid_size": 4,
    "source_extent": 2,
    "visual_noise_sigma": 0.05,
    "audio_noise_sigma": 0.05,
    "shift_noise_sigma": 0.05
  },
  "splits": {"train": 0, "val": 2, "test": 2}
})";

fs::path write_config(const TempDir& tmp) {
  const fs::path p = tmp / "config.json";
  std::ofstream(p) << kMicroConfig;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("usage errors exit with status 2") {
  TempDir tmp("cli_usage");
  const fs::path cfg = write_config(tmp);

  CHECK(run_cli("").status == 2);
  CHECK(run_cli("frobnicate").status == 2);
  CHECK(run_cli("train --out " + (tmp / "x").string()).status == 2);
  CHECK(run_cli("train --config " + (tmp / "absent.json").string() + " --out " +
                (tmp / "x").string())
            .status == 2);
  CHECK(run_cli("train --config " + cfg.string()).status == 2);
  CHECK(run_cli("eval --split val").status == 2);
  CHECK(run_cli("export --ckpt " + (tmp / "final").string()).status == 2);
  CHECK(run_cli("train --config " + cfg.string() + " --out " + (tmp / "x").string() +
                " --loss sync")
            .status == 2);
  CHECK(run_cli("eval --ckpt " + (tmp / "final").string() + " --split dev").status == 2);

  const RunResult help = run_cli("--help");
  CHECK(help.status == 0);
  CHECK(help.output.find("train") != std::string::npos);
  CHECK(help.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("missing or corrupt inputs exit with status 1") {
  TempDir tmp("cli_badfiles");
  CHECK(run_cli("eval --ckpt " + (tmp / "nonexistent").string()).status == 1);

  const fs::path bad = tmp / "bad.json";
  std::ofstream(bad) << R"({"loss": "cyc", "nope": 1})";
  const RunResult r = run_cli("train --config " + bad.string() + " --out " +
                              (tmp / "x").string());
  CHECK(r.status == 1);
  CHECK(r.output.find("unknown key") != std::string::npos);
}

TEST_CASE("train, eval, export and gen round trip") {
  TempDir tmp("cli_flow");
  const fs::path cfg = write_config(tmp);
  const fs::path run = tmp / "run";

  const RunResult trained =
      run_cli("train --config " + cfg.string() + " --out " + run.string());
  REQUIRE(trained.status == 0);
  CHECK(trained.output.find("step 1") != std::string::npos);
  CHECK(fs::exists(run / "config.json"));
  CHECK(fs::exists(run / "final.json"));
  CHECK(fs::exists(run / "final.bin"));

  SUBCASE("eval writes reports next to the checkpoint") {
    const RunResult evaled =
        run_cli("eval --ckpt " + (run / "final").string() + " --split val");
    REQUIRE(evaled.status == 0);
    CHECK(evaled.output.find("cap = ") != std::string::npos);
    REQUIRE(fs::exists(run / "report_val.csv"));
    REQUIRE(fs::exists(run / "report_val.json"));
    const std::string csv = slurp(run / "report_val.csv");
    CHECK(csv.rfind("metric,value\n", 0) == 0);
    CHECK(csv.find("cap,") != std::string::npos);
    CHECK(csv.find("ciou@0.30,") != std::string::npos);

    const fs::path elsewhere = tmp / "reports";
    CHECK(run_cli("eval --ckpt " + (run / "final").string() + " --split test --out " +
                  elsewhere.string())
              .status == 0);
    CHECK(fs::exists(elsewhere / "report_test.csv"));
  }

  SUBCASE("export writes maps and masks") {
    const fs::path maps = tmp / "maps";
    REQUIRE(run_cli("export --ckpt " + (run / "final").string() +
                    " --split val --count 1 --out " + maps.string())
                .status == 0);
    std::size_t pgms = 0, bins = 0;
    for (const auto& entry : fs::directory_iterator(maps)) {
      const std::string name = entry.path().filename().string();
      CHECK(name.rfind("example_", 0) == 0);
      pgms += name.ends_with(".pgm");
      bins += name.ends_with(".bin");
    }
    CHECK(pgms == 4);  // k maps + k masks
    CHECK(bins == 4);
  }

  SUBCASE("a seed override changes the trained weights") {
    const fs::path run2 = tmp / "run2";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run2.string() +
                    " --seed 123")
                .status == 0);
    CHECK(slurp(run2 / "final.bin") != slurp(run / "final.bin"));

    // Same config, no override: bit-identical to the first run.
    const fs::path run3 = tmp / "run3";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run3.string()).status == 0);
    CHECK(slurp(run3 / "final.bin") == slurp(run / "final.bin"));
    CHECK(slurp(run3 / "final.json") == slurp(run / "final.json"));
  }

  SUBCASE("a loss override lands in the stored config") {
    const fs::path run4 = tmp / "run4";
    REQUIRE(run_cli("train --config " + cfg.string() + " --out " + run4.string() +
                    " --loss pit")
                .status == 0);
    CHECK(slurp(run4 / "config.json").find("\"loss\": \"pit\"") != std::string::npos);
  }

  SUBCASE("gen exports the dataset for every split") {
    const fs::path data = tmp / "data";
    REQUIRE(run_cli("gen --config " + cfg.string() + " --out " + data.string()).status == 0);
    REQUIRE(fs::exists(data / "manifest.json"));
    const std::string manifest = slurp(data / "manifest.json");
    CHECK(manifest.find("mixloc-dataset-v1") != std::string::npos);
    std::size_t examples = 0;
    for (const auto& entry : fs::directory_iterator(data)) {
      examples += entry.path().filename().string().rfind("example_", 0) == 0;
    }
    // train pool sized to steps * batch_size = 8, plus val 2 and test 2
    CHECK(examples == 12);
  }
}

TEST_CASE("ablate writes the comparison tables") {
  TempDir tmp("cli_ablate");
  const fs::path cfg = write_config(tmp);
  const fs::path out = tmp / "ablation";

  const RunResult r = run_cli("ablate --config " + cfg.string() + " --out " + out.string() +
                              " --seeds 2 --split val");
  REQUIRE(r.status == 0);
  CHECK(r.output.find("cyc ranked first on") != std::string::npos);

  const std::string table = slurp(out / "ablation.csv");
  CHECK(table.rfind("loss,seed,cap,piap,auc,ciou@0.30\n", 0) == 0);
  CHECK(count_lines(table) == 9);  // header + 4 losses x 2 seeds
  CHECK(table.find("mixed_corresp,") != std::string::npos);

  const std::string ranks = slurp(out / "rank_order.csv");
  CHECK(ranks.rfind("seed,cyc_cap,pit_cap,mixed_corresp_cap,isi_cap,cyc_beats_all\n", 0) == 0);
  CHECK(count_lines(ranks) == 3);
}

TEST_CASE("gradcheck reports per-loss results") {
  const RunResult r = run_cli("gradcheck --seed 1 --rounds 1");
  REQUIRE(r.status == 0);
  CHECK(r.output.find("gradcheck passed") != std::string::npos);
  CHECK(r.output.find("cyc") != std::string::npos);
}

TEST_SUITE_END();
