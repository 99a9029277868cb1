#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ssprl/config.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(SSPRL_CLI_PATH) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// A config small enough that every CLI test stays fast.
nlohmann::json tiny_cli_config() {
  ssprl::config::RunConfig cfg;
  cfg.data.num_images = 16;
  cfg.data.image_size = 24;
  cfg.data.num_classes = 4;
  cfg.data.objects_min = 1;
  cfg.data.objects_max = 2;
  cfg.pyramid_spec.num_scales = 1;
  cfg.pyramid_spec.grids = {1, 2};
  cfg.pyramid_spec.patch_input_size = 8;
  cfg.encoder.channels = {4, 8};
  cfg.encoder.embed_dim = 8;
  cfg.encoder.head_hidden_dim = 8;
  cfg.encoder.num_scales = 1;
  cfg.encoder.prototype_counts = {4, 4};
  cfg.encoder.correlator_hidden_dim = 4;
  cfg.weights = ssprl::objectives::LossWeights(1);
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.warmup_steps = 1;
  cfg.freeze_prototypes_steps = 0;
  cfg.eval.probe_epochs = 4;
  cfg.eval.finetune_epochs = 1;
  return ssprl::config::to_json(cfg);
}

struct CliFixture {
  fs::path dir;
  fs::path config_path;

  CliFixture() {
    dir = fs::temp_directory_path() / "ssprl_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    config_path = dir / "config.json";
    std::ofstream f(config_path);
    f << tiny_cli_config().dump(2);
  }
  ~CliFixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("cli pipeline composes end-to-end from one config", "[cli]") {
  CliFixture fx;

  // gen-data
  auto gen = run_cli("gen-data --config " + fx.config_path.string() + " --out " +
                         (fx.dir / "data").string(),
                     fx.dir);
  INFO(gen.err);
  REQUIRE(gen.exit_code == 0);
  REQUIRE(fs::exists(fx.dir / "data" / "images" / "000015.png"));
  REQUIRE(fs::exists(fx.dir / "data" / "spec.json"));
  std::string labels1 = slurp(fx.dir / "data" / "labels.csv");
  int rows = -1;  // header
  for (char c : labels1) rows += (c == '\n');
  REQUIRE(rows == 16);

  // determinism: a second run writes identical labels
  auto gen2 = run_cli("gen-data --config " + fx.config_path.string() + " --out " +
                          (fx.dir / "data2").string(),
                      fx.dir);
  REQUIRE(gen2.exit_code == 0);
  REQUIRE(slurp(fx.dir / "data2" / "labels.csv") == labels1);
  REQUIRE(slurp(fx.dir / "data" / "run.json").find("config_hash") != std::string::npos);

  // pretrain (1 epoch, 4 steps)
  auto pre = run_cli("pretrain --config " + fx.config_path.string() + " --out " +
                         (fx.dir / "run").string(),
                     fx.dir);
  INFO(pre.err);
  REQUIRE(pre.exit_code == 0);
  const std::string ckpt = (fx.dir / "run" / "checkpoint_final.ckpt").string();
  REQUIRE(fs::exists(ckpt));
  REQUIRE(fs::exists(fx.dir / "run" / "metrics.jsonl"));
  // Metrics are one JSON object per line with the documented keys.
  {
    std::ifstream m(fx.dir / "run" / "metrics.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(m, line)) {
      auto j = nlohmann::json::parse(line);
      REQUIRE(j.contains("step"));
      REQUIRE(j.contains("l_pyr"));
      REQUIRE(j.contains("l_cross"));
      REQUIRE(j.contains("total"));
      REQUIRE(j.contains("q_entropy"));
      ++lines;
    }
    REQUIRE(lines == 4);
  }

  // eval (probe)
  auto ev = run_cli("eval --config " + fx.config_path.string() + " --checkpoint " + ckpt +
                        " --protocol probe --fraction 1.0 --seed 2 --out " +
                        (fx.dir / "eval").string(),
                    fx.dir);
  INFO(ev.err);
  REQUIRE(ev.exit_code == 0);
  bool found_results = false;
  for (const auto& entry : fs::directory_iterator(fx.dir / "eval"))
    if (entry.path().filename().string().rfind("results_", 0) == 0) {
      found_results = true;
      auto j = nlohmann::json::parse(slurp(entry.path()));
      REQUIRE(j.contains("mAP"));
      REQUIRE(j.contains("per_class_ap"));
      REQUIRE(j.at("seed") == 2);
      REQUIRE(j.at("config_hash").get<std::string>().size() == 16);
    }
  REQUIRE(found_results);
  REQUIRE(fs::exists(fx.dir / "eval" / "summary.csv"));

  // report
  auto rp = run_cli("report --config " + fx.config_path.string() + " --checkpoint " + ckpt +
                        " --top-k 3 --out " + (fx.dir / "rep").string(),
                    fx.dir);
  INFO(rp.err);
  REQUIRE(rp.exit_code == 0);
  auto j = nlohmann::json::parse(slurp(fx.dir / "rep" / "prototype_report.json"));
  int hist_sum = 0;
  for (const auto& v : j.at("scales")[0].at("histogram")) hist_sum += v.get<int>();
  REQUIRE(hist_sum == 16);
}

TEST_CASE("cli pretrain with zero epochs emits only the init checkpoint", "[cli]") {
  CliFixture fx;
  auto j = tiny_cli_config();
  j["train"]["epochs"] = 0;
  std::ofstream(fx.config_path) << j.dump();
  auto pre = run_cli("pretrain --config " + fx.config_path.string() + " --out " +
                         (fx.dir / "run0").string(),
                     fx.dir);
  REQUIRE(pre.exit_code == 0);
  REQUIRE(fs::exists(fx.dir / "run0" / "checkpoint_init.ckpt"));
  REQUIRE_FALSE(fs::exists(fx.dir / "run0" / "checkpoint_final.ckpt"));
}

TEST_CASE("cli gradcheck reports PASS on a tiny config", "[cli]") {
  CliFixture fx;
  auto gc = run_cli("gradcheck --config " + fx.config_path.string(), fx.dir);
  INFO(gc.out);
  INFO(gc.err);
  REQUIRE(gc.exit_code == 0);
  REQUIRE(gc.out.find("PASS") != std::string::npos);
}

TEST_CASE("cli errors are machine-readable json on stderr", "[cli]") {
  CliFixture fx;

  SECTION("missing config file") {
    auto r = run_cli("pretrain --config /nonexistent.json --out " + (fx.dir / "x").string(),
                     fx.dir);
    REQUIRE(r.exit_code != 0);
    auto j = nlohmann::json::parse(r.err);
    REQUIRE(j.contains("error"));
    REQUIRE(j.contains("message"));
  }

  SECTION("unknown config key") {
    auto j = tiny_cli_config();
    j["oops"] = true;
    std::ofstream(fx.config_path) << j.dump();
    auto r = run_cli("gradcheck --config " + fx.config_path.string(), fx.dir);
    REQUIRE(r.exit_code != 0);
    auto e = nlohmann::json::parse(r.err);
    REQUIRE(e.at("error") == "ConfigError");
  }

  SECTION("bad usage") {
    auto r = run_cli("eval --config " + fx.config_path.string(), fx.dir);  // missing required
    REQUIRE(r.exit_code != 0);
    auto e = nlohmann::json::parse(r.err);
    REQUIRE(e.at("error") == "UsageError");
  }
}
