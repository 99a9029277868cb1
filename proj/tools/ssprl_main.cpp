// ssprl: self-supervised pyramid representation learning, desk scale.
//
// Subcommands: gen-data, pretrain, eval, gradcheck, report. Every command is
// driven by one JSON config file and is deterministic given (config, seed).
// Failures print machine-readable JSON on stderr and exit nonzero.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssprl/config.hpp"
#include "ssprl/evaluate.hpp"
#include "ssprl/model.hpp"
#include "ssprl/pretrain.hpp"
#include "ssprl/report.hpp"
#include "ssprl/synth.hpp"

namespace fs = std::filesystem;
using ssprl::config::RunConfig;

namespace {

void write_run_stamp(const std::string& out_dir, const std::string& command,
                     const std::string& config_hash) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "run.json");
  f << nlohmann::json{{"command", command}, {"config_hash", config_hash}}.dump(2) << "\n";
}

int error_out(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

struct EvalSplit {
  std::vector<int> train_pool;
  std::vector<int> val;
};

EvalSplit make_eval_split(int n, const ssprl::config::EvalConfig& eval) {
  auto splits = ssprl::synth::split_indices(n, {eval.val_fraction, 1.0}, eval.split_seed);
  EvalSplit out;
  out.val = splits[0];
  std::vector<bool> in_val(n, false);
  for (int i : out.val) in_val[i] = true;
  for (int i : splits[1])
    if (!in_val[i]) out.train_pool.push_back(i);
  return out;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& hash, const std::string& out_dir) {
  auto set = ssprl::synth::generate_dataset(cfg.data);
  ssprl::synth::save_dataset(out_dir, cfg.data, set);
  write_run_stamp(out_dir, "gen-data", hash);
  std::cout << "wrote " << set.size() << " images to " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& hash, const std::string& out_dir,
                 const std::string& resume) {
  auto set = ssprl::synth::generate_dataset(cfg.data);
  write_run_stamp(out_dir, "pretrain", hash);
  const std::string final_path =
      ssprl::pretrain::run_pretrain<float>(cfg.to_pretrain_config(), set.images, out_dir, hash,
                                           resume);
  std::cout << final_path << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& hash, const std::string& checkpoint,
             const std::string& protocol, double fraction, std::uint64_t seed,
             const std::string& out_dir) {
  auto set = ssprl::synth::generate_dataset(cfg.data);
  auto split = make_eval_split(set.size(), cfg.eval);

  ssprl::model::TrainState<float> state(cfg.encoder, cfg.train_seed);
  ssprl::pretrain::load_checkpoint<float>(checkpoint, state);

  ssprl::evaluate::ProbeResult result;
  if (protocol == "probe") {
    ssprl::MatX<float> features =
        ssprl::evaluate::extract_features(state, set.images, cfg.pyramid_spec);
    std::vector<int> train_idx = split.train_pool;
    if (fraction < 1.0) {
      auto nested = ssprl::synth::split_indices(
          static_cast<int>(split.train_pool.size()), {fraction},
          ssprl::derive_seed(seed, ssprl::evaluate::kFinetuneSalt));
      train_idx.clear();
      for (int j : nested[0]) train_idx.push_back(split.train_pool[j]);
    }
    ssprl::evaluate::ProbeOptions opt;
    opt.epochs = cfg.eval.probe_epochs;
    opt.lr = cfg.eval.probe_lr;
    opt.batch_size = cfg.eval.probe_batch_size;
    opt.ap_variant = cfg.eval.variant();
    result = ssprl::evaluate::linear_probe(features.cast<double>(), set.labels, train_idx,
                                           split.val, seed, opt);
  } else {
    ssprl::evaluate::FinetuneOptions opt;
    opt.epochs = cfg.eval.finetune_epochs;
    opt.lr = cfg.eval.finetune_lr;
    opt.batch_size = cfg.eval.finetune_batch_size;
    opt.ap_variant = cfg.eval.variant();
    result = ssprl::evaluate::semi_supervised_finetune(state, set, cfg.pyramid_spec,
                                                       split.train_pool, split.val, fraction,
                                                       seed, opt);
  }

  write_run_stamp(out_dir, "eval", hash);
  nlohmann::json out = {{"protocol", result.protocol}, {"fraction", fraction},
                        {"seed", seed},               {"per_class_ap", result.per_class_ap},
                        {"mAP", result.map},          {"config_hash", hash}};
  char name[128];
  std::snprintf(name, sizeof(name), "results_%s_f%g_s%llu.json", protocol.c_str(), fraction,
                static_cast<unsigned long long>(seed));
  std::ofstream f(fs::path(out_dir) / name);
  f << out.dump(2) << "\n";

  const fs::path csv_path = fs::path(out_dir) / "summary.csv";
  const bool fresh = !fs::exists(csv_path);
  std::ofstream csv(csv_path, std::ios::app);
  if (fresh) csv << "protocol,fraction,seed,mAP,config_hash\n";
  csv << result.protocol << "," << fraction << "," << seed << "," << result.map << "," << hash
      << "\n";

  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const std::string& hash) {
  // A small fixed batch is enough; only gradients are under test.
  const int batch = 2;
  std::vector<ssprl::pyramid::PyramidPair> pyramids;
  for (int i = 0; i < batch; ++i) {
    ssprl::Image im = ssprl::synth::generate_image(cfg.data, i, nullptr, nullptr);
    pyramids.push_back(ssprl::pyramid::build_pyramid_pair(
        im, ssprl::derive_seed(cfg.train_seed, 0x6cULL, static_cast<std::uint64_t>(i)),
        cfg.pyramid_spec));
  }
  ssprl::model::TrainState<double> state(cfg.encoder, cfg.train_seed);
  auto pcfg = cfg.to_pretrain_config();
  auto report = ssprl::pretrain::grad_check(state, pyramids, pcfg, 1e-4);

  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : report.groups)
    groups.push_back({{"name", g.name}, {"max_rel_error", g.max_rel_error}});
  nlohmann::json out = {{"pass", report.pass},
                        {"max_rel_error", report.max_rel_error},
                        {"tolerance", report.tolerance},
                        {"config_hash", hash},
                        {"groups", groups}};
  std::cout << out.dump(2) << "\n";
  std::cout << (report.pass ? "PASS" : "FAIL") << "\n";
  if (!report.pass) {
    std::cerr << nlohmann::json{{"error", "GradCheckFailed"},
                                {"message", "max relative error " +
                                                std::to_string(report.max_rel_error)}}
                     .dump()
              << std::endl;
    return 4;
  }
  return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& hash, const std::string& checkpoint,
               int top_k, const std::string& out_dir) {
  auto set = ssprl::synth::generate_dataset(cfg.data);
  ssprl::model::TrainState<float> state(cfg.encoder, cfg.train_seed);
  ssprl::pretrain::load_checkpoint<float>(checkpoint, state);
  auto rep = ssprl::report::build_report(state, set.images, cfg.pyramid_spec, top_k);
  write_run_stamp(out_dir, "report", hash);
  std::ofstream f(fs::path(out_dir) / "prototype_report.json");
  f << ssprl::report::to_json(rep, hash).dump(2) << "\n";
  std::cout << "wrote " << (fs::path(out_dir) / "prototype_report.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised pyramid representation learning (desk scale)"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", checkpoint, resume, protocol = "probe";
  double fraction = 1.0;
  std::uint64_t seed = 1;
  int top_k = 8;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config JSON")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset directory");
  add_config(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* pre = app.add_subcommand("pretrain", "Run self-supervised pre-training");
  add_config(pre);
  pre->add_option("--out", out_dir, "Output directory")->required();
  pre->add_option("--resume", resume, "Checkpoint to resume from");

  CLI::App* ev = app.add_subcommand("eval", "Linear probe or semi-supervised fine-tune");
  add_config(ev);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  ev->add_option("--protocol", protocol, "probe | finetune")
      ->check(CLI::IsMember({"probe", "finetune"}));
  ev->add_option("--fraction", fraction, "Labeled fraction")
      ->check(CLI::IsMember(std::vector<double>{0.01, 0.10, 1.0}));
  ev->add_option("--seed", seed, "Evaluation seed");
  ev->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  add_config(gc);

  CLI::App* rp = app.add_subcommand("report", "Prototype assignment report");
  add_config(rp);
  rp->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  rp->add_option("--top-k", top_k, "Exemplars per prototype");
  rp->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    return error_out("UsageError", e.what());
  }

  try {
    RunConfig cfg = ssprl::config::load(config_path);
    const std::string hash = ssprl::config::hash(cfg);
    if (gen->parsed()) return cmd_gen_data(cfg, hash, out_dir);
    if (pre->parsed()) return cmd_pretrain(cfg, hash, out_dir, resume);
    if (ev->parsed()) return cmd_eval(cfg, hash, checkpoint, protocol, fraction, seed, out_dir);
    if (gc->parsed()) return cmd_gradcheck(cfg, hash);
    if (rp->parsed()) return cmd_report(cfg, hash, checkpoint, top_k, out_dir);
  } catch (const ssprl::ConfigError& e) {
    return error_out("ConfigError", e.what());
  } catch (const ssprl::DimensionError& e) {
    return error_out("DimensionError", e.what());
  } catch (const ssprl::NumericError& e) {
    return error_out("NumericError", e.what());
  } catch (const ssprl::IoError& e) {
    return error_out("IoError", e.what());
  } catch (const std::exception& e) {
    return error_out("Error", e.what());
  }
  return 0;
}
