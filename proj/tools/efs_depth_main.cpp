// efs-depth: command-line front end for the event-focal-stack depth toolkit.
// Subcommands: generate, train, eval, ablate, selfcheck.
//
// Exit codes: 0 success, 1 configuration error, 2 I/O error, 3 training
// divergence, 4 selfcheck failure.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "efs/config.hpp"
#include "efs/metrics.hpp"
#include "efs/selfcheck.hpp"

namespace fs = std::filesystem;

namespace {

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const efs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const efs::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const efs::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_generate(const std::string& config_path, const std::string& out_dir, bool force) {
  const efs::RunConfig cfg = efs::RunConfig::load(config_path);
  const fs::path out(out_dir);
  if (!force && fs::exists(out) && !fs::is_empty(out)) {
    std::cerr << "output directory " << out.string()
              << " already exists and is not empty; pass --force to overwrite\n";
    return 2;
  }
  std::vector<efs::SceneConfig> scenes;
  for (int i = 0; i < cfg.scene_count(); ++i) scenes.push_back(cfg.scene(i));
  efs::build_dataset(scenes, cfg.lens(), cfg.sweep(), cfg.sim(), cfg.encoding(), out);
  std::cout << (out / "manifest.txt").string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest_path,
              const std::string& out_dir) {
  const efs::RunConfig cfg = efs::RunConfig::load(config_path);
  const fs::path manifest_file(manifest_path);
  const efs::DatasetManifest manifest = efs::read_manifest(manifest_file);
  const fs::path root = manifest_file.parent_path();

  auto samples = efs::load_training_samples(manifest, root);
  if (samples.empty()) throw efs::IoError("manifest has no samples");

  // The last sample is held out for the trace when more than one exists.
  const efs::TrainingSample* holdout = nullptr;
  std::vector<efs::TrainingSample> train_set = samples;
  if (samples.size() >= 2) {
    holdout = &samples.back();
    train_set.pop_back();
  }

  efs::ModelConfig mc = cfg.model();
  mc.num_bins = manifest.num_bins;
  const int height = train_set.front().gt.shape[0];
  const int width = train_set.front().gt.shape[1];
  efs::EDFFModel model(mc, height, width);

  const auto trace = efs::train_edff(model, train_set, holdout, cfg.train(), cfg.loss());
  efs::save_checkpoint(out_dir, model);
  efs::write_text_atomic(fs::path(out_dir) / "loss_trace.csv", efs::loss_trace_csv(trace));
  std::cout << "checkpoint: " << out_dir << "\n";
  if (!trace.empty()) {
    std::cout << "final loss " << trace.back().loss << ", holdout masked RMSE "
              << trace.back().masked_rmse << " m\n";
  }
  return 0;
}

int cmd_eval(const std::string& checkpoint, bool baseline, const std::string& manifest_path,
             const std::string& report_path, const std::string& config_path) {
  const fs::path manifest_file(manifest_path);
  const efs::DatasetManifest manifest = efs::read_manifest(manifest_file);
  const fs::path root = manifest_file.parent_path();

  efs::Estimator estimator;
  std::string label;
  if (baseline) {
    efs::ReversalConfig rc;
    if (!config_path.empty()) rc = efs::RunConfig::load(config_path).baseline();
    estimator = efs::classical_estimator(rc);
    label = "baseline";
  } else {
    auto model = std::make_shared<efs::EDFFModel>(efs::load_checkpoint(checkpoint));
    estimator = efs::model_estimator(model);
    label = "edff";
  }

  const efs::EvalReport report = efs::evaluate(manifest, root, estimator);
  std::cout << label << ": rmse_m=" << report.aggregate.rmse_m
            << " absrel=" << report.aggregate.absrel << " delta1=" << report.aggregate.delta1
            << " delta2=" << report.aggregate.delta2 << " delta3=" << report.aggregate.delta3
            << " pixels=" << report.aggregate.pixel_count << "\n";
  efs::write_text_atomic(report_path, efs::metrics_report_csv(report));
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& manifest_path,
               const std::string& report_path) {
  const efs::RunConfig cfg = efs::RunConfig::load(config_path);
  const fs::path manifest_file(manifest_path);
  const efs::DatasetManifest manifest = efs::read_manifest(manifest_file);

  efs::AblationConfig ac;
  ac.split_fraction = cfg.split_fraction();
  ac.split_seed = cfg.split_seed();
  ac.train = cfg.train();
  ac.loss = cfg.loss();

  const auto rows = efs::ablation_run(manifest, manifest_file.parent_path(), cfg.model(), ac);
  const std::string csv = efs::ablation_report_csv(rows);
  std::cout << csv;
  efs::write_text_atomic(report_path, csv);
  return 0;
}

int cmd_selfcheck(const std::string& inject_fault) {
  const auto results = efs::run_selfcheck(inject_fault);
  const efs::SelfCheckResult* first_fail = nullptr;
  for (const auto& r : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.name << ": " << r.detail << "\n";
    if (!r.pass && !first_fail) first_fail = &r;
  }
  if (first_fail) {
    std::cerr << "selfcheck failed at " << first_fail->name << "\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efs-depth: synthesizes event focal stacks from virtual scenes and estimates "
               "sparse depth with a classical polarity-reversal detector or the EDFF network"};
  app.require_subcommand(0, 1);
  app.footer("Config keys (key = value per line, '#' comments):\n" +
             efs::RunConfig::describe_keys());

  std::string config_path, out_dir, manifest_path, checkpoint, report_path, inject_fault;
  bool force = false, baseline = false;

  auto* gen = app.add_subcommand("generate", "build a synthetic dataset from a config");
  gen->add_option("--config", config_path, "run configuration file")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_flag("--force", force, "overwrite an existing non-empty output directory");

  auto* train = app.add_subcommand("train", "train the EDFF model on a dataset manifest");
  train->add_option("--config", config_path, "run configuration file")->required();
  train->add_option("--manifest", manifest_path, "dataset manifest")->required();
  train->add_option("--out", out_dir, "checkpoint output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or the classical baseline");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
  eval->add_flag("--baseline", baseline, "evaluate the polarity-reversal baseline");
  eval->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval->add_option("--report", report_path, "metrics report path")
      ->default_val("eval_report.csv");
  eval->add_option("--config", config_path, "optional config for baseline parameters");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate the 4-row module ablation");
  ablate->add_option("--config", config_path, "run configuration file")->required();
  ablate->add_option("--manifest", manifest_path, "dataset manifest")->required();
  ablate->add_option("--report", report_path, "ablation report path")
      ->default_val("ablation_report.csv");

  auto* selfcheck = app.add_subcommand("selfcheck", "run built-in gradient and oracle checks");
  selfcheck
      ->add_option("--inject-fault", inject_fault,
                   "corrupt the named primitive's backward pass (testing hook)")
      ->default_val("");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return guarded([&] { return cmd_generate(config_path, out_dir, force); });
  if (train->parsed()) {
    return guarded([&] { return cmd_train(config_path, manifest_path, out_dir); });
  }
  if (eval->parsed()) {
    if (baseline == !checkpoint.empty()) {
      std::cerr << "config error: pass exactly one of --checkpoint or --baseline\n";
      return 1;
    }
    return guarded(
        [&] { return cmd_eval(checkpoint, baseline, manifest_path, report_path, config_path); });
  }
  if (ablate->parsed()) {
    return guarded([&] { return cmd_ablate(config_path, manifest_path, report_path); });
  }
  if (selfcheck->parsed()) return guarded([&] { return cmd_selfcheck(inject_fault); });

  std::cout << app.help();
  return 0;
}
