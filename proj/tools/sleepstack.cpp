// sleepstack: end-to-end sleep staging from raw single-channel EEG.
// Subcommands: ingest, train, eval, baseline, analyze.

#include <CLI11.hpp>

#include "sleepstack/cli.hpp"

using namespace sleepstack;
using cli::ConfigResolver;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config;
  std::string data_dir;
  std::string manifest;
  std::string store;
  std::string checkpoint;
  std::string out = "out";
  std::string channel = "EEG Fpz-Cz";
  std::string task;
  int scheme = 6;
  uint64_t seed = 0;
  int threads = 0;
  bool dry_run = false;

  // train hyperparameters (defaults mirror training::TrainConfig)
  training::TrainConfig tc;

  std::map<std::string, CLI::Option*> opts;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  a.opts["config"] = sub->add_option("--config", a.config, "JSON config file");
  a.opts["data_dir"] = sub->add_option("--data-dir", a.data_dir, "EDF corpus directory");
  a.opts["manifest"] = sub->add_option("--manifest", a.manifest, "split manifest JSON");
  a.opts["store"] = sub->add_option("--store", a.store, "epoch store path");
  a.opts["checkpoint"] = sub->add_option("--checkpoint", a.checkpoint, "model checkpoint");
  a.opts["out"] = sub->add_option("--out", a.out, "output directory");
  a.opts["channel"] = sub->add_option("--channel", a.channel, "EEG channel label");
  a.opts["task"] = sub->add_option("--task", a.task, "rs or sc (picks the packaged manifest)")
                       ->check(CLI::IsMember({"rs", "sc"}));
  a.opts["scheme"] = sub->add_option("--scheme", a.scheme, "5 or 6 stage labels")
                         ->check(CLI::IsMember({5, 6}));
  a.opts["seed"] = sub->add_option("--seed", a.seed, "run seed");
  a.opts["threads"] = sub->add_option("--threads", a.threads, "worker threads (0 = auto)");
  a.opts["dry_run"] = sub->add_flag("--dry-run", a.dry_run, "plan only");
  a.opts["batch_size"] = sub->add_option("--batch-size", a.tc.batch_size, "mini-batch size");
  a.opts["num_epochs"] = sub->add_option("--num-epochs", a.tc.num_epochs, "training epochs");
  a.opts["max_lr"] = sub->add_option("--max-lr", a.tc.max_lr, "peak learning rate");
  a.opts["keep_prob"] = sub->add_option("--keep-prob", a.tc.keep_prob, "dropout keep probability");
  a.opts["augmentation"] = sub->add_option("--augmentation", a.tc.augmentation,
                                           "rolling-shift augmentation on/off");
  a.opts["lr_decay_every"] =
      sub->add_option("--lr-decay-every", a.tc.lr_decay_every, "epochs per LR plateau");
  a.opts["lr_decay_factor"] =
      sub->add_option("--lr-decay-factor", a.tc.lr_decay_factor, "LR divisor per plateau");
  a.opts["stop_at_train_acc"] = sub->add_option("--stop-at-train-acc", a.tc.stop_at_train_acc,
                                                "stop once train accuracy reaches this");
}

// flag > config file > SLEEPSTACK_* env > default
void resolve_all(CommonArgs& a) {
  json cfg = json::object();
  if (!a.config.empty()) cfg = cli::load_json_file(a.config, "config");
  const ConfigResolver r(cfg);
  auto set = [&](const char* key, auto& value) {
    value = r.resolve(key, a.opts.at(key)->count() > 0, value, value);
  };
  set("data_dir", a.data_dir);
  set("manifest", a.manifest);
  set("store", a.store);
  set("checkpoint", a.checkpoint);
  set("out", a.out);
  set("channel", a.channel);
  set("task", a.task);
  set("scheme", a.scheme);
  set("seed", a.seed);
  set("threads", a.threads);
  set("dry_run", a.dry_run);
  set("batch_size", a.tc.batch_size);
  set("num_epochs", a.tc.num_epochs);
  set("max_lr", a.tc.max_lr);
  set("keep_prob", a.tc.keep_prob);
  set("augmentation", a.tc.augmentation);
  set("lr_decay_every", a.tc.lr_decay_every);
  set("lr_decay_factor", a.tc.lr_decay_factor);
  set("stop_at_train_acc", a.tc.stop_at_train_acc);
  a.tc.seed = a.seed;

  if (a.manifest.empty() && !a.task.empty()) {
#ifdef SLEEPSTACK_DATA_DIR
    a.manifest = std::string(SLEEPSTACK_DATA_DIR) + "/manifests/" + a.task + "_task.json";
#endif
  }
}

json effective_config(const std::string& subcommand, const CommonArgs& a) {
  return {{"subcommand", subcommand},
          {"data_dir", a.data_dir},
          {"manifest", a.manifest},
          {"store", a.store},
          {"checkpoint", a.checkpoint},
          {"out", a.out},
          {"channel", a.channel},
          {"task", a.task},
          {"scheme", a.scheme},
          {"seed", a.seed},
          {"threads", a.threads},
          {"dry_run", a.dry_run},
          {"batch_size", a.tc.batch_size},
          {"num_epochs", a.tc.num_epochs},
          {"max_lr", a.tc.max_lr},
          {"keep_prob", a.tc.keep_prob},
          {"augmentation", a.tc.augmentation},
          {"lr_decay_every", a.tc.lr_decay_every},
          {"lr_decay_factor", a.tc.lr_decay_factor},
          {"stop_at_train_acc", a.tc.stop_at_train_acc}};
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required ") + flag);
}

int run(int argc, char** argv) {
  CLI::App app{"sleep staging from raw single-channel EEG"};
  app.require_subcommand(1);

  CommonArgs ing, trn, evl, bas, ana;
  auto* c_ingest = app.add_subcommand("ingest", "parse EDF recordings into an epoch store");
  add_common(c_ingest, ing);
  auto* c_train = app.add_subcommand("train", "train the residual network");
  add_common(c_train, trn);
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(c_eval, evl);
  auto* c_baseline = app.add_subcommand("baseline", "band-feature tree-ensemble system");
  add_common(c_baseline, bas);
  auto* c_analyze = app.add_subcommand("analyze", "subset heterogeneity statistics");
  add_common(c_analyze, ana);

  CLI11_PARSE(app, argc, argv);

  if (c_ingest->parsed()) {
    resolve_all(ing);
    require(ing.data_dir, "--data-dir");
    std::filesystem::create_directories(ing.out);
    cli::write_run_config(ing.out, effective_config("ingest", ing));
    const auto summary = cli::cmd_ingest(
        {ing.data_dir, ing.manifest, ing.scheme, ing.channel, ing.out});
    std::cout << "ingested " << summary.total << " epochs from "
              << summary.recordings.size() << " recordings -> " << ing.out
              << "/epochs.bin\n"
              << cli::summary_csv(summary);
  } else if (c_train->parsed()) {
    resolve_all(trn);
    std::filesystem::create_directories(trn.out);
    cli::write_run_config(trn.out, effective_config("train", trn));
    if (!trn.dry_run) {
      require(trn.store, "--store");
      require(trn.manifest, "--manifest (or --task)");
    }
    cli::cmd_train({trn.store, trn.manifest, trn.scheme, trn.tc, trn.out,
                    trn.dry_run, trn.threads});
    if (!trn.dry_run)
      std::cout << "wrote " << trn.out << "/model.ckpt and history.csv\n";
  } else if (c_eval->parsed()) {
    resolve_all(evl);
    require(evl.checkpoint, "--checkpoint");
    require(evl.store, "--store");
    require(evl.manifest, "--manifest (or --task)");
    std::filesystem::create_directories(evl.out);
    cli::write_run_config(evl.out, effective_config("eval", evl));
    const auto outcome = cli::cmd_eval(
        {evl.checkpoint, evl.store, evl.manifest, evl.out, evl.tc.batch_size, evl.threads});
    std::cout << "epoch-wise acc " << outcome.report.epoch_wise_acc
              << "%, patient-wise acc " << outcome.report.patient_wise_acc
              << "% -> " << evl.out << "/metrics.csv\n";
  } else if (c_baseline->parsed()) {
    resolve_all(bas);
    require(bas.store, "--store");
    require(bas.manifest, "--manifest (or --task)");
    std::filesystem::create_directories(bas.out);
    cli::write_run_config(bas.out, effective_config("baseline", bas));
    const auto outcome = cli::cmd_baseline({bas.store, bas.manifest, bas.out,
                                            bas.checkpoint, bas.seed, 71,
                                            bas.tc.batch_size, bas.threads});
    std::cout << "baseline epoch-wise acc " << outcome.report.epoch_wise_acc
              << "% -> " << bas.out << "/baseline_metrics.csv\n";
  } else if (c_analyze->parsed()) {
    resolve_all(ana);
    require(ana.store, "--store");
    std::filesystem::create_directories(ana.out);
    cli::write_run_config(ana.out, effective_config("analyze", ana));
    const auto table = cli::cmd_analyze({ana.store, ana.out});
    int significant = 0;
    for (const auto& row : table) significant += row.result.p_value < 0.001;
    std::cout << significant << "/" << table.size()
              << " feature-band pairs differ between subsets at p < 0.001 -> "
              << ana.out << "/anova.csv\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
