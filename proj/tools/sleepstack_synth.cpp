// Generates a miniature synthetic EDF corpus (plus matching split manifests)
// so the full pipeline can be exercised without the real recordings.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "sleepstack/synth.hpp"

using namespace sleepstack;

int main(int argc, char** argv) {
  CLI::App app{"synthetic EDF corpus generator"};
  std::string out = "synth_corpus";
  synth::CorpusOptions opt;
  int test_subjects = 1;
  app.add_option("--out", out, "corpus directory");
  app.add_option("--sc-subjects", opt.sc_subjects, "SC subjects");
  app.add_option("--st-subjects", opt.st_subjects, "ST subjects");
  app.add_option("--nights", opt.nights_per_subject, "recordings per subject");
  app.add_option("--epochs", opt.scored_epochs_per_recording, "scored epochs per recording");
  app.add_option("--test-subjects", test_subjects, "subjects held out per task manifest");
  app.add_option("--seed", opt.seed, "generator seed");
  app.add_flag("--tsv", opt.tsv_hypnograms, "write TSV hypnograms instead of EDF+");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto ids = synth::generate_corpus(out, opt);
    for (const auto task : {data::SplitManifest::Task::SC_TASK,
                            data::SplitManifest::Task::RS_TASK}) {
      const auto man = synth::make_split_manifest(ids, task, test_subjects, opt.seed);
      const std::string path =
          out + "/" + data::SplitManifest::task_name(task) + ".json";
      std::ofstream f(path, std::ios::trunc);
      f << man.to_json().dump(2) << "\n";
    }
    std::cout << "wrote " << ids.size() << " recordings and two manifests to "
              << out << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
