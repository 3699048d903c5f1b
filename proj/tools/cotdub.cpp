// cotdub: command-line driver for the dubbing pipeline.
//
//   cotdub <verb> --config run.cfg --out runs/a
//
// verbs: synth-data, train-sft, train-mpo, train-cfm, train-tune, infer, eval.
// All artifacts of a run live under --out. On failure the process exits
// nonzero and prints one JSON error record to stderr (also saved as
// <out>/error.json when possible).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cotdub/pipeline/stages.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = cotdub::pipeline;

enum ExitCode { kOk = 0, kFailure = 1, kBadConfig = 2, kMissingInput = 3 };

int report_error(const std::string& verb, const fs::path& out, const char* kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = {{"verb", verb}, {"kind", kind}, {"message", message}, {"exit_code", code}};
  const std::string line = j.dump();
  std::cerr << line << '\n';
  std::error_code ec;
  if (!out.empty() && fs::is_directory(out, ec)) {
    std::ofstream f(out / "error.json", std::ios::binary);
    if (f) f << line << '\n';
  }
  return code;
}

std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> ids;
  std::stringstream in(s);
  std::string id;
  while (std::getline(in, id, ',')) {
    if (!id.empty()) ids.push_back(id);
  }
  return ids;
}

void print_table(const pl::Table& t) { std::cout << t.str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chain-of-thought guided dubbing pipeline (desk-scale)"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string items;

  struct Verb {
    const char* name;
    const char* help;
    std::function<void(const pl::RunConfig&, const pl::RunLayout&)> run;
  };
  const std::vector<Verb> verbs{
      {"synth-data", "Generate the synthetic dataset and manifest",
       [](const pl::RunConfig& c, const pl::RunLayout& r) {
         const auto w = pl::run_synth_data(c, r);
         std::cout << "items\t" << w.items.size() << '\n';
       }},
      {"train-sft", "Stage 1.1: CoT supervised fine-tuning of the toy policy",
       [](const pl::RunConfig& c, const pl::RunLayout& r) { print_table(pl::policy_report(pl::run_train_sft(c, r).test)); }},
      {"train-mpo", "Stage 1.2: mixed preference optimization",
       [](const pl::RunConfig& c, const pl::RunLayout& r) { print_table(pl::policy_report(pl::run_train_mpo(c, r).test)); }},
      {"train-cfm", "Stage 2.1: flow-matching pretraining",
       [](const pl::RunConfig& c, const pl::RunLayout& r) {
         const auto res = pl::run_train_cfm(c, r);
         if (!res.losses.empty()) {
           std::cout << "cfm_loss_first\t" << pl::fixed(res.losses.front(), 6) << '\n'
                     << "cfm_loss_last\t" << pl::fixed(res.losses.back(), 6) << '\n';
         }
       }},
      {"train-tune", "Stage 2.2: multi-condition tuning and duration predictor",
       [](const pl::RunConfig& c, const pl::RunLayout& r) {
         pl::run_train_tune(c, r);
         std::cout << pl::read_file(r.stage("tune") / "duration_report.tsv");
       }},
      {"infer", "Generate speech features for the test split (or --items)",
       [&items](const pl::RunConfig& c, const pl::RunLayout& r) {
         const auto s = pl::run_infer(c, r, split_ids(items));
         std::cout << "items\t" << s.items << "\nscene_correct\t" << s.scene_correct << "\nfallbacks\t" << s.fallbacks
                   << '\n';
       }},
      {"eval", "Score generated features against references",
       [](const pl::RunConfig& c, const pl::RunLayout& r) { print_table(pl::eval_report(pl::run_eval(c, r))); }},
  };

  std::string chosen;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("--config", config_path, "Run configuration (key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Run directory")->required();
    if (std::string(v.name) == "infer") sub->add_option("--items", items, "Comma-separated item ids");
    sub->callback([&chosen, name = v.name] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("", out_dir, "usage", e.what(), kBadConfig);
  }

  pl::RunConfig cfg;
  try {
    cfg = pl::load_config(config_path);
  } catch (const std::exception& e) {
    return report_error(chosen, out_dir, "invalid_config", e.what(), kBadConfig);
  }

  try {
    const pl::RunLayout run{fs::path(out_dir)};
    fs::create_directories(run.root);
    for (const auto& v : verbs) {
      if (chosen == v.name) v.run(cfg, run);
    }
  } catch (const pl::MissingInput& e) {
    return report_error(chosen, out_dir, "missing_input", e.what(), kMissingInput);
  } catch (const std::exception& e) {
    return report_error(chosen, out_dir, "runtime", e.what(), kFailure);
  }
  return kOk;
}
