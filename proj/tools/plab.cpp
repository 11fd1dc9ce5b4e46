#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "plab/experiment.hpp"
#include "plab/verify.hpp"

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw plab::Error(plab::ErrorCode::config, "--seeds: expected comma-separated integers, got '" + text + "'");
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw plab::Error(plab::ErrorCode::config, "--seeds: empty list");
  return out;
}

int cmd_run(const std::string& config_path, const std::string& out, const std::string& seeds, int jobs) {
  const plab::ExperimentConfig cfg = plab::load_config(config_path);
  plab::RunOptions opts;
  if (!out.empty()) opts.out = out;
  if (!seeds.empty()) opts.seeds = parse_seeds(seeds);
  opts.jobs = jobs;
  const auto rep = plab::run_experiment(cfg, opts);
  std::cout << "wrote " << rep.csv_files.size() << " metrics files and " << rep.summary_file.string() << "\n";
  return 0;
}

int cmd_verify(const std::string& fault) {
  if (!fault.empty()) {
    if (fault != "relu-backward-sign") {
      std::cerr << "unknown fault '" << fault << "'\n";
      return 2;
    }
    plab::testing::faults().relu_backward_sign = true;
    std::cout << "fault injected: " << fault << "\n";
  }
  const bool ok = plab::verify::report(plab::verify::run_all(), std::cout);
  std::cout << (ok ? "all properties hold" : "property failures detected") << "\n";
  return ok ? 0 : 1;
}

int cmd_summarize(const std::string& dir) {
  std::cout << plab::summarize_dir(dir).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plasticity lab: neuron activity metrics, resets and experiments"};
  app.require_subcommand(1);

  std::string config_path, out, seeds;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Run an experiment config");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory");
  run->add_option("--seeds", seeds, "Comma-separated seeds, e.g. 0,1,2");
  run->add_option("--jobs", jobs, "Seeds run concurrently")->check(CLI::PositiveNumber);

  std::string fault;
  auto* verify = app.add_subcommand("verify", "Run the invariant battery");
  verify->add_option("--inject-fault", fault, "Mutation switch (relu-backward-sign)");

  std::string dir;
  auto* summarize = app.add_subcommand("summarize", "Summarize per-seed CSVs in a run directory");
  summarize->add_option("dir", dir, "Run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out, seeds, jobs);
    if (verify->parsed()) return cmd_verify(fault);
    if (summarize->parsed()) return cmd_summarize(dir);
  } catch (const plab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == plab::ErrorCode::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
