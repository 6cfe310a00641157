#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "advsep/exphar.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void print_criteria(const advsep::ExperimentReport& rep) {
  for (const advsep::CheckResult& c : rep.criteria)
    std::printf("[%s] %-48s empirical=%-12.6g bound=%.6g\n", c.pass ? "PASS" : "FAIL",
                c.name.c_str(), c.empirical, c.bound);
  std::size_t ok = 0;
  for (const advsep::SeedResult& s : rep.seeds)
    if (s.pass) ++ok;
  if (!rep.seeds.empty())
    std::printf("seeds passing: %zu/%zu\n", ok, rep.seeds.size());
  for (const std::string& note : rep.notes) std::printf("note: %s\n", note.c_str());
  std::printf("overall: %s\n", rep.overall_pass ? "PASS" : "FAIL");
}

int do_run(advsep::ExperimentConfig cfg) {
  advsep::ExperimentReport rep = advsep::run_experiment(cfg);
  print_criteria(rep);
  for (const std::string& a : rep.artifacts) std::printf("wrote %s\n", a.c_str());
  return rep.overall_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"separability experiments for one-step adversarial noise"};
  app.require_subcommand(1);

  std::string config_path, output_dir, csv_path, run_dir, formats = "json,csv,plotdata";

  CLI::App* run = app.add_subcommand("run", "run an experiment from a json config");
  run->add_option("config", config_path, "experiment config json")->required();
  run->add_option("--output-dir", output_dir, "override the output directory");

  CLI::App* ingest =
      app.add_subcommand("ingest", "probe an external noise csv using a config");
  ingest->add_option("csv", csv_path, "noise csv with columns r_1..r_d,y,sample_id")
      ->required();
  ingest->add_option("--probe", config_path, "ingest_and_probe config json")->required();
  ingest->add_option("--output-dir", output_dir, "override the output directory");

  CLI::App* report = app.add_subcommand("report", "re-emit artifacts for a finished run");
  report->add_option("run_dir", run_dir, "directory holding report.json")->required();
  report->add_option("--format", formats, "comma list of json,csv,plotdata");

  CLI::App* verify = app.add_subcommand("verify", "replay a run and diff the numbers");
  verify->add_option("run_dir", run_dir, "directory holding report.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      advsep::ExperimentConfig cfg = advsep::experiment_config_from_json(load_json(config_path));
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      return do_run(std::move(cfg));
    }
    if (ingest->parsed()) {
      nlohmann::json j = load_json(config_path);
      j["noise_csv"] = csv_path;
      advsep::ExperimentConfig cfg = advsep::experiment_config_from_json(j);
      if (cfg.kind != advsep::ExperimentKind::ingest_and_probe)
        throw std::invalid_argument("ingest: config kind must be ingest_and_probe");
      if (!output_dir.empty()) cfg.output_dir = output_dir;
      return do_run(std::move(cfg));
    }
    if (report->parsed()) {
      advsep::ExperimentReport rep = advsep::report_from_json(load_json(run_dir + "/report.json"));
      std::vector<std::string> fmts;
      std::stringstream ss(formats);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) fmts.push_back(tok);
      for (const std::string& p : advsep::emit_report(rep, fmts, run_dir))
        std::printf("wrote %s\n", p.c_str());
      return rep.overall_pass ? 0 : 1;
    }
    if (verify->parsed()) {
      advsep::VerifyResult v = advsep::verify_run(run_dir);
      if (v.match) {
        std::printf("replay matches stored report\n");
      } else {
        for (const std::string& d : v.diffs) std::printf("diff: %s\n", d.c_str());
      }
      std::printf("criteria: %s\n", v.criteria_pass ? "PASS" : "FAIL");
      return v.match && v.criteria_pass ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
