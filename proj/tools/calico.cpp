// calico: run active learning experiments, serve the label queue, emit tables.

#include "calico/config.hpp"
#include "calico/experiment.hpp"
#include "calico/service.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace calico;

namespace {

double parse_stop_when(const std::string& text) {
  std::string s = text;
  std::erase(s, ' ');
  const std::string prefix = "acc>=";
  require(s.rfind(prefix, 0) == 0, "--stop-when expects acc>=X, got '" + text + "'");
  std::string value = s.substr(prefix.size());
  bool percent = !value.empty() && value.back() == '%';
  if (percent) value.pop_back();
  double v = 0;
  try {
    std::size_t used = 0;
    v = std::stod(value, &used);
    require(used == value.size(), "");
  } catch (const std::exception&) {
    throw ValidationError("--stop-when: '" + text + "' has no numeric threshold");
  }
  if (percent || v > 1.0) v /= 100.0;
  return v;
}

void apply_variant(ExperimentConfig& c, Variant v) {
  c.variant = v;
  if (v == Variant::baseline || v == Variant::active) c.train.lambda_gen = 0.0;
  else if (c.train.lambda_gen == 0.0) c.train.lambda_gen = 1.0;
  c.has_query = v != Variant::baseline;
  if (v == Variant::equal) c.query.strategy = QueryStrategy::equal_class;
  else if (c.query.strategy == QueryStrategy::equal_class) c.query.strategy = QueryStrategy::least_confidence;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active learning with a jointly trained classifier and energy model"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run one or more variants over their seeds");
  std::string config_file, dataset, protocol, output, stop_when;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  bool resume = false;
  run->add_option("config", config_file, "INI configuration file")->check(CLI::ExistingFile);
  run->add_option("--protocol", protocol, "Start from a preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--variant", variants, "baseline, active, calico, equal (repeatable or comma separated)")
      ->delimiter(',');
  run->add_option("--dataset", dataset, "Dataset path or synthetic:key=value,...");
  run->add_option("--seed", seeds, "Seeds (repeatable or comma separated)")->delimiter(',');
  run->add_option("--output", output, "Output directory (relative paths go under $CALICO_OUTPUT_ROOT)");
  run->add_option("--stop-when", stop_when, "Stop a run early, e.g. acc>=0.95");
  run->add_flag("--resume", resume, "Continue each seed from its last checkpoint");

  auto* serve = app.add_subcommand("serve", "Drive a remote-oracle run through the HTTP label queue");
  std::string run_dir, bind = "127.0.0.1:8080";
  std::uint64_t serve_seed = 0;
  bool linger = false;
  serve->add_option("--run", run_dir, "Directory holding config.ini")->required()->check(CLI::ExistingDirectory);
  serve->add_option("--bind", bind, "host:port to listen on");
  auto* seed_opt = serve->add_option("--seed", serve_seed, "Seed to run (default: the first configured)");
  serve->add_flag("--linger", linger, "Keep serving /status after the run ends");

  auto* report = app.add_subcommand("report", "Rebuild the tables of a variant directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "Variant directory")->required()->check(CLI::ExistingDirectory);

  auto* cmp = app.add_subcommand("compare", "Best / Final ACC and ECE side by side");
  std::vector<std::string> compare_dirs;
  cmp->add_option("dirs", compare_dirs, "Variant directories")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      std::vector<Variant> chosen;
      for (const auto& v : variants) chosen.push_back(parse_variant(v));
      auto base = [&](Variant v) {
        ExperimentConfig c;
        if (!config_file.empty()) {
          c = load_config(config_file);
          if (!variants.empty()) apply_variant(c, v);
        } else if (protocol == "paper") {
          require(!dataset.empty(), "--protocol paper needs --dataset <dir>");
          c = paper_protocol(v, dataset);
        } else {
          c = desk_protocol(v);
        }
        if (!dataset.empty()) c.dataset = dataset;
        if (!seeds.empty()) c.seeds = seeds;
        if (!output.empty()) c.output = output;
        if (!stop_when.empty()) c.stop_accuracy = parse_stop_when(stop_when);
        c.validate();
        return c;
      };
      if (chosen.empty())
        chosen.push_back(config_file.empty() ? Variant::calico : load_config(config_file).variant);

      std::vector<ExperimentConfig> configs;
      for (auto v : chosen) configs.push_back(base(v));  // validate everything before any compute
      std::vector<fs::path> dirs;
      for (const auto& c : configs) {
        std::cerr << "running " << to_string(c.variant) << " over " << c.seeds.size() << " seed(s)\n";
        const auto result = run_experiment(c, resume);
        for (const auto& s : result.seeds)
          if (s.failed) std::cerr << "  seed " << s.seed << " failed: " << s.failure << "\n";
        dirs.push_back(result.dir);
        std::cerr << "  wrote " << result.dir.string() << "\n";
      }
      std::cout << compare(dirs);
      return 0;
    }
    if (*serve) {
      ServeOptions opt;
      opt.run_dir = run_dir;
      opt.bind = bind;
      if (seed_opt->count()) opt.seed = serve_seed;
      opt.linger = linger;
      opt.on_ready = [](int port) { std::cerr << "label service listening on port " << port << "\n"; };
      const RunLog log = serve_oracle(opt);
      std::cerr << (log.failed ? "run failed: " + log.failure : "run finished") << "\n";
      return log.failed ? 1 : 0;
    }
    if (*report) {
      emit_tables(report_dir);
      std::cout << compare({report_dir});
      return 0;
    }
    if (*cmp) {
      std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      std::cout << compare(dirs);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
