#include "calico/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace calico {

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

std::vector<std::pair<std::uint64_t, fs::path>> seed_dirs(const fs::path& dir) {
  std::vector<std::pair<std::uint64_t, fs::path>> out;
  if (!fs::is_directory(dir)) throw ValidationError("no such run directory: " + dir.string());
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!e.is_directory() || name.rfind("seed_", 0) != 0) continue;
    try {
      out.emplace_back(std::stoull(name.substr(5)), e.path());
    } catch (const std::logic_error&) {
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string variant_name(const fs::path& dir) {
  std::ifstream is(dir / "config.ini");
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    std::erase(key, ' ');
    std::erase(value, ' ');
    if (key == "variant") return value;
  }
  return dir.filename().string();
}

void write_reliability_svg(const fs::path& file, const std::vector<ReliabilityRow>& rows, const std::string& title) {
  constexpr double size = 360, margin = 40;
  std::ofstream os(file);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin << "\" height=\""
     << size + 2 * margin << "\">\n";
  os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  auto px = [&](double v) { return fixed(margin + v * size, 2); };
  auto py = [&](double v) { return fixed(margin + (1.0 - v) * size, 2); };
  for (const auto& r : rows) {
    if (r.count == 0) continue;
    const double w = r.upper - r.lower;
    os << "<rect x=\"" << px(r.lower) << "\" y=\"" << py(r.accuracy) << "\" width=\"" << fixed(w * size, 2)
       << "\" height=\"" << fixed(r.accuracy * size, 2) << "\" fill=\"#4a7ab5\" stroke=\"white\"/>\n";
    const double lo = std::min(r.accuracy, r.confidence), hi = std::max(r.accuracy, r.confidence);
    os << "<rect x=\"" << px(r.lower) << "\" y=\"" << py(hi) << "\" width=\"" << fixed(w * size, 2)
       << "\" height=\"" << fixed((hi - lo) * size, 2)
       << "\" fill=\"#d9534f\" fill-opacity=\"0.35\" stroke=\"#d9534f\"/>\n";
  }
  os << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1) << "\" y2=\"" << py(1)
     << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  os << "<text x=\"" << margin << "\" y=\"" << margin - 12 << "\" font-size=\"13\">" << title << "</text>\n";
  os << "<text x=\"" << margin + size / 2 << "\" y=\"" << size + margin + 28
     << "\" font-size=\"12\" text-anchor=\"middle\">confidence</text>\n";
  os << "<text x=\"12\" y=\"" << margin + size / 2 << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 "
     << margin + size / 2 << ")\">accuracy</text>\n";
  os << "</svg>\n";
}

const char* kSummaryHeader =
    "seed,status,best_round,best_labeled,best_accuracy,best_ece,final_round,final_labeled,final_accuracy,final_ece\n";

void write_summary_row(std::ostream& os, const std::string& key, const std::string& status, const SummaryRow& r,
                       bool integral) {
  auto count = [&](double v) { return integral ? std::to_string(Index(v)) : fixed(v, 2); };
  os << key << ',' << status << ',' << count(r.best_round) << ',' << count(double(r.best_labeled)) << ','
     << pct(r.best_accuracy) << ',' << pct(r.best_ece) << ',' << count(r.final_round) << ','
     << count(double(r.final_labeled)) << ',' << pct(r.final_accuracy) << ',' << pct(r.final_ece) << '\n';
}

}  // namespace

fs::path variant_dir(const ExperimentConfig& config) {
  return resolve_output(config.output) / to_string(config.variant);
}

fs::path seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return variant_dir(config) / ("seed_" + std::to_string(seed));
}

RunLog run_seed(const ExperimentConfig& config, std::uint64_t seed, const Dataset& dataset, Oracle& oracle,
                const fs::path& dir, bool resume) {
  config.validate();
  dataset.validate();
  const bool baseline = config.variant == Variant::baseline;
  PoolPartition pools = split_pools(dataset, baseline ? 0 : config.initial_labeled, config.eval_fraction, seed);
  const auto model = init_model<double>(build_arch(config, dataset), seed);

  if (!baseline) {
    ALConfig al;
    al.num_rounds = config.num_rounds;
    al.label_budget = config.label_budget;
    al.budget_counts_seed = config.budget_counts_seed;
    al.stop_accuracy = config.stop_accuracy;
    al.num_bins = config.num_bins;
    al.log_initial_eval = config.log_initial_eval;
    al.seed = seed;
    al.run_dir = dir;
    al.resume = resume;
    al.config_snapshot = to_ini(config);
    QuerySpec query = config.query;
    query.seed = seed;
    return run_al(dataset, std::move(pools), model, config.train, config.sgld, query, oracle, al);
  }

  // Every training sample labeled, a single softmax fit, one report row.
  RunLog log;
  log.seed = seed;
  log.config_snapshot = to_ini(config);
  PoolPartition all = pools;
  all.labeled_ids = pools.unlabeled_ids;
  all.labeled_labels = dataset.gather_labels(all.labeled_ids);
  all.unlabeled_ids.clear();
  Rng rng(seed);
  RoundRecord rec;
  rec.round = 1;
  rec.labeled = Index(all.labeled_ids.size());
  const auto t0 = std::chrono::steady_clock::now();
  try {
    auto r = train_baseline(model, all.labeled_ids, all.labeled_labels, dataset, config.train, rng);
    rec.train = std::move(r.metrics);
    rec.report = evaluate_model(r.state, dataset, all.eval_ids, config.num_bins);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.final_state = std::move(r.state);
    log.rounds.push_back(std::move(rec));
  } catch (const TrainingDiverged& e) {
    log.failed = true;
    log.failure = std::string("round 1: ") + e.what();
    log.final_state = e.last_good();
  }
  log.final_pools = all;
  save_run_log(log, dir);
  return log;
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool resume) {
  config.validate();
  require(config.oracle == OracleKind::simulated, "run_experiment: a remote oracle run is driven by the label service");
  ExperimentResult result;
  result.dir = variant_dir(config);
  fs::create_directories(result.dir);
  std::ofstream(result.dir / "config.ini") << to_ini(config);

  for (const auto seed : config.seeds) {
    SeedOutcome out;
    out.seed = seed;
    out.dir = seed_dir(config, seed);
    try {
      const Dataset ds = build_dataset(config, seed);
      SimulatedOracle oracle(ds);
      const RunLog log = run_seed(config, seed, ds, oracle, out.dir, resume);
      out.failed = log.failed;
      out.failure = log.failure;
    } catch (const std::exception& e) {
      out.failed = true;
      out.failure = e.what();
      fs::create_directories(out.dir);
      std::ofstream(out.dir / "summary.txt") << "status failed\nfailure " << e.what() << "\nseed " << seed << "\n";
    }
    result.seeds.push_back(std::move(out));
  }
  emit_tables(result.dir);
  return result;
}

SummaryRow summarize(const RunLog& log) {
  SummaryRow row;
  row.seed = log.seed;
  row.failed = log.failed;
  if (log.rounds.empty()) return row;
  const RoundRecord* best = &log.rounds.front();
  for (const auto& r : log.rounds)
    if (r.report.accuracy > best->report.accuracy) best = &r;
  const auto& last = log.rounds.back();
  row.best_round = best->round;
  row.best_labeled = best->labeled;
  row.best_accuracy = best->report.accuracy;
  row.best_ece = best->report.ece;
  row.final_round = last.round;
  row.final_labeled = last.labeled;
  row.final_accuracy = last.report.accuracy;
  row.final_ece = last.report.ece;
  return row;
}

void emit_tables(const fs::path& dir) {
  const std::string variant = variant_name(dir);
  std::vector<RunLog> logs;
  std::vector<std::uint64_t> seeds;
  std::vector<bool> usable;
  for (const auto& [seed, path] : seed_dirs(dir)) {
    RunLog log;
    try {
      log = load_run_log(path);
    } catch (const FormatError&) {
      log.failed = true;
    }
    log.seed = seed;
    seeds.push_back(seed);
    usable.push_back(!log.failed && !log.rounds.empty());
    logs.push_back(std::move(log));
  }

  // summary.csv
  {
    std::ofstream os(dir / "summary.csv");
    os << kSummaryHeader;
    std::vector<SummaryRow> ok;
    for (std::size_t i = 0; i < logs.size(); ++i) {
      const SummaryRow row = summarize(logs[i]);
      write_summary_row(os, std::to_string(seeds[i]), usable[i] ? "completed" : "failed", row, true);
      if (usable[i]) ok.push_back(row);
    }
    SummaryRow mean, sd;
    auto field = [&](auto get, auto set) {
      std::vector<double> v;
      for (const auto& r : ok) v.push_back(double(get(r)));
      set(mean, mean_of(v));
      set(sd, sd_of(v));
    };
    field([](const SummaryRow& r) { return r.best_round; }, [](SummaryRow& r, double v) { r.best_round = int(v); });
    field([](const SummaryRow& r) { return r.best_accuracy; }, [](SummaryRow& r, double v) { r.best_accuracy = v; });
    field([](const SummaryRow& r) { return r.best_ece; }, [](SummaryRow& r, double v) { r.best_ece = v; });
    field([](const SummaryRow& r) { return r.final_accuracy; }, [](SummaryRow& r, double v) { r.final_accuracy = v; });
    field([](const SummaryRow& r) { return r.final_ece; }, [](SummaryRow& r, double v) { r.final_ece = v; });
    field([](const SummaryRow& r) { return r.best_labeled; }, [](SummaryRow& r, double v) { r.best_labeled = Index(std::llround(v)); });
    field([](const SummaryRow& r) { return r.final_labeled; }, [](SummaryRow& r, double v) { r.final_labeled = Index(std::llround(v)); });
    field([](const SummaryRow& r) { return r.final_round; }, [](SummaryRow& r, double v) { r.final_round = int(v); });
    const std::string n = std::to_string(ok.size());
    write_summary_row(os, "mean", n, mean, true);
    write_summary_row(os, "sd", n, sd, true);
  }

  // learning_curve.csv: one row per round, over the seeds that reached it.
  if (variant != to_string(Variant::baseline)) {
    std::map<int, std::vector<const RoundRecord*>> by_round;
    for (std::size_t i = 0; i < logs.size(); ++i)
      if (usable[i])
        for (const auto& r : logs[i].rounds) by_round[r.round].push_back(&r);
    std::ofstream os(dir / "learning_curve.csv");
    os << "round,labeled,seeds,accuracy_mean,accuracy_sd,ece_mean,ece_sd\n";
    for (const auto& [round, recs] : by_round) {
      std::vector<double> acc, ece, lab;
      for (const auto* r : recs) {
        acc.push_back(r->report.accuracy);
        ece.push_back(r->report.ece);
        lab.push_back(double(r->labeled));
      }
      const double l = mean_of(lab);
      os << round << ',' << (l == std::floor(l) ? std::to_string(Index(l)) : fixed(l, 2)) << ',' << recs.size()
         << ',' << pct(mean_of(acc)) << ',' << pct(sd_of(acc)) << ',' << pct(mean_of(ece)) << ','
         << pct(sd_of(ece)) << '\n';
    }
  }

  // Reliability diagram of each final model.
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (!usable[i]) continue;
    const auto& report = logs[i].rounds.back().report;
    const auto rows = reliability_table(report);
    const std::string stem = "reliability_seed_" + std::to_string(seeds[i]);
    std::ofstream os(dir / (stem + ".csv"));
    os << "bin,lower,upper,midpoint,count,accuracy,confidence,deviation\n";
    for (const auto& r : rows)
      os << r.bin << ',' << fixed(r.lower, 6) << ',' << fixed(r.upper, 6) << ',' << fixed(r.midpoint, 6) << ','
         << r.count << ',' << fixed(r.accuracy, 6) << ',' << fixed(r.confidence, 6) << ',' << fixed(r.deviation, 6)
         << '\n';
    write_reliability_svg(dir / (stem + ".svg"), rows,
                          variant + " seed " + std::to_string(seeds[i]) + ", ECE " + pct(report.ece) + "%");
  }
}

VariantSummary load_summary(const fs::path& dir) {
  if (!fs::exists(dir / "summary.csv")) emit_tables(dir);
  VariantSummary s;
  s.variant = variant_name(dir);
  std::ifstream is(dir / "summary.csv");
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    if (c.size() != 10) throw FormatError("summary.csv: row with " + std::to_string(c.size()) + " fields");
    SummaryRow r;
    r.failed = c[1] == "failed";
    r.best_round = int(std::stod(c[2]));
    r.best_labeled = Index(std::stod(c[3]));
    r.best_accuracy = std::stod(c[4]) / 100.0;
    r.best_ece = std::stod(c[5]) / 100.0;
    r.final_round = int(std::stod(c[6]));
    r.final_labeled = Index(std::stod(c[7]));
    r.final_accuracy = std::stod(c[8]) / 100.0;
    r.final_ece = std::stod(c[9]) / 100.0;
    if (c[0] == "mean") s.mean = r;
    else if (c[0] == "sd") s.sd = r;
    else {
      r.seed = std::stoull(c[0]);
      s.rows.push_back(r);
    }
  }
  return s;
}

std::string compare(const std::vector<fs::path>& dirs) {
  require(!dirs.empty(), "compare: no run directories given");
  std::vector<VariantSummary> cols;
  for (const auto& d : dirs) cols.push_back(load_summary(d));
  constexpr int first = 18, width = 18;
  std::ostringstream os;
  auto cell = [&](const std::string& s, int w) {
    os << s << std::string(std::size_t(std::max<int>(1, w - int(s.size()))), ' ');
  };
  cell("Criterion (%)", first);
  for (const auto& c : cols) cell(c.variant, width);
  os << '\n';
  cell("Best ACC / ECE", first);
  for (const auto& c : cols) cell(pct(c.mean.best_accuracy) + " / " + pct(c.mean.best_ece), width);
  os << '\n';
  cell("Final ACC / ECE", first);
  for (const auto& c : cols) cell(pct(c.mean.final_accuracy) + " / " + pct(c.mean.final_ece), width);
  os << '\n';
  cell("Seeds", first);
  for (const auto& c : cols) {
    const auto ok = std::count_if(c.rows.begin(), c.rows.end(), [](const SummaryRow& r) { return !r.failed; });
    cell(std::to_string(ok) + "/" + std::to_string(c.rows.size()), width);
  }
  os << '\n';
  return os.str();
}

}  // namespace calico
