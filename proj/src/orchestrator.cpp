#include "calico/orchestrator.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace calico {

PoolPartition apply_oracle_update(const PoolPartition& pools, std::span<const Index> query_ids,
                                  std::span<const Annotation> labels) {
  if (labels.empty()) return pools;
  const std::set<Index> query(query_ids.begin(), query_ids.end());
  std::set<Index> seen;
  for (const auto& a : labels) {
    require(query.count(a.id), "oracle update: label for id " + std::to_string(a.id) + " which is not in the query");
    require(seen.insert(a.id).second, "oracle update: duplicate id " + std::to_string(a.id));
  }
  PoolPartition next = pools;
  const std::set<Index> unlabeled(pools.unlabeled_ids.begin(), pools.unlabeled_ids.end());
  for (const auto& a : labels) {
    require(unlabeled.count(a.id), "oracle update: id " + std::to_string(a.id) + " is not in the unlabeled pool");
    next.labeled_ids.push_back(a.id);
    next.labeled_labels.push_back(a.label);
  }
  std::erase_if(next.unlabeled_ids, [&](Index id) { return seen.count(id) != 0; });
  return next;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string round_tag(int round) {
  std::ostringstream ss;
  ss << "round_" << std::setw(3) << std::setfill('0') << round;
  return ss.str();
}

const char* kRoundsHeader =
    "round,labeled,unlabeled,evaluated,accuracy,ece,num_bins,ce,energy_gap,grad_norm,energy_data,energy_negative,"
    "steps\n";
const char* kTrainHeader = "round,epoch,ce,energy_gap,grad_norm\n";
const char* kQueriesHeader = "round,id,confidence,predicted,label\n";
const char* kBinsHeader = "round,bin,lower,upper,count,accuracy,confidence\n";
const char* kTimingHeader = "round,wall_seconds\n";

void write_headers(const fs::path& dir) {
  std::ofstream(dir / "rounds.csv") << kRoundsHeader;
  std::ofstream(dir / "train.csv") << kTrainHeader;
  std::ofstream(dir / "queries.csv") << kQueriesHeader;
  std::ofstream(dir / "bins.csv") << kBinsHeader;
  std::ofstream(dir / "timing.csv") << kTimingHeader;
}

void append_bins(std::ostream& os, int round, const CalibrationReport& r) {
  for (std::size_t m = 0; m < r.bins.size(); ++m) {
    const auto& b = r.bins[m];
    os << round << ',' << m + 1 << ',' << num(b.lower) << ',' << num(b.upper) << ',' << b.count << ','
       << num(b.accuracy) << ',' << num(b.confidence) << '\n';
  }
}

void append_round(const fs::path& dir, const RoundRecord& rec) {
  {
    std::ofstream os(dir / "rounds.csv", std::ios::app);
    const auto& t = rec.train;
    os << rec.round << ',' << rec.labeled << ',' << rec.unlabeled << ',' << rec.report.num_samples << ','
       << num(rec.report.accuracy) << ',' << num(rec.report.ece) << ',' << rec.report.num_bins << ','
       << num(t.mean_ce) << ',' << num(t.mean_energy_gap) << ',' << num(t.mean_grad_norm) << ','
       << num(t.energy_data) << ',' << num(t.energy_negative) << ',' << t.steps << '\n';
  }
  {
    std::ofstream os(dir / "train.csv", std::ios::app);
    for (const auto& e : rec.train.epochs)
      os << rec.round << ',' << e.epoch << ',' << num(e.ce) << ',' << num(e.energy_gap) << ',' << num(e.grad_norm)
         << '\n';
  }
  {
    std::ofstream os(dir / "queries.csv", std::ios::app);
    for (std::size_t i = 0; i < rec.query.size(); ++i)
      os << rec.round << ',' << rec.query[i].id << ',' << num(rec.query[i].confidence) << ','
         << rec.query[i].predicted + 1 << ',' << rec.query_labels[i] + 1 << '\n';
  }
  {
    std::ofstream os(dir / "bins.csv", std::ios::app);
    append_bins(os, rec.round, rec.report);
  }
  std::ofstream(dir / "timing.csv", std::ios::app) << rec.round << ',' << num(rec.wall_seconds) << '\n';
}

void write_summary(const fs::path& dir, const RunLog& log) {
  std::ofstream os(dir / "summary.txt");
  os << "status " << (log.failed ? "failed" : "completed") << "\n";
  if (log.failed) os << "failure " << log.failure << "\n";
  os << "seed " << log.seed << "\n";
  os << "rounds " << log.rounds.size() << "\n";
  if (!log.rounds.empty()) {
    const auto& last = log.rounds.back();
    os << "final_labeled " << last.labeled << "\n";
    os << "final_accuracy " << num(last.report.accuracy) << "\n";
    os << "final_ece " << num(last.report.ece) << "\n";
  }
}

void write_initial(const fs::path& dir, const CalibrationReport& r) {
  std::ofstream os(dir / "initial.csv");
  os << "accuracy,ece,num_bins,evaluated\n"
     << num(r.accuracy) << ',' << num(r.ece) << ',' << r.num_bins << ',' << r.num_samples << '\n';
  std::ofstream bins(dir / "initial_bins.csv");
  bins << kBinsHeader;
  append_bins(bins, 0, r);
}

std::vector<std::vector<std::string>> read_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("run log: missing " + file.filename().string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(std::move(cells));
  }
  return rows;
}

void save_state(const fs::path& file, const Rng& rng, Index seed_labeled) {
  std::ofstream os(file);
  os << "seed_labeled " << seed_labeled << "\nrng " << rng << "\n";
}

void load_state(const fs::path& file, Rng& rng, Index& seed_labeled) {
  std::ifstream is(file);
  std::string key;
  if (!(is >> key >> seed_labeled) || key != "seed_labeled") throw FormatError("checkpoint state: bad 'seed_labeled'");
  if (!(is >> key) || key != "rng" || !(is >> rng)) throw FormatError("checkpoint state: bad 'rng'");
}

}  // namespace

void write_pools(const PoolPartition& pools, const fs::path& file) {
  std::ofstream os(file);
  os << "seed " << pools.seed << "\nlabeled";
  for (std::size_t i = 0; i < pools.labeled_ids.size(); ++i)
    os << ' ' << pools.labeled_ids[i] << ':' << pools.labeled_labels[i] + 1;
  os << "\nunlabeled";
  for (Index id : pools.unlabeled_ids) os << ' ' << id;
  os << "\neval";
  for (Index id : pools.eval_ids) os << ' ' << id;
  os << "\n";
}

PoolPartition read_pools(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("pools: cannot open " + file.string());
  PoolPartition p;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ss(line);
    std::string key, tok;
    ss >> key;
    if (key == "seed") {
      ss >> p.seed;
    } else if (key == "labeled") {
      while (ss >> tok) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) throw FormatError("pools: field 'labeled' needs id:label pairs");
        p.labeled_ids.push_back(std::stoll(tok.substr(0, colon)));
        p.labeled_labels.push_back(std::stoi(tok.substr(colon + 1)) - 1);
      }
    } else if (key == "unlabeled" || key == "eval") {
      auto& dst = key == "eval" ? p.eval_ids : p.unlabeled_ids;
      Index id;
      while (ss >> id) dst.push_back(id);
    } else if (!key.empty()) {
      throw FormatError("pools: unknown field '" + key + "'");
    }
  }
  p.validate();
  return p;
}

RunLog load_run_log(const fs::path& dir) {
  RunLog log;
  if (std::ifstream cfg(dir / "config.ini"); cfg)
    log.config_snapshot.assign(std::istreambuf_iterator<char>(cfg), std::istreambuf_iterator<char>());
  if (std::ifstream summary(dir / "summary.txt"); summary) {
    std::string key;
    while (summary >> key) {
      std::string rest;
      std::getline(summary, rest);
      if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
      if (key == "status") log.failed = rest == "failed";
      else if (key == "failure") log.failure = rest;
      else if (key == "seed") log.seed = std::stoull(rest);
    }
  }
  std::map<int, std::size_t> at;
  for (const auto& r : read_csv(dir / "rounds.csv")) {
    if (r.size() != 13) throw FormatError("run log: rounds.csv row has " + std::to_string(r.size()) + " fields");
    RoundRecord rec;
    rec.round = std::stoi(r[0]);
    rec.labeled = std::stoll(r[1]);
    rec.unlabeled = std::stoll(r[2]);
    rec.report.num_samples = std::stoll(r[3]);
    rec.report.accuracy = std::stod(r[4]);
    rec.report.ece = std::stod(r[5]);
    rec.report.num_bins = std::stoi(r[6]);
    rec.train.mean_ce = std::stod(r[7]);
    rec.train.mean_energy_gap = std::stod(r[8]);
    rec.train.mean_grad_norm = std::stod(r[9]);
    rec.train.energy_data = std::stod(r[10]);
    rec.train.energy_negative = std::stod(r[11]);
    rec.train.steps = std::stoll(r[12]);
    at[rec.round] = log.rounds.size();
    log.rounds.push_back(std::move(rec));
  }
  auto find = [&](const std::string& cell) -> RoundRecord* {
    auto it = at.find(std::stoi(cell));
    return it == at.end() ? nullptr : &log.rounds[it->second];
  };
  for (const auto& r : read_csv(dir / "train.csv"))
    if (auto* rec = find(r.at(0)))
      rec->train.epochs.push_back({std::stoi(r.at(1)), std::stod(r.at(2)), std::stod(r.at(3)), std::stod(r.at(4))});
  for (const auto& r : read_csv(dir / "queries.csv"))
    if (auto* rec = find(r.at(0))) {
      rec->query.push_back({std::stoll(r.at(1)), std::stod(r.at(2)), std::stoi(r.at(3)) - 1});
      rec->query_labels.push_back(std::stoi(r.at(4)) - 1);
    }
  for (const auto& r : read_csv(dir / "bins.csv"))
    if (auto* rec = find(r.at(0))) {
      CalibrationBin b;
      b.lower = std::stod(r.at(2));
      b.upper = std::stod(r.at(3));
      b.count = std::stoll(r.at(4));
      b.accuracy = std::stod(r.at(5));
      b.confidence = std::stod(r.at(6));
      rec->report.bins.push_back(b);
    }
  if (fs::exists(dir / "timing.csv"))
    for (const auto& r : read_csv(dir / "timing.csv"))
      if (auto* rec = find(r.at(0))) rec->wall_seconds = std::stod(r.at(1));
  if (fs::exists(dir / "initial.csv")) {
    const auto rows = read_csv(dir / "initial.csv");
    if (!rows.empty()) {
      CalibrationReport init;
      init.accuracy = std::stod(rows[0].at(0));
      init.ece = std::stod(rows[0].at(1));
      init.num_bins = std::stoi(rows[0].at(2));
      init.num_samples = std::stoll(rows[0].at(3));
      for (const auto& r : read_csv(dir / "initial_bins.csv"))
        init.bins.push_back({std::stod(r.at(2)), std::stod(r.at(3)), std::stoll(r.at(4)), std::stod(r.at(5)),
                             std::stod(r.at(6))});
      log.initial = init;
    }
  }
  return log;
}

void save_run_log(const RunLog& log, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.ini") << log.config_snapshot;
  write_headers(dir);
  if (log.initial) write_initial(dir, *log.initial);
  for (const auto& r : log.rounds) append_round(dir, r);
  if (log.final_state.params.size() > 0) save_model(log.final_state, (dir / "final.model").string());
  write_pools(log.final_pools, dir / "pools_final.txt");
  write_summary(dir, log);
}

RunLog run_al(const Dataset& dataset, PoolPartition pools, ModelState<double> model, const TrainConfig& train_cfg,
              const SGLDConfig& sgld_cfg, const QuerySpec& query_spec, Oracle& oracle, const ALConfig& config) {
  require(config.num_rounds >= 1, "run_al: N_q must be at least 1");
  require(!pools.eval_ids.empty(), "run_al: evaluation set is empty");
  train_cfg.validate();
  sgld_cfg.validate();
  query_spec.validate();
  pools.validate();
  require(query_spec.strategy != QueryStrategy::equal_class || oracle.kind() == OracleKind::simulated,
          "equal_class consults ground truth before annotation and is refused with a remote oracle");

  RunLog log;
  log.seed = config.seed;
  log.config_snapshot = config.config_snapshot;
  Rng rng(config.seed);
  Index seed_labeled = Index(pools.labeled_ids.size());
  int start = 1;

  const fs::path& dir = config.run_dir;
  const bool persist = !dir.empty();
  if (persist) {
    fs::create_directories(dir / "checkpoints");
    int last = 0;
    if (config.resume)
      for (const auto& e : fs::directory_iterator(dir / "checkpoints")) {
        const auto name = e.path().filename().string();
        if (name.rfind("round_", 0) == 0 && e.path().extension() == ".model")
          last = std::max(last, std::stoi(name.substr(6, 3)));
      }
    if (last > 0) {
      const auto base = dir / "checkpoints" / round_tag(last);
      model = load_model(base.string() + ".model");
      pools = read_pools(base.string() + ".pools");
      load_state(base.string() + ".state", rng, seed_labeled);
      RunLog previous = load_run_log(dir);
      std::erase_if(previous.rounds, [&](const RoundRecord& r) { return r.round > last; });
      log.rounds = std::move(previous.rounds);
      log.initial = previous.initial;
      write_headers(dir);
      for (const auto& r : log.rounds) append_round(dir, r);
      start = last + 1;
    } else {
      std::ofstream(dir / "config.ini") << config.config_snapshot;
      write_headers(dir);
      write_pools(pools, dir / "pools_initial.txt");
    }
  }

  if (config.log_initial_eval && start == 1) {
    log.initial = evaluate_model(model, dataset, pools.eval_ids, config.num_bins);
    if (persist) write_initial(dir, *log.initial);
  }

  const int num_classes = dataset.num_classes;
  for (int round = start; round <= config.num_rounds; ++round) {
    if (pools.unlabeled_ids.empty()) break;
    Index remaining = std::numeric_limits<Index>::max();
    if (config.label_budget > 0) {
      const Index used = Index(pools.labeled_ids.size()) - (config.budget_counts_seed ? 0 : seed_labeled);
      remaining = config.label_budget - used;
      if (remaining <= 0) break;
    }
    const auto t0 = std::chrono::steady_clock::now();

    if (!train_cfg.warm_start && round > 1) model = init_model(model.arch, model.seed);
    oracle.progress(round, Index(pools.labeled_ids.size()), Index(pools.unlabeled_ids.size()));
    RoundRecord rec;
    rec.round = round;
    try {
      auto trained = train_round(model, pools, dataset, train_cfg, sgld_cfg, rng);
      model = std::move(trained.state);
      rec.train = std::move(trained.metrics);
    } catch (const TrainingDiverged& e) {
      log.failed = true;
      log.failure = "round " + std::to_string(round) + ": " + e.what();
      model = e.last_good();
      break;
    }

    const ScoredPool scored = score_pool(model, dataset, pools.unlabeled_ids);
    switch (query_spec.strategy) {
      case QueryStrategy::least_confidence:
        rec.query = select_least_confident(scored, std::min(query_spec.query_size, remaining));
        break;
      case QueryStrategy::random:
        rec.query = select_random(scored, std::min(query_spec.query_size, remaining), rng);
        break;
      case QueryStrategy::equal_class: {
        const Index per_class = std::min(query_spec.labels_per_class, remaining / num_classes);
        if (per_class == 0) break;
        const auto truth = dataset.gather_labels(pools.unlabeled_ids);
        rec.query = select_equal_class(scored, truth, per_class, num_classes);
        break;
      }
    }
    if (rec.query.empty()) break;

    std::vector<Index> ids;
    for (const auto& q : rec.query) ids.push_back(q.id);
    oracle.post(round, rec.query);
    std::map<Index, int> answers;
    std::set<Index> waiting(ids.begin(), ids.end());
    while (!waiting.empty()) {
      const auto batch = oracle.poll(config.poll_interval);
      std::vector<Annotation> fresh;
      for (const auto& a : batch)
        if (waiting.count(a.id)) fresh.push_back(a);
      std::vector<Index> open(waiting.begin(), waiting.end());
      pools = apply_oracle_update(pools, open, fresh);
      for (const auto& a : fresh) {
        answers[a.id] = a.label;
        waiting.erase(a.id);
      }
      oracle.progress(round, Index(pools.labeled_ids.size()), Index(pools.unlabeled_ids.size()));
    }
    for (Index id : ids) rec.query_labels.push_back(answers.at(id));
    // Arrival order must not leak into training: the round's additions sit at
    // the tail of D_l and are put back in query order.
    const std::size_t tail = pools.labeled_ids.size() - ids.size();
    std::copy(ids.begin(), ids.end(), pools.labeled_ids.begin() + std::ptrdiff_t(tail));
    std::copy(rec.query_labels.begin(), rec.query_labels.end(), pools.labeled_labels.begin() + std::ptrdiff_t(tail));
    rec.labeled = Index(pools.labeled_ids.size());
    rec.unlabeled = Index(pools.unlabeled_ids.size());

    rec.report = evaluate_model(model, dataset, pools.eval_ids, config.num_bins);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (persist) {
      const auto base = dir / "checkpoints" / round_tag(round);
      save_model(model, base.string() + ".model");
      write_pools(pools, base.string() + ".pools");
      save_state(base.string() + ".state", rng, seed_labeled);
      append_round(dir, rec);
    }
    const double acc = rec.report.accuracy;
    log.rounds.push_back(std::move(rec));
    if (config.stop_accuracy && acc >= *config.stop_accuracy) break;
  }

  log.final_state = model;
  log.final_pools = pools;
  if (persist) {
    save_model(model, (dir / "final.model").string());
    write_pools(pools, dir / "pools_final.txt");
    write_summary(dir, log);
  }
  oracle.finish(log.failed, log.failure);
  return log;
}

}  // namespace calico
