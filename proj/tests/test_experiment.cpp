#include "calico/experiment.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace calico;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(Variant v, const fs::path& out) {
  ExperimentConfig c = desk_protocol(v);
  c.dataset = "synthetic:classes=3,per_class=60,radius=1,sigma=0.45";
  c.seeds = {1, 2};
  c.num_rounds = 3;
  c.train.epochs_per_round = v == Variant::baseline ? 3 : 1;
  c.train.batch_all = 32;
  c.sgld.steps = 5;
  c.output = out;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE_MESSAGE(is, p.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  std::istringstream is(slurp(p));
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

RoundRecord round_with(int r, Index labeled, double acc, double ece) {
  RoundRecord rec;
  rec.round = r;
  rec.labeled = labeled;
  rec.report.accuracy = acc;
  rec.report.ece = ece;
  return rec;
}

}  // namespace

TEST_CASE("Best is the highest-accuracy round, earliest on ties; Final is the last round") {
  RunLog log;
  log.seed = 4;
  log.rounds = {round_with(1, 30, 0.80, 0.10), round_with(2, 40, 0.90, 0.07), round_with(3, 50, 0.85, 0.03),
                round_with(4, 60, 0.90, 0.02), round_with(5, 70, 0.88, 0.05)};
  const SummaryRow s = summarize(log);
  CHECK(s.seed == 4);
  CHECK(s.best_round == 2);
  CHECK(s.best_labeled == 40);
  CHECK(s.best_accuracy == 0.90);
  CHECK(s.best_ece == 0.07);
  CHECK(s.final_round == 5);
  CHECK(s.final_labeled == 70);
  CHECK(s.final_accuracy == 0.88);
  CHECK(s.final_ece == 0.05);
}

TEST_CASE("a variant over two seeds gives run logs, a mean curve and a summary table") {
  testing::TempDir dir;
  const auto result = run_experiment(tiny(Variant::calico, dir.path()));
  CHECK(result.dir == dir.path() / "calico");
  REQUIRE(result.seeds.size() == 2);
  for (const auto& s : result.seeds) {
    CHECK_FALSE(s.failed);
    CHECK(fs::exists(s.dir / "rounds.csv"));
    CHECK(fs::exists(result.dir / ("reliability_seed_" + std::to_string(s.seed) + ".csv")));
    CHECK(fs::exists(result.dir / ("reliability_seed_" + std::to_string(s.seed) + ".svg")));
  }
  CHECK(fs::exists(result.dir / "config.ini"));

  const auto summary = lines_of(result.dir / "summary.csv");
  REQUIRE(summary.size() == 5);  // header, 2 seeds, mean, sd
  CHECK(summary[0] ==
        "seed,status,best_round,best_labeled,best_accuracy,best_ece,final_round,final_labeled,final_accuracy,"
        "final_ece");
  CHECK(summary[1].rfind("1,completed,", 0) == 0);
  CHECK(summary[3].rfind("mean,2,", 0) == 0);
  CHECK(summary[4].rfind("sd,2,", 0) == 0);

  const auto curve = lines_of(result.dir / "learning_curve.csv");
  REQUIRE(curve.size() == 4);
  CHECK(curve[0] == "round,labeled,seeds,accuracy_mean,accuracy_sd,ece_mean,ece_sd");
  CHECK(curve[1].rfind("1,30,2,", 0) == 0);
  CHECK(curve[3].rfind("3,50,2,", 0) == 0);

  // Mean row agrees with the per-seed logs; the table keeps two decimals of a percentage.
  const auto l1 = load_run_log(result.dir / "seed_1"), l2 = load_run_log(result.dir / "seed_2");
  const double mean_final = 0.5 * (l1.rounds.back().report.accuracy + l2.rounds.back().report.accuracy);
  const VariantSummary vs = load_summary(result.dir);
  CHECK(vs.variant == "calico");
  CHECK(vs.rows.size() == 2);
  CHECK(std::abs(vs.mean.final_accuracy - mean_final) <= 0.00005 + 1e-12);
}

TEST_CASE("table emission is a pure function of the logs") {
  testing::TempDir dir;
  const auto result = run_experiment(tiny(Variant::active, dir.path()));
  std::vector<std::pair<fs::path, std::string>> before;
  for (const auto& e : fs::directory_iterator(result.dir))
    if (e.is_regular_file()) before.push_back({e.path(), slurp(e.path())});
  REQUIRE(before.size() >= 5);
  for (const auto& [p, _] : before)
    if (p.filename() != "config.ini") fs::remove(p);
  emit_tables(result.dir);
  emit_tables(result.dir);
  for (const auto& [p, text] : before) CHECK_MESSAGE(slurp(p) == text, p.string());
}

TEST_CASE("baseline: one training run per seed, one report row, no curve") {
  testing::TempDir dir;
  const auto result = run_experiment(tiny(Variant::baseline, dir.path()));
  REQUIRE(result.seeds.size() == 2);
  CHECK_FALSE(fs::exists(result.dir / "learning_curve.csv"));
  for (const auto& s : result.seeds) {
    const RunLog log = load_run_log(s.dir);
    REQUIRE(log.rounds.size() == 1);
    CHECK(log.rounds[0].unlabeled == 0);
    CHECK(log.rounds[0].query.empty());
  }
  const auto summary = lines_of(result.dir / "summary.csv");
  CHECK(summary.size() == 5);
}

TEST_CASE("runs reproduce bit for bit and a resumed experiment matches") {
  testing::TempDir dir;
  run_experiment(tiny(Variant::calico, dir.path() / "a"));
  run_experiment(tiny(Variant::calico, dir.path() / "b"));
  for (const char* f : {"summary.csv", "learning_curve.csv", "reliability_seed_1.csv", "seed_2/queries.csv"})
    CHECK_MESSAGE(slurp(dir.path() / "a" / "calico" / f) == slurp(dir.path() / "b" / "calico" / f), f);
  run_experiment(tiny(Variant::calico, dir.path() / "a"), true);
  CHECK(slurp(dir.path() / "a" / "calico" / "summary.csv") == slurp(dir.path() / "b" / "calico" / "summary.csv"));
}

TEST_CASE("a failing seed is recorded and does not stop the others") {
  testing::TempDir dir;
  ExperimentConfig c = tiny(Variant::active, dir.path());
  c.train.learning_rate = 1e305;
  c.train.grad_clip = 0;
  c.seeds = {3};
  const auto result = run_experiment(c);
  REQUIRE(result.seeds.size() == 1);
  CHECK(result.seeds[0].failed);
  const auto summary = lines_of(result.dir / "summary.csv");
  REQUIRE(summary.size() >= 2);
  CHECK(summary[1].rfind("3,failed", 0) == 0);
}

TEST_CASE("configuration errors surface before any compute") {
  testing::TempDir dir;
  ExperimentConfig c = tiny(Variant::calico, dir.path());
  c.train.lambda_gen = 0;
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
  CHECK_FALSE(fs::exists(dir.path() / "calico"));
  c = tiny(Variant::calico, dir.path());
  c.oracle = OracleKind::remote;
  CHECK_THROWS_AS(run_experiment(c), ValidationError);
}

TEST_CASE("compare lays variants side by side") {
  testing::TempDir dir;
  const auto a = run_experiment(tiny(Variant::active, dir.path()));
  const auto b = run_experiment(tiny(Variant::calico, dir.path()));
  const std::string table = compare({a.dir, b.dir});
  CHECK(table.find("Best ACC / ECE") != std::string::npos);
  CHECK(table.find("Final ACC / ECE") != std::string::npos);
  CHECK(table.find("active") != std::string::npos);
  CHECK(table.find("calico") != std::string::npos);
}
