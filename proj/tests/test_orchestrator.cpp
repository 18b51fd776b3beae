#include "calico/orchestrator.hpp"

#include "support.hpp"

#include <doctest.h>

#include <deque>
#include <fstream>
#include <set>

using namespace calico;
namespace fs = std::filesystem;

namespace {

struct Setup {
  Dataset data;
  PoolPartition pools;
  ModelState<double> model;
  TrainConfig train;
  SGLDConfig sgld;
  QuerySpec query;
  ALConfig al;
};

Setup small_setup(Index initial = 15, std::uint64_t seed = 1) {
  Setup s;
  s.data = make_synthetic(circle_spec(3, 100, 1.0, 0.45, seed));
  s.pools = split_pools(s.data, initial, 0.2, seed);
  s.model = init_model(mlp_arch(2, {16}, 3), seed);
  s.train.epochs_per_round = 1;
  s.train.batch_all = 32;
  s.train.batch_labeled = 16;
  s.sgld.steps = 5;
  s.sgld.step_size = 0.2;
  s.sgld.clamp = false;
  s.query.query_size = 10;
  s.al.num_rounds = 4;
  s.al.seed = seed;
  s.al.poll_interval = std::chrono::milliseconds(1);
  return s;
}

RunLog run(const Setup& s) {
  SimulatedOracle oracle(s.data);
  return run_al(s.data, s.pools, s.model, s.train, s.sgld, s.query, oracle, s.al);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

const char* kReproducible[] = {"config.ini", "rounds.csv", "train.csv", "queries.csv",
                               "bins.csv",   "final.model", "pools_final.txt", "pools_initial.txt", "summary.txt"};

// Answers one label per poll and returns nothing on every other poll, like a
// slow annotator.
class TrickleOracle : public Oracle {
 public:
  explicit TrickleOracle(const Dataset& d) : data_(d) {}
  OracleKind kind() const override { return OracleKind::remote; }
  void post(int, const std::vector<QueryItem>& items) override {
    for (const auto& it : items) pending_.push_back(it.id);
  }
  std::vector<Annotation> poll(std::chrono::milliseconds) override {
    ++polls;
    if (polls % 2 == 0 || pending_.empty()) return {};
    const Index id = pending_.back();  // answer out of order
    pending_.pop_back();
    return {{id, data_.labels[std::size_t(id)]}};
  }
  int polls = 0;

 private:
  const Dataset& data_;
  std::deque<Index> pending_;
};

}  // namespace

TEST_CASE("oracle update moves exactly the answered ids") {
  const Dataset d = make_synthetic(circle_spec(4, 250, 1.0, 0.3, 2));
  const PoolPartition p = split_pools(d, 50, 0.2, 3);
  REQUIRE(p.unlabeled_ids.size() == 750);
  std::vector<Index> q(p.unlabeled_ids.begin() + 100, p.unlabeled_ids.begin() + 110);
  std::vector<Annotation> a;
  for (Index id : q) a.push_back({id, d.labels[std::size_t(id)]});
  const PoolPartition next = apply_oracle_update(p, q, a);
  CHECK(next.labeled_ids.size() == 60);
  CHECK(next.unlabeled_ids.size() == 740);
  CHECK(next.eval_ids == p.eval_ids);
  std::set<Index> before(p.labeled_ids.begin(), p.labeled_ids.end()), after(next.labeled_ids.begin(), next.labeled_ids.end());
  before.insert(p.unlabeled_ids.begin(), p.unlabeled_ids.end());
  after.insert(next.unlabeled_ids.begin(), next.unlabeled_ids.end());
  CHECK(before == after);
  for (Index id : q) CHECK(std::find(next.unlabeled_ids.begin(), next.unlabeled_ids.end(), id) == next.unlabeled_ids.end());

  const PoolPartition same = apply_oracle_update(p, q, {});
  CHECK(same.labeled_ids == p.labeled_ids);
  CHECK(same.unlabeled_ids == p.unlabeled_ids);

  const PoolPartition part = apply_oracle_update(p, q, std::vector<Annotation>(a.begin(), a.begin() + 3));
  CHECK(part.labeled_ids.size() == 53);
}

TEST_CASE("oracle update rejects foreign and duplicate ids") {
  const Dataset d = make_synthetic(circle_spec(2, 20, 1.0, 0.3, 2));
  const PoolPartition p = split_pools(d, 4, 0.2, 3);
  const std::vector<Index> q{p.unlabeled_ids[0], p.unlabeled_ids[1]};
  CHECK_THROWS_AS(apply_oracle_update(p, q, std::vector<Annotation>{{p.unlabeled_ids[2], 0}}), ValidationError);
  CHECK_THROWS_AS(apply_oracle_update(p, q, std::vector<Annotation>{{q[0], 0}, {q[0], 0}}), ValidationError);
  const std::vector<Index> bad{p.labeled_ids[0]};
  CHECK_THROWS_AS(apply_oracle_update(p, bad, std::vector<Annotation>{{bad[0], 0}}), ValidationError);
}

TEST_CASE("one round that queries the whole pool exhausts it") {
  Setup s = small_setup();
  s.al.num_rounds = 1;
  s.query.query_size = Index(s.pools.unlabeled_ids.size());
  const Index total = Index(s.pools.labeled_ids.size() + s.pools.unlabeled_ids.size());
  const RunLog log = run(s);
  REQUIRE(log.rounds.size() == 1);
  CHECK(log.rounds[0].unlabeled == 0);
  CHECK(log.rounds[0].labeled == total);
  CHECK(log.final_pools.unlabeled_ids.empty());
}

TEST_CASE("the loop stops early once the pool is empty") {
  Setup s = small_setup();
  s.al.num_rounds = 10;
  s.query.query_size = 100;
  const RunLog log = run(s);
  CHECK(log.rounds.size() == 3);  // 225 unlabeled: 100, 100, 25
  CHECK(log.rounds.back().query.size() == 25);
}

TEST_CASE("cold start with Q = 250 and a 4000-label cap runs 16 rounds") {
  Setup s;
  s.data = make_synthetic(circle_spec(3, 2000, 1.0, 0.45, 4));
  s.pools = split_pools(s.data, 0, 0.2, 4);
  s.model = init_model(mlp_arch(2, {8}, 3), 4);
  s.train.epochs_per_round = 0;
  s.query.query_size = 250;
  s.al.num_rounds = 30;
  s.al.label_budget = 4000;
  s.al.seed = 4;
  const RunLog log = run(s);
  REQUIRE(log.rounds.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(log.rounds[i].round == int(i) + 1);
    CHECK(log.rounds[i].labeled == 250 * Index(i + 1));
  }
}

TEST_CASE("the label cap may exclude the seed pool and trims the last query") {
  Setup s = small_setup(20);
  s.train.epochs_per_round = 0;
  s.query.query_size = 30;
  s.al.num_rounds = 10;
  s.al.label_budget = 70;
  const RunLog counted = run(s);
  REQUIRE(counted.rounds.size() == 2);
  CHECK(counted.rounds.back().labeled == 70);  // 20 + 30 + 20
  s.al.budget_counts_seed = false;
  const RunLog excluded = run(s);
  REQUIRE(excluded.rounds.size() == 3);
  CHECK(excluded.rounds.back().labeled == 90);  // 20 + 30 + 30 + 10
}

TEST_CASE("run invariants: conservation, monotone pools, disjoint queries, truthful labels") {
  Setup s = small_setup();
  s.al.num_rounds = 5;
  const Index total = Index(s.pools.labeled_ids.size() + s.pools.unlabeled_ids.size());
  const RunLog log = run(s);
  REQUIRE(log.rounds.size() == 5);
  std::set<Index> queried;
  Index last_l = Index(s.pools.labeled_ids.size()), last_u = Index(s.pools.unlabeled_ids.size());
  for (std::size_t i = 0; i < log.rounds.size(); ++i) {
    const auto& r = log.rounds[i];
    CHECK(r.round == int(i) + 1);
    CHECK(r.labeled + r.unlabeled == total);
    CHECK(r.labeled >= last_l);
    CHECK(r.unlabeled <= last_u);
    last_l = r.labeled;
    last_u = r.unlabeled;
    CHECK(r.report.num_samples == Index(s.pools.eval_ids.size()));
    for (std::size_t k = 0; k < r.query.size(); ++k) {
      CHECK(queried.insert(r.query[k].id).second);
      CHECK(r.query_labels[k] == s.data.labels[std::size_t(r.query[k].id)]);
    }
  }
  const auto& fp = log.final_pools;
  CHECK(fp.labeled_labels == s.data.gather_labels(fp.labeled_ids));
  CHECK(fp.eval_ids == s.pools.eval_ids);
  for (Index id : fp.eval_ids) CHECK(queried.count(id) == 0);
}

TEST_CASE("persisted runs are bit-reproducible") {
  testing::TempDir dir;
  Setup s = small_setup();
  s.al.config_snapshot = "[experiment]\nvariant = calico\n";
  s.al.run_dir = dir.path() / "a";
  run(s);
  s.al.run_dir = dir.path() / "b";
  run(s);
  for (const char* f : kReproducible) CHECK_MESSAGE(slurp(dir.path() / "a" / f) == slurp(dir.path() / "b" / f), f);
  CHECK(fs::exists(dir.path() / "a" / "checkpoints" / "round_004.model"));
}

TEST_CASE("resuming after lost rounds reproduces the uninterrupted run") {
  testing::TempDir dir;
  Setup s = small_setup();
  s.al.num_rounds = 5;
  s.al.log_initial_eval = true;
  s.al.run_dir = dir.path() / "full";
  run(s);

  s.al.run_dir = dir.path() / "cut";
  run(s);
  for (const char* r : {"round_004", "round_005"})
    for (const char* ext : {".model", ".pools", ".state"}) fs::remove(dir.path() / "cut" / "checkpoints" / (std::string(r) + ext));
  s.al.resume = true;
  const RunLog resumed = run(s);
  CHECK(resumed.rounds.size() == 5);
  for (const char* f : kReproducible)
    CHECK_MESSAGE(slurp(dir.path() / "full" / f) == slurp(dir.path() / "cut" / f), f);
  CHECK(slurp(dir.path() / "full" / "initial.csv") == slurp(dir.path() / "cut" / "initial.csv"));

  const RunLog loaded = load_run_log(dir.path() / "cut");
  REQUIRE(loaded.rounds.size() == 5);
  CHECK(loaded.rounds[2].query.size() == 10);
  CHECK(loaded.rounds[2].report.bins.size() == std::size_t(kDefaultBins));
  CHECK(loaded.rounds[4].report.accuracy == resumed.rounds[4].report.accuracy);
  CHECK(loaded.initial.has_value());
}

TEST_CASE("a slow annotator answering out of order gives the same run") {
  Setup s = small_setup();
  const RunLog fast = run(s);
  TrickleOracle slow(s.data);
  const RunLog trickled = run_al(s.data, s.pools, s.model, s.train, s.sgld, s.query, slow, s.al);
  REQUIRE(trickled.rounds.size() == fast.rounds.size());
  CHECK(slow.polls >= 2 * 4 * 10 - 1);
  for (std::size_t i = 0; i < fast.rounds.size(); ++i) {
    CHECK(trickled.rounds[i].labeled == fast.rounds[i].labeled);
    CHECK(trickled.rounds[i].query_labels == fast.rounds[i].query_labels);
  }
  CHECK(trickled.final_pools.labeled_ids == fast.final_pools.labeled_ids);
  CHECK(trickled.final_state.params == fast.final_state.params);
}

TEST_CASE("a diverging trainer ends the run marked failed") {
  Setup s = small_setup();
  s.train.learning_rate = 1e305;
  s.train.grad_clip = 0;
  s.train.lambda_gen = 0;
  const RunLog log = run(s);
  CHECK(log.failed);
  CHECK(log.failure.find("round 1") != std::string::npos);
  CHECK(log.rounds.empty());
  CHECK(log.final_state.params == s.model.params);
}

TEST_CASE("accuracy target stops the loop") {
  Setup s = small_setup();
  s.al.num_rounds = 8;
  s.al.stop_accuracy = 0.0;
  CHECK(run(s).rounds.size() == 1);
}

TEST_CASE("equal class selection is refused with a remote oracle") {
  Setup s = small_setup();
  s.query.strategy = QueryStrategy::equal_class;
  s.query.labels_per_class = 2;
  LabelQueue queue(3);
  RemoteOracle remote(queue);
  CHECK_THROWS_AS(run_al(s.data, s.pools, s.model, s.train, s.sgld, s.query, remote, s.al), ValidationError);

  const RunLog log = run(s);
  for (const auto& r : log.rounds) {
    std::vector<int> counts(3, 0);
    for (int y : r.query_labels) ++counts[std::size_t(y)];
    CHECK(counts == std::vector<int>{2, 2, 2});
  }
}

TEST_CASE("pool files round-trip") {
  testing::TempDir dir;
  const Dataset d = make_synthetic(circle_spec(3, 20, 1.0, 0.3, 2));
  const PoolPartition p = split_pools(d, 7, 0.25, 8);
  write_pools(p, dir.path() / "p.txt");
  const PoolPartition back = read_pools(dir.path() / "p.txt");
  CHECK(back.labeled_ids == p.labeled_ids);
  CHECK(back.labeled_labels == p.labeled_labels);
  CHECK(back.unlabeled_ids == p.unlabeled_ids);
  CHECK(back.eval_ids == p.eval_ids);
  CHECK(back.seed == 8);
  std::ofstream(dir.path() / "p.txt") << "labeled 1:2 3\n";
  CHECK_THROWS_AS(read_pools(dir.path() / "p.txt"), FormatError);
}
