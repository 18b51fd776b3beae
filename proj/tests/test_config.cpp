#include "calico/config.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <set>
#include <sstream>

using namespace calico;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("canonical INI text round-trips for every variant and protocol") {
  for (Variant v : {Variant::baseline, Variant::active, Variant::calico, Variant::equal}) {
    ExperimentConfig d = desk_protocol(v);
    d.stop_accuracy = 0.925;
    d.train.learning_rate = 0.1 + 1e-17;  // shortest round-trip formatting
    const std::string text = to_ini(d);
    const ExperimentConfig back = parse(text);
    CHECK(to_ini(back) == text);
    CHECK(back.variant == v);
    CHECK(back.seeds == d.seeds);
    CHECK(back.train.learning_rate == d.train.learning_rate);
    CHECK(back.sgld.clamp == (d.train.lambda_gen > 0 ? d.sgld.clamp : SGLDConfig{}.clamp));
    CHECK_NOTHROW(back.validate());
  }
  const ExperimentConfig p = paper_protocol(Variant::calico, "/data/bloodmnist");
  CHECK(to_ini(parse(to_ini(p))) == to_ini(p));
}

TEST_CASE("desk protocol settings") {
  const ExperimentConfig c = desk_protocol(Variant::calico);
  CHECK(c.initial_labeled == 20);
  CHECK(c.query.query_size == 10);
  CHECK(c.num_rounds == 10);
  CHECK(c.seeds.size() == 10);
  const Dataset d = build_dataset(c, 3);
  CHECK(d.num_classes == 3);
  CHECK(d.dim() == 2);
  CHECK(desk_protocol(Variant::equal).query.strategy == QueryStrategy::equal_class);
  CHECK(desk_protocol(Variant::active).train.lambda_gen == 0.0);
}

TEST_CASE("paper protocol: 250 per round, 16 rounds, 4000 labels; equal-class presets by dataset name") {
  const ExperimentConfig c = paper_protocol(Variant::active, "/data/organcmnist");
  CHECK(c.query.query_size == 250);
  CHECK(c.num_rounds == 16);
  CHECK(c.label_budget == 4000);
  CHECK(c.initial_labeled == 0);
  CHECK(c.train.optimizer == OptimizerKind::sgd);
  CHECK(c.train.learning_rate == 0.1);
  const ExperimentConfig pn = paper_protocol(Variant::calico, "/data/pneumoniamnist");
  CHECK(pn.train.optimizer == OptimizerKind::adam);
  CHECK(pn.train.learning_rate == 1e-4);
  const ExperimentConfig eq = paper_protocol(Variant::equal, "/data/organsmnist");
  CHECK(eq.query.labels_per_class == 35);
  CHECK(eq.label_budget == 3850);
  CHECK_THROWS_AS(paper_protocol(Variant::equal, "/data/dermamnist"), ValidationError);
}

TEST_CASE("active and calico snapshots differ only in the generative term and the sampler") {
  const auto a = lines(to_ini(desk_protocol(Variant::active)));
  const auto c = lines(to_ini(desk_protocol(Variant::calico)));
  const std::multiset<std::string> sa(a.begin(), a.end()), sc(c.begin(), c.end());
  std::vector<std::string> only_a, only_c;
  for (const auto& l : sa) if (!sc.count(l)) only_a.push_back(l);
  for (const auto& l : sc) if (!sa.count(l)) only_c.push_back(l);
  CHECK(only_a == std::vector<std::string>{"lambda_gen = 0", "variant = active"});
  bool in_sgld = false;
  for (const auto& l : c) {
    if (!l.empty() && l[0] == '[') in_sgld = l == "[sgld]";
    if (std::find(only_c.begin(), only_c.end(), l) == only_c.end()) continue;
    CHECK((in_sgld || l == "lambda_gen = 1" || l == "variant = calico" || l == "[sgld]"));
  }
}

TEST_CASE("variant consistency is enforced") {
  CHECK_THROWS_AS(parse("[experiment]\nvariant = baseline\n[query]\nquery_size = 5\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nvariant = active\n[train]\nlambda_gen = 1\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nvariant = calico\n[train]\nlambda_gen = 0\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nvariant = equal\n[query]\nquery_size = 5\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nvariant = equal\noracle = remote\n[query]\nlabels_per_class = 2\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nvariant = sometimes\n"), ValidationError);
  CHECK_NOTHROW(parse("[experiment]\nvariant = equal\n[query]\nlabels_per_class = 2\n"));
  CHECK(parse("[experiment]\nvariant = active\n").train.lambda_gen == 0.0);
}

TEST_CASE("unknown sections, unknown keys and malformed values are errors") {
  CHECK_THROWS_AS(parse("[experiment]\nvariant = calico\nrouns = 3\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experimnet]\nvariant = calico\n"), ValidationError);
  CHECK_THROWS_AS(parse("[train]\nlearning_rate = fast\n"), ValidationError);
  CHECK_THROWS_AS(parse("[train]\nwarm_start = maybe\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nrounds = 0\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nseeds = 5-2\n"), ValidationError);
  CHECK_THROWS_AS(parse("[experiment]\nseeds = x\n"), ValidationError);
  CHECK_THROWS_AS(parse("[sgld]\nstep_size = -1\n"), ValidationError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.ini"), ValidationError);
}

TEST_CASE("seed lists accept ranges") {
  CHECK(parse("[experiment]\nseeds = 1-3, 7\n").seeds == std::vector<std::uint64_t>{1, 2, 3, 7});
  CHECK(parse("[experiment]\nseeds = 4\n").seeds == std::vector<std::uint64_t>{4});
}

TEST_CASE("synthetic dataset specs") {
  ExperimentConfig c;
  c.dataset = "synthetic:classes=4,per_class=12,sigma=0.3,data_seed=5";
  const Dataset a = build_dataset(c, 1), b = build_dataset(c, 2);
  CHECK(a.size() == 48);
  CHECK(a.num_classes == 4);
  CHECK(a.features == b.features);  // fixed data seed
  c.dataset = "synthetic:classes=3,per_class=10";
  CHECK(build_dataset(c, 1).features != build_dataset(c, 2).features);
  c.dataset = "synthetic:classes=3,colour=red";
  CHECK_THROWS_AS(build_dataset(c, 1), ValidationError);
  c.dataset = "synthetic:sigma=wide";
  CHECK_THROWS_AS(build_dataset(c, 1), ValidationError);
}

TEST_CASE("architecture follows the dataset") {
  ExperimentConfig c;
  Dataset pts = make_synthetic(circle_spec(3, 2, 1.0, 0.3, 1));
  CHECK(build_arch(c, pts).kind == ArchKind::mlp);
  Dataset img;
  img.num_classes = 2;
  img.image = {1, 8, 8};
  img.features = MatrixXd::Zero(64, 0);
  CHECK(build_arch(c, img).kind == ArchKind::cnn);
  c.arch = "cnn";
  CHECK_THROWS_AS(build_arch(c, pts), ValidationError);
}

TEST_CASE("relative output paths go under the output root") {
  ::setenv("CALICO_OUTPUT_ROOT", "/tmp/calico-root", 1);
  CHECK(resolve_output("runs") == std::filesystem::path("/tmp/calico-root/runs"));
  CHECK(resolve_output("/abs/runs") == std::filesystem::path("/abs/runs"));
  ::unsetenv("CALICO_OUTPUT_ROOT");
  CHECK(resolve_output("runs") == std::filesystem::path("runs"));
}
