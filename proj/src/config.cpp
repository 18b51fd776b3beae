#include "calico/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

namespace calico {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::active: return "active";
    case Variant::calico: return "calico";
    case Variant::equal: return "equal";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "active") return Variant::active;
  if (name == "calico") return Variant::calico;
  if (name == "equal") return Variant::equal;
  throw ValidationError("unknown variant '" + name + "' (baseline, active, calico, equal)");
}

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!trim(tok).empty()) out.push_back(trim(tok));
  return out;
}

// Typed access to one section that remembers which keys were consumed.
class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  bool present() const { return tree_ != nullptr; }
  bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

  std::optional<std::string> raw(const std::string& key) {
    if (!has(key)) return std::nullopt;
    used_.insert(key);
    return trim(tree_->get<std::string>(key));
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (auto v = raw(key)) out = parse<T>(key, *v);
  }

  void read_list(const std::string& key, std::vector<int>& out) {
    if (auto v = raw(key)) {
      out.clear();
      for (const auto& tok : split(*v, ',')) out.push_back(parse<int>(key, tok));
    }
  }

  void check_unused() const {
    if (!tree_) return;
    for (const auto& [key, value] : *tree_)
      if (!used_.count(key)) throw ValidationError("config: unknown key '" + key + "' in [" + name_ + "]");
  }

  template <class T>
  T parse(const std::string& key, const std::string& text) const {
    auto bad = [&]() { return ValidationError("config: [" + name_ + "] " + key + " = '" + text + "' is invalid"); };
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "yes" || text == "1" || text == "on") return true;
      if (text == "false" || text == "no" || text == "0" || text == "off") return false;
      throw bad();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      T v{};
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) throw bad();
      return v;
    }
  }

 private:
  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> used_;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& tok : split(text, ',')) {
    const auto dash = tok.find('-');
    try {
      if (dash == std::string::npos) {
        out.push_back(std::stoull(tok));
      } else {
        const auto a = std::stoull(tok.substr(0, dash)), b = std::stoull(tok.substr(dash + 1));
        require(a <= b, "config: seed range '" + tok + "' is descending");
        for (auto s = a; s <= b; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw ValidationError("config: seed '" + tok + "' is not a non-negative integer");
    }
  }
  return out;
}

std::string seeds_text(const std::vector<std::uint64_t>& seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!seeds.empty(), "config: at least one seed is required");
  require(initial_labeled >= 0, "config: initial_labeled must be non-negative");
  require(num_rounds >= 1, "config: rounds must be at least 1");
  require(label_budget >= 0, "config: label_budget must be non-negative");
  require(num_bins >= 1, "config: num_bins must be at least 1");
  require(!stop_accuracy || (*stop_accuracy > 0.0 && *stop_accuracy <= 1.0), "config: stop_accuracy must lie in (0, 1]");
  require(arch == "auto" || arch == "mlp" || arch == "cnn", "config: arch must be auto, mlp or cnn");
  train.validate();
  sgld.validate();
  switch (variant) {
    case Variant::baseline:
      require(!has_query, "config: variant baseline trains on the whole pool and takes no [query] settings");
      require(oracle == OracleKind::simulated, "config: variant baseline has no oracle");
      break;
    case Variant::active:
      require(train.lambda_gen == 0.0, "config: variant active trains the classifier only (lambda_gen must be 0)");
      require(query.strategy != QueryStrategy::equal_class, "config: variant active uses least confidence");
      query.validate();
      break;
    case Variant::calico:
      require(train.lambda_gen > 0.0, "config: variant calico needs lambda_gen > 0");
      require(query.strategy != QueryStrategy::equal_class, "config: use variant equal for equal_class queries");
      query.validate();
      break;
    case Variant::equal:
      require(query.strategy == QueryStrategy::equal_class, "config: variant equal needs strategy equal_class");
      require(query.labels_per_class >= 1, "config: variant equal requires labels_per_class");
      require(oracle == OracleKind::simulated, "config: variant equal needs ground truth and a simulated oracle");
      query.validate();
      break;
  }
}

ExperimentConfig parse_config(std::istream& is) {
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known{"experiment", "model", "train", "sgld", "query"};
  for (const auto& [name, sub] : tree) {
    if (!known.count(name)) throw ValidationError("config: unknown section [" + name + "]");
  }
  auto section = [&](const std::string& name) {
    auto it = tree.find(name);
    return Section(name, it == tree.not_found() ? nullptr : &it->second);
  };

  ExperimentConfig c;
  Section ex = section("experiment");
  if (auto v = ex.raw("variant")) c.variant = parse_variant(*v);
  ex.read("dataset", c.dataset);
  if (auto v = ex.raw("seeds")) c.seeds = parse_seeds(*v);
  if (auto v = ex.raw("output")) c.output = *v;
  ex.read("initial_labeled", c.initial_labeled);
  ex.read("eval_fraction", c.eval_fraction);
  ex.read("rounds", c.num_rounds);
  ex.read("label_budget", c.label_budget);
  ex.read("budget_counts_seed", c.budget_counts_seed);
  if (auto v = ex.raw("stop_accuracy")) c.stop_accuracy = ex.parse<double>("stop_accuracy", *v);
  ex.read("num_bins", c.num_bins);
  ex.read("log_initial_eval", c.log_initial_eval);
  if (auto v = ex.raw("oracle")) {
    if (*v == "simulated") c.oracle = OracleKind::simulated;
    else if (*v == "remote") c.oracle = OracleKind::remote;
    else throw ValidationError("config: oracle must be simulated or remote");
  }
  ex.check_unused();

  Section model = section("model");
  model.read("arch", c.arch);
  model.read_list("hidden", c.hidden);
  model.read_list("conv_channels", c.conv_channels);
  if (auto v = model.raw("activation")) {
    if (*v == "swish") c.activation = Activation::swish;
    else if (*v == "identity") c.activation = Activation::identity;
    else throw ValidationError("config: activation must be swish or identity");
  }
  model.check_unused();

  // Variant defaults that the file may not contradict.
  if (c.variant == Variant::baseline || c.variant == Variant::active) c.train.lambda_gen = 0.0;
  if (c.variant == Variant::equal) c.query.strategy = QueryStrategy::equal_class;

  Section tr = section("train");
  if (auto v = tr.raw("optimizer")) {
    if (*v == "sgd") c.train.optimizer = OptimizerKind::sgd;
    else if (*v == "adam") c.train.optimizer = OptimizerKind::adam;
    else throw ValidationError("config: optimizer must be sgd or adam");
  }
  tr.read("learning_rate", c.train.learning_rate);
  tr.read("momentum", c.train.momentum);
  tr.read("batch_labeled", c.train.batch_labeled);
  tr.read("batch_all", c.train.batch_all);
  tr.read("epochs_per_round", c.train.epochs_per_round);
  tr.read("steps_per_epoch", c.train.steps_per_epoch);
  tr.read("warm_start", c.train.warm_start);
  tr.read("lambda_gen", c.train.lambda_gen);
  tr.read("augmentation", c.train.augmentation);
  tr.read("grad_clip", c.train.grad_clip);
  tr.check_unused();

  Section sg = section("sgld");
  sg.read("steps", c.sgld.steps);
  sg.read("step_size", c.sgld.step_size);
  sg.read("noise_std", c.sgld.noise_std);
  if (auto v = sg.raw("init")) {
    if (*v == "informative") c.sgld.init_mode = InitMode::informative;
    else if (*v == "uniform") c.sgld.init_mode = InitMode::uniform_noise;
    else throw ValidationError("config: sgld init must be informative or uniform");
  }
  sg.read("yopo", c.sgld.yopo);
  sg.read("yopo_inner_steps", c.sgld.yopo_inner_steps);
  sg.read("clamp", c.sgld.clamp);
  sg.check_unused();

  Section q = section("query");
  c.has_query = q.present();
  if (auto v = q.raw("strategy")) {
    if (*v == "least_confidence") c.query.strategy = QueryStrategy::least_confidence;
    else if (*v == "equal_class") c.query.strategy = QueryStrategy::equal_class;
    else if (*v == "random") c.query.strategy = QueryStrategy::random;
    else throw ValidationError("config: strategy must be least_confidence, equal_class or random");
  }
  q.read("query_size", c.query.query_size);
  q.read("labels_per_class", c.query.labels_per_class);
  q.check_unused();

  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw ValidationError("config: cannot open " + file.string());
  return parse_config(is);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  const bool samples = c.train.lambda_gen > 0.0;
  os << "[experiment]\n"
     << "variant = " << to_string(c.variant) << "\n"
     << "dataset = " << c.dataset << "\n"
     << "seeds = " << seeds_text(c.seeds) << "\n"
     << "output = " << c.output.string() << "\n"
     << "initial_labeled = " << c.initial_labeled << "\n"
     << "eval_fraction = " << fmt(c.eval_fraction) << "\n"
     << "rounds = " << c.num_rounds << "\n"
     << "label_budget = " << c.label_budget << "\n"
     << "budget_counts_seed = " << (c.budget_counts_seed ? "true" : "false") << "\n";
  if (c.stop_accuracy) os << "stop_accuracy = " << fmt(*c.stop_accuracy) << "\n";
  os << "num_bins = " << c.num_bins << "\n"
     << "log_initial_eval = " << (c.log_initial_eval ? "true" : "false") << "\n"
     << "oracle = " << (c.oracle == OracleKind::remote ? "remote" : "simulated") << "\n\n";

  os << "[model]\n"
     << "arch = " << c.arch << "\n"
     << "hidden = " << join(c.hidden) << "\n"
     << "conv_channels = " << join(c.conv_channels) << "\n"
     << "activation = " << to_string(c.activation) << "\n\n";

  const auto& t = c.train;
  os << "[train]\n"
     << "optimizer = " << (t.optimizer == OptimizerKind::adam ? "adam" : "sgd") << "\n"
     << "learning_rate = " << fmt(t.learning_rate) << "\n"
     << "momentum = " << fmt(t.momentum) << "\n"
     << "batch_labeled = " << t.batch_labeled << "\n"
     << "batch_all = " << t.batch_all << "\n"
     << "epochs_per_round = " << t.epochs_per_round << "\n"
     << "steps_per_epoch = " << t.steps_per_epoch << "\n"
     << "warm_start = " << (t.warm_start ? "true" : "false") << "\n"
     << "lambda_gen = " << fmt(t.lambda_gen) << "\n"
     << "augmentation = " << (t.augmentation ? "true" : "false") << "\n"
     << "grad_clip = " << fmt(t.grad_clip) << "\n";

  if (samples) {
    const auto& s = c.sgld;
    os << "\n[sgld]\n"
       << "steps = " << s.steps << "\n"
       << "step_size = " << fmt(s.step_size) << "\n"
       << "noise_std = " << fmt(s.noise_std) << "\n"
       << "init = " << (s.init_mode == InitMode::informative ? "informative" : "uniform") << "\n"
       << "yopo = " << (s.yopo ? "true" : "false") << "\n"
       << "yopo_inner_steps = " << s.yopo_inner_steps << "\n"
       << "clamp = " << (s.clamp ? "true" : "false") << "\n";
  }
  if (c.variant != Variant::baseline) {
    const auto& q = c.query;
    const char* strategy = q.strategy == QueryStrategy::equal_class ? "equal_class"
                           : q.strategy == QueryStrategy::random    ? "random"
                                                                    : "least_confidence";
    os << "\n[query]\n"
       << "strategy = " << strategy << "\n"
       << "query_size = " << q.query_size << "\n"
       << "labels_per_class = " << q.labels_per_class << "\n";
  }
  return os.str();
}

ExperimentConfig desk_protocol(Variant variant) {
  ExperimentConfig c;
  c.variant = variant;
  c.dataset = "synthetic:classes=3,per_class=1000,radius=1,sigma=0.45";
  c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  c.initial_labeled = 20;
  c.eval_fraction = 0.2;
  c.num_rounds = 10;
  c.query.query_size = 10;
  c.has_query = variant != Variant::baseline;
  // Synthetic features are not pixels: the particles must be free to leave [-1, 1].
  c.sgld.clamp = false;
  c.sgld.step_size = 0.2;
  c.train.lambda_gen = variant == Variant::calico || variant == Variant::equal ? 1.0 : 0.0;
  if (variant == Variant::equal) {
    c.query.strategy = QueryStrategy::equal_class;
    c.query.labels_per_class = 3;
  }
  if (variant == Variant::baseline) c.train.epochs_per_round *= c.num_rounds;
  return c;
}

ExperimentConfig paper_protocol(Variant variant, const std::string& dataset) {
  ExperimentConfig c;
  c.variant = variant;
  c.dataset = dataset;
  c.seeds = {1};
  c.initial_labeled = 0;
  c.eval_fraction = 1.0;
  c.num_rounds = 16;
  c.label_budget = 4000;
  c.arch = "cnn";
  c.query.query_size = 250;
  c.has_query = variant != Variant::baseline;
  c.train.optimizer = OptimizerKind::sgd;
  c.train.learning_rate = 0.1;
  c.train.augmentation = true;
  if (fs::path(dataset).filename().string().find("pneumonia") != std::string::npos) {
    c.train.optimizer = OptimizerKind::adam;
    c.train.learning_rate = 1e-4;
  }
  c.sgld.clamp = true;
  c.sgld.yopo = true;
  c.train.lambda_gen = variant == Variant::calico || variant == Variant::equal ? 1.0 : 0.0;
  if (variant == Variant::equal) {
    c.query.strategy = QueryStrategy::equal_class;
    const std::string name = fs::path(dataset).filename().string();
    for (const auto& p : equal_class_presets())
      if (name.find(p.dataset) != std::string::npos) {
        c.query.labels_per_class = p.labels_per_class;
        c.label_budget = p.limit;
      }
    require(c.query.labels_per_class > 0, "paper protocol: no equal-class preset matches dataset '" + name + "'");
  }
  if (variant == Variant::baseline) c.train.epochs_per_round *= c.num_rounds;
  return c;
}

fs::path resolve_output(const fs::path& output) {
  if (output.is_absolute()) return output;
  if (const char* root = std::getenv("CALICO_OUTPUT_ROOT"); root && *root) return fs::path(root) / output;
  return output;
}

Dataset build_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  const std::string prefix = "synthetic:";
  if (config.dataset.rfind(prefix, 0) != 0) return load_dataset(config.dataset);

  std::map<std::string, std::string> kv;
  for (const auto& item : split(config.dataset.substr(prefix.size()), ',')) {
    const auto eq = item.find('=');
    require(eq != std::string::npos, "dataset spec: '" + item + "' is not key=value");
    kv[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  auto take = [&](const std::string& key, double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    double v;
    const auto r = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    require(r.ec == std::errc() && r.ptr == it->second.data() + it->second.size(),
            "dataset spec: " + key + " = '" + it->second + "' is not a number");
    kv.erase(it);
    return v;
  };
  const int classes = int(take("classes", 3));
  const int per_class = int(take("per_class", 200));
  const double radius = take("radius", 1.0);
  const double sigma = take("sigma", 0.45);
  const auto data_seed = std::uint64_t(take("data_seed", double(seed)));
  require(kv.empty(), "dataset spec: unknown key '" + (kv.empty() ? "" : kv.begin()->first) + "'");
  require(sigma > 0.0, "dataset spec: sigma must be positive");
  Dataset ds = make_synthetic(circle_spec(classes, per_class, radius, sigma, data_seed));
  return ds;
}

Arch build_arch(const ExperimentConfig& config, const Dataset& dataset) {
  const bool cnn = config.arch == "cnn" || (config.arch == "auto" && dataset.image.valid());
  if (cnn) {
    require(dataset.image.valid(), "arch cnn needs an image dataset");
    Arch a = cnn_arch(dataset.image.channels, dataset.image.height, dataset.image.width, dataset.num_classes,
                      config.conv_channels);
    a.activation = config.activation;
    return a;
  }
  return mlp_arch(int(dataset.dim()), config.hidden, dataset.num_classes, config.activation);
}

}  // namespace calico
