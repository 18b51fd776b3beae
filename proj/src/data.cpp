#include "calico/data.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace calico {

MatrixXd Dataset::gather(std::span<const Index> ids) const {
  MatrixXd out(dim(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) out.col(Index(j)) = features.col(ids[j]);
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const Index> ids) const {
  std::vector<int> out;
  out.reserve(ids.size());
  for (Index id : ids) out.push_back(labels[std::size_t(id)]);
  return out;
}

std::vector<Index> Dataset::class_counts() const {
  std::vector<Index> counts(std::size_t(num_classes), 0);
  for (int y : labels) ++counts[std::size_t(y)];
  return counts;
}

void Dataset::validate() const {
  require(num_classes >= 2, "dataset '" + name + "': K must be at least 2");
  require(labels.size() == std::size_t(size()), "dataset '" + name + "': label count " +
                                                    std::to_string(labels.size()) + " != sample count " +
                                                    std::to_string(size()));
  for (int y : labels)
    require(y >= 0 && y < num_classes,
            "dataset '" + name + "': label " + std::to_string(y + 1) + " outside 1.." + std::to_string(num_classes));
  require(splits.empty() || splits.size() == labels.size(), "dataset '" + name + "': split tag count mismatch");
  require(!image.valid() || image.size() == dim(), "dataset '" + name + "': image shape does not match D");
  if (!features.allFinite()) throw NumericError("dataset '" + name + "': non-finite features");
}

std::uint8_t to_pixel(double feature) {
  const double p = std::round((feature + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

MatrixXd normalize_pixels(std::span<const std::uint8_t> raw, Index dim, Index count) {
  require(raw.size() == std::size_t(dim * count), "normalize_pixels: buffer size mismatch");
  MatrixXd out(dim, count);
  for (Index j = 0; j < count; ++j)
    for (Index i = 0; i < dim; ++i) out(i, j) = normalize_pixel(raw[std::size_t(j * dim + i)]);
  return out;
}

namespace {

std::vector<char> read_file(const fs::path& p, const std::string& field) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw FormatError("archive: missing file for '" + field + "' (" + p.string() + ")");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Meta {
  std::map<std::string, std::string> kv;

  const std::string& get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("archive: meta.txt is missing field '" + key + "'");
    return it->second;
  }
  bool has(const std::string& key) const { return kv.count(key) != 0; }

  long long integer(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::logic_error&) {
      throw FormatError("archive: meta field '" + key + "' is not an integer");
    }
  }

  std::vector<long long> integers(const std::string& key) const {
    std::istringstream ss(get(key));
    std::vector<long long> out;
    std::string tok;
    while (ss >> tok) {
      try {
        out.push_back(std::stoll(tok));
      } catch (const std::logic_error&) {
        throw FormatError("archive: meta field '" + key + "' is not a list of integers");
      }
    }
    return out;
  }
};

Meta read_meta(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("archive: missing meta.txt in " + file.parent_path().string());
  Meta m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto sp = line.find_first_of(" \t");
    if (sp == std::string::npos) throw FormatError("archive: meta line without value: '" + line + "'");
    const auto vstart = line.find_first_not_of(" \t", sp);
    m.kv[line.substr(0, sp)] = vstart == std::string::npos ? "" : line.substr(vstart);
  }
  return m;
}

Dataset load_archive(const fs::path& dir) {
  const Meta meta = read_meta(dir / "meta.txt");
  Dataset ds;
  ds.name = meta.has("name") ? meta.get("name") : dir.filename().string();
  ds.num_classes = int(meta.integer("classes"));
  const Index count = meta.integer("count");
  if (count < 0) throw FormatError("archive: meta field 'count' is negative");

  Index dim = 0;
  bool hwc = true;
  if (meta.has("shape")) {
    const auto shape = meta.integers("shape");
    if (shape.size() != 3 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0)
      throw FormatError("archive: meta field 'shape' must be 'channels height width'");
    ds.image = {int(shape[0]), int(shape[1]), int(shape[2])};
    dim = ds.image.size();
    if (meta.has("layout")) {
      const auto& layout = meta.get("layout");
      if (layout != "hwc" && layout != "chw") throw FormatError("archive: meta field 'layout' must be hwc or chw");
      hwc = layout == "hwc";
    }
  } else {
    dim = meta.integer("dim");
    if (dim <= 0) throw FormatError("archive: meta field 'dim' must be positive");
  }
  const std::string dtype = meta.has("dtype") ? meta.get("dtype") : "uint8";

  const auto raw = read_file(dir / "features.bin", "features");
  if (dtype == "uint8") {
    if (raw.size() != std::size_t(count * dim))
      throw FormatError("archive: field 'features' holds " + std::to_string(raw.size()) + " bytes, expected " +
                        std::to_string(count * dim));
    std::vector<std::uint8_t> px(raw.begin(), raw.end());
    if (ds.image.valid() && hwc && ds.image.channels > 1) {
      // interleaved (y, x, c) -> planar (c, y, x)
      std::vector<std::uint8_t> planar(px.size());
      const auto& s = ds.image;
      for (Index n = 0; n < count; ++n)
        for (int y = 0; y < s.height; ++y)
          for (int x = 0; x < s.width; ++x)
            for (int c = 0; c < s.channels; ++c)
              planar[std::size_t(n * dim + (Index(c) * s.height + y) * s.width + x)] =
                  px[std::size_t(n * dim + (Index(y) * s.width + x) * s.channels + c)];
      px.swap(planar);
    }
    ds.features = normalize_pixels(px, dim, count);
  } else if (dtype == "float64") {
    if (raw.size() != std::size_t(count * dim) * sizeof(double))
      throw FormatError("archive: field 'features' size does not match count x dim float64 values");
    ds.features.resize(dim, count);
    std::memcpy(ds.features.data(), raw.data(), raw.size());
  } else {
    throw FormatError("archive: meta field 'dtype' must be uint8 or float64, got '" + dtype + "'");
  }

  const auto lraw = read_file(dir / "labels.bin", "labels");
  if (lraw.size() % sizeof(std::int32_t) != 0) throw FormatError("archive: field 'labels' is not a whole int32 array");
  const std::size_t nlabels = lraw.size() / sizeof(std::int32_t);
  require(nlabels == std::size_t(count), "archive: label array length " + std::to_string(nlabels) +
                                            " != image count " + std::to_string(count));
  ds.labels.resize(nlabels);
  for (std::size_t i = 0; i < nlabels; ++i) {
    std::int32_t v;
    std::memcpy(&v, lraw.data() + i * sizeof(v), sizeof(v));
    ds.labels[i] = v;
  }

  if (fs::exists(dir / "splits.bin")) {
    const auto sraw = read_file(dir / "splits.bin", "splits");
    if (sraw.size() != std::size_t(count)) throw FormatError("archive: field 'splits' length != count");
    ds.splits.reserve(sraw.size());
    for (char c : sraw) {
      if (c < 0 || c > 2) throw FormatError("archive: field 'splits' holds a tag outside {0,1,2}");
      ds.splits.push_back(static_cast<Split>(c));
    }
  }
  if (fs::exists(dir / "classes.txt")) {
    std::ifstream cs(dir / "classes.txt");
    std::string line;
    while (std::getline(cs, line))
      if (!line.empty()) ds.class_names.push_back(line);
  }
  ds.validate();
  return ds;
}

Dataset load_csv(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw FormatError("csv: cannot open " + file.string());
  Dataset ds;
  ds.name = file.stem().string();
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  int max_label = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::vector<double> vals;
    bool numeric = true;
    for (const auto& c : cells) {
      try {
        std::size_t pos = 0;
        vals.push_back(std::stod(c, &pos));
        if (c.find_first_not_of(" \t\r", pos) != std::string::npos) throw std::invalid_argument(c);
      } catch (const std::logic_error&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw FormatError("csv: non-numeric field on line " + std::to_string(lineno));
    }
    if (vals.size() < 2) throw FormatError("csv: line " + std::to_string(lineno) + " needs features and a label");
    if (!rows.empty() && vals.size() != rows.front().size())
      throw FormatError("csv: line " + std::to_string(lineno) + " has a different column count");
    const double lab = vals.back();
    if (lab != std::floor(lab) || lab < 1)
      throw ValidationError("csv: label on line " + std::to_string(lineno) + " must be an integer >= 1");
    max_label = std::max(max_label, int(lab));
    rows.push_back(std::move(vals));
  }
  const Index dim = rows.empty() ? 0 : Index(rows.front().size()) - 1;
  ds.features.resize(dim, Index(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (Index i = 0; i < dim; ++i) ds.features(i, Index(j)) = rows[j][std::size_t(i)];
    ds.labels.push_back(int(rows[j].back()) - 1);
  }
  ds.num_classes = std::max(max_label, 2);
  ds.validate();
  return ds;
}

}  // namespace

Dataset load_dataset(const fs::path& path, DatasetFormat format) {
  if (!fs::exists(path)) throw ValidationError("dataset path does not exist: " + path.string());
  return format == DatasetFormat::archive ? load_archive(path) : load_csv(path);
}

Dataset load_dataset(const fs::path& path) {
  return load_dataset(path, fs::is_directory(path) ? DatasetFormat::archive : DatasetFormat::csv);
}

namespace {
template <typename T>
void write_raw(const fs::path& p, const std::vector<T>& v) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  if (!os) throw std::runtime_error("failed writing " + p.string());
}
}  // namespace

void save_archive(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  std::ofstream meta(dir / "meta.txt");
  meta << "name " << ds.name << "\nclasses " << ds.num_classes << "\ncount " << ds.size() << "\n";
  if (ds.image.valid()) {
    meta << "shape " << ds.image.channels << ' ' << ds.image.height << ' ' << ds.image.width << "\n";
    meta << "layout chw\ndtype uint8\n";
    std::vector<std::uint8_t> px(std::size_t(ds.features.size()));
    for (Index k = 0; k < ds.features.size(); ++k) px[std::size_t(k)] = to_pixel(ds.features.data()[k]);
    write_raw(dir / "features.bin", px);
  } else {
    meta << "dim " << ds.dim() << "\ndtype float64\n";
    std::vector<double> v(ds.features.data(), ds.features.data() + ds.features.size());
    write_raw(dir / "features.bin", v);
  }
  std::vector<std::int32_t> labels(ds.labels.begin(), ds.labels.end());
  write_raw(dir / "labels.bin", labels);
  if (!ds.splits.empty()) {
    std::vector<std::uint8_t> tags;
    for (auto s : ds.splits) tags.push_back(static_cast<std::uint8_t>(s));
    write_raw(dir / "splits.bin", tags);
  }
  if (!ds.class_names.empty()) {
    std::ofstream cs(dir / "classes.txt");
    for (const auto& c : ds.class_names) cs << c << "\n";
  }
}

void save_csv(const Dataset& ds, const fs::path& file) {
  std::ofstream os(file);
  os.precision(17);
  for (Index i = 0; i < ds.dim(); ++i) os << 'x' << (i + 1) << ',';
  os << "label\n";
  for (Index j = 0; j < ds.size(); ++j) {
    for (Index i = 0; i < ds.dim(); ++i) os << ds.features(i, j) << ',';
    os << ds.labels[std::size_t(j)] + 1 << "\n";
  }
}

SyntheticSpec circle_spec(int num_classes, int per_class, double radius, double sigma, std::uint64_t seed) {
  SyntheticSpec s;
  s.num_classes = num_classes;
  s.per_class = per_class;
  s.seed = seed;
  for (int k = 0; k < num_classes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / num_classes;
    VectorXd m(2);
    m << radius * std::cos(a), radius * std::sin(a);
    s.means.push_back(m);
    s.covs.push_back(MatrixXd::Identity(2, 2) * sigma * sigma);
  }
  return s;
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  require(spec.num_classes >= 2, "synthetic: K must be at least 2");
  require(spec.per_class >= 0, "synthetic: per_class must be non-negative");
  require(spec.means.size() == std::size_t(spec.num_classes) && spec.covs.size() == spec.means.size(),
          "synthetic: need one mean and one covariance per class");
  const Index dim = spec.means.front().size();
  std::vector<MatrixXd> factors;
  for (int k = 0; k < spec.num_classes; ++k) {
    require(spec.means[std::size_t(k)].size() == dim, "synthetic: mean dimensions differ");
    const MatrixXd& c = spec.covs[std::size_t(k)];
    require(c.rows() == dim && c.cols() == dim, "synthetic: covariance shape mismatch");
    Eigen::LLT<MatrixXd> llt(c);
    require(llt.info() == Eigen::Success && c.isApprox(c.transpose()),
            "synthetic: covariance of class " + std::to_string(k + 1) + " is not positive-definite");
    factors.push_back(llt.matrixL());
  }
  Dataset ds;
  ds.name = "synthetic";
  ds.num_classes = spec.num_classes;
  ds.features.resize(dim, Index(spec.num_classes) * spec.per_class);
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Index j = 0;
  for (int k = 0; k < spec.num_classes; ++k)
    for (int n = 0; n < spec.per_class; ++n, ++j) {
      VectorXd z(dim);
      for (Index i = 0; i < dim; ++i) z(i) = normal(rng);
      ds.features.col(j) = spec.means[std::size_t(k)] + factors[std::size_t(k)] * z;
      ds.labels.push_back(k);
    }
  for (int k = 0; k < spec.num_classes; ++k) ds.class_names.push_back("class" + std::to_string(k + 1));
  return ds;
}

void PoolPartition::validate() const {
  require(labeled_labels.size() == labeled_ids.size(), "pools: one label per labeled id required");
  std::set<Index> seen;
  auto add = [&](const std::vector<Index>& ids, const char* what) {
    for (Index id : ids) require(seen.insert(id).second, std::string("pools: id ") + std::to_string(id) +
                                                              " appears twice (" + what + ")");
  };
  add(labeled_ids, "labeled");
  add(unlabeled_ids, "unlabeled");
  add(eval_ids, "eval");
}

PoolPartition split_pools(const Dataset& dataset, Index initial_labeled, double eval_fraction, std::uint64_t seed) {
  require(initial_labeled >= 0, "split_pools: initial_labeled must be non-negative");
  require(eval_fraction >= 0.0 && eval_fraction <= 1.0, "split_pools: eval_fraction must lie in [0, 1]");
  Rng rng(seed);

  const bool has_test =
      !dataset.splits.empty() && std::any_of(dataset.splits.begin(), dataset.splits.end(),
                                             [](Split s) { return s == Split::test; });
  std::vector<Index> train, test;
  for (Index i = 0; i < dataset.size(); ++i) {
    if (has_test && dataset.splits[std::size_t(i)] == Split::test) test.push_back(i);
    else if (!has_test || dataset.splits[std::size_t(i)] == Split::train) train.push_back(i);
  }

  require(has_test || eval_fraction < 1.0, "split_pools: eval_fraction 1 leaves no training samples");
  PoolPartition p;
  p.seed = seed;
  if (has_test) {
    std::shuffle(test.begin(), test.end(), rng);
    test.resize(std::size_t(std::llround(eval_fraction * double(test.size()))));
    p.eval_ids = std::move(test);
  } else {
    std::shuffle(train.begin(), train.end(), rng);
    const auto n_eval = std::size_t(std::llround(eval_fraction * double(train.size())));
    p.eval_ids.assign(train.begin(), train.begin() + std::ptrdiff_t(n_eval));
    train.erase(train.begin(), train.begin() + std::ptrdiff_t(n_eval));
  }
  require(std::size_t(initial_labeled) <= train.size(),
          "split_pools: initial_labeled " + std::to_string(initial_labeled) + " exceeds the " +
              std::to_string(train.size()) + " available training samples");
  std::shuffle(train.begin(), train.end(), rng);
  p.labeled_ids.assign(train.begin(), train.begin() + std::ptrdiff_t(initial_labeled));
  p.unlabeled_ids.assign(train.begin() + std::ptrdiff_t(initial_labeled), train.end());
  std::sort(p.unlabeled_ids.begin(), p.unlabeled_ids.end());
  std::sort(p.eval_ids.begin(), p.eval_ids.end());
  p.labeled_labels = dataset.gather_labels(p.labeled_ids);
  return p;
}

}  // namespace calico
