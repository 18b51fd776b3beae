#pragma once

#include "calico/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace calico {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool valid() const { return channels > 0 && height > 0 && width > 0; }
  Index size() const { return Index(channels) * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Features are stored column-wise (D x N). Labels are 0-based here and in
/// binary label arrays, 1-based in every text document the project reads or writes.
struct Dataset {
  std::string name;
  MatrixXd features;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<Split> splits;
  ImageShape image;  // channel-major (c, y, x) layout when valid
  std::vector<std::string> class_names;

  Index size() const { return features.cols(); }
  Index dim() const { return features.rows(); }

  MatrixXd gather(std::span<const Index> ids) const;
  std::vector<int> gather_labels(std::span<const Index> ids) const;
  std::vector<Index> class_counts() const;
  void validate() const;
};

enum class DatasetFormat { archive, csv };

/// Archive: a directory with meta.txt + features.bin + labels.bin (+ splits.bin,
/// classes.txt). CSV: rows of D features followed by a 1-based label.
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format);
Dataset load_dataset(const std::filesystem::path& path);
void save_archive(const Dataset& dataset, const std::filesystem::path& dir);
void save_csv(const Dataset& dataset, const std::filesystem::path& file);

/// 8-bit pixel p -> p/127.5 - 1, landing in [-1, 1].
inline double normalize_pixel(std::uint8_t p) { return double(p) / 127.5 - 1.0; }
/// Inverse of normalize_pixel, rounded and saturated to [0, 255].
std::uint8_t to_pixel(double feature);
MatrixXd normalize_pixels(std::span<const std::uint8_t> raw, Index dim, Index count);

struct SyntheticSpec {
  int num_classes = 3;
  int per_class = 200;
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;
  std::uint64_t seed = 0;
};

/// K isotropic Gaussians with means evenly spaced on a circle, first mean at angle 0.
SyntheticSpec circle_spec(int num_classes, int per_class, double radius, double sigma, std::uint64_t seed);
Dataset make_synthetic(const SyntheticSpec& spec);

struct PoolPartition {
  std::vector<Index> labeled_ids;
  std::vector<int> labeled_labels;  // as answered by the oracle, 0-based, parallel to labeled_ids
  std::vector<Index> unlabeled_ids;  // ascending
  std::vector<Index> eval_ids;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Uniform draws without replacement. The evaluation set is eval_fraction of the
/// test split when the dataset carries one, otherwise of the whole dataset; the
/// seed pool gets its labels from the dataset (a simulated annotation).
PoolPartition split_pools(const Dataset& dataset, Index initial_labeled, double eval_fraction, std::uint64_t seed);

}  // namespace calico
