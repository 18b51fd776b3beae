#pragma once

#include "calico/data.hpp"
#include "calico/network.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace calico {

enum class QueryStrategy { least_confidence, equal_class, random };

struct QuerySpec {
  QueryStrategy strategy = QueryStrategy::least_confidence;
  Index query_size = 10;
  Index labels_per_class = 0;  // equal_class only
  std::uint64_t seed = 0;

  void validate() const;
};

struct QueryItem {
  Index id = 0;
  double confidence = 0;
  int predicted = 0;  // 0-based
};

/// Model confidence for every id of an unlabeled pool, in evaluation mode.
struct ScoredPool {
  std::vector<QueryItem> items;  // same order as the ids scored
};

ScoredPool score_pool(const ModelState<double>& state, const Dataset& dataset, std::span<const Index> ids);

/// Ascending confidence, ties by ascending id; first min(Q, |pool|).
std::vector<QueryItem> select_least_confident(const ScoredPool& pool, Index query_size);
/// Per ground-truth class, the labels_per_class least-confident members; no
/// substitution when a class runs out. `truth` is parallel to pool.items.
std::vector<QueryItem> select_equal_class(const ScoredPool& pool, std::span<const int> truth, Index labels_per_class,
                                          int num_classes);
std::vector<QueryItem> select_random(const ScoredPool& pool, Index query_size, Rng& rng);

std::vector<QueryItem> least_confidence_query(const ModelState<double>& state, std::span<const Index> unlabeled_ids,
                                              const Dataset& dataset, Index query_size);
/// Simulation only: consults ground-truth labels of the unlabeled pool.
std::vector<QueryItem> equal_class_query(const ModelState<double>& state, std::span<const Index> unlabeled_ids,
                                         const Dataset& dataset, Index labels_per_class);
std::vector<Index> random_query(std::span<const Index> unlabeled_ids, Index query_size, std::uint64_t seed);

struct EqualClassPreset {
  std::string_view dataset;
  Index lowest_count;
  std::string_view lowest_class;
  Index limit;
  Index labels_per_class;
};

/// Label limits and per-class quotas for the equal-class protocol on MedMNIST.
std::span<const EqualClassPreset> equal_class_presets();

}  // namespace calico
