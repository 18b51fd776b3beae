#include "calico/query.hpp"

#include "calico/heads.hpp"

#include <algorithm>
#include <array>
#include <limits>

namespace calico {

void QuerySpec::validate() const {
  require(query_size >= 1, "query: Q must be at least 1");
  require(strategy != QueryStrategy::equal_class || labels_per_class >= 1,
          "query: equal_class needs labels_per_class >= 1");
}

ScoredPool score_pool(const ModelState<double>& state, const Dataset& dataset, std::span<const Index> ids) {
  constexpr std::size_t chunk = 512;
  ScoredPool pool;
  pool.items.reserve(ids.size());
  for (std::size_t start = 0; start < ids.size(); start += chunk) {
    const auto part = ids.subspan(start, std::min(chunk, ids.size() - start));
    const MatrixXd p = softmax(logits(state, dataset.gather(part)));
    for (Index j = 0; j < p.cols(); ++j) {
      const auto c = confidence(p.col(j));
      pool.items.push_back({part[std::size_t(j)], c.value, int(c.cls)});
    }
  }
  return pool;
}

namespace {
bool by_confidence(const QueryItem& a, const QueryItem& b) {
  return a.confidence < b.confidence || (a.confidence == b.confidence && a.id < b.id);
}
}  // namespace

std::vector<QueryItem> select_least_confident(const ScoredPool& pool, Index query_size) {
  require(!pool.items.empty(), "query: unlabeled pool is empty");
  std::vector<QueryItem> items = pool.items;
  const auto k = std::min(items.size(), std::size_t(std::max<Index>(query_size, 0)));
  std::partial_sort(items.begin(), items.begin() + std::ptrdiff_t(k), items.end(), by_confidence);
  items.resize(k);
  return items;
}

std::vector<QueryItem> select_equal_class(const ScoredPool& pool, std::span<const int> truth, Index labels_per_class,
                                          int num_classes) {
  require(!pool.items.empty(), "query: unlabeled pool is empty");
  require(truth.size() == pool.items.size(), "query: ground truth must cover the pool");
  std::vector<std::vector<QueryItem>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes, "query: ground-truth label out of range");
    by_class[std::size_t(truth[i])].push_back(pool.items[i]);
  }
  std::vector<QueryItem> out;
  for (auto& members : by_class) {
    const auto k = std::min(members.size(), std::size_t(labels_per_class));
    std::partial_sort(members.begin(), members.begin() + std::ptrdiff_t(k), members.end(), by_confidence);
    out.insert(out.end(), members.begin(), members.begin() + std::ptrdiff_t(k));
  }
  return out;
}

std::vector<QueryItem> select_random(const ScoredPool& pool, Index query_size, Rng& rng) {
  require(!pool.items.empty(), "query: unlabeled pool is empty");
  std::vector<QueryItem> items = pool.items;
  const auto k = std::min(items.size(), std::size_t(std::max<Index>(query_size, 0)));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
  items.resize(k);
  return items;
}

std::vector<QueryItem> least_confidence_query(const ModelState<double>& state, std::span<const Index> unlabeled_ids,
                                              const Dataset& dataset, Index query_size) {
  require(!unlabeled_ids.empty(), "query: unlabeled pool is empty");
  return select_least_confident(score_pool(state, dataset, unlabeled_ids), query_size);
}

std::vector<QueryItem> equal_class_query(const ModelState<double>& state, std::span<const Index> unlabeled_ids,
                                         const Dataset& dataset, Index labels_per_class) {
  require(!unlabeled_ids.empty(), "query: unlabeled pool is empty");
  const auto truth = dataset.gather_labels(unlabeled_ids);
  return select_equal_class(score_pool(state, dataset, unlabeled_ids), truth, labels_per_class, dataset.num_classes);
}

std::vector<Index> random_query(std::span<const Index> unlabeled_ids, Index query_size, std::uint64_t seed) {
  ScoredPool pool;
  for (Index id : unlabeled_ids) pool.items.push_back({id, std::numeric_limits<double>::quiet_NaN(), 0});
  Rng rng(seed);
  std::vector<Index> out;
  for (const auto& it : select_random(pool, query_size, rng)) out.push_back(it.id);
  return out;
}

std::span<const EqualClassPreset> equal_class_presets() {
  static constexpr std::array<EqualClassPreset, 4> presets{{
      {"blood", 849, "lymphocyte", 4000, 50},
      {"organs", 614, "femur-right", 3850, 35},
      {"organc", 600, "heart", 3850, 35},
      {"pneumonia", 1214, "normal", 2400, 100},
  }};
  return presets;
}

}  // namespace calico
