#pragma once

// Label sources for the active-learning loop: a simulated lookup into the
// dataset's ground truth, or a remote human answering through LabelQueue.

#include "calico/data.hpp"
#include "calico/query.hpp"

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace calico {

struct Annotation {
  Index id = 0;
  int label = 0;  // 0-based
  bool operator==(const Annotation&) const = default;
};

enum class OracleKind { simulated, remote };

class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual OracleKind kind() const = 0;
  /// Hands the round's query to the annotator.
  virtual void post(int round, const std::vector<QueryItem>& items) = 0;
  /// Labels that arrived since the last poll; waits up to `wait` for the first.
  virtual std::vector<Annotation> poll(std::chrono::milliseconds wait) = 0;
  virtual void progress(int /*round*/, Index /*labeled*/, Index /*unlabeled*/) {}
  virtual void finish(bool /*failed*/, const std::string& /*message*/) {}
};

class SimulatedOracle : public Oracle {
 public:
  explicit SimulatedOracle(const Dataset& dataset) : dataset_(dataset) {}
  OracleKind kind() const override { return OracleKind::simulated; }
  void post(int round, const std::vector<QueryItem>& items) override;
  std::vector<Annotation> poll(std::chrono::milliseconds wait) override;

 private:
  const Dataset& dataset_;
  std::vector<Annotation> pending_;
};

enum class SubmitResult {
  accepted,      // new label recorded
  duplicate,     // same id and class seen before; nothing changes
  unknown_id,    // id is not in the current queue
  conflict,      // id already labeled with a different class
  out_of_range,  // class outside 0..K-1
};

struct QueueStatus {
  int round = 0;
  Index labeled = 0;
  Index unlabeled = 0;
  Index outstanding = 0;
  bool finished = false;
  bool failed = false;
  std::string message;
};

/// Thread-safe hand-off between the HTTP service and the orchestrator.
/// Accepted labels are appended to the write-ahead log (when configured)
/// before submit() returns; a queue re-created over the same log treats those
/// labels as already answered.
class LabelQueue {
 public:
  explicit LabelQueue(int num_classes, std::filesystem::path wal = {});

  void publish(int round, std::vector<QueryItem> items);
  SubmitResult submit(Index id, int label);
  std::vector<QueryItem> pending() const;
  Index outstanding() const;
  /// Newly accepted labels; blocks up to `wait` when none are ready.
  std::vector<Annotation> take(std::chrono::milliseconds wait);

  void set_progress(int round, Index labeled, Index unlabeled);
  void finish(bool failed, std::string message);
  QueueStatus status() const;
  int num_classes() const { return num_classes_; }
  /// Blocks until finish() is called or the timeout passes.
  bool wait_finished(std::chrono::milliseconds timeout) const;

 private:
  Index outstanding_locked() const;

  int num_classes_;
  std::filesystem::path wal_path_;
  std::ofstream wal_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<QueryItem> queue_;
  std::map<Index, int> answered_;  // every label ever accepted
  std::vector<Annotation> arrived_;  // accepted, not yet taken
  QueueStatus status_;
};

class RemoteOracle : public Oracle {
 public:
  explicit RemoteOracle(LabelQueue& queue) : queue_(queue) {}
  OracleKind kind() const override { return OracleKind::remote; }
  void post(int round, const std::vector<QueryItem>& items) override { queue_.publish(round, items); }
  std::vector<Annotation> poll(std::chrono::milliseconds wait) override { return queue_.take(wait); }
  void progress(int round, Index labeled, Index unlabeled) override { queue_.set_progress(round, labeled, unlabeled); }
  void finish(bool failed, const std::string& message) override { queue_.finish(failed, message); }

 private:
  LabelQueue& queue_;
};

}  // namespace calico
