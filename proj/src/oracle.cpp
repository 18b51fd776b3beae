#include "calico/oracle.hpp"

#include <algorithm>

namespace calico {

void SimulatedOracle::post(int, const std::vector<QueryItem>& items) {
  for (const auto& it : items) pending_.push_back({it.id, dataset_.labels[std::size_t(it.id)]});
}

std::vector<Annotation> SimulatedOracle::poll(std::chrono::milliseconds) {
  std::vector<Annotation> out;
  out.swap(pending_);
  return out;
}

LabelQueue::LabelQueue(int num_classes, std::filesystem::path wal) : num_classes_(num_classes), wal_path_(std::move(wal)) {
  if (wal_path_.empty()) return;
  if (std::ifstream in(wal_path_); in) {
    int round;
    Index id;
    int label;
    while (in >> round >> id >> label) answered_[id] = label;
  }
  wal_.open(wal_path_, std::ios::app);
  if (!wal_) throw std::runtime_error("cannot open label log " + wal_path_.string());
}

void LabelQueue::publish(int round, std::vector<QueryItem> items) {
  {
    std::lock_guard lock(mu_);
    queue_ = std::move(items);
    status_.round = round;
    for (const auto& it : queue_)
      if (auto a = answered_.find(it.id); a != answered_.end()) arrived_.push_back({it.id, a->second});
  }
  cv_.notify_all();
}

SubmitResult LabelQueue::submit(Index id, int label) {
  {
    std::lock_guard lock(mu_);
    if (auto a = answered_.find(id); a != answered_.end())
      return a->second == label ? SubmitResult::duplicate : SubmitResult::conflict;
    const bool queued = std::any_of(queue_.begin(), queue_.end(), [&](const QueryItem& q) { return q.id == id; });
    if (!queued) return SubmitResult::unknown_id;
    if (label < 0 || label >= num_classes_) return SubmitResult::out_of_range;
    if (wal_.is_open()) {
      wal_ << status_.round << ' ' << id << ' ' << label << '\n';
      wal_.flush();
      if (!wal_) throw std::runtime_error("failed writing label log");
    }
    answered_[id] = label;
    arrived_.push_back({id, label});
  }
  cv_.notify_all();
  return SubmitResult::accepted;
}

Index LabelQueue::outstanding_locked() const {
  return Index(std::count_if(queue_.begin(), queue_.end(), [&](const QueryItem& q) { return !answered_.count(q.id); }));
}

std::vector<QueryItem> LabelQueue::pending() const {
  std::lock_guard lock(mu_);
  std::vector<QueryItem> out;
  for (const auto& q : queue_)
    if (!answered_.count(q.id)) out.push_back(q);
  return out;
}

Index LabelQueue::outstanding() const {
  std::lock_guard lock(mu_);
  return outstanding_locked();
}

std::vector<Annotation> LabelQueue::take(std::chrono::milliseconds wait) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, wait, [&] { return !arrived_.empty(); });
  std::vector<Annotation> out;
  out.swap(arrived_);
  return out;
}

void LabelQueue::set_progress(int round, Index labeled, Index unlabeled) {
  std::lock_guard lock(mu_);
  status_.round = round;
  status_.labeled = labeled;
  status_.unlabeled = unlabeled;
}

void LabelQueue::finish(bool failed, std::string message) {
  {
    std::lock_guard lock(mu_);
    status_.finished = true;
    status_.failed = failed;
    status_.message = std::move(message);
    queue_.clear();
  }
  cv_.notify_all();
}

QueueStatus LabelQueue::status() const {
  std::lock_guard lock(mu_);
  QueueStatus s = status_;
  s.outstanding = outstanding_locked();
  return s;
}

bool LabelQueue::wait_finished(std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return status_.finished; });
}

}  // namespace calico
