#pragma once

#include <Eigen/Dense>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "hitmdp/core/rng.h"

namespace hitmdp::vmoc {

struct Transition {
  Eigen::VectorXd s;
  int o_prev = 0;
  Eigen::VectorXd a;  // discrete actions store the index in a(0)
  double r = 0.0;
  Eigen::VectorXd s_next;
  int o = 0;
  bool done = false;
};

// Column-stacked minibatch; column b is transition b.
struct Batch {
  Eigen::MatrixXd s, a, s_next;
  std::vector<int> o_prev, o;
  Eigen::VectorXd r, done;

  int size() const { return static_cast<int>(r.size()); }
  static Batch from(const std::vector<const Transition*>& items);
};

// Ring buffer with FIFO eviction; sampling is uniform with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const;  // 0 is the oldest kept item
  Batch sample(int batch_size, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::vector<Transition> items_;
};

// Multi-producer queue of transitions; push and pop are atomic.
class TransitionQueue {
 public:
  void push(Transition t);
  // Moves everything queued so far into `out`; returns the number moved.
  std::size_t drain(std::vector<Transition>& out);
  // Blocks until an item arrives or the queue is closed.
  std::optional<Transition> pop_wait();
  void close();
  bool closed() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Transition> q_;
  bool closed_ = false;
};

// Publishes immutable snapshots; readers never see a partial update.
template <class T>
class SnapshotSlot {
 public:
  void publish(std::shared_ptr<const T> snap) {
    std::lock_guard<std::mutex> lock(mu_);
    snap_ = std::move(snap);
    ++version_;
  }
  std::shared_ptr<const T> get() const {
    std::lock_guard<std::mutex> lock(mu_);
    return snap_;
  }
  long version() const {
    std::lock_guard<std::mutex> lock(mu_);
    return version_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const T> snap_;
  long version_ = 0;
};

}  // namespace hitmdp::vmoc
