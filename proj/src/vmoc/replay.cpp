#include "hitmdp/vmoc/replay.h"

#include <stdexcept>

namespace hitmdp::vmoc {

Batch Batch::from(const std::vector<const Transition*>& items) {
  if (items.empty()) throw std::invalid_argument("Batch: empty");
  const int B = static_cast<int>(items.size());
  const Transition& first = *items.front();
  Batch b;
  b.s.resize(first.s.size(), B);
  b.s_next.resize(first.s_next.size(), B);
  b.a.resize(first.a.size(), B);
  b.r.resize(B);
  b.done.resize(B);
  b.o_prev.resize(B);
  b.o.resize(B);
  for (int i = 0; i < B; ++i) {
    const Transition& t = *items[i];
    if (t.s.size() != b.s.rows() || t.s_next.size() != b.s.rows() || t.a.size() != b.a.rows())
      throw std::invalid_argument("Batch: inconsistent transition dimensions");
    b.s.col(i) = t.s;
    b.s_next.col(i) = t.s_next;
    b.a.col(i) = t.a;
    b.r(i) = t.r;
    b.done(i) = t.done ? 1.0 : 0.0;
    b.o_prev[i] = t.o_prev;
    b.o[i] = t.o;
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("ReplayBuffer::at");
  return items_[(head_ + i) % items_.size()];
}

Batch ReplayBuffer::sample(int batch_size, Rng& rng) const {
  if (batch_size < 1) throw std::invalid_argument("ReplayBuffer::sample: batch size must be >= 1");
  if (items_.size() < static_cast<std::size_t>(batch_size))
    throw std::logic_error("ReplayBuffer::sample: fewer items than the batch size");
  std::vector<const Transition*> picks(batch_size);
  for (auto& p : picks) p = &items_[rng.uniform_int(static_cast<int>(items_.size()))];
  return Batch::from(picks);
}

void TransitionQueue::push(Transition t) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (closed_) throw std::logic_error("TransitionQueue: push after close");
    q_.push_back(std::move(t));
  }
  cv_.notify_one();
}

std::size_t TransitionQueue::drain(std::vector<Transition>& out) {
  std::lock_guard<std::mutex> lock(mu_);
  std::size_t n = q_.size();
  for (auto& t : q_) out.push_back(std::move(t));
  q_.clear();
  return n;
}

std::optional<Transition> TransitionQueue::pop_wait() {
  std::unique_lock<std::mutex> lock(mu_);
  cv_.wait(lock, [&] { return !q_.empty() || closed_; });
  if (q_.empty()) return std::nullopt;
  Transition t = std::move(q_.front());
  q_.pop_front();
  return t;
}

void TransitionQueue::close() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool TransitionQueue::closed() const {
  std::lock_guard<std::mutex> lock(mu_);
  return closed_;
}

}  // namespace hitmdp::vmoc
