// Dynamic batching: requests buffer in a queue and leave in variable-size
// batches, either in arrival order or grouped by length bucket. A batch goes
// out when it is full or when its oldest member has waited max_wait. The
// deterministic simulator drives the same batch former with a virtual clock
// and seeded arrivals, so timing behavior is testable without wall time.

#ifndef NERPIPE_BATCHING_HPP
#define NERPIPE_BATCHING_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <queue>
#include <string>
#include <vector>

#include "nerpipe/rng.hpp"

namespace nerpipe {

enum class BatchStrategy { Fifo, LengthBucketed };

inline const char* strategy_name(BatchStrategy s) {
  return s == BatchStrategy::Fifo ? "fifo" : "bucketed";
}

struct BatchPolicy {
  std::size_t max_batch = 32;
  double max_wait_ms = 20.0;
  std::vector<std::size_t> buckets = {16, 32, 64, 128, 256};  // upper bounds, ascending
  BatchStrategy strategy = BatchStrategy::Fifo;
};

inline std::vector<std::string> validate_policy(const BatchPolicy& p) {
  std::vector<std::string> errs;
  if (p.max_batch < 1) errs.push_back("max_batch must be >= 1");
  if (p.max_wait_ms < 0) errs.push_back("max_wait must be >= 0");
  for (std::size_t i = 1; i < p.buckets.size(); ++i)
    if (p.buckets[i] <= p.buckets[i - 1])
      errs.push_back("bucket boundaries must be strictly increasing");
  if (p.strategy == BatchStrategy::LengthBucketed && p.buckets.empty())
    errs.push_back("bucketed strategy needs at least one bucket boundary");
  return errs;
}

// First bucket whose bound covers the length; longer sequences share one
// overflow bucket past the last boundary.
inline std::size_t bucket_of(std::size_t length, const std::vector<std::size_t>& buckets) {
  for (std::size_t i = 0; i < buckets.size(); ++i)
    if (length <= buckets[i]) return i;
  return buckets.size();
}

struct QueueItem {
  std::uint64_t seq = 0;
  std::size_t length = 0;  // tokens
  double arrival_ms = 0.0;
};

struct FormedBatch {
  std::vector<QueueItem> items;
  double formed_ms = 0.0;

  std::size_t max_len() const {
    std::size_t m = 0;
    for (const auto& it : items) m = std::max(m, it.length);
    return m;
  }
  // 1 - (real tokens) / (batch slots); 0 for an empty batch.
  double padding_ratio() const {
    if (items.empty()) return 0.0;
    std::size_t real = 0;
    for (const auto& it : items) real += it.length;
    double slots = static_cast<double>(items.size()) * static_cast<double>(max_len());
    return slots == 0.0 ? 0.0 : 1.0 - static_cast<double>(real) / slots;
  }
  double oldest_wait(double now_ms) const {
    double oldest = now_ms;
    for (const auto& it : items) oldest = std::min(oldest, it.arrival_ms);
    return now_ms - oldest;
  }
};

// Removes ready batches from the queue. FIFO emits in arrival order whenever
// the head run is full or its oldest member timed out; bucketed does the same
// per bucket, most overdue bucket first. Items stay queued (no batch) while
// nothing is full and nothing has timed out. max_batches caps how many leave
// (one per free worker).
inline std::vector<FormedBatch> form_batches(
    std::deque<QueueItem>& queue, const BatchPolicy& policy, double now_ms,
    std::size_t max_batches = std::numeric_limits<std::size_t>::max()) {
  // Timeouts compare now against arrival + max_wait, the exact expression
  // next_flush_deadline returns, so a flush scheduled for that instant fires.
  std::vector<FormedBatch> out;
  if (policy.strategy == BatchStrategy::Fifo) {
    while (out.size() < max_batches && !queue.empty() &&
           (queue.size() >= policy.max_batch ||
            now_ms >= queue.front().arrival_ms + policy.max_wait_ms)) {
      FormedBatch b;
      b.formed_ms = now_ms;
      std::size_t take = std::min(queue.size(), policy.max_batch);
      for (std::size_t i = 0; i < take; ++i) {
        b.items.push_back(queue.front());
        queue.pop_front();
      }
      out.push_back(std::move(b));
    }
    return out;
  }

  while (out.size() < max_batches) {
    // Oldest item per bucket decides both readiness and emission order.
    std::map<std::size_t, std::vector<std::size_t>> members;  // bucket -> queue positions
    for (std::size_t i = 0; i < queue.size(); ++i)
      members[bucket_of(queue[i].length, policy.buckets)].push_back(i);
    std::size_t pick = 0;
    double pick_arrival = 0.0;
    bool found = false;
    for (const auto& [bucket, idx] : members) {
      bool ready = idx.size() >= policy.max_batch ||
                   now_ms >= queue[idx.front()].arrival_ms + policy.max_wait_ms;
      if (!ready) continue;
      double arrival = queue[idx.front()].arrival_ms;
      if (!found || arrival < pick_arrival) {
        pick = bucket;
        pick_arrival = arrival;
        found = true;
      }
    }
    if (!found) return out;

    FormedBatch b;
    b.formed_ms = now_ms;
    const auto& idx = members[pick];
    std::size_t take = std::min(idx.size(), policy.max_batch);
    std::vector<char> remove(queue.size(), 0);
    for (std::size_t i = 0; i < take; ++i) {
      b.items.push_back(queue[idx[i]]);
      remove[idx[i]] = 1;
    }
    std::deque<QueueItem> rest;
    for (std::size_t i = 0; i < queue.size(); ++i)
      if (!remove[i]) rest.push_back(queue[i]);
    queue.swap(rest);
    out.push_back(std::move(b));
  }
  return out;
}

// Earliest moment form_batches could emit something, given the current queue;
// infinity when the queue is empty. Drives simulator timer events and server
// worker wakeups.
inline double next_flush_deadline(const std::deque<QueueItem>& queue, const BatchPolicy& policy) {
  if (queue.empty()) return std::numeric_limits<double>::infinity();
  if (policy.strategy == BatchStrategy::Fifo)
    return queue.front().arrival_ms + policy.max_wait_ms;
  std::map<std::size_t, double> oldest;
  for (const auto& it : queue) {
    std::size_t b = bucket_of(it.length, policy.buckets);
    if (!oldest.count(b)) oldest[b] = it.arrival_ms;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [b, arr] : oldest) best = std::min(best, arr + policy.max_wait_ms);
  return best;
}

// ---------------------------------------------------------------------------
// Deterministic simulator.

// Poisson arrivals with strictly alternating bimodal lengths.
inline std::vector<QueueItem> make_bimodal_workload(std::size_t n, double rate_per_s,
                                                    std::size_t len_a, std::size_t len_b,
                                                    std::uint64_t seed) {
  Rng rng(seed);
  std::vector<QueueItem> out;
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += -std::log(1.0 - rng.next_double()) / rate_per_s * 1000.0;
    out.push_back({i, i % 2 == 0 ? len_a : len_b, t});
  }
  return out;
}

struct SimConfig {
  BatchPolicy policy;
  std::size_t n_workers = 2;
  // Service time for a batch: base + per_slot * (size * max_len).
  double service_base_ms = 2.0;
  double service_per_slot_ms = 0.02;
};

struct SimBatchLog {
  double formed_ms = 0.0;
  std::size_t size = 0;
  std::size_t max_len = 0;
  double padding = 0.0;
  double oldest_wait_ms = 0.0;
};

struct SimResult {
  std::vector<double> latency_ms;  // by request seq
  std::vector<SimBatchLog> batches;
  double mean_padding = 0.0;
  double makespan_ms = 0.0;
  double throughput_rps = 0.0;
  // Times a queued item had waited > max_wait while some worker sat idle.
  std::size_t wait_violations = 0;
};

inline SimResult simulate(const std::vector<QueueItem>& workload, const SimConfig& cfg) {
  SimResult res;
  res.latency_ms.assign(workload.size(), 0.0);

  std::deque<QueueItem> queue;
  struct Completion {
    double time;
    std::vector<QueueItem> items;
    bool operator>(const Completion& o) const { return time > o.time; }
  };
  std::priority_queue<Completion, std::vector<Completion>, std::greater<Completion>> running;
  std::size_t idle = cfg.n_workers;
  std::size_t next_arrival = 0;
  double now = 0.0;
  const double eps = 1e-9;

  auto dispatch = [&](double t) {
    auto batches = form_batches(queue, cfg.policy, t, idle);
    for (auto& b : batches) {
      SimBatchLog log;
      log.formed_ms = t;
      log.size = b.items.size();
      log.max_len = b.max_len();
      log.padding = b.padding_ratio();
      log.oldest_wait_ms = b.oldest_wait(t);
      res.batches.push_back(log);
      double service = cfg.service_base_ms + cfg.service_per_slot_ms *
                                                 static_cast<double>(b.items.size()) *
                                                 static_cast<double>(b.max_len());
      --idle;
      running.push({t + service, std::move(b.items)});
    }
    if (idle > 0)
      for (const auto& it : queue)
        if (t > it.arrival_ms + cfg.policy.max_wait_ms + eps) ++res.wait_violations;
  };

  for (;;) {
    double t_arr = next_arrival < workload.size() ? workload[next_arrival].arrival_ms
                                                  : std::numeric_limits<double>::infinity();
    double t_done = running.empty() ? std::numeric_limits<double>::infinity()
                                    : running.top().time;
    double t_flush = idle > 0 ? next_flush_deadline(queue, cfg.policy)
                              : std::numeric_limits<double>::infinity();
    double t = std::min({t_arr, t_done, t_flush});
    if (t == std::numeric_limits<double>::infinity()) break;
    now = t;

    while (next_arrival < workload.size() && workload[next_arrival].arrival_ms <= now + eps) {
      queue.push_back(workload[next_arrival]);
      ++next_arrival;
    }
    while (!running.empty() && running.top().time <= now + eps) {
      for (const auto& it : running.top().items)
        res.latency_ms[it.seq] = now - it.arrival_ms;
      running.pop();
      ++idle;
    }
    dispatch(now);
  }

  res.makespan_ms = now;
  if (!res.batches.empty()) {
    double sum = 0.0;
    for (const auto& b : res.batches) sum += b.padding;
    res.mean_padding = sum / static_cast<double>(res.batches.size());
  }
  if (res.makespan_ms > 0.0)
    res.throughput_rps = static_cast<double>(workload.size()) / (res.makespan_ms / 1000.0);
  return res;
}

}  // namespace nerpipe

#endif  // NERPIPE_BATCHING_HPP
