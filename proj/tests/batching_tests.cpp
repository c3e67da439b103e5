#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <vector>

#include "nerpipe/batching.hpp"

using namespace nerpipe;
using Catch::Matchers::WithinAbs;

namespace {

QueueItem qi(std::uint64_t seq, std::size_t length, double arrival_ms) {
  return {seq, length, arrival_ms};
}

std::deque<QueueItem> queue_of(std::vector<QueueItem> items) {
  return std::deque<QueueItem>(items.begin(), items.end());
}

std::vector<std::uint64_t> seqs(const FormedBatch& b) {
  std::vector<std::uint64_t> out;
  for (const auto& it : b.items) out.push_back(it.seq);
  return out;
}

BatchPolicy policy(BatchStrategy strategy, std::size_t max_batch, double max_wait_ms,
                   std::vector<std::size_t> buckets = {16, 32, 64, 128, 256}) {
  BatchPolicy p;
  p.strategy = strategy;
  p.max_batch = max_batch;
  p.max_wait_ms = max_wait_ms;
  p.buckets = std::move(buckets);
  return p;
}

// Alternating short/long arrivals sorted by time, seq equal to queue position.
std::deque<QueueItem> sorted_random_queue(Rng& rng, std::size_t n, std::size_t max_len) {
  std::vector<double> times;
  for (std::size_t i = 0; i < n; ++i) times.push_back(rng.next_double(0.0, 50.0));
  std::sort(times.begin(), times.end());
  std::deque<QueueItem> q;
  for (std::size_t i = 0; i < n; ++i)
    q.push_back(qi(i, 1 + rng.next_below(max_len), times[i]));
  return q;
}

}  // namespace

TEST_CASE("policy validation flags each bad field") {
  REQUIRE(validate_policy(BatchPolicy{}).empty());

  BatchPolicy p;
  p.max_batch = 0;
  REQUIRE(validate_policy(p).size() == 1);

  p = BatchPolicy{};
  p.max_wait_ms = -1.0;
  REQUIRE(validate_policy(p).size() == 1);

  p = BatchPolicy{};
  p.buckets = {16, 16};
  REQUIRE(validate_policy(p).size() == 1);
  p.buckets = {32, 16};
  REQUIRE(validate_policy(p).size() == 1);

  p = BatchPolicy{};
  p.buckets.clear();
  REQUIRE(validate_policy(p).empty());
  p.strategy = BatchStrategy::LengthBucketed;
  REQUIRE(validate_policy(p).size() == 1);

  REQUIRE(std::string(strategy_name(BatchStrategy::Fifo)) == "fifo");
  REQUIRE(std::string(strategy_name(BatchStrategy::LengthBucketed)) == "bucketed");
}

TEST_CASE("bucket_of picks the first covering boundary") {
  std::vector<std::size_t> buckets = {16, 32, 64};
  REQUIRE(bucket_of(1, buckets) == 0);
  REQUIRE(bucket_of(16, buckets) == 0);
  REQUIRE(bucket_of(17, buckets) == 1);
  REQUIRE(bucket_of(32, buckets) == 1);
  REQUIRE(bucket_of(33, buckets) == 2);
  REQUIRE(bucket_of(64, buckets) == 2);
  REQUIRE(bucket_of(65, buckets) == 3);  // shared overflow bucket
  REQUIRE(bucket_of(5, {}) == 0);
}

TEST_CASE("padding ratio counts empty slots against the longest member") {
  FormedBatch empty;
  REQUIRE(empty.padding_ratio() == 0.0);

  FormedBatch even;
  even.items = {qi(0, 5, 0), qi(1, 5, 0)};
  REQUIRE(even.max_len() == 5);
  REQUIRE(even.padding_ratio() == 0.0);

  FormedBatch mixed;
  mixed.items = {qi(0, 5, 0), qi(1, 50, 0)};
  REQUIRE(mixed.max_len() == 50);
  REQUIRE_THAT(mixed.padding_ratio(), WithinAbs(0.45, 1e-12));

  FormedBatch single;
  single.items = {qi(0, 7, 0)};
  REQUIRE(single.padding_ratio() == 0.0);

  FormedBatch waits;
  waits.items = {qi(0, 5, 3.0), qi(1, 5, 1.0)};
  REQUIRE_THAT(waits.oldest_wait(10.0), WithinAbs(9.0, 1e-12));
}

TEST_CASE("fifo forms mixed batches in arrival order") {
  // Arrival order short, long, short, long; two full batches of two.
  std::deque<QueueItem> q =
      queue_of({qi(0, 5, 0), qi(1, 50, 1), qi(2, 5, 2), qi(3, 50, 3)});
  auto batches = form_batches(q, policy(BatchStrategy::Fifo, 2, 20.0), 3.0);
  REQUIRE(batches.size() == 2);
  REQUIRE(q.empty());
  REQUIRE(seqs(batches[0]) == std::vector<std::uint64_t>{0, 1});
  REQUIRE(seqs(batches[1]) == std::vector<std::uint64_t>{2, 3});
  REQUIRE_THAT(batches[0].padding_ratio(), WithinAbs(0.45, 1e-12));
  REQUIRE_THAT(batches[1].padding_ratio(), WithinAbs(0.45, 1e-12));
}

TEST_CASE("bucketing groups equal lengths into padding-free batches") {
  std::deque<QueueItem> q =
      queue_of({qi(0, 5, 0), qi(1, 50, 1), qi(2, 5, 2), qi(3, 50, 3)});
  auto batches =
      form_batches(q, policy(BatchStrategy::LengthBucketed, 2, 20.0, {16, 32, 64}), 3.0);
  REQUIRE(batches.size() == 2);
  REQUIRE(q.empty());
  // Short bucket holds the older item, so it leaves first.
  REQUIRE(seqs(batches[0]) == std::vector<std::uint64_t>{0, 2});
  REQUIRE(seqs(batches[1]) == std::vector<std::uint64_t>{1, 3});
  REQUIRE(batches[0].padding_ratio() == 0.0);
  REQUIRE(batches[1].padding_ratio() == 0.0);

  std::deque<QueueItem> q2 =
      queue_of({qi(0, 5, 0), qi(1, 5, 1), qi(2, 50, 2), qi(3, 50, 3)});
  auto batches2 =
      form_batches(q2, policy(BatchStrategy::LengthBucketed, 2, 20.0, {16, 32, 64}), 3.0);
  REQUIRE(batches2.size() == 2);
  REQUIRE(seqs(batches2[0]) == std::vector<std::uint64_t>{0, 1});
  REQUIRE(seqs(batches2[1]) == std::vector<std::uint64_t>{2, 3});
}

TEST_CASE("items wait until a batch fills or the oldest times out") {
  for (auto strategy : {BatchStrategy::Fifo, BatchStrategy::LengthBucketed}) {
    BatchPolicy p = policy(strategy, 4, 20.0);
    std::deque<QueueItem> q = queue_of({qi(0, 8, 0), qi(1, 8, 1), qi(2, 8, 2)});
    REQUIRE(form_batches(q, p, 5.0).empty());
    REQUIRE(q.size() == 3);

    auto flushed = form_batches(q, p, 20.0);
    REQUIRE(flushed.size() == 1);
    REQUIRE(seqs(flushed[0]) == std::vector<std::uint64_t>{0, 1, 2});
    REQUIRE(q.empty());
  }
}

TEST_CASE("a timeout flush drains the whole overdue backlog") {
  BatchPolicy p = policy(BatchStrategy::Fifo, 4, 10.0);
  std::deque<QueueItem> q;
  for (std::uint64_t i = 0; i < 5; ++i) q.push_back(qi(i, 3, 0.0));
  auto batches = form_batches(q, p, 15.0);
  REQUIRE(batches.size() == 2);
  REQUIRE(batches[0].items.size() == 4);
  REQUIRE(batches[1].items.size() == 1);
  REQUIRE(q.empty());
}

TEST_CASE("max_batches caps emissions at the free worker count") {
  for (auto strategy : {BatchStrategy::Fifo, BatchStrategy::LengthBucketed}) {
    BatchPolicy p = policy(strategy, 1, 0.0);
    std::deque<QueueItem> q =
        queue_of({qi(0, 3, 0), qi(1, 3, 0), qi(2, 3, 0), qi(3, 3, 0)});
    auto batches = form_batches(q, p, 1.0, 2);
    REQUIRE(batches.size() == 2);
    REQUIRE(q.size() == 2);
  }
}

TEST_CASE("a starving bucket preempts a full one") {
  // Lone short item is most overdue; the full long bucket waits its turn.
  BatchPolicy p = policy(BatchStrategy::LengthBucketed, 2, 20.0, {16, 32, 64});
  std::deque<QueueItem> q =
      queue_of({qi(0, 5, 0.0), qi(1, 50, 5.0), qi(2, 50, 6.0)});
  auto batches = form_batches(q, p, 25.0);
  REQUIRE(batches.size() == 2);
  REQUIRE(seqs(batches[0]) == std::vector<std::uint64_t>{0});
  REQUIRE(seqs(batches[1]) == std::vector<std::uint64_t>{1, 2});
}

TEST_CASE("flush deadline is the oldest arrival plus max_wait") {
  BatchPolicy fifo = policy(BatchStrategy::Fifo, 8, 20.0);
  std::deque<QueueItem> empty;
  REQUIRE(next_flush_deadline(empty, fifo) ==
          std::numeric_limits<double>::infinity());

  std::deque<QueueItem> q = queue_of({qi(0, 5, 4.0), qi(1, 50, 9.0)});
  REQUIRE_THAT(next_flush_deadline(q, fifo), WithinAbs(24.0, 1e-12));

  // Bucketed: the earliest per-bucket head wins, regardless of queue position.
  BatchPolicy bucketed = policy(BatchStrategy::LengthBucketed, 8, 20.0, {16, 32});
  std::deque<QueueItem> q2 = queue_of({qi(0, 5, 4.0), qi(1, 50, 1.0)});
  REQUIRE_THAT(next_flush_deadline(q2, bucketed), WithinAbs(21.0, 1e-12));
}

TEST_CASE("nothing leaves before the flush deadline when no batch is full") {
  Rng rng(2024);
  for (int iter = 0; iter < 300; ++iter) {
    bool fifo = rng.next_bool(0.5);
    BatchPolicy p = policy(fifo ? BatchStrategy::Fifo : BatchStrategy::LengthBucketed,
                           10, 5.0 + rng.next_double(0.0, 30.0), {8, 16});
    std::deque<QueueItem> q = sorted_random_queue(rng, 1 + rng.next_below(6), 24);
    double deadline = next_flush_deadline(q, p);
    REQUIRE(std::isfinite(deadline));

    std::deque<QueueItem> before = q;
    REQUIRE(form_batches(before, p, deadline - 1e-3).empty());
    REQUIRE(before.size() == q.size());

    std::deque<QueueItem> at = q;
    auto batches = form_batches(at, p, deadline);
    REQUIRE(!batches.empty());
    std::size_t emitted = 0;
    for (const auto& b : batches) emitted += b.items.size();
    REQUIRE(at.size() + emitted == q.size());
  }
}

TEST_CASE("fifo drain preserves arrival order exactly") {
  Rng rng(77);
  for (int iter = 0; iter < 200; ++iter) {
    std::size_t n = 1 + rng.next_below(30);
    std::deque<QueueItem> q = sorted_random_queue(rng, n, 40);
    BatchPolicy p = policy(BatchStrategy::Fifo, 4, 10.0);
    auto batches = form_batches(q, p, 1e9);
    REQUIRE(q.empty());
    std::vector<std::uint64_t> flat;
    for (const auto& b : batches) {
      REQUIRE(!b.items.empty());
      REQUIRE(b.items.size() <= p.max_batch);
      for (auto s : seqs(b)) flat.push_back(s);
    }
    REQUIRE(flat.size() == n);
    for (std::size_t i = 0; i < n; ++i) REQUIRE(flat[i] == i);
  }
}

TEST_CASE("bucketed drain emits homogeneous batches and loses nothing") {
  Rng rng(78);
  for (int iter = 0; iter < 200; ++iter) {
    std::size_t n = 1 + rng.next_below(30);
    std::deque<QueueItem> q = sorted_random_queue(rng, n, 40);
    BatchPolicy p = policy(BatchStrategy::LengthBucketed, 3, 10.0, {8, 16, 24});
    auto batches = form_batches(q, p, 1e9);
    REQUIRE(q.empty());

    std::vector<char> seen(n, 0);
    std::map<std::size_t, std::uint64_t> last_in_bucket;
    for (const auto& b : batches) {
      REQUIRE(!b.items.empty());
      REQUIRE(b.items.size() <= p.max_batch);
      std::size_t bucket = bucket_of(b.items[0].length, p.buckets);
      for (const auto& it : b.items) {
        REQUIRE(bucket_of(it.length, p.buckets) == bucket);
        REQUIRE(!seen[it.seq]);
        seen[it.seq] = 1;
        // Within a bucket items keep arrival order across batches.
        if (last_in_bucket.count(bucket)) REQUIRE(it.seq > last_in_bucket[bucket]);
        last_in_bucket[bucket] = it.seq;
      }
    }
    REQUIRE(std::count(seen.begin(), seen.end(), 1) == static_cast<long>(n));
  }
}

TEST_CASE("bimodal workload generator alternates lengths deterministically") {
  auto w = make_bimodal_workload(50, 1000.0, 10, 100, 5);
  REQUIRE(w.size() == 50);
  for (std::size_t i = 0; i < w.size(); ++i) {
    REQUIRE(w[i].seq == i);
    REQUIRE(w[i].length == (i % 2 == 0 ? 10u : 100u));
    if (i > 0) REQUIRE(w[i].arrival_ms >= w[i - 1].arrival_ms);
  }
  auto again = make_bimodal_workload(50, 1000.0, 10, 100, 5);
  for (std::size_t i = 0; i < w.size(); ++i) {
    REQUIRE(again[i].arrival_ms == w[i].arrival_ms);
    REQUIRE(again[i].length == w[i].length);
  }
  REQUIRE(make_bimodal_workload(50, 1000.0, 10, 100, 6)[10].arrival_ms !=
          w[10].arrival_ms);
}

TEST_CASE("simulator on an empty workload reports zeros") {
  SimConfig cfg;
  SimResult res = simulate({}, cfg);
  REQUIRE(res.batches.empty());
  REQUIRE(res.latency_ms.empty());
  REQUIRE(res.mean_padding == 0.0);
  REQUIRE(res.makespan_ms == 0.0);
  REQUIRE(res.throughput_rps == 0.0);
  REQUIRE(res.wait_violations == 0);
}

TEST_CASE("bucketing beats fifo on the bimodal workload") {
  auto workload = make_bimodal_workload(200, 2000.0, 10, 100, 7);

  SimConfig fifo_cfg;
  fifo_cfg.policy = policy(BatchStrategy::Fifo, 32, 20.0);
  SimConfig bucketed_cfg;
  bucketed_cfg.policy = policy(BatchStrategy::LengthBucketed, 32, 20.0);

  SimResult fifo = simulate(workload, fifo_cfg);
  SimResult bucketed = simulate(workload, bucketed_cfg);

  // Homogeneous batches pad nothing; alternating mixed batches pad 45%.
  REQUIRE(bucketed.mean_padding == 0.0);
  REQUIRE(fifo.mean_padding >= 0.35);
  REQUIRE(fifo.mean_padding <= 0.5);
  REQUIRE(bucketed.mean_padding < fifo.mean_padding);

  for (const SimResult* res : {&fifo, &bucketed}) {
    REQUIRE(res->wait_violations == 0);
    REQUIRE(res->throughput_rps > 0.0);
    REQUIRE(res->makespan_ms > 0.0);
    REQUIRE(res->latency_ms.size() == workload.size());
    for (double l : res->latency_ms) REQUIRE(l >= 2.0);  // at least one service time
    for (const auto& b : res->batches) {
      REQUIRE(b.size >= 1);
      REQUIRE(b.padding >= 0.0);
      REQUIRE(b.padding <= 1.0);
    }
  }
}

TEST_CASE("simulator stays wait-clean under a single saturated worker") {
  auto workload = make_bimodal_workload(300, 5000.0, 10, 100, 11);
  SimConfig cfg;
  cfg.policy = policy(BatchStrategy::LengthBucketed, 16, 20.0);
  cfg.n_workers = 1;
  SimResult res = simulate(workload, cfg);
  REQUIRE(res.wait_violations == 0);
  REQUIRE(res.latency_ms.size() == workload.size());
  for (double l : res.latency_ms) REQUIRE(l > 0.0);
}

TEST_CASE("simulation is deterministic for a fixed workload") {
  auto workload = make_bimodal_workload(120, 1500.0, 10, 100, 13);
  SimConfig cfg;
  cfg.policy = policy(BatchStrategy::LengthBucketed, 8, 15.0);
  SimResult a = simulate(workload, cfg);
  SimResult b = simulate(workload, cfg);
  REQUIRE(a.latency_ms == b.latency_ms);
  REQUIRE(a.batches.size() == b.batches.size());
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    REQUIRE(a.batches[i].formed_ms == b.batches[i].formed_ms);
    REQUIRE(a.batches[i].size == b.batches[i].size);
    REQUIRE(a.batches[i].max_len == b.batches[i].max_len);
    REQUIRE(a.batches[i].padding == b.batches[i].padding);
  }
  REQUIRE(a.mean_padding == b.mean_padding);
  REQUIRE(a.makespan_ms == b.makespan_ms);
}
