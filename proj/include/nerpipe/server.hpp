// Serving harness: line-delimited JSON over TCP with dynamic batching.
// One intake thread, a model worker pool consuming batches formed by the
// batch policy, a separate rule/post worker pool (rule extraction never waits
// on model inference), and one writer. Requests are {"id","text"}; every
// accepted line yields exactly one response or error object. A "metrics" verb
// returns a snapshot; "shutdown" asks the owner to stop and drain.

#ifndef NERPIPE_SERVER_HPP
#define NERPIPE_SERVER_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <csignal>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <json.hpp>

#include "nerpipe/batching.hpp"
#include "nerpipe/jsonl.hpp"
#include "nerpipe/pipeline.hpp"
#include "nerpipe/tokenize.hpp"

namespace nerpipe {

struct ServerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ServerMetrics {
  double throughput_rps = 0.0;
  double p50_ms = 0.0, p95_ms = 0.0, p99_ms = 0.0;
  double mean_padding_ratio = 0.0;
  std::size_t queue_depth = 0;
  double rule_busy_fraction = 0.0;
  double model_busy_fraction = 0.0;
  std::uint64_t total_requests = 0;
  std::uint64_t total_responses = 0;
  std::uint64_t total_errors = 0;
};

inline nlohmann::json metrics_to_json(const ServerMetrics& m) {
  nlohmann::json j;
  j["verb"] = "metrics";
  j["throughput_rps"] = m.throughput_rps;
  j["p50_ms"] = m.p50_ms;
  j["p95_ms"] = m.p95_ms;
  j["p99_ms"] = m.p99_ms;
  j["mean_padding_ratio"] = m.mean_padding_ratio;
  j["queue_depth"] = m.queue_depth;
  j["rule_busy_fraction"] = m.rule_busy_fraction;
  j["model_busy_fraction"] = m.model_busy_fraction;
  j["total_requests"] = m.total_requests;
  j["total_responses"] = m.total_responses;
  j["total_errors"] = m.total_errors;
  return j;
}

// Canonical span serialization shared by online responses and offline output;
// the byte-identity of the two rests on this single code path.
inline nlohmann::json spans_to_json(const Record& r, const std::vector<EntitySpan>& spans) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : spans) arr.push_back(entity_to_json(r, s, true));
  return arr;
}

class BatchServer {
  struct InFlight {
    std::uint64_t seq = 0;
    int client = -1;
    std::string id;
    Record rec;
    double arrival_ms = 0.0;
    std::vector<EntitySpan> rule_side;
    TagSequence tags;
    double rule_ms = 0.0, model_ms = 0.0;
    std::atomic<int> parts_done{0};
  };
  enum class JobKind { Rules, Post };
  struct RuleJob {
    std::shared_ptr<InFlight> req;
    JobKind kind = JobKind::Rules;
  };

 public:
  BatchServer(Pipeline& pipeline, BatchPolicy policy, int port, std::size_t n_rule = 1,
              std::size_t n_model = 1)
      : pipeline_(pipeline), policy_(std::move(policy)), req_port_(port), n_rule_(n_rule),
        n_model_(n_model) {
    auto errs = validate_policy(policy_);
    if (!errs.empty()) throw ServerError("bad batch policy: " + errs.front());
  }

  ~BatchServer() {
    if (started_) stop();
  }

  void start() {
    std::signal(SIGPIPE, SIG_IGN);
    listener_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listener_ < 0) throw ServerError("cannot create listener socket");
    int one = 1;
    setsockopt(listener_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(req_port_));
    if (bind(listener_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        listen(listener_, 64) != 0) {
      close(listener_);
      throw ServerError("cannot bind 127.0.0.1:" + std::to_string(req_port_));
    }
    socklen_t len = sizeof addr;
    getsockname(listener_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);

    t0_ = std::chrono::steady_clock::now();
    started_ = true;
    intake_ = std::thread([this] { intake_loop(); });
    for (std::size_t i = 0; i < n_model_; ++i)
      model_workers_.emplace_back([this] { model_loop(); });
    for (std::size_t i = 0; i < n_rule_; ++i)
      rule_workers_.emplace_back([this] { rule_loop(); });
    writer_ = std::thread([this] { writer_loop(); });
  }

  // Stops intake, drains in-flight work, then joins all threads.
  void stop() {
    if (!started_) return;
    stopping_ = true;
    intake_.join();
    {
      std::unique_lock<std::mutex> lock(inflight_mu_);
      drained_cv_.wait(lock, [this] { return inflight_ == 0; });
    }
    exiting_ = true;
    model_cv_.notify_all();
    rule_cv_.notify_all();
    write_cv_.notify_all();
    for (auto& t : model_workers_) t.join();
    for (auto& t : rule_workers_) t.join();
    writer_.join();
    {
      std::lock_guard<std::mutex> lock(write_mu_);
      for (int fd : fd_open_) close(fd);
      fd_open_.clear();
      fd_eof_.clear();
      fd_outstanding_.clear();
    }
    clients_.clear();
    close(listener_);
    {
      std::lock_guard<std::mutex> lock(shutdown_mu_);
      started_ = false;
    }
    shutdown_cv_.notify_all();
  }

  int port() const { return port_; }
  bool shutdown_requested() const { return shutdown_requested_; }

  // Blocks until a client sends the shutdown verb (or the server stops).
  void wait_for_shutdown_request() {
    std::unique_lock<std::mutex> lock(shutdown_mu_);
    shutdown_cv_.wait(lock, [this] { return shutdown_requested_ || !started_; });
  }

  ServerMetrics metrics_snapshot() const {
    ServerMetrics m;
    m.total_requests = total_requests_;
    m.total_responses = total_responses_;
    m.total_errors = total_errors_;
    {
      std::lock_guard<std::mutex> lock(model_mu_);
      m.queue_depth = qitems_.size();
    }
    std::lock_guard<std::mutex> lock(window_mu_);
    if (!latency_window_.empty()) {
      std::vector<double> sorted = latency_window_;
      std::sort(sorted.begin(), sorted.end());
      auto pct = [&](double q) {
        std::size_t idx = static_cast<std::size_t>(
            std::max(0.0, std::ceil(q * static_cast<double>(sorted.size())) - 1.0));
        return sorted[std::min(idx, sorted.size() - 1)];
      };
      m.p50_ms = pct(0.50);
      m.p95_ms = pct(0.95);
      m.p99_ms = pct(0.99);
    }
    if (!padding_window_.empty()) {
      double sum = 0.0;
      for (double p : padding_window_) sum += p;
      m.mean_padding_ratio = sum / static_cast<double>(padding_window_.size());
    }
    if (completion_window_.size() >= 2) {
      double dt_ms = completion_window_.back() - completion_window_.front();
      if (dt_ms > 0)
        m.throughput_rps =
            static_cast<double>(completion_window_.size() - 1) / (dt_ms / 1000.0);
    }
    double up_ns = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                           std::chrono::steady_clock::now() - t0_)
                                           .count());
    if (up_ns > 0) {
      m.rule_busy_fraction =
          static_cast<double>(rule_busy_ns_) / (up_ns * static_cast<double>(n_rule_));
      m.model_busy_fraction =
          static_cast<double>(model_busy_ns_) / (up_ns * static_cast<double>(n_model_));
    }
    return m;
  }

 private:
  double now_ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

  // Every accepted request reserves exactly one future write; the writer
  // closes a peer's fd once it hit EOF and nothing is owed to it. Closing in
  // one thread avoids responses landing on a recycled descriptor.
  void maybe_close_locked(int fd) {
    if (fd_eof_.count(fd) && fd_outstanding_[fd] == 0 && fd_open_.count(fd)) {
      close(fd);
      fd_open_.erase(fd);
      fd_eof_.erase(fd);
      fd_outstanding_.erase(fd);
    }
  }

  void enqueue_write(int fd, const std::string& line, bool reserved = false) {
    {
      std::lock_guard<std::mutex> lock(write_mu_);
      if (!reserved) ++fd_outstanding_[fd];
      writes_.push_back({fd, line + "\n"});
    }
    write_cv_.notify_one();
  }

  void send_error(int fd, const std::string& message, const std::string& id) {
    nlohmann::json e;
    e["error"] = message;
    if (!id.empty()) e["id"] = id;
    ++total_errors_;
    enqueue_write(fd, e.dump());
  }

  void accept_request(int fd, nlohmann::json&& j) {
    auto req = std::make_shared<InFlight>();
    req->seq = next_seq_++;
    req->client = fd;
    req->id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    req->rec.id = req->id;
    req->rec.raw = j["text"].get<std::string>();
    req->rec.tokens = tokenize(req->rec.raw);
    req->arrival_ms = now_ms();
    ++total_requests_;
    {
      std::lock_guard<std::mutex> lock(write_mu_);
      ++fd_outstanding_[fd];
    }
    {
      std::lock_guard<std::mutex> lock(inflight_mu_);
      ++inflight_;
    }
    {
      std::lock_guard<std::mutex> lock(rule_mu_);
      rule_jobs_.push_back({req, JobKind::Rules});
    }
    rule_cv_.notify_one();
    {
      std::lock_guard<std::mutex> lock(model_mu_);
      qitems_.push_back({req->seq, req->rec.tokens.size(), req->arrival_ms});
      bodies_[req->seq] = req;
    }
    model_cv_.notify_one();
  }

  void handle_line(int fd, const std::string& line) {
    if (line.empty()) return;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      send_error(fd, "request is not a JSON object: " + line.substr(0, 120), "");
      return;
    }
    if (j.contains("verb")) {
      std::string verb = j.value("verb", "");
      if (verb == "metrics") {
        enqueue_write(fd, metrics_to_json(metrics_snapshot()).dump());
      } else if (verb == "shutdown") {
        nlohmann::json ok;
        ok["ok"] = "shutdown";
        enqueue_write(fd, ok.dump());
        {
          std::lock_guard<std::mutex> lock(shutdown_mu_);
          shutdown_requested_ = true;
        }
        shutdown_cv_.notify_all();
      } else {
        send_error(fd, "unknown verb '" + verb + "'", "");
      }
      return;
    }
    if (!j.contains("id") || !j.contains("text") || !j["text"].is_string()) {
      send_error(fd, "request needs string fields 'id' and 'text'",
                 j.contains("id") ? j["id"].dump() : "");
      return;
    }
    accept_request(fd, std::move(j));
  }

  void intake_loop() {
    while (!stopping_) {
      std::vector<pollfd> fds;
      fds.push_back({listener_, POLLIN, 0});
      for (const auto& [fd, buf] : clients_) fds.push_back({fd, POLLIN, 0});
      if (poll(fds.data(), fds.size(), 50) <= 0) continue;
      if (fds[0].revents & POLLIN) {
        int c = accept(listener_, nullptr, nullptr);
        if (c >= 0) {
          clients_[c];
          std::lock_guard<std::mutex> lock(write_mu_);
          fd_open_.insert(c);
        }
      }
      std::vector<int> closed;
      for (std::size_t i = 1; i < fds.size(); ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
        char chunk[65536];
        ssize_t n = read(fds[i].fd, chunk, sizeof chunk);
        if (n <= 0) {
          closed.push_back(fds[i].fd);
          continue;
        }
        std::string& buf = clients_[fds[i].fd];
        buf.append(chunk, static_cast<std::size_t>(n));
        std::size_t nl;
        while ((nl = buf.find('\n')) != std::string::npos) {
          std::string line = buf.substr(0, nl);
          buf.erase(0, nl + 1);
          if (!line.empty() && line.back() == '\r') line.pop_back();
          handle_line(fds[i].fd, line);
        }
      }
      for (int fd : closed) {
        clients_.erase(fd);
        std::lock_guard<std::mutex> lock(write_mu_);
        fd_eof_.insert(fd);
        maybe_close_locked(fd);
      }
    }
  }

  void model_loop() {
    std::unique_lock<std::mutex> lock(model_mu_);
    for (;;) {
      double deadline = next_flush_deadline(qitems_, policy_);
      auto batches = form_batches(qitems_, policy_, now_ms(), 1);
      if (batches.empty()) {
        if (exiting_) return;
        if (deadline == std::numeric_limits<double>::infinity()) {
          model_cv_.wait(lock);
        } else {
          auto until = t0_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double, std::milli>(deadline));
          model_cv_.wait_until(lock, until);
        }
        continue;
      }
      FormedBatch batch = std::move(batches.front());
      std::vector<std::shared_ptr<InFlight>> reqs;
      for (const auto& item : batch.items) {
        reqs.push_back(bodies_.at(item.seq));
        bodies_.erase(item.seq);
      }
      lock.unlock();

      {
        std::lock_guard<std::mutex> wlock(window_mu_);
        padding_window_.push_back(batch.padding_ratio());
        if (padding_window_.size() > 512) padding_window_.erase(padding_window_.begin());
      }
      auto busy0 = std::chrono::steady_clock::now();
      for (auto& req : reqs) {
        auto t0 = std::chrono::steady_clock::now();
        req->tags = pipeline_.model_tags(req->rec.tokens);
        req->model_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (req->parts_done.fetch_add(1) + 1 == 2) {
          std::lock_guard<std::mutex> rlock(rule_mu_);
          rule_jobs_.push_back({req, JobKind::Post});
          rule_cv_.notify_one();
        }
      }
      model_busy_ns_ += static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                               busy0)
              .count());
      lock.lock();
    }
  }

  void rule_loop() {
    std::unique_lock<std::mutex> lock(rule_mu_);
    for (;;) {
      if (rule_jobs_.empty()) {
        if (exiting_) return;
        rule_cv_.wait(lock);
        continue;
      }
      RuleJob job = std::move(rule_jobs_.front());
      rule_jobs_.pop_front();
      lock.unlock();

      auto busy0 = std::chrono::steady_clock::now();
      if (job.kind == JobKind::Rules) {
        auto t0 = std::chrono::steady_clock::now();
        job.req->rule_side = pipeline_.rule_spans(job.req->rec.tokens);
        job.req->rule_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        if (job.req->parts_done.fetch_add(1) + 1 == 2) {
          lock.lock();
          rule_jobs_.push_back({job.req, JobKind::Post});
          lock.unlock();
        }
      } else {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<EntitySpan> model_side = bio_to_spans(job.req->tags, Source::Model);
        std::vector<EntitySpan> final_spans =
            pipeline_.merge_and_post(job.req->rule_side, model_side, job.req->rec.tokens);
        double post_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();

        double done = now_ms();
        nlohmann::json resp;
        resp["id"] = job.req->id;
        resp["spans"] = spans_to_json(job.req->rec, final_spans);
        resp["timings"] = {{"rule_ms", job.req->rule_ms},
                           {"model_ms", job.req->model_ms},
                           {"post_ms", post_ms},
                           {"total_ms", done - job.req->arrival_ms}};
        ++total_responses_;
        {
          std::lock_guard<std::mutex> wlock(window_mu_);
          latency_window_.push_back(done - job.req->arrival_ms);
          if (latency_window_.size() > 2048) latency_window_.erase(latency_window_.begin());
          completion_window_.push_back(done);
          if (completion_window_.size() > 2048)
            completion_window_.erase(completion_window_.begin());
        }
        enqueue_write(job.req->client, resp.dump(), true);
        {
          std::lock_guard<std::mutex> ilock(inflight_mu_);
          --inflight_;
        }
        drained_cv_.notify_all();
      }
      rule_busy_ns_ += static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                               busy0)
              .count());
      lock.lock();
    }
  }

  void writer_loop() {
    std::unique_lock<std::mutex> lock(write_mu_);
    for (;;) {
      if (writes_.empty()) {
        if (exiting_) return;
        write_cv_.wait(lock);
        continue;
      }
      auto [fd, payload] = std::move(writes_.front());
      writes_.pop_front();
      lock.unlock();
      std::size_t off = 0;
      while (off < payload.size()) {
        ssize_t n = write(fd, payload.data() + off, payload.size() - off);
        if (n <= 0) break;  // client went away; response is undeliverable
        off += static_cast<std::size_t>(n);
      }
      lock.lock();
      --fd_outstanding_[fd];
      maybe_close_locked(fd);
    }
  }

  Pipeline& pipeline_;
  BatchPolicy policy_;
  int req_port_;
  std::size_t n_rule_, n_model_;

  int listener_ = -1;
  int port_ = 0;
  std::atomic<bool> started_{false};
  std::atomic<bool> stopping_{false};
  std::atomic<bool> exiting_{false};
  std::atomic<bool> shutdown_requested_{false};
  std::chrono::steady_clock::time_point t0_;

  std::thread intake_;
  std::vector<std::thread> model_workers_, rule_workers_;
  std::thread writer_;
  std::map<int, std::string> clients_;  // fd -> partial line buffer (intake only)

  std::uint64_t next_seq_ = 1;
  mutable std::mutex model_mu_;
  std::condition_variable model_cv_;
  std::deque<QueueItem> qitems_;
  std::map<std::uint64_t, std::shared_ptr<InFlight>> bodies_;

  std::mutex rule_mu_;
  std::condition_variable rule_cv_;
  std::deque<RuleJob> rule_jobs_;

  std::mutex write_mu_;
  std::condition_variable write_cv_;
  std::deque<std::pair<int, std::string>> writes_;

  std::mutex inflight_mu_;
  std::condition_variable drained_cv_;
  std::size_t inflight_ = 0;

  std::mutex shutdown_mu_;
  std::condition_variable shutdown_cv_;
  std::map<int, int> fd_outstanding_;  // guarded by write_mu_
  std::set<int> fd_open_, fd_eof_;     // guarded by write_mu_

  std::atomic<std::uint64_t> total_requests_{0}, total_responses_{0}, total_errors_{0};
  std::atomic<std::uint64_t> rule_busy_ns_{0}, model_busy_ns_{0};
  mutable std::mutex window_mu_;
  std::vector<double> latency_window_, padding_window_, completion_window_;
};

// ---------------------------------------------------------------------------
// Load generator: Poisson schedule, alternating bimodal lengths, exactly-once
// accounting by request id.

struct LoadgenConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  double rate_per_s = 500.0;
  std::size_t n_requests = 100;
  std::uint64_t seed = 1;
  std::size_t len_a = 10, len_b = 100;
  int drain_timeout_ms = 30000;
};

struct LoadgenResult {
  std::size_t sent = 0, received = 0, errors = 0, duplicates = 0;
  double mean_ms = 0.0, p50_ms = 0.0, max_ms = 0.0;
  bool complete() const { return received == sent && duplicates == 0 && errors == 0; }
};

inline LoadgenResult run_loadgen(const LoadgenConfig& cfg) {
  std::signal(SIGPIPE, SIG_IGN);
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw ServerError("cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(cfg.port));
  if (inet_pton(AF_INET, cfg.host.c_str(), &addr.sin_addr) != 1) {
    close(fd);
    throw ServerError("bad host '" + cfg.host + "'");
  }
  if (connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    close(fd);
    throw ServerError("cannot connect to " + cfg.host + ":" + std::to_string(cfg.port));
  }

  auto workload = make_bimodal_workload(cfg.n_requests, cfg.rate_per_s, cfg.len_a, cfg.len_b,
                                        cfg.seed);
  LoadgenResult res;
  std::map<std::string, int> seen;
  std::map<std::string, double> sent_at;
  std::vector<double> latencies;
  std::string buf;
  auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  auto pump_reads = [&](int timeout) {
    pollfd pfd{fd, POLLIN, 0};
    if (poll(&pfd, 1, timeout) <= 0) return;
    char chunk[65536];
    ssize_t n = read(fd, chunk, sizeof chunk);
    if (n <= 0) return;
    buf.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buf.find('\n')) != std::string::npos) {
      std::string line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        ++res.errors;
        continue;
      }
      if (j.contains("error")) {
        ++res.errors;
        continue;
      }
      std::string id = j.value("id", "");
      int& count = seen[id];
      ++count;
      if (count == 1) {
        ++res.received;
        if (sent_at.count(id)) latencies.push_back(elapsed_ms() - sent_at[id]);
      } else {
        ++res.duplicates;
      }
    }
  };

  std::size_t next = 0;
  while (next < workload.size()) {
    double wait = workload[next].arrival_ms - elapsed_ms();
    if (wait > 0) {
      pump_reads(static_cast<int>(std::max(1.0, wait)));
      continue;
    }
    const auto& item = workload[next];
    std::string text;
    for (std::size_t k = 0; k < item.length; ++k) {
      if (!text.empty()) text += ' ';
      text += "xin";
    }
    nlohmann::json req;
    req["id"] = "q" + std::to_string(item.seq);
    req["text"] = text;
    std::string payload = req.dump() + "\n";
    sent_at[req["id"].get<std::string>()] = elapsed_ms();
    std::size_t off = 0;
    while (off < payload.size()) {
      ssize_t n = write(fd, payload.data() + off, payload.size() - off);
      if (n <= 0) {
        close(fd);
        throw ServerError("connection lost while sending");
      }
      off += static_cast<std::size_t>(n);
    }
    ++res.sent;
    ++next;
    pump_reads(0);
  }

  double deadline = elapsed_ms() + cfg.drain_timeout_ms;
  while (res.received + res.errors < res.sent && elapsed_ms() < deadline) pump_reads(50);
  close(fd);

  if (!latencies.empty()) {
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    res.mean_ms = sum / static_cast<double>(sorted.size());
    res.p50_ms = sorted[(sorted.size() - 1) / 2];
    res.max_ms = sorted.back();
  }
  return res;
}

}  // namespace nerpipe

#endif  // NERPIPE_SERVER_HPP
