// Bridges to external helper processes speaking UTF-8 line-delimited JSON
// over stdin/stdout: an external tagger and a translation service for
// augmentation. Access to one process is serialized; requests are matched to
// responses by id.

#ifndef NERPIPE_ADAPTER_HPP
#define NERPIPE_ADAPTER_HPP

#include <chrono>
#include <csignal>
#include <mutex>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "nerpipe/core.hpp"
#include "nerpipe/schema.hpp"

namespace nerpipe {

struct AdapterTimeout : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AdapterProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Child process with piped stdin/stdout and deadline-based line reads.
class LineProcess {
 public:
  explicit LineProcess(const std::string& command) {
    // A dead child must surface as EPIPE on write, not kill this process.
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });

    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw AdapterProtocolError("cannot create adapter pipes");
    pid_ = fork();
    if (pid_ < 0) throw AdapterProtocolError("cannot fork adapter process");
    if (pid_ == 0) {
      dup2(to_child[0], 0);
      dup2(from_child[1], 1);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;

  ~LineProcess() {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_fd_ >= 0) close(out_fd_);
    if (pid_ > 0) {
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, &status, WNOHANG) != 0) return;
        usleep(10000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
  }

  void send_line(const std::string& line) {
    std::string payload = line + "\n";
    std::size_t off = 0;
    while (off < payload.size()) {
      ssize_t n = write(in_fd_, payload.data() + off, payload.size() - off);
      if (n < 0) throw AdapterProtocolError("adapter process closed its input");
      off += static_cast<std::size_t>(n);
    }
  }

  std::string recv_line(int timeout_ms) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    for (;;) {
      std::size_t nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                           deadline - std::chrono::steady_clock::now())
                           .count();
      if (remaining <= 0) throw AdapterTimeout("adapter did not answer within " +
                                               std::to_string(timeout_ms) + " ms");
      pollfd pfd{out_fd_, POLLIN, 0};
      int rc = poll(&pfd, 1, static_cast<int>(remaining));
      if (rc < 0) throw AdapterProtocolError("poll on adapter stream failed");
      if (rc == 0) continue;
      char chunk[4096];
      ssize_t n = read(out_fd_, chunk, sizeof chunk);
      if (n <= 0) throw AdapterProtocolError("adapter process closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1, out_fd_ = -1;
  std::string buffer_;
};

// External tagger. Request {"id": "...", "tokens": [...]}, response
// {"id": "...", "tags": [...]} with one merged-schema BIO tag per token.
class TaggerAdapter {
 public:
  TaggerAdapter(const std::string& command, int timeout_ms)
      : proc_(command), timeout_ms_(timeout_ms) {}

  TagSequence tag(const TokenSequence& tokens, const ClassIndex& classes) {
    std::lock_guard<std::mutex> lock(mu_);
    std::string id = std::to_string(next_id_++);
    nlohmann::json req;
    req["id"] = id;
    auto arr = nlohmann::json::array();
    for (const auto& t : tokens) arr.push_back(t.text);
    req["tokens"] = std::move(arr);
    proc_.send_line(req.dump());

    nlohmann::json resp = nlohmann::json::parse(proc_.recv_line(timeout_ms_), nullptr, false);
    if (resp.is_discarded() || !resp.is_object())
      throw AdapterProtocolError("adapter response is not a JSON object");
    if (resp.value("id", "") != id)
      throw AdapterProtocolError("adapter response id does not match request");
    if (!resp.contains("tags") || !resp["tags"].is_array())
      throw AdapterProtocolError("adapter response has no 'tags' array");
    TagSequence tags;
    for (const auto& t : resp["tags"]) tags.push_back(t.get<std::string>());
    if (tags.size() != tokens.size())
      throw AdapterProtocolError("adapter returned " + std::to_string(tags.size()) +
                                 " tags for " + std::to_string(tokens.size()) + " tokens");
    for (const auto& t : tags) {
      try {
        parse_tag(t);
      } catch (const InvalidTagError&) {
        throw AdapterProtocolError("adapter returned malformed tag '" + t + "'");
      }
      if (classes.class_of(t) < 0)
        throw AdapterProtocolError("adapter returned unknown label in tag '" + t + "'");
    }
    return tags;
  }

 private:
  LineProcess proc_;
  int timeout_ms_;
  std::mutex mu_;
  std::uint64_t next_id_ = 1;
};

// Translation service for back-translation. Request
// {"id", "text", "protected": [surface strings]}, response {"id", "text"}.
class TranslateAdapter {
 public:
  TranslateAdapter(const std::string& command, int timeout_ms)
      : proc_(command), timeout_ms_(timeout_ms) {}

  std::string translate(const std::string& text, const std::vector<std::string>& protected_strings) {
    std::lock_guard<std::mutex> lock(mu_);
    std::string id = std::to_string(next_id_++);
    nlohmann::json req;
    req["id"] = id;
    req["text"] = text;
    req["protected"] = protected_strings;
    proc_.send_line(req.dump());

    nlohmann::json resp = nlohmann::json::parse(proc_.recv_line(timeout_ms_), nullptr, false);
    if (resp.is_discarded() || !resp.is_object() || !resp.contains("text"))
      throw AdapterProtocolError("translation response is not a {'id','text'} object");
    if (resp.value("id", "") != id)
      throw AdapterProtocolError("translation response id does not match request");
    return resp["text"].get<std::string>();
  }

 private:
  LineProcess proc_;
  int timeout_ms_;
  std::mutex mu_;
  std::uint64_t next_id_ = 1;
};

}  // namespace nerpipe

#endif  // NERPIPE_ADAPTER_HPP
