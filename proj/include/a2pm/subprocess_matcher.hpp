#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "a2pm/error.hpp"
#include "a2pm/image.hpp"
#include "a2pm/point_matcher.hpp"

namespace a2pm {

struct SubprocessOptions {
  std::string command;  // run through /bin/sh -c
  std::chrono::milliseconds timeout{30000};
  std::filesystem::path tmpdir;  // empty: $A2PM_TMPDIR, else the system temp dir
};

/// Client for an external matcher speaking newline-delimited JSON on its
/// stdin/stdout. One child process, one request in flight.
class SubprocessMatcher : public PointMatcher {
 public:
  explicit SubprocessMatcher(SubprocessOptions opt) : opt_(std::move(opt)) {
    session_dir_ = make_session_dir();
    try {
      spawn();
      handshake();
    } catch (...) {
      shutdown();
      std::error_code ec;
      std::filesystem::remove_all(session_dir_, ec);
      throw;
    }
  }

  ~SubprocessMatcher() override {
    shutdown();
    std::error_code ec;
    std::filesystem::remove_all(session_dir_, ec);
  }

  SubprocessMatcher(const SubprocessMatcher&) = delete;
  SubprocessMatcher& operator=(const SubprocessMatcher&) = delete;

  std::string name() const override { return "subprocess:" + peer_name_; }
  const std::string& peer_name() const { return peer_name_; }
  pid_t pid() const { return pid_; }

  MatcherResponse match(const MatcherRequest& req) override {
    const long id = next_id_++;
    const auto p0 = session_dir_ / ("req" + std::to_string(id) + "_0.png");
    const auto p1 = session_dir_ / ("req" + std::to_string(id) + "_1.png");
    write_rgb_png(p0, req.area0.image);
    write_rgb_png(p1, req.area1.image);
    nlohmann::json msg = {{"type", "match"},
                          {"id", id},
                          {"image0", p0.string()},
                          {"image1", p1.string()},
                          {"max_matches", req.max_matches}};
    send_line(msg.dump());
    const nlohmann::json reply = read_json();
    std::error_code ec;
    std::filesystem::remove(p0, ec);
    std::filesystem::remove(p1, ec);
    return parse_reply(reply, id, req);
  }

  /// Validates a reply and maps crop-local coordinates to the originals.
  static MatcherResponse parse_reply(const nlohmann::json& reply, long id, const MatcherRequest& req) {
    if (!reply.is_object() || !reply.contains("type") || !reply["type"].is_string())
      throw Error(ErrorCode::kProtocolViolation, "reply without a type");
    const std::string type = reply["type"];
    if (!reply.contains("id") || !reply["id"].is_number_integer() || reply["id"].get<long>() != id)
      throw Error(ErrorCode::kProtocolViolation, "reply id does not match request " + std::to_string(id));
    if (type == "error") {
      const std::string m = reply.contains("message") && reply["message"].is_string() ? reply["message"].get<std::string>() : "";
      throw Error(ErrorCode::kMatcherFailure, "matcher reported: " + m);
    }
    if (type != "matches") throw Error(ErrorCode::kProtocolViolation, "unexpected reply type " + type);
    if (!reply.contains("matches") || !reply["matches"].is_array())
      throw Error(ErrorCode::kProtocolViolation, "reply without a matches array");
    MatcherResponse out;
    for (const auto& m : reply["matches"]) {
      if (!m.is_array() || m.size() != 4) throw Error(ErrorCode::kProtocolViolation, "match is not [x0,y0,x1,y1]");
      double v[4];
      for (int i = 0; i < 4; ++i) {
        if (!m[i].is_number()) throw Error(ErrorCode::kProtocolViolation, "non-numeric coordinate");
        v[i] = m[i].get<double>();
        if (!std::isfinite(v[i])) throw Error(ErrorCode::kProtocolViolation, "non-finite coordinate");
      }
      out.matches.matches.push_back(
          {req.area0.transform.to_original({v[0], v[1]}), req.area1.transform.to_original({v[2], v[3]})});
    }
    if (reply.contains("confidences") && !reply["confidences"].is_null()) {
      const auto& c = reply["confidences"];
      if (!c.is_array() || c.size() != out.matches.size())
        throw Error(ErrorCode::kProtocolViolation, "confidences length differs from matches");
      std::vector<double> conf;
      for (const auto& x : c) {
        if (!x.is_number()) throw Error(ErrorCode::kProtocolViolation, "non-numeric confidence");
        conf.push_back(x.get<double>());
      }
      out.confidences = std::move(conf);
    }
    return out;
  }

 private:
  std::filesystem::path make_session_dir() const {
    std::filesystem::path base = opt_.tmpdir;
    if (base.empty()) {
      const char* env = std::getenv("A2PM_TMPDIR");
      base = env && *env ? std::filesystem::path(env) : std::filesystem::temp_directory_path();
    }
    static std::atomic<int> counter{0};
    auto dir = base / ("a2pm-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
    return dir;
  }

  void spawn() {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0)
      throw Error(ErrorCode::kMatcherFailure, "socketpair failed");
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(sv[0]);
      ::close(sv[1]);
      throw Error(ErrorCode::kMatcherFailure, "fork failed");
    }
    if (pid == 0) {
      ::dup2(sv[1], STDIN_FILENO);
      ::dup2(sv[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", opt_.command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(sv[1]);
    fd_ = sv[0];
    pid_ = pid;
  }

  void handshake() {
    send_line(nlohmann::json{{"type", "hello"}, {"version", 1}}.dump());
    const nlohmann::json r = read_json();
    if (!r.is_object() || r.value("type", "") != "hello" || !r.contains("version") || r["version"] != 1)
      throw Error(ErrorCode::kProtocolViolation, "bad handshake reply");
    peer_name_ = r.contains("name") && r["name"].is_string() ? r["name"].get<std::string>() : "";
  }

  void send_line(const std::string& line) {
    const std::string data = line + "\n";
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(ErrorCode::kMatcherFailure, "matcher process closed its input");
      sent += static_cast<std::size_t>(n);
    }
  }

  nlohmann::json read_json() {
    const std::string line = read_line();
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kProtocolViolation, std::string("malformed reply: ") + e.what());
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + opt_.timeout;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        kill_child();
        throw Error(ErrorCode::kMatcherTimeout, "matcher did not reply in time");
      }
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) continue;
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        kill_child();
        throw Error(ErrorCode::kMatcherFailure, "matcher process exited");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void kill_child() {
    if (pid_ > 0) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
      pid_ = -1;
    }
  }

  void shutdown() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    if (pid_ > 0) {
      // Closing the socket gives the child EOF; give it a moment to exit.
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
          pid_ = -1;
          return;
        }
        ::usleep(2000);
      }
      kill_child();
    }
  }

  SubprocessOptions opt_;
  std::filesystem::path session_dir_;
  int fd_ = -1;
  pid_t pid_ = -1;
  long next_id_ = 1;
  std::string buffer_;
  std::string peer_name_;
};

}  // namespace a2pm
