#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "morphoskill/errors.hpp"
#include "morphoskill/evaluation.hpp"

extern char** environ;

namespace morphoskill {

namespace {

/// Buffered reader/writer over a pair of file descriptors.
class FdLineStream : public LineStream {
 public:
  FdLineStream(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}

  ~FdLineStream() override {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
  }

  void write_line(const std::string& line) override {
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      const ssize_t n = send_or_write(write_fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw EvaluatorUnavailable(std::string("write to evaluator failed: ") + std::strerror(errno));
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd pfd{read_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw EvaluatorUnavailable(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) return std::nullopt;
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw EvaluatorUnavailable(std::string("read from evaluator failed: ") + std::strerror(errno));
      }
      if (n == 0) throw EvaluatorUnavailable("evaluator closed the stream");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  static ssize_t send_or_write(int fd, const char* p, std::size_t n) {
    // MSG_NOSIGNAL keeps a dead peer from raising SIGPIPE on sockets.
    const ssize_t sent = ::send(fd, p, n, MSG_NOSIGNAL);
    if (sent < 0 && errno == ENOTSOCK) return ::write(fd, p, n);
    return sent;
  }

  int read_fd_;
  int write_fd_;
  std::string buffer_;
};

class ProcessLineStream final : public FdLineStream {
 public:
  ProcessLineStream(pid_t pid, int read_fd, int write_fd) : FdLineStream(read_fd, write_fd), pid_(pid) {}

  ~ProcessLineStream() override {
    // Closing stdin asks a well-behaved evaluator to exit at EOF.
    ::close(write_fd_);
    write_fd_ = -1;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(pid_, nullptr, WNOHANG) == pid_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }

 private:
  pid_t pid_;
};

}  // namespace

std::unique_ptr<LineStream> spawn_process_stream(const std::string& command_line) {
  ::signal(SIGPIPE, SIG_IGN);
  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
    throw EvaluatorUnavailable(std::string("pipe failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::string cmd = command_line;
  char sh[] = "/bin/sh";
  char flag[] = "-c";
  char* argv[] = {sh, flag, cmd.data(), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw EvaluatorUnavailable("cannot start evaluator '" + command_line + "': " + std::strerror(rc));
  }
  return std::make_unique<ProcessLineStream>(pid, from_child[0], to_child[1]);
}

std::unique_ptr<LineStream> connect_tcp_stream(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw EvaluatorUnavailable("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw EvaluatorUnavailable("cannot connect to " + host + ":" + service);
  return std::make_unique<FdLineStream>(fd, fd);
}

}  // namespace morphoskill
