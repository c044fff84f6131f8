#include "imgforge/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "imgforge/errors.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }

  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::IoFailure, std::string("pipe: ") + std::strerror(errno));
  }
  return {Fd(fds[0]), Fd(fds[1])};
}

}  // namespace

int run_process(const ProcessSpec& spec, const std::function<void(std::string_view)>& on_line) {
  if (spec.argv.empty()) throw Error(ErrorCode::IoFailure, "empty command line");

  std::vector<char*> argv;
  for (const auto& arg : spec.argv) argv.push_back(const_cast<char*>(arg.c_str()));
  argv.push_back(nullptr);
  std::vector<char*> envp;
  if (spec.env) {
    for (const auto& var : *spec.env) envp.push_back(const_cast<char*>(var.c_str()));
    envp.push_back(nullptr);
  }

  auto [in_read, in_write] = make_pipe();
  auto [out_read, out_write] = make_pipe();

  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::IoFailure, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_read.get(), STDIN_FILENO);
    ::dup2(out_write.get(), STDOUT_FILENO);
    ::dup2(out_write.get(), STDERR_FILENO);
    if (!spec.cwd.empty() && ::chdir(spec.cwd.c_str()) != 0) ::_exit(127);
    if (spec.env) {
      ::execve(argv[0], argv.data(), envp.data());
    } else {
      ::execvp(argv[0], argv.data());
    }
    ::_exit(127);
  }
  in_read.reset();
  out_write.reset();

  std::string_view pending_input = spec.input ? std::string_view(*spec.input) : std::string_view{};
  if (pending_input.empty()) in_write.reset();
  ::signal(SIGPIPE, SIG_IGN);

  std::string partial;
  auto flush_lines = [&](bool final) {
    std::size_t start = 0;
    for (auto nl = partial.find('\n'); nl != std::string::npos; nl = partial.find('\n', start)) {
      if (on_line) on_line(std::string_view(partial).substr(start, nl - start));
      start = nl + 1;
    }
    partial.erase(0, start);
    if (final && !partial.empty()) {
      if (on_line) on_line(partial);
      partial.clear();
    }
  };

  char buffer[4096];
  while (out_read.get() >= 0) {
    pollfd fds[2] = {{out_read.get(), POLLIN, 0}, {in_write.get(), POLLOUT, 0}};
    nfds_t count = in_write.get() >= 0 ? 2 : 1;
    if (::poll(fds, count, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (count == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      auto n = ::write(in_write.get(), pending_input.data(), pending_input.size());
      if (n > 0) pending_input.remove_prefix(static_cast<std::size_t>(n));
      if (n < 0 || pending_input.empty()) in_write.reset();
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      auto n = ::read(out_read.get(), buffer, sizeof buffer);
      if (n > 0) {
        partial.append(buffer, static_cast<std::size_t>(n));
        flush_lines(false);
      } else if (n == 0 || errno != EINTR) {
        out_read.reset();
      }
    }
  }
  in_write.reset();
  flush_lines(true);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return 1;
}

std::optional<fs::path> find_program(std::string_view name, std::string_view path_env) {
  std::string search(path_env);
  search += ":/usr/local/sbin:/usr/sbin:/sbin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= search.size()) {
    auto colon = search.find(':', start);
    if (colon == std::string::npos) colon = search.size();
    auto dir = search.substr(start, colon - start);
    start = colon + 1;
    if (dir.empty()) continue;
    auto candidate = fs::path(dir) / name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate;
  }
  return std::nullopt;
}

}  // namespace imgforge
