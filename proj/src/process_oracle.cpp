#include "deltaiss/process_oracle.hpp"

#include "text_util.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>
#include <memory>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace deltaiss {

ProcessOracle::ProcessOracle(const std::string& command, int state_dim)
    : command_(command), state_dim_(state_dim) {
  // A dead child must surface as an error from write(), not kill us.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw std::runtime_error("ProcessOracle: pipe failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw std::runtime_error("ProcessOracle: pipe failed");
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

  std::string sh = "/bin/sh", flag = "-c", cmd = command;
  char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
  const int rc = posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    throw std::runtime_error("ProcessOracle: cannot start '" + command + "': " + std::strerror(rc));
  }
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

ProcessOracle::~ProcessOracle() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

Vector ProcessOracle::query(const Vector& x, const Vector& u) {
  std::lock_guard<std::mutex> lock(mutex_);
  std::string line = text::join(x, " ") + " " + text::join(u, " ") + "\n";
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    const ssize_t n = write(to_child_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error("ProcessOracle: '" + command_ + "' stopped accepting queries");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }

  std::size_t nl;
  while ((nl = pending_.find('\n')) == std::string::npos) {
    char buf[4096];
    const ssize_t n = read(from_child_, buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw std::runtime_error("ProcessOracle: '" + command_ + "' closed its output");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
  const std::string reply = pending_.substr(0, nl);
  pending_.erase(0, nl + 1);

  const auto toks = text::split_ws(reply);
  if (static_cast<int>(toks.size()) != state_dim_) {
    throw std::runtime_error("ProcessOracle: expected " + std::to_string(state_dim_) +
                             " numbers, got '" + reply + "'");
  }
  Vector out(state_dim_);
  for (int i = 0; i < state_dim_; ++i) out[i] = text::parse_double(toks[static_cast<std::size_t>(i)]);
  return out;
}

DiscreteSystem make_external_system(const std::string& command, const Box& state_box,
                                    const Box& input_box) {
  auto oracle = std::make_shared<ProcessOracle>(command, state_box.dim());
  return DiscreteSystem("external", state_box, input_box,
                        [oracle](const Vector& x, const Vector& u) { return oracle->query(x, u); });
}

}  // namespace deltaiss
