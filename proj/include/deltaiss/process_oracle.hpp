#pragma once

// Black-box system behind a subprocess. The child reads one line per query,
// `x1 ... xn u1 ... um`, and answers with one line `y1 ... yn`.

#include "deltaiss/dynamics.hpp"

#include <mutex>
#include <string>
#include <sys/types.h>

namespace deltaiss {

class ProcessOracle {
 public:
  /// Runs `command` through /bin/sh. Throws std::runtime_error if it cannot start.
  ProcessOracle(const std::string& command, int state_dim);
  ~ProcessOracle();
  ProcessOracle(const ProcessOracle&) = delete;
  ProcessOracle& operator=(const ProcessOracle&) = delete;

  /// One query. Serialized by an internal mutex. Throws std::runtime_error
  /// when the child exits or replies with a malformed line.
  Vector query(const Vector& x, const Vector& u);

 private:
  std::string command_;
  int state_dim_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;
  std::mutex mutex_;
};

DiscreteSystem make_external_system(const std::string& command, const Box& state_box,
                                    const Box& input_box);

}  // namespace deltaiss
