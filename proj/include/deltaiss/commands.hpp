#pragma once

// The subcommands behind the deltaiss executable. Each returns the process
// exit code: 0 success / certified, 2 not converged / not certified /
// violation found. Errors are thrown and mapped to 1 by the caller.

#include "deltaiss/config.hpp"
#include "deltaiss/lipschitz.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace deltaiss {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNegative = 2;

/// Exclusive ownership of a run directory for the lifetime of the object.
class RunLock {
 public:
  /// Creates the directory if needed. Throws std::runtime_error if another
  /// process holds the lock.
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

/// Lipschitz constants of the system as used for the certificate constant.
struct SystemConstants {
  double Lx = 0.0;
  double Lu = 0.0;
  std::optional<LipschitzEstimate> state_estimate;
  std::optional<LipschitzEstimate> input_estimate;
};

/// Fixed values from the config when given, otherwise estimates (point or
/// ci95 per cfg.lipschitz_mode).
SystemConstants resolve_system_constants(const RunConfig& cfg, const DiscreteSystem& sys);

/// Composite constant for the configured templates, LL and system constants.
/// The template constants are taken over the gap domains [0, diam X] and
/// [0, diam U].
double certificate_constant(const Templates& templates, double LL, const SystemConstants& sc,
                            const DiscreteSystem& sys);

int cmd_estimate_lipschitz(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_certify(const RunConfig& cfg, const std::string& model_path, std::ostream& out,
                std::ostream& err);
int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_falsify(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace deltaiss
