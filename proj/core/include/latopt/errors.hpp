#pragma once

#include <stdexcept>
#include <string>

namespace latopt {

/// A DesignProblem or ProblemSet violates its invariants.
class ProblemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed JSON input (problem sets, run configs, plans, latent files).
/// The message carries line/column or the offending field path.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid combination of run/optimizer/benchmark settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Free-dof system is singular or not positive definite.
class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class WeightErrorCode { io, bad_magic, bad_version, checksum, manifest, shape };

/// Rejected decoder weight file; `code()` tells the failure class apart.
class WeightFileError : public std::runtime_error {
 public:
  WeightFileError(WeightErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  [[nodiscard]] WeightErrorCode code() const noexcept { return code_; }

 private:
  WeightErrorCode code_;
};

/// Decoder evaluation produced a non-finite value; the message names the node.
class DecodeError : public std::runtime_error {
 public:
  DecodeError(int node, const std::string& what) : std::runtime_error(what), node_(node) {}
  [[nodiscard]] int node() const noexcept { return node_; }

 private:
  int node_;
};

}  // namespace latopt
