#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace saelab {

using Mat = Eigen::MatrixXf;
using Vec = Eigen::VectorXf;
using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

// A latent counts as active when its magnitude clears this threshold (L0 counts,
// alive-latent sets, token attribution).
inline constexpr float kActiveThreshold = 1e-8f;

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parse failure of an external file; `line` is 1-based, 0 when not line-addressable.
struct ParseError : std::runtime_error {
  size_t line;
  explicit ParseError(const std::string& msg) : std::runtime_error(msg), line(0) {}
  ParseError(const std::string& msg, size_t line_no)
      : std::runtime_error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

struct DegenerateDenominator : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training hit a non-finite loss; carries the offending epoch/batch for diagnosis.
struct TrainAbort : std::runtime_error {
  size_t epoch;
  size_t batch;
  TrainAbort(size_t epoch_no, size_t batch_no)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch_no) +
                           ", batch " + std::to_string(batch_no)),
        epoch(epoch_no),
        batch(batch_no) {}
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw InvalidArgument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidArgument(msg);
}

// FNV-1a, used for stream derivation and content manifests.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

inline std::string to_hex(uint64_t v) {
  char buf[17];
  snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace saelab
