#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mrtlab {

// Error taxonomy. The CLI maps these onto process exit codes
// (validation 3, numeric fault 4, missing artifact 5).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file; carries a 1-based line number when known.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg, long line = -1)
      : std::runtime_error(line >= 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_number(line) {}
  long line_number;
};

// Violated precondition of an internal API.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

std::string to_hex(std::uint64_t v);

// CRC-32 (IEEE 802.3 polynomial), used by the checkpoint container and
// for file digests in run manifests.
std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

}  // namespace mrtlab
