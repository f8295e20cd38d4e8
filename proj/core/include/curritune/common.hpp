#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace curritune {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Base class for everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, mismatched digests, out-of-range ids,
/// incompatible artifacts. Maps to CLI exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Digests
//
// Artifacts are fingerprinted with 64-bit FNV-1a over their serialized
// bytes, rendered as 16 lowercase hex digits. This is an integrity and
// compatibility check, not a cryptographic commitment.

std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

std::string digest_hex(std::uint64_t digest);

inline std::string digest_of(std::string_view bytes) {
  return digest_hex(fnv1a64(bytes.data(), bytes.size()));
}

std::string file_digest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Seeding and portable randomness
//
// All stochastic choices in the pipeline flow from std::mt19937_64 streams.
// The engine's output sequence is fixed by the C++ standard, and the helpers
// below avoid std::uniform_*_distribution (whose mapping is implementation
// defined), so every artifact reproduces bit-for-bit across platforms.

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a stream index.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed + stream * 0x9e3779b97f4a7c15ULL);
}

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased uniform integer in [0, bound) via rejection sampling.
std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t bound);

// ---------------------------------------------------------------------------
// Formatting and file helpers

/// Shortest text form that reloads to the exact same double (%.17g).
std::string format_g17(double value);

/// Fixed-point with the given number of decimals, e.g. format_fixed(66.275, 2)
/// == "66.28" (round-half-away, matching printf).
std::string format_fixed(double value, int decimals);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

std::string read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace curritune
