#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fpbench {

// 64-bit FNV-1a. Used for request digests, derived seeds and summary
// digests; stable across platforms and runs.
std::uint64_t fnv1a64(std::string_view data);
std::string fnv1a64_hex(std::string_view data);

/// Derives a module-level seed from the single run seed, so one knob
/// replays every stage of a run.
std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view module_name);

/// Deterministic RNG wrapper. Only mt19937_64 raw draws plus rejection
/// sampling are used, which the standard pins down bit-exactly; the
/// distribution adapters in <random> are implementation-defined and must
/// not leak into any output that gets replayed or digested.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n);

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform01();

  /// Fisher-Yates shuffle of indices [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  /// k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

 private:
  std::mt19937_64 engine_;
};

// ASCII helpers (the routing rules are byte-level by contract; locale
// dependent behavior is not acceptable here).
std::string ascii_lower(std::string_view s);
std::string_view trim(std::string_view s);
bool starts_with_ci(std::string_view text, std::string_view prefix);

/// Collapses whitespace runs to single spaces, trims, lowercases.
std::string normalize_sentence(std::string_view s);

/// Word-level Levenshtein distance over whitespace-split tokens.
std::size_t word_edit_distance(std::string_view a, std::string_view b);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace fpbench
