#pragma once

// Property checks shared by the gtest suites and the acceptance runner.

#include <cstddef>
#include <cstdint>
#include <string>

namespace bgpt::checks {

struct CheckResult {
  bool ok = true;
  std::size_t cases = 0;
  std::string detail;  // first failure, or a short summary
};

/// segment() then reassemble() is the identity for random lengths in
/// [1, 8192], always including the boundary lengths.
CheckResult patch_roundtrip(std::size_t cases, std::uint64_t seed);

/// Changing patch k leaves patch-level outputs 0..k bit-identical.
CheckResult patch_level_causality(std::size_t trials, std::uint64_t seed);

/// Changing prefix symbol m leaves byte-level logits rows 0..m bit-identical.
CheckResult byte_level_causality(std::size_t trials, std::uint64_t seed);

/// Every operand combination of every variant row: text -> bytes -> decode ->
/// text is the identity and decodes to the same (mnemonic, arity).
CheckResult codec_roundtrip();

/// Runs random programs until at least `steps` instructions have executed and
/// compares every recorded state with an int-arithmetic reference machine.
CheckResult emulator_fuzz(std::size_t steps, std::uint64_t seed);

}  // namespace bgpt::checks
