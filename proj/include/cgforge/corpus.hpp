#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgforge/ingest.hpp"

namespace cgforge {

/// One labelled callsite/callee pair as stored in pair JSONL.
struct LabeledPair {
  std::string binary_id;
  Addr callsite = 0;
  Addr callee = 0;
  int label = 1;

  bool operator==(const LabeledPair&) const = default;
  auto operator<=>(const LabeledPair&) const = default;
};

/// Synthetic binaries for desk-scale experiments. Every function has an
/// integer signature (0-6 arguments, void or int return); an indirect callsite
/// may reach every address-taken function with the signature it sets up.
struct CorpusConfig {
  std::size_t binaries = 10;
  std::size_t min_functions = 24;
  std::size_t max_functions = 36;
  double address_taken_fraction = 0.5;
  double indirect_fraction = 0.12;
  int max_callsites_per_function = 3;
  std::uint64_t seed = 7;
};

struct Signature {
  int args = 0;
  bool returns = false;
  bool operator==(const Signature&) const = default;
};

struct SyntheticCorpus {
  std::vector<ProgramModel> programs;
  std::vector<LabeledPair> icall_truth;  // label 1
  /// Every (callsite, function) pair whose signatures agree, direct and
  /// indirect callsites alike. Negatives are never drawn from this set.
  std::vector<LabeledPair> compatible;
};

SyntheticCorpus generate_corpus(const CorpusConfig& cfg);

}  // namespace cgforge
