#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cgforge/slicer.hpp"

namespace cgforge {

/// Splits an Intel-syntax instruction into mnemonic, registers, literals and
/// single-character punctuation. Quoted strings stay one token.
std::vector<std::string> tokenize(std::string_view insn_text);

enum class SymbolizationMode { kStrict, kLoose };

struct SymbolizationPolicy {
  SymbolizationMode mode = SymbolizationMode::kLoose;
  unsigned modulus = 10;  // ignored by kStrict

  void validate() const;
  std::string name() const;
  bool operator==(const SymbolizationPolicy&) const = default;
};

SymbolizationPolicy parse_policy(std::string_view mode, unsigned modulus);

/// One row of the disassembler naming table: tokens starting with `prefix`
/// followed by a hex address become `base` (strict) or base + addr % N (loose).
struct NameClass {
  std::string prefix;
  std::string strict_base;
  std::string loose_base;
};

const std::vector<NameClass>& default_name_classes();

std::string symbolize_token(std::string_view tok, const SymbolizationPolicy& policy);

/// Operand of a direct call, rewritten to the function class.
std::string symbolize_call_target(std::string_view tok, const SymbolizationPolicy& policy);

Slice symbolize_slice(const Slice& s, const SymbolizationPolicy& policy);

/// Token-wise symbolization of one instruction's token list (direct call
/// operands included).
std::vector<std::string> symbolize_instruction(std::span<const std::string> tokens,
                                               const SymbolizationPolicy& policy);

/// Maps a loose symbol onto the strict symbol of the same class.
std::string coarsen(std::string_view loose_token);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() = default;
  Vocabulary(SymbolizationPolicy policy, std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const SymbolizationPolicy& policy() const { return policy_; }
  bool contains(std::string_view tok) const;
  std::int32_t index_of(std::string_view tok) const;  // kUnk when missing
  /// Stable content hash (hex) of policy + token list.
  std::string hash() const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  bool operator==(const Vocabulary& o) const {
    return policy_ == o.policy_ && tokens_ == o.tokens_;
  }

 private:
  SymbolizationPolicy policy_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

/// Deterministic: PAD and UNK at 0 and 1, then distinct tokens sorted
/// lexicographically.
Vocabulary build_vocabulary(std::span<const std::vector<std::string>> corpus,
                            const SymbolizationPolicy& policy);

}  // namespace cgforge
