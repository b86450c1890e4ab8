#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cgforge::x86 {

/// Maps any register spelling to the full-width register it aliases:
/// edi/di/dil -> rdi, r8d -> r8, ymm3 -> xmm3, st -> st0. Returns nullopt for
/// non-register tokens.
std::optional<std::string_view> canonical_register(std::string_view token);

/// Canonical registers named anywhere in an operand token stream, in order of
/// first appearance. Recognises the "st ( n )" spelling of x87 registers.
std::vector<std::string> registers_in(std::span<const std::string> tokens);

bool is_prefix(std::string_view token);
bool is_call(std::string_view mnemonic);
bool is_control_flow(std::string_view mnemonic);
bool is_stack_mnemonic(std::string_view mnemonic);

/// Parses "0x401000", "401000h" or plain decimal. nullopt if not a number.
std::optional<unsigned long long> parse_number(std::string_view token);

}  // namespace cgforge::x86
