#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cgforge {

using Addr = std::uint64_t;

enum InsnFlag : std::uint32_t {
  kIsCall = 1u << 0,
  kIsIndirectCall = 1u << 1,
  kIsControlFlow = 1u << 2,
  kIsStack = 1u << 3,
  kReferencesGlobal = 1u << 4,
};

struct InstructionModel {
  Addr addr = 0;
  std::string text;                   // verbatim instruction text
  std::string mnemonic;               // first non-prefix token
  std::vector<std::string> operands;  // tokens after the mnemonic
  std::vector<Addr> xref_data;        // referenced data-section addresses
  std::uint32_t flags = 0;
  std::vector<std::string> registers;  // canonical registers read or written

  bool has(InsnFlag f) const { return (flags & f) != 0; }
  bool touches(std::string_view canonical_reg) const;
  /// Target of a direct call/jump, if the operand is a constant or sub_XXXX.
  std::optional<Addr> direct_target() const;

  bool operator==(const InstructionModel&) const = default;
};

struct FunctionModel {
  Addr start_addr = 0;
  Addr end_addr = 0;  // exclusive
  std::string name;
  std::vector<InstructionModel> instructions;
  bool address_taken = false;

  bool contains(Addr a) const { return a >= start_addr && a < end_addr; }
  bool operator==(const FunctionModel&) const = default;
};

struct ProgramModel {
  std::string binary_id;
  std::vector<FunctionModel> functions;  // sorted, disjoint
  std::map<Addr, std::vector<Addr>> data_refs;

  const FunctionModel* function_containing(Addr a) const;
  const FunctionModel* function_at(Addr start) const;
  const InstructionModel* instruction_at(Addr a) const;

  bool operator==(const ProgramModel&) const = default;
};

enum class CallKind { kDirect, kIndirect };

struct CallsiteRef {
  std::string binary_id;
  Addr addr = 0;
  CallKind kind = CallKind::kDirect;
  Addr enclosing_function = 0;

  bool operator==(const CallsiteRef&) const = default;
};

struct DirectPair {
  CallsiteRef callsite;
  Addr callee = 0;
  bool operator==(const DirectPair&) const = default;
};

struct DirectPairReport {
  std::vector<DirectPair> pairs;
  std::size_t skipped = 0;  // direct calls whose target is not a function start
};

/// Derives mnemonic, operands and class flags from addr/text/xref_data.
InstructionModel make_instruction(Addr addr, std::string text, std::vector<Addr> xref_data);

/// Reads normalized disassembly JSONL. The stream may hold several binaries;
/// they are returned in order of first appearance.
std::vector<ProgramModel> parse_programs(std::istream& in);

/// Single-binary form. Throws DataError if the stream mentions more than one
/// binary. An empty stream yields an empty model.
ProgramModel parse_program(std::istream& in);
ProgramModel parse_program_string(const std::string& jsonl);

/// Writes a model back out in the same JSONL format; parse(write(p)) == p.
void write_program(const ProgramModel& p, std::ostream& out);

DirectPairReport extract_direct_pairs(const ProgramModel& p);

/// Sets address_taken on every function. Idempotent.
ProgramModel mark_address_taken(ProgramModel p);

std::vector<CallsiteRef> list_indirect_callsites(const ProgramModel& p);
std::vector<CallsiteRef> list_callsites(const ProgramModel& p);

std::vector<Addr> address_taken_functions(const ProgramModel& p);

std::string hex(Addr a);
Addr parse_hex(const std::string& s);

}  // namespace cgforge
