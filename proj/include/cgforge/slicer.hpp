#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cgforge/ingest.hpp"

namespace cgforge {

/// System V AMD64 data-passing registers. SSE and x87 members take part in
/// the argument/return predicates only when their flags are on.
struct RegisterConvention {
  std::vector<std::string> arg_int{"rdi", "rsi", "rdx", "rcx", "r8", "r9"};
  std::vector<std::string> ret_int{"rax", "rdx"};
  std::vector<std::string> arg_sse{"xmm0", "xmm1", "xmm2", "xmm3",
                                   "xmm4", "xmm5", "xmm6", "xmm7"};
  std::vector<std::string> ret_sse{"xmm0", "xmm1"};
  std::vector<std::string> ret_x87{"st0", "st1"};
  bool use_sse = true;
  bool use_x87 = true;

  static RegisterConvention sysv() { return {}; }

  bool is_arg(std::string_view reg) const;
  bool is_ret(std::string_view reg) const;
};

enum class SlicePhase { kPreCall, kPostCall, kCallee };

enum KeepReason : std::uint8_t {
  kReasonStack = 1u << 0,
  kReasonArgReg = 1u << 1,
  kReasonRetReg = 1u << 2,
  kReasonGlobal = 1u << 3,
  kReasonControl = 1u << 4,
};

struct Classification {
  std::uint8_t reasons = 0;
  bool keep() const { return reasons != 0; }
};

/// Pure predicate behind both slicing walks. In the pre-call and callee
/// phases a stack instruction is kept for being a stack instruction and its
/// registers are not inspected further.
Classification classify_instruction(const InstructionModel& insn,
                                    const RegisterConvention& conv, SlicePhase phase);

enum class SliceOrigin { kCallsite, kCallee };

struct Slice {
  SliceOrigin origin = SliceOrigin::kCallsite;
  std::string binary_id;
  Addr addr = 0;
  std::vector<std::string> tokens;
  std::vector<Addr> kept_addrs;
  /// Index into tokens where each kept instruction starts (parallel to
  /// kept_addrs).
  std::vector<std::size_t> token_offsets;

  /// Token index of the instruction at `addr`, or 0 if it was not kept.
  std::size_t anchor_token() const;

  bool operator==(const Slice&) const = default;
};

Slice slice_callsite(const ProgramModel& p, const CallsiteRef& cs,
                     const RegisterConvention& conv = RegisterConvention::sysv());

/// The callee is sliced from `callee_start` to the end of the function that
/// contains it, whether or not a function starts there.
Slice slice_callee(const ProgramModel& p, Addr callee_start,
                   const RegisterConvention& conv = RegisterConvention::sysv());

/// Every instruction of the function containing `addr`, as an unsliced slice.
/// Used for the embedding corpus and full-context comparisons.
Slice full_function(const ProgramModel& p, Addr addr);

void write_slice_jsonl(const Slice& s, std::ostream& out);
Slice parse_slice_json(const std::string& line);

}  // namespace cgforge
