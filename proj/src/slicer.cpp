#include "cgforge/slicer.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "cgforge/error.hpp"
#include "cgforge/symbolizer.hpp"

namespace cgforge {

namespace {

bool member(const std::vector<std::string>& set, std::string_view reg) {
  return std::find(set.begin(), set.end(), reg) != set.end();
}

}  // namespace

bool RegisterConvention::is_arg(std::string_view reg) const {
  return member(arg_int, reg) || (use_sse && member(arg_sse, reg));
}

bool RegisterConvention::is_ret(std::string_view reg) const {
  return member(ret_int, reg) || (use_sse && member(ret_sse, reg)) ||
         (use_x87 && member(ret_x87, reg));
}

Classification classify_instruction(const InstructionModel& insn,
                                    const RegisterConvention& conv, SlicePhase phase) {
  Classification c;
  auto any_reg = [&insn](auto pred) {
    return std::any_of(insn.registers.begin(), insn.registers.end(), pred);
  };
  auto arg = [&conv](const std::string& r) { return conv.is_arg(r); };
  auto ret = [&conv](const std::string& r) { return conv.is_ret(r); };

  switch (phase) {
    case SlicePhase::kPreCall:
      if (insn.has(kIsStack)) {
        c.reasons |= kReasonStack;
      } else if (any_reg(arg)) {
        c.reasons |= kReasonArgReg;
      }
      break;
    case SlicePhase::kPostCall:
      if (any_reg(ret)) c.reasons |= kReasonRetReg;
      break;
    case SlicePhase::kCallee:
      if (insn.has(kIsStack)) {
        c.reasons |= kReasonStack;
      } else {
        if (any_reg(arg)) c.reasons |= kReasonArgReg;
        if (any_reg(ret)) c.reasons |= kReasonRetReg;
      }
      break;
  }
  if (insn.has(kReferencesGlobal)) c.reasons |= kReasonGlobal;
  if (insn.has(kIsControlFlow)) c.reasons |= kReasonControl;
  return c;
}

std::size_t Slice::anchor_token() const {
  auto it = std::lower_bound(kept_addrs.begin(), kept_addrs.end(), addr);
  if (it == kept_addrs.end() || *it != addr || token_offsets.size() != kept_addrs.size())
    return 0;
  return token_offsets[static_cast<std::size_t>(it - kept_addrs.begin())];
}

namespace {

void keep(Slice& s, const InstructionModel& insn) {
  s.kept_addrs.push_back(insn.addr);
  s.token_offsets.push_back(s.tokens.size());
  auto toks = tokenize(insn.text);
  s.tokens.insert(s.tokens.end(), toks.begin(), toks.end());
}

}  // namespace

Slice slice_callsite(const ProgramModel& p, const CallsiteRef& cs,
                     const RegisterConvention& conv) {
  const FunctionModel* f = p.function_containing(cs.addr);
  if (f == nullptr)
    throw DataError(p.binary_id + ": callsite " + hex(cs.addr) + " is not inside any function");
  Slice s;
  s.origin = SliceOrigin::kCallsite;
  s.binary_id = p.binary_id;
  s.addr = cs.addr;
  for (const auto& insn : f->instructions) {
    const auto phase = insn.addr <= cs.addr ? SlicePhase::kPreCall : SlicePhase::kPostCall;
    if (classify_instruction(insn, conv, phase).keep()) keep(s, insn);
  }
  return s;
}

Slice slice_callee(const ProgramModel& p, Addr callee_start, const RegisterConvention& conv) {
  const FunctionModel* f = p.function_containing(callee_start);
  if (f == nullptr)
    throw DataError(p.binary_id + ": callee " + hex(callee_start) + " is outside all code");
  Slice s;
  s.origin = SliceOrigin::kCallee;
  s.binary_id = p.binary_id;
  s.addr = callee_start;
  for (const auto& insn : f->instructions) {
    if (insn.addr < callee_start) continue;
    if (classify_instruction(insn, conv, SlicePhase::kCallee).keep()) keep(s, insn);
  }
  return s;
}

Slice full_function(const ProgramModel& p, Addr addr) {
  const FunctionModel* f = p.function_containing(addr);
  if (f == nullptr) throw DataError(p.binary_id + ": " + hex(addr) + " is outside all code");
  Slice s;
  s.origin = SliceOrigin::kCallee;
  s.binary_id = p.binary_id;
  s.addr = f->start_addr;
  for (const auto& insn : f->instructions) keep(s, insn);
  return s;
}

void write_slice_jsonl(const Slice& s, std::ostream& out) {
  nlohmann::json kept = nlohmann::json::array();
  for (Addr a : s.kept_addrs) kept.push_back(hex(a));
  nlohmann::json obj = {{"origin", s.origin == SliceOrigin::kCallsite ? "callsite" : "callee"},
                        {"bin", s.binary_id},
                        {"addr", hex(s.addr)},
                        {"tokens", s.tokens},
                        {"kept", kept},
                        {"offsets", s.token_offsets}};
  out << obj.dump() << '\n';
}

Slice parse_slice_json(const std::string& line) {
  auto obj = nlohmann::json::parse(line);
  Slice s;
  const auto origin = obj.at("origin").get<std::string>();
  if (origin != "callsite" && origin != "callee") throw Error("bad slice origin '" + origin + "'");
  s.origin = origin == "callsite" ? SliceOrigin::kCallsite : SliceOrigin::kCallee;
  s.binary_id = obj.at("bin").get<std::string>();
  s.addr = parse_hex(obj.at("addr").get<std::string>());
  s.tokens = obj.at("tokens").get<std::vector<std::string>>();
  for (const auto& k : obj.at("kept")) s.kept_addrs.push_back(parse_hex(k.get<std::string>()));
  if (obj.contains("offsets")) {
    s.token_offsets = obj["offsets"].get<std::vector<std::size_t>>();
    if (s.token_offsets.size() != s.kept_addrs.size())
      throw Error("slice offsets and kept addresses differ in length");
  }
  return s;
}

}  // namespace cgforge
