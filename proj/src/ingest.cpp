#include "cgforge/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "cgforge/error.hpp"
#include "cgforge/symbolizer.hpp"
#include "cgforge/x86.hpp"

namespace cgforge {

using nlohmann::json;

std::string hex(Addr a) {
  std::ostringstream os;
  os << "0x" << std::hex << a;
  return os.str();
}

Addr parse_hex(const std::string& s) {
  std::string_view v(s);
  if (v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X')) v.remove_prefix(2);
  Addr out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, 16);
  if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
    throw Error("bad hex address '" + s + "'");
  return out;
}

namespace {

// Address encoded in a disassembler-generated name such as sub_401000.
std::optional<Addr> named_address(std::string_view tok) {
  for (std::string_view prefix : {"sub_", "loc_", "nullsub_", "j_sub_", "off_"}) {
    if (tok.size() > prefix.size() && tok.substr(0, prefix.size()) == prefix) {
      std::string_view rest = tok.substr(prefix.size());
      Addr v = 0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v, 16);
      if (ec == std::errc{} && ptr == rest.data() + rest.size()) return v;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::optional<Addr> constant_value(std::string_view tok) {
  if (auto n = x86::parse_number(tok)) return static_cast<Addr>(*n);
  return named_address(tok);
}

bool is_memory_on_frame(const std::vector<std::string>& operands) {
  int depth = 0;
  for (const auto& t : operands) {
    if (t == "[") {
      ++depth;
    } else if (t == "]") {
      depth = std::max(0, depth - 1);
    } else if (depth > 0) {
      auto r = x86::canonical_register(t);
      if (r && (*r == "rsp" || *r == "rbp")) return true;
    }
  }
  return false;
}

}  // namespace

bool InstructionModel::touches(std::string_view canonical_reg) const {
  return std::find(registers.begin(), registers.end(), canonical_reg) != registers.end();
}

std::optional<Addr> InstructionModel::direct_target() const {
  if (!has(kIsControlFlow) || has(kIsIndirectCall)) return std::nullopt;
  if (!registers.empty()) return std::nullopt;
  for (auto it = operands.rbegin(); it != operands.rend(); ++it) {
    if (*it == "[") return std::nullopt;
    if (auto v = constant_value(*it)) return v;
  }
  return std::nullopt;
}

InstructionModel make_instruction(Addr addr, std::string text, std::vector<Addr> xref_data) {
  InstructionModel insn;
  insn.addr = addr;
  insn.text = std::move(text);
  insn.xref_data = std::move(xref_data);
  auto tokens = tokenize(insn.text);
  std::size_t i = 0;
  while (i < tokens.size() && x86::is_prefix(tokens[i])) ++i;
  if (i < tokens.size()) insn.mnemonic = tokens[i++];
  insn.operands.assign(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.end());
  insn.registers = x86::registers_in(insn.operands);

  if (x86::is_control_flow(insn.mnemonic)) insn.flags |= kIsControlFlow;
  if (x86::is_call(insn.mnemonic)) {
    insn.flags |= kIsCall;
    const bool memory = std::find(insn.operands.begin(), insn.operands.end(), "[") !=
                        insn.operands.end();
    if (memory || !insn.registers.empty()) insn.flags |= kIsIndirectCall;
  }
  if (x86::is_stack_mnemonic(insn.mnemonic) || is_memory_on_frame(insn.operands))
    insn.flags |= kIsStack;
  if (!insn.xref_data.empty()) insn.flags |= kReferencesGlobal;
  return insn;
}

const FunctionModel* ProgramModel::function_containing(Addr a) const {
  auto it = std::upper_bound(functions.begin(), functions.end(), a,
                             [](Addr v, const FunctionModel& f) { return v < f.start_addr; });
  if (it == functions.begin()) return nullptr;
  --it;
  return it->contains(a) ? &*it : nullptr;
}

const FunctionModel* ProgramModel::function_at(Addr start) const {
  const FunctionModel* f = function_containing(start);
  return (f != nullptr && f->start_addr == start) ? f : nullptr;
}

const InstructionModel* ProgramModel::instruction_at(Addr a) const {
  const FunctionModel* f = function_containing(a);
  if (f == nullptr) return nullptr;
  auto it = std::lower_bound(f->instructions.begin(), f->instructions.end(), a,
                             [](const InstructionModel& i, Addr v) { return i.addr < v; });
  return (it != f->instructions.end() && it->addr == a) ? &*it : nullptr;
}

namespace {

struct PendingFunction {
  std::string name;
  std::optional<Addr> end;
  std::vector<InstructionModel> instructions;
};

struct PendingProgram {
  std::map<Addr, PendingFunction> functions;
};

const json& field(const json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing field '") + key + "'");
  return *it;
}

Addr hex_field(const json& obj, const char* key, std::size_t line) {
  const json& v = field(obj, key, line);
  if (!v.is_string()) throw ParseError(line, std::string("field '") + key + "' must be a hex string");
  try {
    return parse_hex(v.get<std::string>());
  } catch (const Error& e) {
    throw ParseError(line, e.what());
  }
}

ProgramModel finish(const std::string& bin, PendingProgram&& pending) {
  ProgramModel p;
  p.binary_id = bin;
  for (auto& [start, pf] : pending.functions) {
    FunctionModel f;
    f.start_addr = start;
    f.name = pf.name.empty() ? "sub_" + hex(start).substr(2) : pf.name;
    f.end_addr = pf.end.value_or(start);
    if (f.end_addr < f.start_addr)
      throw DataError(bin + ": function " + hex(start) + " ends before it starts");
    f.instructions = std::move(pf.instructions);
    std::sort(f.instructions.begin(), f.instructions.end(),
              [](const auto& a, const auto& b) { return a.addr < b.addr; });
    for (std::size_t i = 0; i < f.instructions.size(); ++i) {
      const auto& insn = f.instructions[i];
      if (!f.contains(insn.addr))
        throw DataError(bin + ": instruction " + hex(insn.addr) + " outside function " +
                        hex(start));
      if (i > 0 && f.instructions[i - 1].addr == insn.addr)
        throw DataError(bin + ": duplicate instruction " + hex(insn.addr));
      if (!insn.xref_data.empty()) p.data_refs[insn.addr] = insn.xref_data;
    }
    if (!p.functions.empty() && p.functions.back().end_addr > f.start_addr)
      throw DataError(bin + ": function " + hex(f.start_addr) + " overlaps " +
                      hex(p.functions.back().start_addr));
    p.functions.push_back(std::move(f));
  }
  return mark_address_taken(std::move(p));
}

}  // namespace

std::vector<ProgramModel> parse_programs(std::istream& in) {
  std::vector<std::string> order;
  std::unordered_map<std::string, PendingProgram> programs;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line, "expected a JSON object");
    const json& bin_v = field(obj, "bin", line);
    if (!bin_v.is_string()) throw ParseError(line, "field 'bin' must be a string");
    const auto bin = bin_v.get<std::string>();
    if (!programs.contains(bin)) order.push_back(bin);
    auto& prog = programs[bin];

    if (obj.contains("func_start")) {
      const Addr start = hex_field(obj, "func_start", line);
      auto& pf = prog.functions[start];
      if (obj.contains("name") && obj["name"].is_string()) pf.name = obj["name"].get<std::string>();
      if (obj.contains("func_end")) pf.end = hex_field(obj, "func_end", line);
      continue;
    }

    const Addr func = hex_field(obj, "func", line);
    const Addr func_end = hex_field(obj, "func_end", line);
    const Addr addr = hex_field(obj, "addr", line);
    const json& text_v = field(obj, "text", line);
    if (!text_v.is_string()) throw ParseError(line, "field 'text' must be a string");
    std::vector<Addr> xrefs;
    if (auto it = obj.find("xref_data"); it != obj.end()) {
      if (!it->is_array()) throw ParseError(line, "field 'xref_data' must be an array");
      for (const auto& x : *it) {
        if (!x.is_string()) throw ParseError(line, "xref_data entries must be hex strings");
        try {
          xrefs.push_back(parse_hex(x.get<std::string>()));
        } catch (const Error& e) {
          throw ParseError(line, e.what());
        }
      }
    }
    auto& pf = prog.functions[func];
    if (pf.end && *pf.end != func_end)
      throw ParseError(line, "inconsistent func_end for function " + hex(func));
    pf.end = func_end;
    pf.instructions.push_back(make_instruction(addr, text_v.get<std::string>(), std::move(xrefs)));
  }

  std::vector<ProgramModel> out;
  out.reserve(order.size());
  for (const auto& bin : order) out.push_back(finish(bin, std::move(programs[bin])));
  return out;
}

ProgramModel parse_program(std::istream& in) {
  auto all = parse_programs(in);
  if (all.empty()) return {};
  if (all.size() > 1)
    throw DataError("stream holds " + std::to_string(all.size()) + " binaries, expected one");
  return std::move(all.front());
}

ProgramModel parse_program_string(const std::string& jsonl) {
  std::istringstream in(jsonl);
  return parse_program(in);
}

void write_program(const ProgramModel& p, std::ostream& out) {
  for (const auto& f : p.functions) {
    json header = {{"bin", p.binary_id},
                   {"func_start", hex(f.start_addr)},
                   {"func_end", hex(f.end_addr)},
                   {"name", f.name}};
    out << header.dump() << '\n';
    for (const auto& insn : f.instructions) {
      json xrefs = json::array();
      for (Addr x : insn.xref_data) xrefs.push_back(hex(x));
      json line = {{"bin", p.binary_id},
                   {"func", hex(f.start_addr)},
                   {"func_end", hex(f.end_addr)},
                   {"addr", hex(insn.addr)},
                   {"text", insn.text},
                   {"xref_data", xrefs}};
      out << line.dump() << '\n';
    }
  }
}

DirectPairReport extract_direct_pairs(const ProgramModel& p) {
  DirectPairReport report;
  for (const auto& f : p.functions) {
    for (const auto& insn : f.instructions) {
      if (!insn.has(kIsCall) || insn.has(kIsIndirectCall)) continue;
      auto target = insn.direct_target();
      if (!target || p.function_at(*target) == nullptr) {
        ++report.skipped;
        continue;
      }
      report.pairs.push_back({{p.binary_id, insn.addr, CallKind::kDirect, f.start_addr}, *target});
    }
  }
  return report;
}

ProgramModel mark_address_taken(ProgramModel p) {
  std::set<Addr> starts;
  for (const auto& f : p.functions) starts.insert(f.start_addr);
  std::set<Addr> taken;
  for (const auto& f : p.functions) {
    for (const auto& insn : f.instructions) {
      for (Addr x : insn.xref_data) {
        if (starts.contains(x)) taken.insert(x);
      }
      // Targets of direct transfers are not address materialisations.
      if (insn.has(kIsControlFlow) && !insn.has(kIsIndirectCall)) continue;
      for (const auto& tok : insn.operands) {
        if (auto v = constant_value(tok); v && starts.contains(*v)) taken.insert(*v);
      }
    }
  }
  for (auto& f : p.functions) f.address_taken = taken.contains(f.start_addr);
  return p;
}

namespace {

std::vector<CallsiteRef> callsites(const ProgramModel& p, bool indirect_only) {
  std::vector<CallsiteRef> out;
  for (const auto& f : p.functions) {
    for (const auto& insn : f.instructions) {
      if (!insn.has(kIsCall)) continue;
      const bool indirect = insn.has(kIsIndirectCall);
      if (indirect_only && !indirect) continue;
      out.push_back({p.binary_id, insn.addr, indirect ? CallKind::kIndirect : CallKind::kDirect,
                     f.start_addr});
    }
  }
  return out;
}

}  // namespace

std::vector<CallsiteRef> list_indirect_callsites(const ProgramModel& p) {
  return callsites(p, true);
}

std::vector<CallsiteRef> list_callsites(const ProgramModel& p) { return callsites(p, false); }

std::vector<Addr> address_taken_functions(const ProgramModel& p) {
  std::vector<Addr> out;
  for (const auto& f : p.functions) {
    if (f.address_taken) out.push_back(f.start_addr);
  }
  return out;
}

}  // namespace cgforge
