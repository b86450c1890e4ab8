#include "cgforge/x86.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <string>
#include <unordered_map>

namespace cgforge::x86 {

namespace {

std::unordered_map<std::string, std::string> build_register_table() {
  std::unordered_map<std::string, std::string> t;
  const std::array<std::array<const char*, 6>, 8> legacy = {{
      {"rax", "eax", "ax", "al", "ah", nullptr},
      {"rbx", "ebx", "bx", "bl", "bh", nullptr},
      {"rcx", "ecx", "cx", "cl", "ch", nullptr},
      {"rdx", "edx", "dx", "dl", "dh", nullptr},
      {"rsi", "esi", "si", "sil", nullptr, nullptr},
      {"rdi", "edi", "di", "dil", nullptr, nullptr},
      {"rbp", "ebp", "bp", "bpl", nullptr, nullptr},
      {"rsp", "esp", "sp", "spl", nullptr, nullptr},
  }};
  for (const auto& row : legacy) {
    for (const char* name : row) {
      if (name != nullptr) t.emplace(name, row[0]);
    }
  }
  for (int i = 8; i < 16; ++i) {
    const std::string base = "r" + std::to_string(i);
    for (const char* suffix : {"", "d", "w", "b", "l"}) t.emplace(base + suffix, base);
  }
  for (int i = 0; i < 32; ++i) {
    const std::string xmm = "xmm" + std::to_string(i);
    t.emplace(xmm, xmm);
    t.emplace("ymm" + std::to_string(i), xmm);
    t.emplace("zmm" + std::to_string(i), xmm);
  }
  for (int i = 0; i < 8; ++i) {
    const std::string st = "st" + std::to_string(i);
    t.emplace(st, st);
  }
  t.emplace("st", "st0");
  t.emplace("rip", "rip");
  t.emplace("eip", "rip");
  return t;
}

const std::unordered_map<std::string, std::string>& register_table() {
  static const auto table = build_register_table();
  return table;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::optional<std::string_view> canonical_register(std::string_view token) {
  const auto& table = register_table();
  auto it = table.find(lower(token));
  if (it == table.end()) return std::nullopt;
  return std::string_view(it->second);
}

std::vector<std::string> registers_in(std::span<const std::string> tokens) {
  std::vector<std::string> regs;
  auto add = [&regs](std::string_view r) {
    for (const auto& have : regs) {
      if (have == r) return;
    }
    regs.emplace_back(r);
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (lower(tokens[i]) == "st" && i + 3 < tokens.size() &&
        tokens[i + 1] == "(" && tokens[i + 3] == ")") {
      auto n = parse_number(tokens[i + 2]);
      if (n && *n < 8) {
        add("st" + std::to_string(*n));
        i += 3;
        continue;
      }
    }
    if (auto r = canonical_register(tokens[i])) add(*r);
  }
  return regs;
}

bool is_prefix(std::string_view token) {
  static const std::array<std::string_view, 10> prefixes = {
      "rep", "repe", "repz", "repne", "repnz", "lock", "bnd", "notrack", "data16", "addr32"};
  for (auto p : prefixes) {
    if (token == p) return true;
  }
  return false;
}

bool is_call(std::string_view m) { return m == "call" || m == "callq"; }

bool is_control_flow(std::string_view m) {
  if (is_call(m)) return true;
  if (m == "ret" || m == "retn" || m == "retf" || m == "retq" || m == "iret" ||
      m == "iretq")
    return true;
  if (m == "loop" || m == "loope" || m == "loopne" || m == "loopz" || m == "loopnz")
    return true;
  // jmp, jmpq, and every conditional jump (je, jne, jrcxz, ...)
  return !m.empty() && m.front() == 'j';
}

bool is_stack_mnemonic(std::string_view m) {
  return m == "push" || m == "pop" || m == "leave" || m == "enter" || m == "pushq" ||
         m == "popq" || m == "pushfq" || m == "popfq";
}

std::optional<unsigned long long> parse_number(std::string_view token) {
  if (token.empty() || !std::isdigit(static_cast<unsigned char>(token.front())))
    return std::nullopt;
  unsigned long long value = 0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  int base = 10;
  if (token.size() > 2 && token[0] == '0' && (token[1] == 'x' || token[1] == 'X')) {
    first += 2;
    base = 16;
  } else if (token.back() == 'h' || token.back() == 'H') {
    last -= 1;
    base = 16;
  }
  if (first == last) return std::nullopt;
  auto [ptr, ec] = std::from_chars(first, last, value, base);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return value;
}

}  // namespace cgforge::x86
