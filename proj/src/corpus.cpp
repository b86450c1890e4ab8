#include "cgforge/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "cgforge/error.hpp"
#include "cgforge/rng.hpp"

namespace cgforge {

namespace {

constexpr Addr kCodeBase = 0x401000;
constexpr Addr kSlot = 0x400;
constexpr Addr kDataBase = 0x601000;

const char* const kArg64[] = {"rdi", "rsi", "rdx", "rcx", "r8", "r9"};
const char* const kArg32[] = {"edi", "esi", "edx", "ecx", "r8d", "r9d"};
const char* const kSaved64[] = {"rbx", "r12", "r13", "r14", "r15"};
const char* const kSaved32[] = {"ebx", "r12d", "r13d", "r14d", "r15d"};
const char* const kWords[] = {"Hello", "Usage", "Error", "Format", "Config", "Path", "Done", "Value"};

std::string fmt(const char* f, auto... args) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string hexnum(std::uint64_t v) { return fmt("0x%llx", static_cast<unsigned long long>(v)); }
std::string ida(const char* prefix, Addr a) {
  return fmt("%s_%llX", prefix, static_cast<unsigned long long>(a));
}

struct CallPlan {
  bool indirect = false;
  std::size_t target = 0;  // direct calls only
  Signature sig;
};

struct FunctionPlan {
  Addr start = 0;
  Signature sig;
  bool address_taken = false;
  std::vector<CallPlan> calls;
  std::vector<std::size_t> materialize;  // functions whose address this one takes
};

class Emitter {
 public:
  Emitter(Rng& rng, Addr start, bool frame, bool reverse_args)
      : rng_(rng), pc_(start), start_(start), frame_(frame), reverse_args_(reverse_args) {}

  void op(std::string text, std::vector<Addr> xref = {}) {
    fn_.instructions.push_back(make_instruction(pc_, std::move(text), std::move(xref)));
    pc_ += 2 + rng_.below(6);
  }

  Addr data() { return kDataBase + 8 * rng_.below(1024); }
  // Frame slots in the disassembler's var_N form.
  std::string slot() { return fmt("[rbp+var_%llX]", static_cast<unsigned long long>(8 * (1 + rng_.below(8)))); }
  std::string saved64() { return rng_.pick(std::vector<std::string>(std::begin(kSaved64), std::end(kSaved64))); }
  std::string saved32() { return rng_.pick(std::vector<std::string>(std::begin(kSaved32), std::end(kSaved32))); }
  std::string label() { return ida("loc", start_ + 0x10 * (1 + rng_.below(0x30))); }
  bool frame() const { return frame_; }
  bool reverse_args() const { return reverse_args_; }
  Rng& rng() { return rng_; }

  void filler() {
    switch (rng_.below(frame_ ? 6 : 5)) {
      case 0: op("add " + saved64() + ", " + hexnum(1 + rng_.below(32))); break;
      case 1: op("imul " + saved32() + ", " + saved32()); break;
      case 2: {
        const Addr d = data();
        op("mov " + saved32() + ", dword ptr [rip+" + hexnum(d - pc_) + "]", {d});
        break;
      }
      case 3:
        op("cmp " + saved64() + ", " + hexnum(rng_.below(16)));
        op(std::string(rng_.bernoulli(0.5) ? "jle " : "jne ") + label());
        break;
      case 4: op("mov r10, qword ptr [" + saved64() + "+" + hexnum(8 * rng_.below(8)) + "]"); break;
      default: op("mov r11, " + slot()); break;
    }
  }

  // A body instruction that survives slicing without touching argument or
  // return registers.
  void body_load() {
    if (frame_ && rng_.bernoulli(0.5)) {
      op("mov r11, " + slot());
      return;
    }
    const Addr d = data();
    op("mov " + saved32() + ", dword ptr [rip+" + hexnum(d - pc_) + "]", {d});
  }

  FunctionModel finish() {
    fn_.start_addr = start_;
    fn_.end_addr = pc_;
    fn_.name = ida("sub", start_);
    return std::move(fn_);
  }

 private:
  Rng& rng_;
  Addr pc_;
  Addr start_;
  bool frame_;
  bool reverse_args_;
  FunctionModel fn_;
};

void emit_prologue(Emitter& e, const Signature& sig) {
  Rng& rng = e.rng();
  if (e.frame()) {
    e.op("push rbp");
    e.op("mov rbp, rsp");
    e.op("sub rsp, " + hexnum(0x10 * (1 + rng.below(6))));
    for (int i = 0; i < sig.args; ++i) {
      const std::string slot = fmt("[rbp+var_%X]", 8 * (i + 1) + 0x10);
      e.op("mov " + slot + ", " + (rng.bernoulli(0.5) ? kArg64[i] : kArg32[i]));
    }
    return;
  }
  const auto pushes = rng.below(3);
  for (std::size_t i = 0; i < pushes; ++i) e.op(std::string("push ") + kSaved64[i]);
  std::vector<int> order(static_cast<std::size_t>(sig.args));
  for (int i = 0; i < sig.args; ++i) order[static_cast<std::size_t>(i)] = i;
  if (order.size() > 2 && rng.bernoulli(0.3)) std::swap(order[1], order[2]);
  for (int i : order) {
    switch (rng.below(8)) {
      case 0: case 1: case 2: e.op("mov " + e.saved64() + ", " + kArg64[i]); break;
      case 3: case 4: e.op("mov " + e.saved32() + ", " + kArg32[i]); break;
      case 5: e.op(std::string("test ") + kArg64[i] + ", " + kArg64[i]); break;
      case 6: e.op(std::string("cmp ") + kArg32[i] + ", " + hexnum(rng.below(8))); break;
      default: e.op("lea " + e.saved64() + ", [" + kArg64[i] + "+" + hexnum(8 * (1 + rng.below(4))) + "]"); break;
    }
  }
}

void emit_epilogue(Emitter& e, const Signature& sig) {
  Rng& rng = e.rng();
  if (sig.returns) {
    switch (rng.below(4)) {
      case 0: e.op("xor eax, eax"); break;
      case 1: e.op("mov eax, " + hexnum(rng.below(4))); break;
      case 2: e.op(e.frame() ? "mov eax, " + e.slot() : "mov eax, " + e.saved32()); break;
      default: e.op(e.frame() ? "mov rax, " + e.slot() : "mov rax, " + e.saved64()); break;
    }
  }
  if (e.frame()) {
    if (rng.bernoulli(0.5)) {
      e.op("leave");
    } else {
      e.op("mov rsp, rbp");
      e.op("pop rbp");
    }
  } else {
    e.op("pop rbx");
  }
  e.op("ret");
}

void emit_materialize(Emitter& e, Addr target) {
  Rng& rng = e.rng();
  switch (rng.below(3)) {
    case 0: {
      e.op("lea rax, " + ida("sub", target));
      const Addr d = e.data();
      e.op("mov cs:" + ida("off", d) + ", rax", {d});
      break;
    }
    case 1: e.op("mov qword ptr [" + e.saved64() + "+" + hexnum(8 * rng.below(6)) + "], offset " + ida("sub", target)); break;
    default:
      e.op("lea r10, " + ida("sub", target));
      e.op(e.frame() ? "mov " + e.slot() + ", r10" : "mov [" + e.saved64() + "], r10");
      break;
  }
}

void emit_arg(Emitter& e, int i) {
  Rng& rng = e.rng();
  const std::string r64 = kArg64[i];
  const std::string r32 = kArg32[i];
  // Mostly single-token sources; memory operands are the minority.
  const std::size_t choice = rng.below(10);
  if (choice < 3) {
    e.op("mov " + r32 + ", " + hexnum(rng.below(64)));
  } else if (choice < 6) {
    e.op(rng.bernoulli(0.5) ? "mov " + r64 + ", " + e.saved64() : "mov " + r32 + ", " + e.saved32());
  } else if (choice == 6) {
    e.op("xor " + r32 + ", " + r32);
  } else if (choice == 7) {
    const Addr d = e.data();
    e.op("lea " + r64 + ", a" + kWords[rng.below(8)] + kWords[rng.below(8)], {d});
  } else if (e.frame()) {
    e.op(choice == 8 ? "mov " + r64 + ", " + e.slot() : "lea " + r64 + ", " + e.slot());
  } else {
    e.op("lea " + r64 + ", [" + e.saved64() + "+" + hexnum(8 * rng.below(8)) + "]");
  }
}

void emit_call(Emitter& e, const CallPlan& c, const std::vector<FunctionPlan>& plans) {
  Rng& rng = e.rng();
  // Argument evaluation order is a per-compiler convention.
  std::vector<int> order;
  for (int i = 0; i < c.sig.args; ++i) order.push_back(i);
  if (e.reverse_args()) std::reverse(order.begin(), order.end());

  std::string call;
  std::vector<std::string> load;
  std::vector<Addr> load_xref;
  if (!c.indirect) {
    call = "call " + ida("sub", plans[c.target].start);
  } else {
    switch (rng.below(4)) {
      case 0: {
        const Addr d = e.data();
        load.push_back("mov rax, cs:" + ida("off", d));
        load_xref = {d};
        call = "call rax";
        break;
      }
      case 1:
        load.push_back(e.frame() ? "mov rax, " + e.slot() : "mov rax, " + e.saved64());
        call = "call rax";
        break;
      case 2:
        load.push_back("mov r11, qword ptr [" + e.saved64() + "+" + hexnum(8 * rng.below(8)) + "]");
        call = "call r11";
        break;
      default: call = "call qword ptr [" + e.saved64() + "+" + hexnum(8 * rng.below(8)) + "]"; break;
    }
  }
  // Compilers usually load the target before materialising arguments.
  const bool load_first = rng.bernoulli(0.85);
  if (load_first) for (auto& l : load) e.op(l, load_xref);
  for (int i : order) emit_arg(e, i);
  if (!load_first) for (auto& l : load) e.op(l, load_xref);
  e.op(call);

  if (c.sig.returns && rng.bernoulli(0.9)) {
    switch (rng.below(4)) {
      case 0:
        e.op("test eax, eax");
        e.op(std::string(rng.bernoulli(0.5) ? "jz " : "js ") + e.label());
        break;
      case 1: e.op(e.frame() ? "mov " + e.slot() + ", eax" : "mov " + e.saved32() + ", eax"); break;
      case 2: e.op(e.frame() ? "mov " + e.slot() + ", rax" : "mov " + e.saved64() + ", rax"); break;
      default:
        e.op("cmp eax, " + hexnum(rng.below(4)));
        e.op("jne " + e.label());
        break;
    }
  }
}

Signature random_signature(Rng& rng) {
  Signature s;
  s.args = static_cast<int>(rng.below(7));
  s.returns = rng.bernoulli(0.5);
  return s;
}

}  // namespace

SyntheticCorpus generate_corpus(const CorpusConfig& cfg) {
  if (cfg.binaries < 1) throw Error("corpus needs at least one binary");
  if (cfg.min_functions < 2 || cfg.max_functions < cfg.min_functions)
    throw Error("function count range must satisfy 2 <= min <= max");
  if (cfg.max_callsites_per_function < 1) throw Error("max callsites per function must be >= 1");

  SyntheticCorpus out;
  Rng rng(sub_seed(cfg.seed, "corpus"));
  for (std::size_t b = 0; b < cfg.binaries; ++b) {
    const std::string bin = fmt("bin%03zu", b);
    const std::size_t n = cfg.min_functions + rng.below(cfg.max_functions - cfg.min_functions + 1);
    const bool frame = rng.bernoulli(0.5);
    const bool reverse_args = rng.bernoulli(0.5);

    std::vector<FunctionPlan> plans(n);
    std::vector<std::size_t> taken;
    for (std::size_t i = 0; i < n; ++i) {
      plans[i].start = kCodeBase + kSlot * i;
      plans[i].sig = random_signature(rng);
      plans[i].address_taken = rng.bernoulli(cfg.address_taken_fraction);
      if (plans[i].address_taken) taken.push_back(i);
    }
    if (taken.empty()) {
      plans[0].address_taken = true;
      taken.push_back(0);
    }
    for (std::size_t t : taken) plans[rng.below(n)].materialize.push_back(t);
    for (std::size_t i = 0; i < n; ++i) {
      const auto calls = rng.below(static_cast<std::uint64_t>(cfg.max_callsites_per_function) + 1);
      for (std::size_t c = 0; c < calls; ++c) {
        CallPlan cp;
        cp.indirect = rng.bernoulli(cfg.indirect_fraction);
        if (cp.indirect) {
          cp.sig = plans[rng.pick(taken)].sig;
        } else {
          cp.target = rng.below(n - 1);
          if (cp.target >= i) ++cp.target;
          cp.sig = plans[cp.target].sig;
        }
        plans[i].calls.push_back(cp);
      }
    }

    ProgramModel p;
    p.binary_id = bin;
    for (std::size_t i = 0; i < n; ++i) {
      Emitter e(rng, plans[i].start, frame, reverse_args);
      emit_prologue(e, plans[i].sig);
      for (auto k = 1 + rng.below(2); k > 0; --k) e.body_load();
      for (const auto& c : plans[i].calls) {
        for (auto k = 1 + rng.below(2); k > 0; --k) e.filler();
        emit_call(e, c, plans);
      }
      for (std::size_t t : plans[i].materialize) emit_materialize(e, plans[t].start);
      if (rng.bernoulli(0.5)) e.filler();
      emit_epilogue(e, plans[i].sig);
      auto fn = e.finish();
      if (fn.end_addr > plans[i].start + kSlot) throw Error("generated function overflows its slot");
      for (const auto& insn : fn.instructions) {
        if (!insn.xref_data.empty()) p.data_refs[insn.addr] = insn.xref_data;
      }
      p.functions.push_back(std::move(fn));
    }
    p = mark_address_taken(std::move(p));
    for (std::size_t i = 0; i < n; ++i) {
      if (p.functions[i].address_taken != plans[i].address_taken)
        throw Error("generator bug: address-taken flag disagrees for " + p.functions[i].name);
    }

    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = 0;
      for (const auto& insn : p.functions[i].instructions) {
        if (!insn.has(kIsCall)) continue;
        const auto& cp = plans[i].calls.at(c++);
        for (std::size_t j = 0; j < n; ++j) {
          if (!(plans[j].sig == cp.sig)) continue;
          out.compatible.push_back({bin, insn.addr, plans[j].start, 1});
          if (cp.indirect && plans[j].address_taken) out.icall_truth.push_back({bin, insn.addr, plans[j].start, 1});
        }
      }
      if (c != plans[i].calls.size()) throw Error("generator bug: callsite count mismatch");
    }
    out.programs.push_back(std::move(p));
  }
  return out;
}

}  // namespace cgforge
