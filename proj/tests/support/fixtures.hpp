#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgforge/ingest.hpp"

namespace fixture {

using cgforge::Addr;

struct I {
  Addr addr;
  std::string text;
  std::vector<Addr> xrefs = {};
};

struct F {
  Addr start;
  Addr end;
  std::vector<I> body;
  std::string name = {};
};

// Disassembly JSONL for the given functions, as an importer would write it.
inline std::string jsonl(const std::string& bin, const std::vector<F>& fns) {
  std::ostringstream s;
  for (const auto& f : fns) {
    nlohmann::json h = {{"bin", bin}, {"func_start", cgforge::hex(f.start)}, {"func_end", cgforge::hex(f.end)}};
    h["name"] = f.name.empty() ? "sub_" + cgforge::hex(f.start).substr(2) : f.name;
    s << h.dump() << "\n";
    for (const auto& i : f.body) {
      nlohmann::json x = nlohmann::json::array();
      for (Addr a : i.xrefs) x.push_back(cgforge::hex(a));
      nlohmann::json j = {{"bin", bin},          {"func", cgforge::hex(f.start)}, {"func_end", cgforge::hex(f.end)},
                          {"addr", cgforge::hex(i.addr)}, {"text", i.text},   {"xref_data", x}};
      s << j.dump() << "\n";
    }
  }
  return s.str();
}

inline cgforge::ProgramModel program(const std::string& bin, const std::vector<F>& fns) {
  return cgforge::parse_program_string(jsonl(bin, fns));
}

}  // namespace fixture
