#include <doctest.h>

#include <set>
#include <sstream>

#include "cgforge/corpus.hpp"
#include "cgforge/manifest.hpp"
#include "cgforge/slicer.hpp"

using namespace cgforge;

TEST_CASE("generated corpora are deterministic and well formed") {
  CorpusConfig cc;
  cc.binaries = 8;
  cc.seed = 13;
  auto a = generate_corpus(cc);
  auto b = generate_corpus(cc);
  CHECK(a.programs == b.programs);
  CHECK(a.icall_truth == b.icall_truth);
  cc.seed = 14;
  CHECK_FALSE(generate_corpus(cc).programs == a.programs);

  REQUIRE(a.programs.size() == 8);
  std::set<std::tuple<std::string, Addr, Addr>> compatible;
  for (const auto& c : a.compatible) compatible.insert({c.binary_id, c.callsite, c.callee});
  std::map<std::string, const ProgramModel*> by_id;
  for (const auto& p : a.programs) {
    by_id[p.binary_id] = &p;
    CHECK(p.functions.size() >= cc.min_functions);
    CHECK(p.functions.size() <= cc.max_functions);
    // the stored model is what parsing its own JSONL gives back
    std::ostringstream out;
    write_program(p, out);
    CHECK(mark_address_taken(parse_program_string(out.str())) == p);
    CHECK_FALSE(list_indirect_callsites(p).empty());
    CHECK_FALSE(address_taken_functions(p).empty());
  }
  for (const auto& t : a.icall_truth) {
    CHECK(t.label == 1);
    const auto* p = by_id.at(t.binary_id);
    const auto* insn = p->instruction_at(t.callsite);
    REQUIRE(insn != nullptr);
    CHECK(insn->has(kIsIndirectCall));
    const auto* callee = p->function_at(t.callee);
    REQUIRE(callee != nullptr);
    CHECK(callee->address_taken);
    CHECK(compatible.contains({t.binary_id, t.callsite, t.callee}));
    // slicing works for every labelled pair
    CHECK_FALSE(slice_callsite(*p, {t.binary_id, t.callsite, CallKind::kIndirect, 0}).tokens.empty());
    CHECK_FALSE(slice_callee(*p, t.callee).tokens.empty());
  }
}

TEST_CASE("run manifests") {
  RunManifest m;
  m.command = "slice";
  m.config_hash = "c0ffee";
  m.seeds["slice"] = 1;
  auto h = m.hash();
  CHECK(h.size() == 16);
  m.artifacts.push_back("slices.jsonl");
  CHECK(m.hash() == h);  // artifacts do not feed the hash
  m.seeds["slice"] = 2;
  CHECK(m.hash() != h);
  auto back = RunManifest::from_json(m.to_json());
  CHECK(back.hash() == m.hash());
  CHECK(m.to_json()["manifest_hash"] == m.hash());
  CHECK(text_digest("abc") == text_digest("abc"));
  CHECK(text_digest("abc") != text_digest("abd"));
}
