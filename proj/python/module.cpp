#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cgforge/corpus.hpp"
#include "cgforge/error.hpp"
#include "cgforge/pipeline.hpp"

namespace py = pybind11;
using namespace cgforge;

namespace {

py::dict slice_dict(const Slice& s) {
  py::dict d;
  d["origin"] = s.origin == SliceOrigin::kCallsite ? "callsite" : "callee";
  d["bin"] = s.binary_id;
  d["addr"] = s.addr;
  d["kept_addrs"] = s.kept_addrs;
  d["tokens"] = s.tokens;
  return d;
}

std::vector<ScoredPair> as_scored(const std::vector<double>& d, const std::vector<int>& labels,
                                  const std::vector<Addr>& callsites) {
  if (d.size() != labels.size()) throw Error("scores and labels differ in length");
  if (!callsites.empty() && callsites.size() != d.size()) throw Error("scores and callsites differ in length");
  std::vector<ScoredPair> out;
  for (std::size_t i = 0; i < d.size(); ++i)
    out.push_back({{"", callsites.empty() ? i : callsites[i], 0, labels[i]}, d[i], false});
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Indirect call target recovery for x86-64 binaries";

  // translators run newest first, so the base class goes in first
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<MismatchError>(m, "MismatchError", base.ptr());

  m.def("tokenize", &tokenize, py::arg("text"));
  m.def(
      "symbolize",
      [](const std::vector<std::string>& tokens, const std::string& policy, unsigned modulus) {
        auto p = parse_policy(policy, modulus);
        p.validate();
        return symbolize_instruction(tokens, p);
      },
      py::arg("tokens"), py::arg("policy") = "loose", py::arg("modulus") = 10);

  py::class_<ProgramModel>(m, "Program")
      .def_static(
          "from_jsonl", [](const std::string& text) { return mark_address_taken(parse_program_string(text)); },
          py::arg("text"))
      .def("to_jsonl",
           [](const ProgramModel& p) {
             std::ostringstream out;
             write_program(p, out);
             return out.str();
           })
      .def_readonly("binary_id", &ProgramModel::binary_id)
      .def_property_readonly("functions",
                             [](const ProgramModel& p) {
                               std::vector<Addr> v;
                               for (const auto& f : p.functions) v.push_back(f.start_addr);
                               return v;
                             })
      .def("address_taken", &address_taken_functions)
      .def("indirect_callsites",
           [](const ProgramModel& p) {
             std::vector<Addr> v;
             for (const auto& c : list_indirect_callsites(p)) v.push_back(c.addr);
             return v;
           })
      .def("direct_pairs",
           [](const ProgramModel& p) {
             std::vector<std::pair<Addr, Addr>> v;
             for (const auto& d : extract_direct_pairs(p).pairs) v.emplace_back(d.callsite.addr, d.callee);
             return v;
           })
      .def(
          "slice_callsite",
          [](const ProgramModel& p, Addr cs) {
            const auto* f = p.function_containing(cs);
            return slice_dict(slice_callsite(p, {p.binary_id, cs, CallKind::kIndirect, f ? f->start_addr : 0}));
          },
          py::arg("addr"))
      .def(
          "slice_callee", [](const ProgramModel& p, Addr a) { return slice_dict(slice_callee(p, a)); },
          py::arg("addr"));

  m.def(
      "parse_programs",
      [](const std::string& text) {
        std::istringstream in(text);
        auto programs = parse_programs(in);
        for (auto& p : programs) p = mark_address_taken(std::move(p));
        return programs;
      },
      py::arg("text"), "Every binary in a disassembly JSONL stream.");

  m.def(
      "generate_corpus",
      [](std::size_t binaries, std::uint64_t seed, int max_callsites) {
        CorpusConfig cc;
        cc.binaries = binaries;
        cc.seed = seed;
        cc.max_callsites_per_function = max_callsites;
        auto sc = generate_corpus(cc);
        std::ostringstream corpus, truth;
        for (const auto& p : sc.programs) write_program(p, corpus);
        write_pairs(sc.icall_truth, truth);
        return py::make_tuple(corpus.str(), truth.str());
      },
      py::arg("binaries") = 10, py::arg("seed") = 7, py::arg("max_callsites") = 3,
      "Synthetic corpus as (disassembly JSONL, indirect-call truth JSONL).");

  m.def(
      "contrastive_loss",
      [](const std::vector<double>& d, const std::vector<int>& y) { return contrastive_loss(d, y); }, py::arg("d"),
      py::arg("labels"));

  m.def(
      "evaluate",
      [](const std::vector<double>& d, const std::vector<int>& labels, double threshold,
         const std::vector<Addr>& callsites) {
        const auto scored = as_scored(d, labels, callsites);
        auto r = evaluate_scores(scored, threshold);
        if (!callsites.empty()) r.aict = compute_aict(scored, threshold);
        return r.to_json().dump();
      },
      py::arg("d"), py::arg("labels"), py::arg("threshold") = 0.5, py::arg("callsites") = std::vector<Addr>{},
      "Metrics report as JSON text. AICT needs the callsite of each score.");

  m.def("desk_config", [] { return PipelineConfig::desk().to_json().dump(); });

  py::class_<Learner>(m, "Learner")
      .def_static("load", &load_learner, py::arg("directory"))
      .def_static(
          "pretrain",
          [](const std::vector<ProgramModel>& programs, const std::string& config_json) {
            auto cfg = PipelineConfig::from_json(nlohmann::json::parse(config_json));
            cfg.finalize();
            Corpus corpus(programs);
            const auto ids = corpus.binary_ids();
            auto pairs = assemble_pairs(corpus, direct_call_positives(corpus), 1.0, sub_seed(cfg.seed, "negatives"));
            py::gil_scoped_release release;
            return run_pretrain(corpus, ids, pairs, cfg);
          },
          py::arg("programs"), py::arg("config"),
          "Train on the direct calls of `programs` with one sampled negative per positive.")
      .def(
          "save", [](const Learner& l, const std::filesystem::path& dir) { save_learner(l, dir); },
          py::arg("directory"))
      .def("vocab_hash", [](const Learner& l) { return l.embedder.vocab.hash(); })
      .def(
          "score",
          [](Learner& l, const ProgramModel& p, const std::vector<std::pair<Addr, Addr>>& pairs, double threshold) {
            PipelineConfig cfg;
            cfg.policy = l.embedder.vocab.policy();
            cfg.embed = l.embedder.config;
            cfg.slice_len = l.matcher.arch.input_dim / l.embedder.dim();
            cfg.arch = l.matcher.arch;
            cfg.train = l.train;
            cfg.train.threshold = threshold;
            std::vector<LabeledPair> lp;
            for (auto [cs, callee] : pairs) lp.push_back({p.binary_id, cs, callee, -1});
            Corpus c(std::vector<ProgramModel>{p});
            std::vector<double> out;
            for (const auto& s : score_pairs(l, c, lp, cfg)) out.push_back(s.d);
            return out;
          },
          py::arg("program"), py::arg("pairs"), py::arg("threshold") = 0.5);
}
