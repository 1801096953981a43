#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "zengram/analysis.hpp"
#include "zengram/checkpoint.hpp"
#include "zengram/lexicon.hpp"
#include "zengram/matcher.hpp"

namespace py = pybind11;
using namespace zengram;

namespace {

std::vector<Sentence> to_sentences(const std::vector<std::u32string>& lines) {
  std::vector<Sentence> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back({l, 0});
  return out;
}

py::tuple match_tuple(const NgramMatch& m) { return py::make_tuple(m.ngram_id, m.start, m.len); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "n-gram lexicon, matching and model inspection";

  py::register_exception<LexiconError>(m, "LexiconError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
  py::register_exception<AnalysisError>(m, "AnalysisError", PyExc_LookupError);

  py::class_<NgramLexicon>(m, "Lexicon")
      .def("__len__", &NgramLexicon::size)
      .def("__contains__", [](const NgramLexicon& l, const std::u32string& g) { return l.find(g).has_value(); })
      .def("find", [](const NgramLexicon& l, const std::u32string& g) { return l.find(g); })
      .def("entry",
           [](const NgramLexicon& l, NgramId id) {
             if (id < 0 || static_cast<std::size_t>(id) >= l.size()) throw py::index_error("no such n-gram id");
             const auto& e = l.entry(id);
             return py::make_tuple(e.ngram, e.freq, e.pmi);
           })
      .def("entries",
           [](const NgramLexicon& l) {
             py::list out;
             for (const auto& e : l.entries()) out.append(py::make_tuple(e.ngram, e.freq, e.pmi));
             return out;
           })
      .def_property_readonly("n_max", &NgramLexicon::n_max)
      .def_property_readonly("pmi_threshold", &NgramLexicon::pmi_threshold)
      .def_property_readonly("freq_threshold", &NgramLexicon::freq_threshold)
      .def("save", &NgramLexicon::save)
      .def_static("load", &NgramLexicon::load);

  m.def(
      "build_lexicon",
      [](const std::vector<std::u32string>& sentences, std::size_t n_max, double pmi_thr, std::uint64_t freq_thr) {
        const auto s = to_sentences(sentences);
        return extract_lexicon(count_ngrams(s, n_max), pmi_thr, freq_thr);
      },
      py::arg("sentences"), py::arg("n_max") = 8, py::arg("pmi_thr") = 3.0, py::arg("freq_thr") = 15,
      "Lexicon of n-grams passing the PMI and frequency thresholds.");

  m.def(
      "pmi",
      [](const std::u32string& ngram, const std::vector<std::u32string>& sentences) {
        const auto s = to_sentences(sentences);
        return pmi_score(ngram, count_ngrams(s, ngram.size()));
      },
      py::arg("ngram"), py::arg("sentences"));

  py::class_<Matcher>(m, "Matcher")
      .def(py::init<const NgramLexicon&>(), py::arg("lexicon"))
      .def(
          "find_all",
          [](const Matcher& mt, const std::u32string& text) {
            py::list out;
            for (const auto& x : mt.find_all(text)) out.append(match_tuple(x));
            return out;
          },
          "(ngram_id, start, length) for every occurrence.");

  m.def(
      "association_weights",
      [](const NgramLexicon& lex, const std::u32string& text) {
        const Matcher mt(lex);
        const auto a = association_map(mt.find_all(text), lex, text.size());
        py::list matches, positions;
        for (const auto& x : a.matches) matches.append(match_tuple(x));
        for (const auto& row : a.positions) {
          py::list r;
          for (const auto& e : row) r.append(py::make_tuple(e.match, e.weight));
          positions.append(r);
        }
        return py::make_tuple(matches, positions);
      },
      py::arg("lexicon"), py::arg("text"));

  m.def(
      "segment",
      [](const NgramLexicon& lex, const std::u32string& text) {
        py::list out;
        for (const auto& s : segment(text, lex)) out.append(py::make_tuple(s.start, s.len));
        return out;
      },
      py::arg("lexicon"), py::arg("text"), "Forward maximum matching as (start, length) spans.");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint)
      .def_readonly("step", &Checkpoint::step)
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config.to_text(); })
      .def_property_readonly("num_parameters", [](const Checkpoint& c) { return c.params.num_scalars(); })
      .def("lexicon", &Checkpoint::lexicon);

  m.def(
      "neighbors",
      [](const Checkpoint& model, const std::vector<std::u32string>& sentences, const std::u32string& query,
         std::size_t k, std::size_t min_occ) {
        const auto s = to_sentences(sentences);
        const auto table = ngram_context_vectors(model, s, min_occ);
        py::list out;
        for (const auto& n : nearest_neighbors(table, query, k, model.lexicon()))
          out.append(py::make_tuple(n.ngram, n.similarity));
        return out;
      },
      py::arg("model"), py::arg("sentences"), py::arg("query"), py::arg("k") = 10, py::arg("min_occ") = 2);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"zengram"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a zengram command; returns (exit code, stdout, stderr).");
}
