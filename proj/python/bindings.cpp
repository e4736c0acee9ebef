#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "senti/cli.hpp"
#include "senti/corpus.hpp"
#include "senti/ensemble.hpp"
#include "senti/nbsvm.hpp"
#include "senti/ngram_lm.hpp"
#include "senti/pvec.hpp"

namespace py = pybind11;
using namespace senti;

namespace {

using TokenDoc = std::pair<std::vector<std::string>, std::string>;  // (tokens, label)

std::vector<Document> to_documents(const std::vector<TokenDoc>& docs) {
  std::vector<Document> out;
  out.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    Document d;
    d.id = "doc" + std::to_string(i);
    d.tokens = docs[i].first;
    d.label = parse_label(docs[i].second);
    out.push_back(std::move(d));
  }
  return out;
}

KneserNeyModel train_kneser_ney(const std::vector<std::vector<std::string>>& docs, std::size_t order,
                                std::uint64_t min_count) {
  std::vector<Document> ds;
  for (const auto& t : docs) {
    Document d;
    d.tokens = t;
    ds.push_back(std::move(d));
  }
  auto vocab = std::make_shared<const Vocabulary>(build_vocab(ds, min_count));
  return estimate_kneser_ney(count_ngrams(ds, order, *vocab), vocab);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the senti sentiment toolkit.";

  py::register_exception<CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<NgramError>(m, "NgramError", PyExc_ValueError);
  py::register_exception<NbsvmError>(m, "NbsvmError", PyExc_ValueError);
  py::register_exception<EnsembleError>(m, "EnsembleError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));

  py::class_<KneserNeyModel>(m, "KneserNeyModel")
      .def_property_readonly("order", &KneserNeyModel::order)
      .def_property_readonly("vocab_size", [](const KneserNeyModel& k) { return k.vocab().size(); })
      .def("doc_logprob", [](const KneserNeyModel& k, const std::vector<std::string>& t) { return k.doc_logprob(t); })
      .def(
          "log_prob",
          [](const KneserNeyModel& k, const std::vector<std::string>& context, const std::string& word) {
            auto ids = k.vocab().encode(context);
            return k.log_prob(ids, k.vocab().index(word));
          },
          py::arg("context"), py::arg("word"))
      .def("to_arpa", [](const KneserNeyModel& k) { return export_arpa(k); });
  m.def("train_kneser_ney", &train_kneser_ney, py::arg("docs"), py::arg("order") = 5, py::arg("min_count") = 1);
  m.def("load_arpa", [](const std::string& text) { return import_arpa(text); }, py::arg("text"));

  m.def("extract_grams", [](const std::vector<std::string>& t, int n) { return extract_grams(t, n); },
        py::arg("tokens"), py::arg("n_max"));

  py::class_<NbsvmModel>(m, "NbsvmModel")
      .def("p_pos", [](const NbsvmModel& model, const std::vector<std::string>& t) { return model.p_pos(t); })
      .def_property_readonly("n_features", [](const NbsvmModel& model) { return model.space.size(); })
      .def(
          "ratio",
          [](const NbsvmModel& model, const std::string& gram) -> py::object {
            std::vector<std::string> toks;
            std::string cur;
            for (char c : gram + "_") {
              if (c == '_') {
                toks.push_back(cur);
                cur.clear();
              } else {
                cur += c;
              }
            }
            auto idx = model.space.find(toks);
            if (!idx) return py::none();
            return py::float_(model.ratio.r[*idx]);
          },
          py::arg("gram"));
  m.def(
      "train_nbsvm",
      [](const std::vector<TokenDoc>& docs, int n_max, double alpha, double l2) {
        NbsvmConfig cfg;
        cfg.n_max = n_max;
        cfg.alpha = alpha;
        cfg.linear.l2 = l2;
        return train_nbsvm(to_documents(docs), cfg);
      },
      py::arg("docs"), py::arg("n_max") = 3, py::arg("alpha") = 1.0, py::arg("l2") = -1.0);

  m.def(
      "build_huffman",
      [](const std::vector<std::uint64_t>& freqs) {
        auto t = build_huffman(freqs);
        return py::make_tuple(t.codes, t.points);
      },
      py::arg("frequencies"));

  m.def("calibrate_generative", &calibrate_generative, py::arg("log_p_pos"), py::arg("log_p_neg"),
        py::arg("log_prior_pos"), py::arg("log_prior_neg"), py::arg("doc_length"), py::arg("temperature") = 1.0);
  m.def(
      "combine",
      [](const std::vector<double>& p, const std::vector<double>& alpha) {
        if (p.size() != alpha.size()) throw EnsembleError("p and alpha differ in length");
        auto c = combine(p, alpha);
        return py::make_tuple(std::string(to_string(c.label)), c.s_pos, c.s_neg);
      },
      py::arg("p"), py::arg("alpha"));
  m.def(
      "grid_search",
      [](const std::vector<std::string>& models, const std::vector<std::string>& ids,
         const std::vector<std::vector<double>>& p, const std::map<std::string, std::string>& labels, double step) {
        ScoreTable t{models, ids, p};
        std::map<std::string, Label> lab;
        for (const auto& [k, v] : labels) lab[k] = parse_label(v);
        auto r = grid_search(t, lab, step);
        std::map<std::string, double> w;
        for (std::size_t k = 0; k < models.size(); ++k) w[models[k]] = r.weights.alpha(k);
        return py::make_tuple(w, r.correct, r.total);
      },
      py::arg("models"), py::arg("ids"), py::arg("p"), py::arg("labels"), py::arg("step") = 0.1);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "senti");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli_dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
