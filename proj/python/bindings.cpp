#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "turl/baselines.hpp"
#include "turl/cli.hpp"
#include "turl/corpus.hpp"
#include "turl/encoder.hpp"
#include "turl/encoding.hpp"
#include "turl/errors.hpp"
#include "turl/metrics.hpp"
#include "turl/store.hpp"
#include "turl/synth.hpp"
#include "turl/tokenizer.hpp"

namespace py = pybind11;
using namespace turl;

namespace {

// Weights plus the vocabularies they were trained against.
struct Model {
  encoder::ModelWeights<float> weights;
  corpus::Vocabularies vocab;
  std::size_t max_len = 0;
};

Model load_model(const std::string& checkpoint, const std::string& data_dir) {
  const auto ck = store::load_checkpoint(checkpoint);
  Model m{store::weights_from(ck), {}, static_cast<std::size_t>(ck.encoder.max_len)};
  m.vocab.tokens = corpus::Vocabulary::load(data_dir + "/tokens.vocab", corpus::VocabKind::token);
  m.vocab.entities = corpus::Vocabulary::load(data_dir + "/entities.vocab", corpus::VocabKind::entity);
  if (static_cast<int>(m.vocab.tokens.size()) != ck.encoder.token_vocab ||
      static_cast<int>(m.vocab.entities.size()) != ck.encoder.entity_vocab)
    throw ShapeMismatch("vocabularies in " + data_dir + " do not match the checkpoint");
  return m;
}

py::array_t<float> to_numpy(const numeric::Matrix<float>& m) {
  py::array_t<float> out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> visibility_array(const encoding::LinearizedSequence& seq) {
  const auto v = encoding::build_visibility(seq);
  const std::size_t n = seq.size();
  py::array_t<std::uint8_t> out({n, n});
  auto* p = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = v(i, j);
  return out;
}

std::string kind_name(encoding::ElementKind k) {
  switch (k) {
    case encoding::ElementKind::caption_token: return "caption";
    case encoding::ElementKind::header_token: return "header";
    case encoding::ElementKind::topic_entity: return "topic";
    case encoding::ElementKind::cell_entity: return "cell";
  }
  return "?";
}

}  // namespace

PYBIND11_MODULE(_turl, m) {
  m.doc() = "Structure-aware relational table encoder";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base.ptr());
  py::register_exception<UnknownId>(m, "UnknownId", base.ptr());
  py::register_exception<TableTooSmall>(m, "TableTooSmall", base.ptr());
  py::register_exception<MissingSideData>(m, "MissingSideData", base.ptr());
  py::register_exception<CorruptCheckpoint>(m, "CorruptCheckpoint", base.ptr());
  py::register_exception<VersionMismatch>(m, "VersionMismatch", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("tokenize", [](const std::string& text) { return BasicTokenizer().tokenize(text); });

  py::class_<corpus::ProcessedTable>(m, "Table")
      .def_static("from_json", [](const std::string& line) { return corpus::processed_from_json_line(line); })
      .def_static(
          "from_raw_json",
          [](const std::string& line) { return corpus::process_table(corpus::parse_raw_table(line), BasicTokenizer()); },
          "Parse and process one raw-corpus line")
      .def("to_json", [](const corpus::ProcessedTable& t) { return corpus::to_json_line(t); })
      .def_readonly("table_id", &corpus::ProcessedTable::table_id)
      .def_readonly("caption_tokens", &corpus::ProcessedTable::caption_tokens)
      .def_readonly("header_texts", &corpus::ProcessedTable::header_texts)
      .def_readonly("entity_columns", &corpus::ProcessedTable::entity_columns)
      .def_readonly("subject_column", &corpus::ProcessedTable::subject_column)
      .def_readonly("row_count", &corpus::ProcessedTable::row_count)
      .def("column_entities", &corpus::ProcessedTable::column_entities)
      .def("is_relational",
           [](const corpus::ProcessedTable& t, bool eval) {
             return corpus::filter_relational(t, eval ? corpus::FilterMode::eval : corpus::FilterMode::pretrain);
           },
           py::arg("eval") = false)
      .def("__repr__", [](const corpus::ProcessedTable& t) {
        return "<Table " + t.table_id + " rows=" + std::to_string(t.row_count) +
               " cells=" + std::to_string(t.cells.size()) + ">";
      });

  m.def("read_tables", &corpus::read_processed, py::arg("path"));

  py::class_<corpus::Vocabularies>(m, "Vocabularies")
      .def_static("build", &corpus::build_vocabularies, py::arg("tables"))
      .def_static("load",
                  [](const std::string& dir) {
                    corpus::Vocabularies v;
                    v.tokens = corpus::Vocabulary::load(dir + "/tokens.vocab", corpus::VocabKind::token);
                    v.entities = corpus::Vocabulary::load(dir + "/entities.vocab", corpus::VocabKind::entity);
                    return v;
                  })
      .def_property_readonly("n_tokens", [](const corpus::Vocabularies& v) { return v.tokens.size(); })
      .def_property_readonly("n_entities", [](const corpus::Vocabularies& v) { return v.entities.size(); })
      .def("token_id", [](const corpus::Vocabularies& v, const std::string& w) { return v.tokens.lookup(w); })
      .def("entity_id", [](const corpus::Vocabularies& v, const std::string& e) { return v.entities.lookup(e); })
      .def("token", [](const corpus::Vocabularies& v, int i) { return v.tokens.entry(i); })
      .def("entity", [](const corpus::Vocabularies& v, int i) { return v.entities.entry(i); });

  py::class_<encoding::LinearizedSequence>(m, "Sequence")
      .def("__len__", &encoding::LinearizedSequence::size)
      .def_readonly("table_id", &encoding::LinearizedSequence::table_id)
      .def_property_readonly("ids",
                             [](const encoding::LinearizedSequence& s) {
                               std::vector<int> out;
                               for (const auto& e : s.elements) out.push_back(e.id);
                               return out;
                             })
      .def_property_readonly("kinds",
                             [](const encoding::LinearizedSequence& s) {
                               std::vector<std::string> out;
                               for (const auto& e : s.elements) out.push_back(kind_name(e.kind));
                               return out;
                             })
      .def_property_readonly("coordinates",
                             [](const encoding::LinearizedSequence& s) {
                               std::vector<std::pair<int, int>> out;
                               for (const auto& e : s.elements) out.emplace_back(e.row, e.column);
                               return out;
                             })
      .def("visibility", &visibility_array, "n x n 0/1 matrix of allowed attention");

  m.def("linearize",
        [](const corpus::ProcessedTable& t, const corpus::Vocabularies& v, std::size_t max_len) {
          return encoding::linearize(t, v.tokens, v.entities, max_len);
        },
        py::arg("table"), py::arg("vocab"), py::arg("max_len") = 256);

  py::class_<Model>(m, "Model")
      .def_static("load", &load_model, py::arg("checkpoint"), py::arg("data_dir"),
                  "Encoder weights from a checkpoint and vocabularies from a preprocessed data directory")
      .def_property_readonly("vocab", [](const Model& md) { return md.vocab; })
      .def_property_readonly("d_model", [](const Model& md) { return md.weights.config.d_model; })
      .def_property_readonly("max_len", [](const Model& md) { return md.max_len; })
      .def("linearize", [](const Model& md, const corpus::ProcessedTable& t) {
        return encoding::linearize(t, md.vocab.tokens, md.vocab.entities, md.max_len);
      })
      .def("encode",
           [](Model& md, const encoding::LinearizedSequence& seq, bool use_visibility) {
             numeric::Matrix<float> h;
             {
               py::gil_scoped_release release;
               if (use_visibility) {
                 const auto v = encoding::build_visibility(seq);
                 h = encoder::forward(seq, &v, md.weights);
               } else {
                 h = encoder::forward(seq, nullptr, md.weights);
               }
             }
             return to_numpy(h);
           },
           py::arg("sequence"), py::arg("use_visibility") = true, "Final hidden states, one row per element");

  auto mm = m.def_submodule("metrics", "Evaluation metrics");
  mm.def("micro_prf",
         [](const std::vector<std::pair<std::set<int>, std::set<int>>>& items) {
           std::vector<metrics::LabelSets> in;
           for (const auto& [p, g] : items) in.push_back({p, g});
           const auto r = metrics::micro_prf(in);
           return py::make_tuple(r.precision, r.recall, r.f1);
         },
         py::arg("pairs"), "(predicted, gold) label sets -> (precision, recall, f1)");
  const auto ranked = [](const std::vector<std::pair<std::vector<std::int64_t>, std::set<std::int64_t>>>& items) {
    std::vector<metrics::RankedPrediction> out;
    for (const auto& [r, g] : items) out.push_back({"", r, g});
    return out;
  };
  mm.def("mean_average_precision", [ranked](const std::vector<std::pair<std::vector<std::int64_t>, std::set<std::int64_t>>>& items) {
    return metrics::mean_average_precision(ranked(items));
  });
  mm.def("precision_at_k",
         [ranked](const std::vector<std::pair<std::vector<std::int64_t>, std::set<std::int64_t>>>& items, std::size_t k) {
           return metrics::precision_at_k(ranked(items), k);
         });

  py::class_<baselines::Bm25Index>(m, "Bm25Index")
      .def(py::init<const std::vector<std::vector<std::string>>&>(), py::arg("docs"))
      .def("idf", &baselines::Bm25Index::idf)
      .def("score_all", &baselines::Bm25Index::score_all, py::arg("query"))
      .def("retrieve", &baselines::Bm25Index::retrieve, py::arg("query"), py::arg("top_k"))
      .def("__len__", &baselines::Bm25Index::size);

  m.def("write_synthetic_corpus",
        [](const std::string& dir, int tables, std::uint64_t seed) {
          synth::SynthConfig sc;
          sc.tables = tables;
          sc.seed = seed;
          const auto kb = synth::build_kb(sc);
          synth::write_corpus(kb, synth::generate_tables(kb, sc), dir);
        },
        py::arg("dir"), py::arg("tables") = 50, py::arg("seed") = 7,
        "corpus.jsonl plus side files for every task");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          int code;
          {
            py::gil_scoped_release release;
            code = cli::run(args, out, err);
          }
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a turl subcommand in-process; returns (exit_code, stdout, stderr)");
}
