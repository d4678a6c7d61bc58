// Python module `egpg`: corpus mining, metrics, losses, training and
// generation on top of the C++ library.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "egpg/corpus.hpp"
#include "egpg/error.hpp"
#include "egpg/evaluation.hpp"
#include "egpg/exemplar_search.hpp"
#include "egpg/losses.hpp"
#include "egpg/model.hpp"
#include "egpg/syntax.hpp"
#include "egpg/training.hpp"
#include "egpg/util.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;

namespace {

using Tokens = std::vector<std::string>;
using TextTriple = std::tuple<std::string, std::string, std::string>;

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_python(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

egpg::TagSequence as_tags(const Tokens& t) { return egpg::TagSequence{t}; }

std::vector<egpg::Triple> to_triples(const std::vector<TextTriple>& items, std::size_t max_len) {
  std::vector<egpg::Triple> out;
  for (const auto& [s, t, e] : items) {
    out.push_back({egpg::truncate(egpg::tokenize(s), max_len), egpg::truncate(egpg::tokenize(t), max_len),
                   egpg::truncate(egpg::tokenize(e), max_len)});
  }
  return out;
}

std::vector<TextTriple> to_text(const std::vector<egpg::Triple>& triples) {
  std::vector<TextTriple> out;
  for (const auto& t : triples) out.emplace_back(t.source.text(), t.target.text(), t.exemplar.text());
  return out;
}

class Model {
 public:
  explicit Model(egpg::Checkpoint ck) : ck_(std::move(ck)) {}

  static Model load(const fs::path& path) { return Model(egpg::load_checkpoint(path)); }

  std::string generate(const std::string& source, const std::string& exemplar, std::optional<std::size_t> max_len,
                       std::size_t beam) const {
    const auto& m = ck_.model;
    auto c = egpg::encode_content(ids(source), m);
    auto s = egpg::encode_style(ids(exemplar), m);
    auto out = egpg::generate(c, s, m, {max_len.value_or(m.config().max_len), beam});
    return egpg::join(egpg::decode(out, ck_.vocab), " ");
  }

  egpg::RowVector content(const std::string& text) const { return egpg::encode_content(ids(text), ck_.model).vector; }
  egpg::RowVector style(const std::string& text) const { return egpg::encode_style(ids(text), ck_.model).vector; }

  py::object evaluate(const std::vector<TextTriple>& test, std::size_t workers) const {
    auto triples = to_triples(test, ck_.model.config().max_len);
    egpg::EvalOptions o;
    o.workers = workers;
    o.max_len = ck_.model.config().max_len;
    egpg::EvalRun run;
    {
      py::gil_scoped_release release;
      run = egpg::evaluate_run(ck_.model, ck_.vocab, triples, egpg::PerceptronTagger::bundled(), o);
    }
    auto j = run.report.to_json();
    std::vector<std::string> gens;
    for (const auto& g : run.generations) gens.push_back(egpg::join(g, " "));
    j["generations"] = gens;
    return to_python(j);
  }

  py::object config() const { return to_python(nlohmann::json(ck_.config)); }
  std::size_t vocab_size() const { return ck_.vocab.size(); }
  std::string vocab_hash() const { return ck_.vocab.hash(); }

 private:
  egpg::IdSequence ids(const std::string& text) const {
    return egpg::encode(egpg::truncate(egpg::tokenize(text), ck_.model.config().max_len), ck_.vocab);
  }

  egpg::Checkpoint ck_;
};

py::dict mine(const std::vector<std::pair<std::string, std::string>>& pairs,
              const std::optional<std::vector<std::pair<Tokens, Tokens>>>& tags, std::size_t workers,
              std::size_t max_len) {
  std::vector<egpg::SentencePair> sp;
  std::vector<egpg::Sentence> pool;
  for (const auto& [s, t] : pairs) {
    sp.push_back({egpg::truncate(egpg::tokenize(s), max_len), egpg::truncate(egpg::tokenize(t), max_len)});
    pool.push_back(sp.back().source);
  }
  egpg::MiningOptions o;
  o.workers = workers;
  egpg::MiningResult r;
  if (tags) {
    if (tags->size() != sp.size()) throw egpg::InputError("need one (source tags, target tags) entry per pair");
    egpg::SidecarTagger side;
    for (std::size_t i = 0; i < sp.size(); ++i) {
      side.add(sp[i].source, as_tags((*tags)[i].first));
      side.add(sp[i].target, as_tags((*tags)[i].second));
    }
    py::gil_scoped_release release;
    r = egpg::mine_corpus(sp, pool, side, o);
  } else {
    py::gil_scoped_release release;
    r = egpg::mine_corpus(sp, pool, egpg::PerceptronTagger::bundled(), o);
  }
  py::dict d;
  d["triples"] = to_text(r.triples);
  d["pair_index"] = r.pair_index;
  d["dropped"] = r.dropped;
  d["mean_distance"] = r.mean_distance();
  return d;
}

py::dict train(const std::vector<TextTriple>& data, const py::object& config, const std::vector<TextTriple>& valid,
               const std::string& ablation, const std::optional<fs::path>& out_dir, std::size_t workers) {
  egpg::TrainConfig cfg = config.is_none() ? egpg::TrainConfig{} : from_python(config).get<egpg::TrainConfig>();
  egpg::apply_ablation(cfg, egpg::parse_ablation(ablation));
  cfg.validate();
  auto train_set = to_triples(data, cfg.model.max_len);
  auto valid_set = to_triples(valid, cfg.model.max_len);
  egpg::FitOptions o;
  o.out_dir = out_dir;
  o.workers = workers;
  egpg::FitResult r;
  {
    py::gil_scoped_release release;
    r = egpg::fit(train_set, valid_set, cfg, o);
  }
  py::dict d;
  d["model"] = Model(egpg::Checkpoint{r.model, r.vocab, cfg, std::nullopt});
  d["best"] = Model(egpg::Checkpoint{r.best, r.vocab, cfg, std::nullopt});
  d["epochs_done"] = r.progress.epochs_done;
  d["steps"] = r.progress.step;
  d["best_bleu"] = r.progress.best_bleu;
  std::vector<py::object> log;
  for (const auto& rec : r.log.records()) log.push_back(to_python(rec));
  d["log"] = log;
  return d;
}

}  // namespace

PYBIND11_MODULE(egpg, m) {
  m.doc() = "Exemplar-guided paraphrase generation with contrastive representation learning";

  // Translators run newest first, so the narrower type is registered last.
  py::register_exception<egpg::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<egpg::InputError>(m, "InputError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& text) { return egpg::tokenize(text).tokens(); }, py::arg("text"));
  m.def("pos_tag", [](const Tokens& words) { return egpg::PerceptronTagger::bundled().tag_words(words); },
        py::arg("words"), "Tags with the bundled perceptron tagger.");
  m.def("edit_distance", [](const Tokens& a, const Tokens& b) { return egpg::levenshtein(a, b); }, py::arg("a"),
        py::arg("b"));
  m.def(
      "find_exemplar",
      [](const Tokens& target, const Tokens& target_tags, const std::vector<Tokens>& pool,
         const std::vector<Tokens>& pool_tags, std::optional<std::size_t> exclude)
          -> std::optional<std::pair<std::size_t, std::size_t>> {
        std::vector<egpg::Sentence> p;
        std::vector<egpg::TagSequence> pt;
        for (const auto& s : pool) p.push_back(egpg::Sentence::from_tokens(s));
        for (const auto& t : pool_tags) pt.push_back(as_tags(t));
        if (pt.size() != p.size()) throw egpg::InputError("pool and pool_tags differ in length");
        auto idx = egpg::build_index(p);
        auto r = egpg::find_exemplar(egpg::Sentence::from_tokens(target), as_tags(target_tags), p, pt, idx, exclude);
        if (!r) return std::nullopt;
        return std::make_pair(r->index, r->distance);
      },
      py::arg("target"), py::arg("target_tags"), py::arg("pool"), py::arg("pool_tags"), py::arg("exclude") = py::none(),
      "(index, distance) of the best exemplar, or None.");
  m.def("mine", &mine, py::arg("pairs"), py::arg("tags") = py::none(), py::arg("workers") = 1,
        py::arg("max_len") = egpg::kDefaultMaxLen,
        "Mines an exemplar for every (source, target) pair against the pair sources.");
  m.def(
      "load_triples",
      [](const fs::path& path, std::size_t max_len) {
        egpg::LoadOptions o;
        o.max_len = max_len;
        return to_text(egpg::load_triples(path, egpg::format_for_path(path), o).triples);
      },
      py::arg("path"), py::arg("max_len") = egpg::kDefaultMaxLen);

  m.def("bleu", [](const std::vector<Tokens>& c, const std::vector<Tokens>& r) { return egpg::bleu(c, r); },
        py::arg("candidates"), py::arg("references"));
  m.def(
      "rouge",
      [](const std::vector<Tokens>& c, const std::vector<Tokens>& r) {
        auto s = egpg::rouge(c, r);
        return std::make_tuple(s.rouge1, s.rouge2, s.rougeL);
      },
      py::arg("candidates"), py::arg("references"));
  m.def("meteor",
        [](const std::vector<Tokens>& c, const std::vector<Tokens>& r) { return egpg::meteor_simplified(c, r); },
        py::arg("candidates"), py::arg("references"));
  m.def("porter_stem", &egpg::porter_stem, py::arg("word"));
  m.def(
      "content_matching_accuracy",
      [](const egpg::Matrix& a, const egpg::Matrix& b, std::size_t block) {
        return egpg::content_matching_accuracy(a, b, block);
      },
      py::arg("a"), py::arg("b"), py::arg("block_rows") = egpg::kDefaultCmaBlock);

  m.def(
      "infonce",
      [](const egpg::Matrix& a, const egpg::Matrix& b, double temperature, bool normalize, bool batch_mean) {
        return egpg::infonce_bidirectional(a, b, {temperature, normalize, batch_mean});
      },
      py::arg("a"), py::arg("b"), py::arg("temperature") = 0.5, py::arg("normalize") = true,
      py::arg("batch_mean") = false);
  m.def(
      "nll_loss", [](const egpg::Matrix& probs, const std::vector<egpg::TokenId>& target) {
        return egpg::nll_loss(probs, target);
      },
      py::arg("probs"), py::arg("target"));

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def("generate", &Model::generate, py::arg("source"), py::arg("exemplar"), py::arg("max_len") = py::none(),
           py::arg("beam") = 1)
      .def("encode_content", &Model::content, py::arg("text"))
      .def("encode_style", &Model::style, py::arg("text"))
      .def("evaluate", &Model::evaluate, py::arg("test"), py::arg("workers") = 1)
      .def_property_readonly("config", &Model::config)
      .def_property_readonly("vocab_size", &Model::vocab_size)
      .def_property_readonly("vocab_hash", &Model::vocab_hash);

  m.def("train", &train, py::arg("data"), py::arg("config") = py::none(),
        py::arg("valid") = std::vector<TextTriple>{}, py::arg("ablation") = "full", py::arg("out_dir") = py::none(),
        py::arg("workers") = 1,
        "Trains on (source, target, exemplar) triples. Returns the final and best models plus the run log.");
}
