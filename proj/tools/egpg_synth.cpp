// Writes toy paraphrase corpora (with gold tag sidecars) from the template grammar.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egpg/corpus.hpp"
#include "egpg/error.hpp"
#include "egpg/synthetic.hpp"
#include "egpg/util.hpp"

namespace {

std::string tagged_line(const egpg::Sentence& s, const egpg::TagSequence& t) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += s[i] + "/" + t.tags[i];
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic paraphrase corpus generator"};
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  std::string out, tags, mode = "pairs";
  app.add_option("--mode", mode, "pairs | tagger-corpus")->check(CLI::IsMember({"pairs", "tagger-corpus"}));
  app.add_option("--count", count, "Number of records")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--out", out, "Output file (.jsonl or .tsv for pairs)")->required();
  app.add_option("--tags", tags, "Pair tag sidecar to write alongside --out");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    std::ofstream file(out);
    if (!file) throw egpg::InputError("cannot write " + out);
    if (mode == "tagger-corpus") {
      for (const auto& t : egpg::synth::tagger_corpus(count, seed)) file << tagged_line(t.sentence, t.tags) << '\n';
      return 0;
    }
    const bool tsv = egpg::format_for_path(out) == egpg::RecordFormat::kTsv;
    std::ofstream tag_file;
    if (!tags.empty()) tag_file.open(tags);
    for (const auto& p : egpg::synth::paraphrase_pairs(count, seed)) {
      if (tsv) {
        file << p.pair.source.text() << '\t' << p.pair.target.text() << '\n';
      } else {
        file << nlohmann::json{{"source", p.pair.source.text()}, {"target", p.pair.target.text()}}.dump() << '\n';
      }
      if (tag_file) {
        tag_file << egpg::join(p.source_tags.tags, " ") << '\t' << egpg::join(p.target_tags.tags, " ") << '\n';
      }
    }
  } catch (const egpg::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
