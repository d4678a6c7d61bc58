// Trains the averaged-perceptron POS tagger from "word/TAG word/TAG ..." lines
// or from the synthetic grammar.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "egpg/error.hpp"
#include "egpg/syntax.hpp"
#include "egpg/synthetic.hpp"
#include "egpg/util.hpp"

namespace {

std::vector<egpg::PerceptronTagger::TaggedSentence> read_corpus(const std::string& path) {
  std::vector<egpg::PerceptronTagger::TaggedSentence> data;
  std::istringstream in(egpg::read_text_file(path));
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (egpg::trim(line).empty()) continue;
    egpg::PerceptronTagger::TaggedSentence s;
    std::istringstream words(line);
    for (std::string item; words >> item;) {
      const auto slash = item.rfind('/');
      if (slash == std::string::npos || slash == 0 || slash + 1 == item.size()) {
        throw egpg::ParseError(path, n, "expected word/TAG, got '" + item + "'");
      }
      s.words.push_back(item.substr(0, slash));
      s.tags.push_back(item.substr(slash + 1));
    }
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Averaged perceptron POS tagger trainer"};
  std::string corpus, out;
  std::size_t synthetic = 0;
  int iterations = 5;
  std::uint64_t seed = 0;
  app.add_option("--corpus", corpus, "Training file of word/TAG lines");
  app.add_option("--synthetic", synthetic, "Train on this many synthetic sentences instead");
  app.add_option("--iterations", iterations, "Training passes")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Shuffle seed");
  app.add_option("--out", out, "Model file")->required();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    std::vector<egpg::PerceptronTagger::TaggedSentence> data;
    if (!corpus.empty()) {
      data = read_corpus(corpus);
    } else if (synthetic > 0) {
      for (auto& t : egpg::synth::tagger_corpus(synthetic, seed)) data.push_back({t.sentence.tokens(), t.tags.tags});
    } else {
      throw egpg::InputError("give --corpus or --synthetic");
    }
    egpg::PerceptronTagger tagger;
    tagger.train(data, iterations, seed);
    std::ofstream file(out);
    if (!file) throw egpg::InputError("cannot write " + out);
    tagger.save(file);
    std::cout << "trained on " << data.size() << " sentences, " << tagger.classes().size() << " tags -> " << out << '\n';
  } catch (const egpg::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
