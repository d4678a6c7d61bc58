#include "egpg/syntax.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "egpg/error.hpp"
#include "egpg/util.hpp"

namespace egpg {

namespace detail {
// Generated at build time from data/tagger/*.tagger.
std::string_view bundled_tagger_model();
}  // namespace detail

TagSequence parse_tags(std::string_view line) {
  TagSequence out;
  std::istringstream in{std::string(line)};
  for (std::string t; in >> t;) out.tags.push_back(std::move(t));
  return out;
}

TagSequence pos_tag(const Sentence& s, const Tagger* tagger) {
  if (tagger == nullptr) {
    throw TaggerUnavailableError("no POS tagger available: provide a tagger model or a sidecar tag file");
  }
  auto tags = tagger->tag(s);
  if (tags.size() != s.size()) {
    throw InputError("tagger returned " + std::to_string(tags.size()) + " tags for a " +
                     std::to_string(s.size()) + "-token sentence");
  }
  return tags;
}

// ---------------------------------------------------------------------------
// PerceptronTagger

namespace {

constexpr const char* kModelMagic = "egpg-perceptron-tagger";

std::string suffix(std::string_view w, std::size_t n) {
  return std::string(w.size() > n ? w.substr(w.size() - n) : w);
}

bool all_digits(std::string_view w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::string PerceptronTagger::normalize(const std::string& word) {
  if (word.find('-') != std::string::npos && word.front() != '-') return "!HYPHEN";
  if (word.size() == 4 && all_digits(word)) return "!YEAR";
  if (!word.empty() && std::isdigit(static_cast<unsigned char>(word.front()))) return "!DIGITS";
  std::string lower = word;
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return lower;
}

PerceptronTagger::Features PerceptronTagger::features(std::size_t i, std::string_view word,
                                                      std::span<const std::string> context,
                                                      std::string_view prev, std::string_view prev2) {
  auto cat = [](std::initializer_list<std::string_view> parts) {
    std::string s;
    for (auto p : parts) {
      if (!s.empty()) s += ' ';
      s += p;
    }
    return s;
  };
  Features f;
  f.reserve(14);
  f.push_back("bias");
  f.push_back(cat({"i suffix", suffix(word, 3)}));
  f.push_back(cat({"i pref1", word.substr(0, 1)}));
  f.push_back(cat({"i-1 tag", prev}));
  f.push_back(cat({"i-2 tag", prev2}));
  f.push_back(cat({"i tag+i-2 tag", prev, prev2}));
  f.push_back(cat({"i word", context[i]}));
  f.push_back(cat({"i-1 tag+i word", prev, context[i]}));
  f.push_back(cat({"i-1 word", context[i - 1]}));
  f.push_back(cat({"i-1 suffix", suffix(context[i - 1], 3)}));
  f.push_back(cat({"i-2 word", context[i - 2]}));
  f.push_back(cat({"i+1 word", context[i + 1]}));
  f.push_back(cat({"i+1 suffix", suffix(context[i + 1], 3)}));
  f.push_back(cat({"i+2 word", context[i + 2]}));
  return f;
}

std::string PerceptronTagger::predict(const Features& feats) const {
  std::vector<double> scores(classes_.size(), 0.0);
  for (const auto& f : feats) {
    auto it = weights_.find(f);
    if (it == weights_.end()) continue;
    for (std::size_t c = 0; c < scores.size(); ++c) scores[c] += it->second[c];
  }
  // classes_ is sorted, so a strict comparison keeps the lexicographically
  // smallest tag among equal scores.
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = c;
  }
  return classes_[best];
}

std::vector<std::string> PerceptronTagger::tag_words(std::span<const std::string> words) const {
  if (classes_.empty()) throw TaggerUnavailableError("perceptron tagger has no trained model");
  std::vector<std::string> context{"-START-", "-START2-"};
  for (const auto& w : words) context.push_back(normalize(w));
  context.push_back("-END-");
  context.push_back("-END2-");
  std::string prev = "-START-", prev2 = "-START2-";
  std::vector<std::string> out;
  out.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string tag;
    if (auto it = tagdict_.find(words[i]); it != tagdict_.end()) {
      tag = it->second;
    } else {
      tag = predict(features(i + 2, words[i], context, prev, prev2));
    }
    out.push_back(tag);
    prev2 = std::move(prev);
    prev = std::move(tag);
  }
  return out;
}

TagSequence PerceptronTagger::tag(const Sentence& s) const { return TagSequence{tag_words(s.tokens())}; }

void PerceptronTagger::build_tagdict(std::span<const TaggedSentence> data) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::set<std::string> classes;
  for (const auto& s : data) {
    for (std::size_t i = 0; i < s.words.size(); ++i) {
      ++counts[s.words[i]][s.tags[i]];
      classes.insert(s.tags[i]);
    }
  }
  classes_.assign(classes.begin(), classes.end());
  constexpr std::size_t kFreqThreshold = 20;
  constexpr double kAmbiguityThreshold = 0.97;
  tagdict_.clear();
  for (const auto& [word, tag_counts] : counts) {
    std::size_t total = 0, best = 0;
    std::string best_tag;
    for (const auto& [t, n] : tag_counts) {
      total += n;
      if (n > best) {
        best = n;
        best_tag = t;
      }
    }
    if (total >= kFreqThreshold && static_cast<double>(best) / static_cast<double>(total) >= kAmbiguityThreshold) {
      tagdict_[word] = best_tag;
    }
  }
}

void PerceptronTagger::train(std::span<const TaggedSentence> data, int iterations, std::uint64_t seed) {
  for (const auto& s : data) {
    if (s.words.size() != s.tags.size()) throw InputError("tagged sentence with mismatched word/tag counts");
  }
  build_tagdict(data);
  const std::size_t k = classes_.size();
  std::unordered_map<std::string, std::size_t> class_index;
  for (std::size_t c = 0; c < k; ++c) class_index[classes_[c]] = c;

  weights_.clear();
  // Lazily averaged: totals hold the weight integrated up to `stamps`.
  std::unordered_map<std::string, std::vector<double>> totals;
  std::unordered_map<std::string, std::vector<std::size_t>> stamps;
  std::size_t instances = 0;

  auto update = [&](const std::string& f, std::size_t c, double delta) {
    auto& w = weights_[f];
    auto& tot = totals[f];
    auto& st = stamps[f];
    if (w.empty()) {
      w.assign(k, 0.0);
      tot.assign(k, 0.0);
      st.assign(k, 0);
    }
    tot[c] += static_cast<double>(instances - st[c]) * w[c];
    st[c] = instances;
    w[c] += delta;
  };

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (int iter = 0; iter < iterations; ++iter) {
    std::size_t correct = 0, seen = 0;
    for (std::size_t idx : order) {
      const auto& s = data[idx];
      std::vector<std::string> context{"-START-", "-START2-"};
      for (const auto& w : s.words) context.push_back(normalize(w));
      context.push_back("-END-");
      context.push_back("-END2-");
      std::string prev = "-START-", prev2 = "-START2-";
      for (std::size_t i = 0; i < s.words.size(); ++i) {
        // Every token trains the weights so that words outside the tag
        // dictionary are covered; the dictionary only short-cuts tagging.
        auto feats = features(i + 2, s.words[i], context, prev, prev2);
        std::string guess = predict(feats);
        ++instances;
        if (guess != s.tags[i]) {
          for (const auto& f : feats) {
            update(f, class_index.at(s.tags[i]), 1.0);
            update(f, class_index.at(guess), -1.0);
          }
        }
        correct += guess == s.tags[i];
        ++seen;
        prev2 = std::move(prev);
        prev = guess;
      }
    }
    log_debug("perceptron iteration " + std::to_string(iter) + ": " + std::to_string(correct) + "/" +
              std::to_string(seen));
    std::shuffle(order.begin(), order.end(), rng);
  }
  // Average.
  for (auto& [f, w] : weights_) {
    auto& tot = totals[f];
    auto& st = stamps[f];
    for (std::size_t c = 0; c < k; ++c) {
      double total = tot[c] + static_cast<double>(instances - st[c]) * w[c];
      w[c] = instances ? total / static_cast<double>(instances) : 0.0;
    }
  }
}

void PerceptronTagger::save(std::ostream& out) const {
  out << kModelMagic << " 1\n";
  out << "classes " << classes_.size();
  for (const auto& c : classes_) out << ' ' << c;
  out << '\n';
  std::map<std::string, std::string> dict(tagdict_.begin(), tagdict_.end());
  out << "tagdict " << dict.size() << '\n';
  for (const auto& [w, t] : dict) out << w << '\t' << t << '\n';
  std::map<std::string, const std::vector<double>*> sorted;
  for (const auto& [f, w] : weights_) {
    bool any = std::any_of(w.begin(), w.end(), [](double x) { return std::abs(x) >= 5e-4; });
    if (any) sorted.emplace(f, &w);
  }
  out << "weights " << sorted.size() << '\n';
  char buf[64];
  for (const auto& [f, w] : sorted) {
    out << f;
    for (std::size_t c = 0; c < w->size(); ++c) {
      if (std::abs((*w)[c]) < 5e-4) continue;
      std::snprintf(buf, sizeof(buf), "\t%zu:%.3f", c, (*w)[c]);
      out << buf;
    }
    out << '\n';
  }
}

PerceptronTagger PerceptronTagger::load(std::istream& in) {
  auto bad = [](const std::string& why) { return InputError("malformed tagger model: " + why); };
  std::string line;
  if (!std::getline(in, line) || line.rfind(kModelMagic, 0) != 0) throw bad("missing header");
  PerceptronTagger t;
  std::size_t n = 0;
  {
    if (!std::getline(in, line)) throw bad("missing classes");
    std::istringstream ls(line);
    std::string key;
    ls >> key >> n;
    if (key != "classes") throw bad("missing classes");
    t.classes_.resize(n);
    for (auto& c : t.classes_) ls >> c;
  }
  {
    if (!std::getline(in, line)) throw bad("missing tagdict");
    std::istringstream ls(line);
    std::string key;
    ls >> key >> n;
    if (key != "tagdict") throw bad("missing tagdict");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw bad("truncated tagdict");
      auto cols = split(line, '\t');
      if (cols.size() != 2) throw bad("bad tagdict line");
      t.tagdict_[cols[0]] = cols[1];
    }
  }
  {
    if (!std::getline(in, line)) throw bad("missing weights");
    std::istringstream ls(line);
    std::string key;
    ls >> key >> n;
    if (key != "weights") throw bad("missing weights");
    const std::size_t k = t.classes_.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw bad("truncated weights");
      auto cols = split(line, '\t');
      std::vector<double> w(k, 0.0);
      for (std::size_t j = 1; j < cols.size(); ++j) {
        auto colon = cols[j].find(':');
        if (colon == std::string::npos) throw bad("bad weight entry");
        auto c = static_cast<std::size_t>(std::stoul(cols[j].substr(0, colon)));
        if (c >= k) throw bad("class index out of range");
        w[c] = std::stod(cols[j].substr(colon + 1));
      }
      t.weights_.emplace(cols[0], std::move(w));
    }
  }
  return t;
}

PerceptronTagger PerceptronTagger::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TaggerUnavailableError("cannot open tagger model: " + path.string());
  return load(in);
}

const PerceptronTagger& PerceptronTagger::bundled() {
  static const PerceptronTagger model = [] {
    std::istringstream in{std::string(detail::bundled_tagger_model())};
    return load(in);
  }();
  return model;
}

// ---------------------------------------------------------------------------
// SidecarTagger

void SidecarTagger::add(const Sentence& s, TagSequence tags) {
  if (tags.size() < s.size()) {
    throw InputError("sidecar has " + std::to_string(tags.size()) + " tags for a " + std::to_string(s.size()) +
                     "-token sentence: " + s.text());
  }
  // Sentences are truncated on load; the sidecar describes the full line.
  tags.tags.resize(s.size());
  table_.emplace(s.text(), std::move(tags));
}

SidecarTagger SidecarTagger::from_file(std::span<const Sentence> sentences, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TaggerUnavailableError("cannot open sidecar tag file: " + path.string());
  SidecarTagger t;
  std::string line;
  std::size_t i = 0;
  while (i < sentences.size() && std::getline(in, line)) {
    t.add(sentences[i], parse_tags(line));
    ++i;
  }
  if (i != sentences.size()) {
    throw InputError("sidecar " + path.string() + " has fewer lines than the corpus (" + std::to_string(i) +
                     " < " + std::to_string(sentences.size()) + ")");
  }
  return t;
}

SidecarTagger SidecarTagger::from_pair_file(std::span<const SentencePair> pairs, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TaggerUnavailableError("cannot open sidecar tag file: " + path.string());
  SidecarTagger t;
  std::string line;
  std::size_t i = 0;
  while (i < pairs.size() && std::getline(in, line)) {
    auto cols = split(line, '\t');
    if (cols.size() < 2) {
      throw ParseError(path.string(), i + 1, "expected source and target tag columns separated by a tab");
    }
    t.add(pairs[i].source, parse_tags(cols[0]));
    t.add(pairs[i].target, parse_tags(cols[1]));
    ++i;
  }
  if (i != pairs.size()) {
    throw InputError("sidecar " + path.string() + " has fewer lines than the pair corpus");
  }
  return t;
}

TagSequence SidecarTagger::tag(const Sentence& s) const {
  auto it = table_.find(s.text());
  if (it == table_.end()) throw TaggerUnavailableError("sidecar has no tags for sentence: " + s.text());
  return it->second;
}

}  // namespace egpg
