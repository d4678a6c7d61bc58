#include "egpg/synthetic.hpp"

#include <array>
#include <random>
#include <string>
#include <string_view>

#include "egpg/util.hpp"

namespace egpg::synth {
namespace {

struct Verb {
  const char* base;
  const char* third;
  const char* past;
  const char* gerund;
};

constexpr std::array<Verb, 22> kVerbs{{
    {"learn", "learns", "learned", "learning"},   {"buy", "buys", "bought", "buying"},
    {"find", "finds", "found", "finding"},        {"build", "builds", "built", "building"},
    {"fix", "fixes", "fixed", "fixing"},          {"sell", "sells", "sold", "selling"},
    {"cook", "cooks", "cooked", "cooking"},       {"paint", "paints", "painted", "painting"},
    {"rent", "rents", "rented", "renting"},       {"design", "designs", "designed", "designing"},
    {"repair", "repairs", "repaired", "repairing"}, {"choose", "chooses", "chose", "choosing"},
    {"test", "tests", "tested", "testing"},       {"get", "gets", "got", "getting"},
    {"make", "makes", "made", "making"},          {"keep", "keeps", "kept", "keeping"},
    {"move", "moves", "moved", "moving"},         {"use", "uses", "used", "using"},
    {"ship", "ships", "shipped", "shipping"},     {"wash", "washes", "washed", "washing"},
    {"order", "orders", "ordered", "ordering"},   {"borrow", "borrows", "borrowed", "borrowing"},
}};

constexpr std::array<const char*, 10> kIntransitive{"runs",   "sleeps", "barks", "works", "waits",
                                                    "sings",  "falls",  "shines", "breaks", "stops"};

constexpr std::array<const char*, 25> kAdjectives{
    "cheap", "new",   "small", "good",  "big",   "simple", "large", "fast",  "quiet", "modern", "local", "safe", "strong",
    "fresh", "quick", "bright", "warm", "tiny",  "nice",   "cool",  "fancy", "light", "dark",   "rare",  "heavy"};

struct Noun {
  const char* singular;
  const char* plural;
};

constexpr std::array<Noun, 30> kNouns{{
    {"car", "cars"},       {"house", "houses"},   {"laptop", "laptops"},   {"garden", "gardens"},
    {"website", "websites"}, {"phone", "phones"}, {"bike", "bikes"},       {"kitchen", "kitchens"},
    {"guitar", "guitars"}, {"camera", "cameras"}, {"boat", "boats"},       {"shop", "shops"},
    {"table", "tables"},   {"dog", "dogs"},       {"cat", "cats"},         {"bed", "beds"},
    {"watch", "watches"},  {"book", "books"},     {"lamp", "lamps"},       {"sofa", "sofas"},
    {"piano", "pianos"},   {"printer", "printers"}, {"tent", "tents"},     {"jacket", "jackets"},
    {"robot", "robots"},   {"oven", "ovens"},     {"desk", "desks"},       {"chair", "chairs"},
    {"window", "windows"}, {"door", "doors"},
}};

constexpr std::array<const char*, 20> kPlaces{"london", "paris",  "tokyo",   "berlin", "delhi",  "boston", "chicago",
                                              "sydney", "dubai",  "rome",    "madrid", "seattle", "toronto", "mumbai",
                                              "austin", "denver", "lisbon",  "vienna", "prague", "dublin"};

// Paraphrase styles. Slots: {V} verb, {A} adjective, {N} noun, {P} place.
constexpr std::array<std::string_view, 10> kStyles{
    "how/WRB do/VBP i/PRP {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "what/WP is/VBZ the/DT best/JJS way/NN to/TO {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "can/MD you/PRP {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "where/WRB can/MD i/PRP {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "in/IN {P}/NNP ,/, how/WRB should/MD i/PRP {V}/VB a/DT {A}/JJ {N}/NN ?/.",
    "is/VBZ it/PRP easy/JJ to/TO {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "what/WP should/MD i/PRP know/VB before/IN i/PRP {V}/VBP a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
    "i/PRP want/VBP to/TO {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ./.",
    "which/WDT {A}/JJ {N}/NN should/MD i/PRP {V}/VB in/IN {P}/NNP ?/.",
    "why/WRB is/VBZ it/PRP hard/JJ to/TO {V}/VB a/DT {A}/JJ {N}/NN in/IN {P}/NNP ?/.",
};

// Extra shapes for tagger training only. {Vz} 3rd person, {Vd} past,
// {Vg} gerund, {Vi} intransitive, {Ns} plural noun.
constexpr std::array<std::string_view, 16> kDeclaratives{
    "the/DT {N}/NN {Vi}/VBZ",
    "the/DT {N}/NN {Vi}/VBZ ./.",
    "the/DT {A}/JJ {N}/NN {Vi}/VBZ ./.",
    "a/DT {N}/NN {Vi}/VBZ in/IN {P}/NNP ./.",
    "my/PRP$ {N}/NN {Vi}/VBZ",
    "{P}/NNP has/VBZ a/DT {A}/JJ {N}/NN ./.",
    "we/PRP {Vd}/VBD the/DT {N}/NN yesterday/NN ./.",
    "she/PRP {Vz}/VBZ the/DT {A}/JJ {N}/NN ./.",
    "i/PRP {V}/VBP the/DT {N}/NN",
    "do/VBP you/PRP {V}/VB {Ns}/NNS ?/.",
    "the/DT {N}/NN is/VBZ {A}/JJ",
    "they/PRP are/VBP {Vg}/VBG the/DT {A}/JJ {Ns}/NNS ./.",
    "he/PRP {Vd}/VBD a/DT {A}/JJ {N}/NN in/IN {P}/NNP ./.",
    "are/VBP the/DT {Ns}/NNS in/IN {P}/NNP {A}/JJ ?/.",
    "who/WP {Vz}/VBZ {Ns}/NNS in/IN {P}/NNP ?/.",
    "how/WRB many/JJ {Ns}/NNS did/VBD you/PRP {V}/VB ?/.",
};

struct Content {
  std::size_t verb, adjective, noun, place;
};

template <typename Rng>
Content sample_content(Rng& rng) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  return Content{pick(kVerbs.size()), pick(kAdjectives.size()), pick(kNouns.size()), pick(kPlaces.size())};
}

template <typename Rng>
TaggedSentence fill(std::string_view pattern, const Content& c, Rng& rng) {
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::vector<std::string> words;
  TagSequence tags;
  for (const auto& item : split(pattern, ' ')) {
    auto slash = item.rfind('/');
    std::string word = item.substr(0, slash);
    std::string tag = item.substr(slash + 1);
    if (word == "{V}") word = kVerbs[c.verb].base;
    else if (word == "{Vz}") word = kVerbs[c.verb].third;
    else if (word == "{Vd}") word = kVerbs[c.verb].past;
    else if (word == "{Vg}") word = kVerbs[c.verb].gerund;
    else if (word == "{Vi}") word = kIntransitive[pick(kIntransitive.size())];
    else if (word == "{A}") word = kAdjectives[c.adjective];
    else if (word == "{N}") word = kNouns[c.noun].singular;
    else if (word == "{Ns}") word = kNouns[c.noun].plural;
    else if (word == "{P}") word = kPlaces[c.place];
    words.push_back(std::move(word));
    tags.tags.push_back(std::move(tag));
  }
  return TaggedSentence{Sentence::from_tokens(std::move(words)), std::move(tags)};
}

}  // namespace

std::size_t style_count() { return kStyles.size(); }

std::vector<ParaphrasePair> paraphrase_pairs(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ParaphrasePair> out;
  out.reserve(count);
  std::uniform_int_distribution<std::size_t> style(0, kStyles.size() - 1);
  std::uniform_int_distribution<std::size_t> other(1, kStyles.size() - 1);
  for (std::size_t i = 0; i < count; ++i) {
    Content c = sample_content(rng);
    std::size_t s1 = style(rng);
    std::size_t s2 = (s1 + other(rng)) % kStyles.size();
    auto x = fill(kStyles[s1], c, rng);
    auto y = fill(kStyles[s2], c, rng);
    out.push_back(ParaphrasePair{{std::move(x.sentence), std::move(y.sentence)},
                                 std::move(x.tags), std::move(y.tags), s1, s2});
  }
  return out;
}

TaggedSentence render(std::size_t style, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Content c = sample_content(rng);
  return fill(kStyles.at(style), c, rng);
}

std::vector<TaggedSentence> tagger_corpus(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TaggedSentence> out;
  out.reserve(count);
  const std::size_t shapes = kStyles.size() + kDeclaratives.size();
  std::uniform_int_distribution<std::size_t> shape(0, shapes - 1);
  for (std::size_t i = 0; i < count; ++i) {
    Content c = sample_content(rng);
    std::size_t k = shape(rng);
    std::string_view pattern = k < kStyles.size() ? kStyles[k] : kDeclaratives[k - kStyles.size()];
    out.push_back(fill(pattern, c, rng));
  }
  return out;
}

}  // namespace egpg::synth
