#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "egpg/corpus.hpp"
#include "egpg/syntax.hpp"

// Template-grammar generator for toy paraphrase corpora. Every sentence
// comes with its gold POS tags, so the same generator trains the bundled
// tagger and feeds the end-to-end checks.
namespace egpg::synth {

struct TaggedSentence {
  Sentence sentence;
  TagSequence tags;
};

struct ParaphrasePair {
  SentencePair pair;
  TagSequence source_tags;
  TagSequence target_tags;
  std::size_t source_style = 0;
  std::size_t target_style = 0;
};

// Number of paraphrase styles (syntactic templates).
std::size_t style_count();

// A paraphrase pair shares one content tuple (verb, adjective, noun, place)
// rendered in two different styles. Deterministic in `seed`.
std::vector<ParaphrasePair> paraphrase_pairs(std::size_t count, std::uint64_t seed);

// Sentences in one given style with random content.
TaggedSentence render(std::size_t style, std::uint64_t seed);

// Mixed question and declarative sentences used to train the tagger.
std::vector<TaggedSentence> tagger_corpus(std::size_t count, std::uint64_t seed);

}  // namespace egpg::synth
