#pragma once

#include <string>

#include "mllm/rng.hpp"

namespace mllm {

// Synthetic corpus generator: a small hidden-state grammar whose transition
// structure is shared across languages while every language draws its
// surface forms from a disjoint vocabulary. Emissions are Zipf-distributed
// within each state's type block. order 1 follows a noisy cycle; order 2
// picks the next state from the two previous ones, which a model cannot pin
// down from a few thousand words but can from a donor-sized corpus.
struct SynthGrammar {
  size_t states = 5;
  size_t types_per_state = 40;  // vocabulary = states * types_per_state
  double follow_prob = 0.85;    // probability of the grammatical transition
  size_t order = 1;
  double zipf_exponent = 1.1;
  size_t min_sentence = 6;
  size_t max_sentence = 16;
};

// Generates whole sentences (one per line) until at least target_words
// words are emitted. Tokens are "<prefix><type index>"; the first word of a
// sentence is capitalized and a period is appended, exercising the
// preprocessing pipeline.
std::string generate_corpus(const SynthGrammar& grammar,
                            const std::string& prefix, size_t target_words,
                            Rng rng);

}  // namespace mllm
