#include "mllm/synth.hpp"

#include <cctype>
#include <cmath>
#include <sstream>
#include <vector>

#include "mllm/errors.hpp"

namespace mllm {

std::string generate_corpus(const SynthGrammar& grammar,
                            const std::string& prefix, size_t target_words,
                            Rng rng) {
  if (grammar.states < 2 || grammar.types_per_state < 2)
    throw ConfigError("synthetic grammar: need >= 2 states and >= 2 types");
  if (grammar.min_sentence < 1 ||
      grammar.max_sentence < grammar.min_sentence)
    throw ConfigError("synthetic grammar: bad sentence length range");

  // Zipf CDF over the type ranks of one state.
  std::vector<double> cdf(grammar.types_per_state);
  double z = 0.0;
  for (size_t r = 0; r < grammar.types_per_state; ++r) {
    z += 1.0 / std::pow(static_cast<double>(r + 1), grammar.zipf_exponent);
    cdf[r] = z;
  }
  for (auto& v : cdf) v /= z;

  auto draw_type = [&](size_t state) {
    const double u = rng.uniform();
    size_t rank = 0;
    while (rank + 1 < cdf.size() && u > cdf[rank]) ++rank;
    return state * grammar.types_per_state + rank;
  };

  std::ostringstream out;
  size_t words = 0;
  while (words < target_words) {
    const size_t len =
        grammar.min_sentence +
        static_cast<size_t>(rng.uniform() *
                            static_cast<double>(grammar.max_sentence -
                                                grammar.min_sentence + 1));
    // Uniform start state: next-token prediction requires decoding the
    // current token's state, not memorizing positions.
    size_t state = static_cast<size_t>(rng.uniform() *
                                       static_cast<double>(grammar.states)) %
                   grammar.states;
    size_t prev = state;
    for (size_t i = 0; i < len; ++i) {
      std::string tok = prefix + std::to_string(draw_type(state));
      if (i == 0) tok[0] = static_cast<char>(std::toupper(tok[0]));
      out << (i == 0 ? "" : " ") << tok;
      size_t next;
      if (rng.uniform() < grammar.follow_prob) {
        next = grammar.order >= 2
                   ? (3 * state + 7 * prev + 1) % grammar.states
                   : (state + 1) % grammar.states;
      } else {
        // Uniform jump to one of the other states.
        const size_t jump = 1 + static_cast<size_t>(
                                    rng.uniform() *
                                    static_cast<double>(grammar.states - 1));
        next = (state + jump) % grammar.states;
      }
      prev = state;
      state = next;
    }
    out << ".\n";
    words += len;
  }
  return out.str();
}

}  // namespace mllm
