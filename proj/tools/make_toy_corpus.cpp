// Regenerates the bundled toy corpora under data/toy. The outputs are
// committed; rerunning with the same arguments reproduces them byte for
// byte.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mllm/synth.hpp"

using namespace mllm;

int main(int argc, char** argv) {
  const std::filesystem::path out_dir = argc > 1 ? argv[1] : "data/toy";
  std::filesystem::create_directories(out_dir);

  const SynthGrammar grammar{};
  const struct {
    const char* language;
    const char* prefix;
    uint64_t seed;
  } specs[] = {
      {"alpha", "al", 101},
      {"beta", "be", 202},
      {"gamma", "ga", 303},
  };

  for (const auto& s : specs) {
    Rng rng(s.seed);
    const std::string train =
        generate_corpus(grammar, s.prefix, 20000, rng.fork("train"));
    const std::string test =
        generate_corpus(grammar, s.prefix, 2000, rng.fork("test"));
    std::ofstream(out_dir / (std::string(s.language) + ".train.txt")) << train;
    std::ofstream(out_dir / (std::string(s.language) + ".test.txt")) << test;
    std::cout << s.language << ": train/test written\n";
  }
  return 0;
}
