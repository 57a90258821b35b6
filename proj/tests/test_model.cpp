#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "mllm/errors.hpp"
#include "mllm/model.hpp"

using namespace mllm;

namespace {

ModelConfig desk_config(size_t langs = 2) {
  ModelConfig cfg;
  cfg.embedding = 16;
  cfg.hidden = 32;
  cfg.pattern = kDefaultPattern;
  for (size_t i = 0; i < langs; ++i) {
    cfg.languages.push_back("L" + std::to_string(i));
    cfg.vocab_sizes.push_back(11 + i);
  }
  return cfg;
}

std::vector<int32_t> random_tokens(size_t n, size_t vocab, Rng& rng) {
  std::vector<int32_t> out(n);
  for (auto& v : out) v = static_cast<int32_t>(rng.next_u64() % vocab);
  return out;
}

}  // namespace

TEST_CASE("sharing pattern parser accepts 3 tags and rejects the rest") {
  auto p = parse_pattern("S,S,P");
  CHECK(p == kDefaultPattern);
  CHECK(parse_pattern("ssp") == kDefaultPattern);
  CHECK(pattern_str(parse_pattern("P,P,P")) == "P,P,P");
  CHECK_THROWS_AS(parse_pattern("S,S"), ConfigError);
  CHECK_THROWS_AS(parse_pattern("S,S,P,P"), ConfigError);
  CHECK_THROWS_AS(parse_pattern("S,X,P"), ConfigError);
}

TEST_CASE("layer shapes follow emb->hidden, hidden->hidden, hidden->emb") {
  // Paper-scale sizes; the last layer emits embedding-sized vectors so the
  // tied decoder is dimensionally possible.
  ModelConfig cfg;
  cfg.embedding = 512;
  cfg.hidden = 1150;
  cfg.languages = {"x"};
  cfg.vocab_sizes = {2};
  auto model = build_model(cfg, Rng(1));
  const auto& l0 = model.layer(0, 0);
  const auto& l1 = model.layer(1, 0);
  const auto& l2 = model.layer(2, 0);
  CHECK(l0.w->shape() == Shape{4 * 1150, 512});
  CHECK(l1.w->shape() == Shape{4 * 1150, 1150});
  CHECK(l2.w->shape() == Shape{4 * 512, 1150});
  CHECK(l2.u->shape() == Shape{4 * 512, 512});
}

TEST_CASE("pattern [S,S,P] allocates shared layers once, third per language") {
  auto model = build_model(desk_config(2), Rng(2));
  CHECK(model.shared_layers.size() == 2);
  CHECK(model.shared_layers.count(0) == 1);
  CHECK(model.shared_layers.count(1) == 1);
  for (const auto& lang : model.languages) {
    CHECK(lang.own_layers.size() == 1);
    CHECK(lang.own_layers.count(2) == 1);
  }
  // Both languages resolve slots 0/1 to the same parameter objects.
  CHECK(&model.layer(0, 0) == &model.layer(0, 1));
  CHECK(model.layer(2, 0).w.get() != model.layer(2, 1).w.get());
}

TEST_CASE("single-language models canonicalize to per-language layers") {
  auto cfg = desk_config(1);
  cfg.pattern = kDefaultPattern;  // [S,S,P]
  auto multi_style = build_model(cfg, Rng(7));
  CHECK(multi_style.shared_layers.empty());
  CHECK(multi_style.languages[0].own_layers.size() == 3);

  cfg.pattern = parse_pattern("P,P,P");
  auto mono_style = build_model(cfg, Rng(7));
  // Same seed, same resolved structure: bitwise-identical parameters.
  auto a = multi_style.named_parameters();
  auto b = mono_style.named_parameters();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second->data() == b[i].second->data());
  }
  CHECK(multi_style.parameter_count() == mono_style.parameter_count());
}

TEST_CASE("build_model validates its configuration") {
  auto cfg = desk_config(2);
  cfg.vocab_sizes = {11};
  CHECK_THROWS_AS(build_model(cfg, Rng(1)), ConfigError);
  cfg = desk_config(2);
  cfg.vocab_sizes[0] = 1;
  CHECK_THROWS_AS(build_model(cfg, Rng(1)), ConfigError);
  cfg = desk_config(2);
  cfg.embedding = 0;
  CHECK_THROWS_AS(build_model(cfg, Rng(1)), ConfigError);
  cfg = desk_config(2);
  cfg.languages.clear();
  cfg.vocab_sizes.clear();
  CHECK_THROWS_AS(build_model(cfg, Rng(1)), ConfigError);
}

TEST_CASE("decoder tying is structural: same storage object") {
  auto model = build_model(desk_config(2), Rng(3));
  // The decoder projection in forward_language is the embedding tensor
  // itself; mutating one is mutating the other.
  auto emb = model.languages[0].embedding;
  const double before = emb->data()[0];
  emb->mutable_data()[0] = before + 1.0;
  CHECK(model.languages[0].embedding->data()[0] == before + 1.0);
  // named_parameters reports the embedding exactly once per language.
  size_t emb_count = 0;
  for (const auto& [name, t] : model.named_parameters())
    if (t.get() == emb.get()) ++emb_count;
  CHECK(emb_count == 1);
}

TEST_CASE("forward produces (T*B) x V logits and carries per-layer state") {
  Rng rng(5);
  auto model = build_model(desk_config(2), Rng(4));
  const size_t batch = 2, timesteps = 3, vocab = 11;
  auto tokens = random_tokens(batch * timesteps, vocab, rng);
  Graph g;
  auto res = forward_language(g, model, 0, tokens, batch, timesteps,
                              zero_states(model, batch), LanguageMasks{});
  CHECK(res.logits->shape() == Shape{6, 11});
  REQUIRE(res.final_states.size() == 3);
  CHECK(res.final_states[0].h->shape() == Shape{2, 32});
  CHECK(res.final_states[2].h->shape() == Shape{2, 16});
  CHECK(res.raw_final_steps.size() == 3);
}

TEST_CASE("per-language parameters are isolated at forward time") {
  Rng rng(6);
  auto model = build_model(desk_config(2), Rng(8));
  auto tokens = random_tokens(8, 11, rng);
  auto run_lang0 = [&] {
    Graph g;
    auto res = forward_language(g, model, 0, tokens, 2, 4,
                                zero_states(model, 2), LanguageMasks{});
    return std::vector<double>(res.logits->data().begin(),
                               res.logits->data().end());
  };
  auto before = run_lang0();
  for (auto& v : model.languages[1].embedding->mutable_data()) v += 0.5;
  for (auto& v : model.languages[1].own_layers.at(2).w->mutable_data())
    v -= 0.25;
  auto after = run_lang0();
  CHECK(before == after);
}

TEST_CASE("a step on one language's loss leaves other languages untouched") {
  Rng rng(9);
  auto model = build_model(desk_config(3), Rng(10));
  auto tokens = random_tokens(6, 11, rng);
  std::vector<int32_t> targets = random_tokens(6, 11, rng);

  for (const auto& [name, t] : model.named_parameters()) {
    t->grad_buffer();
    t->zero_grad();
  }
  {
    Graph g;
    auto res = forward_language(g, model, 0, tokens, 2, 3,
                                zero_states(model, 2), LanguageMasks{});
    g.backward(g.softmax_cross_entropy(res.logits, targets));
  }
  auto part0 = model.parameters_of(0);
  auto part1 = model.parameters_of(1);
  std::vector<std::vector<double>> lang1_before;
  for (const auto& t : part1.specific)
    lang1_before.emplace_back(t->data().begin(), t->data().end());
  // Apply the update to everything that received gradient.
  for (const auto& [name, t] : model.named_parameters()) {
    auto& d = t->mutable_data();
    const auto& gr = t->grad();
    for (size_t i = 0; i < d.size(); ++i) d[i] -= 0.1 * gr[i];
  }
  for (size_t i = 0; i < part1.specific.size(); ++i)
    CHECK(std::vector<double>(part1.specific[i]->data().begin(),
                              part1.specific[i]->data().end()) ==
          lang1_before[i]);
  // And language 0's specific set did move.
  double moved = 0.0;
  for (const auto& t : part0.specific)
    for (double v : t->grad()) moved += std::abs(v);
  CHECK(moved > 0.0);
}

TEST_CASE("parameters_of partitions the forward set disjointly") {
  auto model = build_model(desk_config(3), Rng(11));
  auto p0 = model.parameters_of(0);
  CHECK(p0.shared.size() == 6);    // two shared layers, w/u/b each
  CHECK(p0.specific.size() == 5);  // emb, bias, third-layer w/u/b

  std::set<const Tensor*> shared(
      [&] {
        std::set<const Tensor*> s;
        for (auto& t : p0.shared) s.insert(t.get());
        return s;
      }());
  for (const auto& t : p0.specific) CHECK(shared.count(t.get()) == 0);

  // Specific sets of different languages do not intersect.
  auto p1 = model.parameters_of(1);
  std::set<const Tensor*> spec0;
  for (auto& t : p0.specific) spec0.insert(t.get());
  for (const auto& t : p1.specific) CHECK(spec0.count(t.get()) == 0);

  // All-per-language pattern: shared set empty.
  auto cfg = desk_config(2);
  cfg.pattern = parse_pattern("P,P,P");
  auto mono = build_model(cfg, Rng(12));
  CHECK(mono.parameters_of(0).shared.empty());
  CHECK(mono.parameters_of(0).specific.size() == 11);

  CHECK_THROWS_AS(model.language_index("nope"), LookupError);
}

TEST_CASE("forward stays finite over many random desk-scale steps") {
  Rng rng(13);
  auto cfg = desk_config(2);
  cfg.embedding = 8;
  cfg.hidden = 8;
  auto model = build_model(cfg, Rng(14));
  auto states = zero_states(model, 2);
  for (int step = 0; step < 10000; ++step) {
    auto tokens = random_tokens(6, 11, rng);
    Graph g;
    auto res = forward_language(g, model, step % 2, tokens, 2, 3,
                                step % 2 == 0 ? states : zero_states(model, 2),
                                LanguageMasks{});
    if (step % 2 == 0) {
      std::vector<LstmState> next;
      for (const auto& s : res.final_states) next.push_back(detach(s));
      states = std::move(next);
    }
    for (double v : res.logits->data()) {
      if (!std::isfinite(v)) {
        FAIL("non-finite logit at step " << step);
      }
    }
  }
  CHECK(true);
}

TEST_CASE("checkpoint-relevant canonical names are stable") {
  auto model = build_model(desk_config(2), Rng(15));
  std::vector<std::string> names;
  for (const auto& [name, t] : model.named_parameters()) names.push_back(name);
  const std::vector<std::string> expect{
      "lstm0.shared.w", "lstm0.shared.u", "lstm0.shared.b",
      "lstm1.shared.w", "lstm1.shared.u", "lstm1.shared.b",
      "emb.L0",         "dec_b.L0",       "lstm2.L0.w",
      "lstm2.L0.u",     "lstm2.L0.b",     "emb.L1",
      "dec_b.L1",       "lstm2.L1.w",     "lstm2.L1.u",
      "lstm2.L1.b"};
  CHECK(names == expect);
}
