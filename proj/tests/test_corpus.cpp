#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "mllm/corpus.hpp"
#include "mllm/errors.hpp"
#include "mllm/textproc.hpp"

using namespace mllm;

namespace {

std::vector<Sentence> sentences_of(const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  return preprocess_corpus(text);
}

// Brute-force UNK oracle, independent of the production sort: enumerates
// (frequency ascending, token descending) pairs and takes the first k.
std::set<std::string> oracle_replaced(
    const std::map<std::string, int64_t>& freq) {
  std::vector<std::pair<std::string, int64_t>> items(freq.begin(), freq.end());
  const size_t k = items.size() / 4;
  std::set<std::string> replaced;
  std::set<std::string> used;
  for (size_t picked = 0; picked < k; ++picked) {
    const std::pair<std::string, int64_t>* best = nullptr;
    for (const auto& item : items) {
      if (used.count(item.first)) continue;
      if (!best || item.second < best->second ||
          (item.second == best->second && item.first > best->first))
        best = &item;
    }
    replaced.insert(best->first);
    used.insert(best->first);
  }
  return replaced;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("preprocessing lowercases and deletes punctuation in place") {
  auto s = sentences_of({"Hello, World!"});
  REQUIRE(s.size() == 1);
  CHECK(s[0] == Sentence{"hello", "world"});

  // Deletion, not replacement by space: A.B. collapses to one token.
  s = sentences_of({"A.B.  c"});
  REQUIRE(s.size() == 1);
  CHECK(s[0] == Sentence{"ab", "c"});
}

TEST_CASE("empty and whitespace-only lines are dropped") {
  auto s = sentences_of({"", "   ", "a b", "\t"});
  REQUIRE(s.size() == 1);
  CHECK(s[0] == Sentence{"a", "b"});
}

TEST_CASE("preprocessing handles CRLF and non-ASCII case folding") {
  auto s = preprocess_corpus("Früh ÇOK «guten»\r\nΔΕΛΤΑ Москва\n");
  REQUIRE(s.size() == 2);
  CHECK(s[0] == Sentence{"früh", "çok", "guten"});
  CHECK(s[1] == Sentence{"δελτα", "москва"});
}

TEST_CASE("invalid UTF-8 raises an ingestion error with the line number") {
  std::string text = "fine line\n\xC3(\n";
  try {
    preprocess_corpus(text);
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("truncation keeps the longest whole-sentence prefix") {
  std::vector<Sentence> s;
  for (int i = 0; i < 3; ++i) s.push_back(Sentence(10, "w"));
  auto t = truncate_training(s, 25);
  CHECK(t.size() == 2);
  CHECK(word_count(t) == 20);

  CHECK(truncate_training(s, kFullThreshold).size() == 3);
  CHECK_THROWS_AS(truncate_training(s, 5), ConfigError);

  // Exact boundary: a sentence that lands on the threshold is kept.
  CHECK(truncate_training(s, 20).size() == 2);
}

TEST_CASE("truncation at t1 < t2 yields a prefix of the t2 result") {
  Rng rng(3);
  std::vector<Sentence> s;
  for (int i = 0; i < 50; ++i) {
    Sentence sent;
    const size_t len = 1 + static_cast<size_t>(rng.uniform() * 9);
    for (size_t j = 0; j < len; ++j)
      sent.push_back("t" + std::to_string(rng.next_u64() % 40));
    s.push_back(sent);
  }
  for (auto [t1, t2] : {std::pair<int64_t, int64_t>{30, 90},
                        {17, 18},
                        {50, 300}}) {
    auto a = truncate_training(s, t1);
    auto b = truncate_training(s, t2);
    REQUIRE(a.size() <= b.size());
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_CASE("vocabulary replaces floor(25%) lowest-frequency types") {
  // freqs {a:5,b:4,c:3,d:2,e:2,f:1,g:1,h:1}: 8 types, k=2, ties resolved by
  // descending token, so h and g go.
  std::vector<Sentence> train;
  Sentence big;
  auto rep = [&](const std::string& t, int n) {
    for (int i = 0; i < n; ++i) big.push_back(t);
  };
  rep("a", 5); rep("b", 4); rep("c", 3); rep("d", 2);
  rep("e", 2); rep("f", 1); rep("g", 1); rep("h", 1);
  train.push_back(big);
  auto v = Vocabulary::build(train, 0);
  CHECK(v.replaced_types == 2);
  CHECK(v.size() == 7);  // 6 kept + UNK
  CHECK(v.index_to_token[0] == kUnkToken);
  CHECK(v.encode("h") == 0);
  CHECK(v.encode("g") == 0);
  CHECK(v.encode("f") != 0);
  // Kept types ordered by (frequency descending, token ascending) from 1.
  CHECK(v.index_to_token[1] == "a");
  CHECK(v.index_to_token[2] == "b");
  CHECK(v.index_to_token[3] == "c");
  CHECK(v.index_to_token[4] == "d");
  CHECK(v.index_to_token[5] == "e");
  CHECK(v.index_to_token[6] == "f");
}

TEST_CASE("vocabulary edge cases: single type and all-tied frequencies") {
  std::vector<Sentence> train{Sentence(100, "x")};
  auto v = Vocabulary::build(train, 0);
  CHECK(v.replaced_types == 0);
  CHECK(v.size() == 2);  // UNK + x

  train = {Sentence{"a", "b", "c", "d"}};
  v = Vocabulary::build(train, 0);
  CHECK(v.replaced_types == 1);
  CHECK(v.encode("d") == 0);  // descending tie rule replaces d
  CHECK(v.encode("a") != 0);

  CHECK_THROWS_AS(Vocabulary::build({}, 0), IngestionError);
}

TEST_CASE("eos is pinned at index 1 and exempt from replacement") {
  std::vector<Sentence> train{Sentence{"a", "a", "b"}, Sentence{"c", "d"}};
  auto v = Vocabulary::build(train, train.size());
  CHECK(v.index_to_token[0] == kUnkToken);
  CHECK(v.index_to_token[1] == kEosToken);
  CHECK(v.eos_index() == 1);
  CHECK(v.frequencies.at(kEosToken) == 2);
  // 4 surface types -> k=1 (d replaced); eos not counted, not replaced.
  CHECK(v.replaced_types == 1);
  CHECK(v.encode("d") == 0);
}

TEST_CASE("UNK protocol matches the brute-force oracle on random corpora") {
  Rng rng(77);
  for (int iter = 0; iter < 300; ++iter) {
    const size_t n_types = 1 + static_cast<size_t>(rng.uniform() * 40);
    std::map<std::string, int64_t> freq;
    Sentence big;
    for (size_t t = 0; t < n_types; ++t) {
      const std::string tok = "w" + std::to_string(rng.next_u64() % 1000);
      const int64_t count = 1 + static_cast<int64_t>(rng.uniform() * 5);
      if (freq.count(tok)) continue;
      freq[tok] = count;
      for (int64_t i = 0; i < count; ++i) big.push_back(tok);
    }
    auto v = Vocabulary::build({big}, 0);
    auto expect = oracle_replaced(freq);
    CHECK(v.replaced_types == freq.size() / 4);
    CHECK(v.replaced_types == expect.size());
    for (const auto& [tok, c] : freq)
      CHECK((v.encode(tok) == 0) == (expect.count(tok) > 0));
  }
}

TEST_CASE("decode then re-encode is lossless modulo UNK") {
  std::vector<Sentence> train{Sentence{"a", "b", "c", "a", "d", "e"},
                              Sentence{"a", "b", "f", "g", "h"}};
  auto v = Vocabulary::build(train, train.size());
  auto stream = encode_stream(train, v);
  // Round trip through tokens.
  std::vector<int32_t> again;
  for (int32_t idx : stream) again.push_back(v.encode(v.decode(idx)));
  CHECK(again == stream);
}

TEST_CASE("validation split takes the smallest sufficient suffix") {
  std::vector<Sentence> s{Sentence(5, "a"), Sentence(5, "b"), Sentence(5, "c"),
                          Sentence(5, "d")};
  auto [train, valid] = split_validation(s, 7);
  CHECK(word_count(valid) == 10);  // two sentences needed to reach 7
  CHECK(train.size() == 2);
  CHECK(valid[0][0] == "c");
  CHECK_THROWS_AS(split_validation(s, 100), IngestionError);
}

TEST_CASE("batchify reshapes into contiguous rows and drops the remainder") {
  std::vector<int32_t> stream;
  for (int i = 0; i < 13; ++i) stream.push_back(i);
  BatchStream bs("x", stream, 2);
  CHECK(bs.batch() == 2);
  CHECK(bs.length() == 6);  // one token dropped

  std::vector<int32_t> s12;
  for (int i = 0; i < 12; ++i) s12.push_back(i);
  BatchStream b3("x", s12, 3);
  CHECK(b3.length() == 4);
  auto seg = b3.next(4);
  // Row r covers stream positions [r*4, (r+1)*4).
  CHECK(seg.inputs[0 * 4 + 0] == 0);
  CHECK(seg.inputs[1 * 4 + 0] == 4);
  CHECK(seg.inputs[2 * 4 + 0] == 8);

  BatchStream b1("x", s12, 1);
  CHECK(b1.length() == 12);  // identity

  CHECK_THROWS_AS(BatchStream("x", {1, 2}, 3), DimensionError);
}

TEST_CASE("segments wrap cyclically with targets shifted by one") {
  std::vector<int32_t> stream;
  for (int i = 0; i < 10; ++i) stream.push_back(i);
  BatchStream bs("x", stream, 1);
  bs.next(7);  // cursor at 7, stream end minus 3
  auto seg = bs.next(5);
  CHECK(seg.inputs == std::vector<int32_t>{7, 8, 9, 0, 1});
  CHECK(seg.targets == std::vector<int32_t>{8, 9, 0, 1, 2});
}

TEST_CASE("cyclic consumption covers every position with wrap counting") {
  std::vector<int32_t> s100(100), s50(50);
  for (int i = 0; i < 100; ++i) s100[i] = i;
  for (int i = 0; i < 50; ++i) s50[i] = i;
  std::vector<BatchStream> streams;
  streams.emplace_back("long", s100, 1);
  streams.emplace_back("short", s50, 1);

  SegmentPlan plan;
  plan.length = 10;
  for (int step = 0; step < 10; ++step)
    next_multilingual_segment(streams, plan);
  CHECK(streams[0].consumed() == 100);
  CHECK(streams[1].consumed() == 100);
  // The shorter stream wrapped exactly twice.
  CHECK(streams[1].consumed() / streams[1].length() == 2);
  CHECK(streams[1].cursor() == 0);

  // Varying lengths: every column of the longer stream is visited.
  BatchStream walker("w", s100, 1);
  std::vector<int> visited(walker.length(), 0);
  Rng rng(5);
  size_t consumed = 0;
  while (consumed < walker.length()) {
    auto p = sample_segment_plan(rng, 7, false);
    const size_t at = walker.cursor();
    for (size_t t = 0; t < p.length; ++t) ++visited[(at + t) % 100];
    walker.next(p.length);
    consumed += p.length;
  }
  CHECK(std::count(visited.begin(), visited.end(), 0) == 0);
  CHECK(walker.consumed() == consumed);
  CHECK(walker.cursor() == consumed % 100);
}

TEST_CASE("segment plans: deterministic mode, rounding, clamps and scaling") {
  Rng rng(1);
  auto det = sample_segment_plan(rng, 70, true);
  CHECK(det.length == 70);
  CHECK(det.lr_scale == 1.0);

  auto p = plan_from_draws(70, false, 63.2);
  CHECK(p.length == 63);
  CHECK(p.lr_scale == doctest::Approx(0.9));

  CHECK(plan_from_draws(70, false, 2.1).length == 5);    // floor clamp
  CHECK(plan_from_draws(70, true, 95.7).length == 90);   // cap base + 20
  CHECK(plan_from_draws(35, false, 17.5).lr_scale ==
        doctest::Approx(18.0 / 35.0));
  CHECK_THROWS_AS(plan_from_draws(4, false, 10.0), ConfigError);
  CHECK_THROWS_AS(sample_segment_plan(rng, 4, true), ConfigError);

  // Stochastic mode respects the floor and cap over many draws.
  for (int i = 0; i < 2000; ++i) {
    auto sp = sample_segment_plan(rng, 70, false);
    CHECK(sp.length >= 5);
    CHECK(sp.length <= 90);
  }
}

TEST_CASE("prepared packs round-trip through disk byte-identically") {
  std::string train_text, test_text;
  Rng rng(9);
  for (int i = 0; i < 120; ++i) {
    std::string line;
    const int len = 3 + static_cast<int>(rng.uniform() * 6);
    for (int j = 0; j < len; ++j)
      line += "tok" + std::to_string(rng.next_u64() % 60) + " ";
    (i < 100 ? train_text : test_text) += line + "\n";
  }
  auto pack = prepare_pack("demo", train_text, test_text, 300, 42);
  CHECK(pack.train_words <= 300);
  CHECK(pack.language == "demo");
  CHECK(pack.vocab.index_to_token[0] == kUnkToken);

  const auto dir = std::filesystem::temp_directory_path() / "mllm_pack_test";
  std::filesystem::remove_all(dir);
  save_pack(pack, dir);
  auto loaded = load_pack(dir);
  CHECK(loaded.train == pack.train);
  CHECK(loaded.valid == pack.valid);
  CHECK(loaded.test == pack.test);
  CHECK(loaded.vocab.index_to_token == pack.vocab.index_to_token);
  CHECK(loaded.threshold == pack.threshold);
  CHECK(loaded.train_words == pack.train_words);

  // Same inputs, second save: byte-identical files.
  const auto dir2 = std::filesystem::temp_directory_path() / "mllm_pack_test2";
  std::filesystem::remove_all(dir2);
  save_pack(prepare_pack("demo", train_text, test_text, 300, 42), dir2);
  for (const char* f : {"vocab.txt", "train.idx", "valid.idx", "test.idx",
                        "meta"})
    CHECK(read_bytes(dir / f) == read_bytes(dir2 / f));

  // Index files are little-endian 32-bit words.
  const std::string bytes = read_bytes(dir / "train.idx");
  REQUIRE(bytes.size() == 4 * pack.train.size());
  const uint32_t first = static_cast<unsigned char>(bytes[0]) |
                         (static_cast<unsigned char>(bytes[1]) << 8) |
                         (static_cast<unsigned char>(bytes[2]) << 16) |
                         (static_cast<unsigned char>(bytes[3]) << 24);
  CHECK(static_cast<int32_t>(first) == pack.train[0]);

  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("word counts exclude the appended eos tokens") {
  auto pack = prepare_pack("x", "a b c\nd e f\ng h i\nj k l\n", "z z z\n",
                           kFullThreshold, 1);
  // Validation took one 3-word sentence; train keeps the other three.
  CHECK(pack.test_words == 3);
  CHECK(pack.valid_words == 3);
  CHECK(pack.train_words == 9);
  CHECK(pack.train.size() == 12);  // 9 words + 3 eos
}
