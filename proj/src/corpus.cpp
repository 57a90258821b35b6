#include "mllm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mllm/errors.hpp"
#include "mllm/textproc.hpp"

namespace mllm {

std::vector<Sentence> preprocess_corpus(const std::string& text) {
  std::vector<Sentence> sentences;
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    ++line_no;
    std::string_view line(text.data() + pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    try {
      auto tokens = normalize_line(line);
      if (!tokens.empty()) sentences.push_back(std::move(tokens));
    } catch (const IngestionError& e) {
      throw IngestionError("line " + std::to_string(line_no) + ": " +
                           e.what());
    }
    if (nl == text.size()) break;
    pos = nl + 1;
  }
  return sentences;
}

size_t word_count(const std::vector<Sentence>& sentences) {
  size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::vector<Sentence> truncate_training(const std::vector<Sentence>& sentences,
                                        int64_t threshold) {
  if (threshold == kFullThreshold) return sentences;
  if (threshold <= 0)
    throw ConfigError("truncate_training: threshold must be positive or FULL");
  std::vector<Sentence> out;
  size_t total = 0;
  for (const auto& s : sentences) {
    if (total + s.size() > static_cast<size_t>(threshold)) break;
    total += s.size();
    out.push_back(s);
  }
  if (out.empty())
    throw ConfigError(
        "truncate_training: threshold " + std::to_string(threshold) +
        " is smaller than the first sentence; no trainable prefix");
  return out;
}

std::pair<std::vector<Sentence>, std::vector<Sentence>> split_validation(
    const std::vector<Sentence>& sentences, size_t target_words) {
  size_t taken = 0;
  size_t cut = sentences.size();
  while (cut > 0 && taken < target_words) {
    --cut;
    taken += sentences[cut].size();
  }
  if (cut == 0)
    throw IngestionError(
        "split_validation: validation target consumes the whole training "
        "text");
  return {std::vector<Sentence>(sentences.begin(), sentences.begin() + cut),
          std::vector<Sentence>(sentences.begin() + cut, sentences.end())};
}

int32_t Vocabulary::eos_index() const {
  auto it = token_to_index.find(kEosToken);
  if (it == token_to_index.end())
    throw LookupError("vocabulary has no <eos> entry");
  return it->second;
}

int32_t Vocabulary::encode(const std::string& token) const {
  auto it = token_to_index.find(token);
  return it == token_to_index.end() ? unk_index : it->second;
}

const std::string& Vocabulary::decode(int32_t index) const {
  if (index < 0 || static_cast<size_t>(index) >= index_to_token.size())
    throw IndexError("vocabulary decode: index " + std::to_string(index) +
                     " out of " + std::to_string(index_to_token.size()));
  return index_to_token[static_cast<size_t>(index)];
}

Vocabulary Vocabulary::build(const std::vector<Sentence>& train,
                             size_t eos_count) {
  if (train.empty())
    throw IngestionError("build_vocabulary: empty token stream");
  Vocabulary v;
  std::unordered_map<std::string, int64_t> freq;
  for (const auto& s : train)
    for (const auto& tok : s) {
      // The special names are reserved; surface occurrences fold into them.
      if (tok == kUnkToken || tok == kEosToken) continue;
      ++freq[tok];
    }

  // k lowest-frequency types -> UNK; ties broken by descending token so the
  // rule is deterministic.
  std::vector<std::pair<std::string, int64_t>> types(freq.begin(), freq.end());
  const size_t k = types.size() / 4;
  std::sort(types.begin(), types.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first > b.first;
  });
  std::vector<std::pair<std::string, int64_t>> kept(types.begin() + k,
                                                    types.end());
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  v.replaced_types = k;
  v.index_to_token.push_back(kUnkToken);
  if (eos_count > 0) v.index_to_token.push_back(kEosToken);
  for (auto& [tok, f] : kept) v.index_to_token.push_back(tok);
  for (size_t i = 0; i < v.index_to_token.size(); ++i)
    v.token_to_index[v.index_to_token[i]] = static_cast<int32_t>(i);
  v.frequencies = std::move(freq);
  if (eos_count > 0)
    v.frequencies[kEosToken] = static_cast<int64_t>(eos_count);
  return v;
}

std::vector<int32_t> encode_stream(const std::vector<Sentence>& sentences,
                                   const Vocabulary& vocab) {
  std::vector<int32_t> out;
  const int32_t eos = vocab.eos_index();
  for (const auto& s : sentences) {
    for (const auto& tok : s) out.push_back(vocab.encode(tok));
    out.push_back(eos);
  }
  return out;
}

LanguagePack prepare_pack(const std::string& language,
                          const std::string& train_text,
                          const std::string& test_text, int64_t threshold,
                          uint64_t seed) {
  auto raw_train = preprocess_corpus(train_text);
  auto test = preprocess_corpus(test_text);
  if (raw_train.empty())
    throw IngestionError(language + ": training corpus is empty");
  if (test.empty())
    throw IngestionError(language + ": test corpus is empty");

  auto [train_part, valid] = split_validation(raw_train, word_count(test));
  auto train = truncate_training(train_part, threshold);

  LanguagePack pack;
  pack.language = language;
  pack.threshold = threshold;
  pack.seed = seed;
  pack.vocab = Vocabulary::build(train, train.size());
  pack.train = encode_stream(train, pack.vocab);
  pack.valid = encode_stream(valid, pack.vocab);
  pack.test = encode_stream(test, pack.vocab);
  pack.train_words = word_count(train);
  pack.valid_words = word_count(valid);
  pack.test_words = word_count(test);
  pack.train_sentences = train.size();
  pack.valid_sentences = valid.size();
  pack.test_sentences = test.size();
  return pack;
}

namespace {

void write_idx(const std::filesystem::path& path,
               const std::vector<int32_t>& stream) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  for (int32_t v : stream) {
    const uint32_t u = static_cast<uint32_t>(v);
    const unsigned char bytes[4] = {
        static_cast<unsigned char>(u & 0xFF),
        static_cast<unsigned char>((u >> 8) & 0xFF),
        static_cast<unsigned char>((u >> 16) & 0xFF),
        static_cast<unsigned char>((u >> 24) & 0xFF)};
    f.write(reinterpret_cast<const char*>(bytes), 4);
  }
  if (!f) throw IoError("short write to " + path.string());
}

std::vector<int32_t> read_idx(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::vector<int32_t> out;
  unsigned char bytes[4];
  while (f.read(reinterpret_cast<char*>(bytes), 4)) {
    uint32_t u = static_cast<uint32_t>(bytes[0]) |
                 (static_cast<uint32_t>(bytes[1]) << 8) |
                 (static_cast<uint32_t>(bytes[2]) << 16) |
                 (static_cast<uint32_t>(bytes[3]) << 24);
    out.push_back(static_cast<int32_t>(u));
  }
  if (f.gcount() != 0)
    throw IoError("truncated index file " + path.string());
  return out;
}

}  // namespace

void save_pack(const LanguagePack& pack, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "vocab.txt", std::ios::binary);
    if (!f) throw IoError("cannot write " + (dir / "vocab.txt").string());
    for (const auto& tok : pack.vocab.index_to_token) f << tok << "\n";
  }
  write_idx(dir / "train.idx", pack.train);
  write_idx(dir / "valid.idx", pack.valid);
  write_idx(dir / "test.idx", pack.test);
  std::ofstream meta(dir / "meta", std::ios::binary);
  if (!meta) throw IoError("cannot write " + (dir / "meta").string());
  meta << "language = " << pack.language << "\n";
  meta << "threshold = "
       << (pack.threshold == kFullThreshold ? std::string("FULL")
                                            : std::to_string(pack.threshold))
       << "\n";
  meta << "seed = " << pack.seed << "\n";
  meta << "train_words = " << pack.train_words << "\n";
  meta << "valid_words = " << pack.valid_words << "\n";
  meta << "test_words = " << pack.test_words << "\n";
  meta << "train_sentences = " << pack.train_sentences << "\n";
  meta << "valid_sentences = " << pack.valid_sentences << "\n";
  meta << "test_sentences = " << pack.test_sentences << "\n";
  meta << "vocab_size = " << pack.vocab.size() << "\n";
  meta << "replaced_types = " << pack.vocab.replaced_types << "\n";
}

LanguagePack load_pack(const std::filesystem::path& dir) {
  LanguagePack pack;
  std::ifstream meta(dir / "meta");
  if (!meta) throw IoError("cannot read " + (dir / "meta").string());
  std::string line;
  std::unordered_map<std::string, std::string> kv;
  while (std::getline(meta, line)) {
    auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end())
      throw IoError("pack meta missing key '" + key + "' in " + dir.string());
    return it->second;
  };
  pack.language = need("language");
  const std::string thr = need("threshold");
  pack.threshold = thr == "FULL" ? kFullThreshold : std::stoll(thr);
  pack.seed = std::stoull(need("seed"));
  pack.train_words = std::stoull(need("train_words"));
  pack.valid_words = std::stoull(need("valid_words"));
  pack.test_words = std::stoull(need("test_words"));
  pack.train_sentences = std::stoull(need("train_sentences"));
  pack.valid_sentences = std::stoull(need("valid_sentences"));
  pack.test_sentences = std::stoull(need("test_sentences"));

  std::ifstream vf(dir / "vocab.txt", std::ios::binary);
  if (!vf) throw IoError("cannot read " + (dir / "vocab.txt").string());
  while (std::getline(vf, line)) pack.vocab.index_to_token.push_back(line);
  for (size_t i = 0; i < pack.vocab.index_to_token.size(); ++i)
    pack.vocab.token_to_index[pack.vocab.index_to_token[i]] =
        static_cast<int32_t>(i);
  pack.vocab.replaced_types = std::stoull(need("replaced_types"));
  if (pack.vocab.index_to_token.empty() ||
      pack.vocab.index_to_token[0] != kUnkToken)
    throw IoError("pack vocabulary in " + dir.string() +
                  " does not start with " + kUnkToken);

  pack.train = read_idx(dir / "train.idx");
  pack.valid = read_idx(dir / "valid.idx");
  pack.test = read_idx(dir / "test.idx");
  return pack;
}

BatchStream::BatchStream(std::string language,
                         const std::vector<int32_t>& stream, size_t batch)
    : language_(std::move(language)), batch_(batch) {
  if (batch == 0) throw ConfigError("batchify: batch size must be positive");
  if (stream.size() < batch)
    throw DimensionError("batchify: stream of " +
                         std::to_string(stream.size()) +
                         " tokens is shorter than batch size " +
                         std::to_string(batch));
  length_ = stream.size() / batch;
  rows_.resize(batch * length_);
  // Row r covers stream positions [r*length, (r+1)*length); the trailing
  // remainder is dropped.
  for (size_t r = 0; r < batch; ++r)
    for (size_t c = 0; c < length_; ++c)
      rows_[r * length_ + c] = stream[r * length_ + c];
}

BatchStream::Segment BatchStream::next(size_t len) {
  Segment seg;
  seg.batch = batch_;
  seg.length = len;
  seg.inputs.resize(batch_ * len);
  seg.targets.resize(batch_ * len);
  for (size_t r = 0; r < batch_; ++r) {
    for (size_t t = 0; t < len; ++t) {
      const size_t cin = (cursor_ + t) % length_;
      const size_t ctgt = (cursor_ + t + 1) % length_;
      seg.inputs[r * len + t] = rows_[r * length_ + cin];
      seg.targets[r * len + t] = rows_[r * length_ + ctgt];
    }
  }
  cursor_ = (cursor_ + len) % length_;
  consumed_ += len;
  return seg;
}

void BatchStream::reset_cursor() {
  cursor_ = 0;
  consumed_ = 0;
}

SegmentPlan plan_from_draws(size_t base, bool half_center,
                            double normal_draw) {
  if (base < 5)
    throw ConfigError("segment plan: base length must be at least 5");
  SegmentPlan plan;
  plan.base = base;
  (void)half_center;  // the center only matters through the draw itself
  long rounded = std::lround(normal_draw);
  long capped = std::min<long>(rounded, static_cast<long>(base + 20));
  plan.length = static_cast<size_t>(std::max<long>(5, capped));
  plan.lr_scale =
      static_cast<double>(plan.length) / static_cast<double>(base);
  return plan;
}

SegmentPlan sample_segment_plan(Rng& rng, size_t base, bool deterministic) {
  if (base < 5)
    throw ConfigError("segment plan: base length must be at least 5");
  if (deterministic) {
    SegmentPlan plan;
    plan.base = base;
    plan.length = base;
    plan.lr_scale = 1.0;
    return plan;
  }
  const bool half = !(rng.uniform() < 0.95);
  const double center =
      half ? static_cast<double>(base) / 2.0 : static_cast<double>(base);
  const double draw = rng.normal(center, 5.0);
  return plan_from_draws(base, half, draw);
}

std::unordered_map<std::string, BatchStream::Segment>
next_multilingual_segment(std::vector<BatchStream>& streams,
                          const SegmentPlan& plan) {
  std::unordered_map<std::string, BatchStream::Segment> out;
  for (auto& s : streams) out[s.language()] = s.next(plan.length);
  return out;
}

size_t epoch_segments(const std::vector<BatchStream>& streams,
                      size_t segment_length) {
  size_t longest = 0;
  for (const auto& s : streams) longest = std::max(longest, s.length());
  if (longest == 0 || segment_length == 0) return 0;
  return (longest + segment_length - 1) / segment_length;
}

}  // namespace mllm
