#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "mllm/rng.hpp"

namespace mllm {

using Sentence = std::vector<std::string>;

inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kEosToken = "<eos>";
// FULL training text (no truncation).
inline constexpr int64_t kFullThreshold = -1;

// One sentence per input line; empty lines dropped. Ingestion errors carry
// the 1-based line number.
std::vector<Sentence> preprocess_corpus(const std::string& text);

size_t word_count(const std::vector<Sentence>& sentences);

// Longest prefix of whole sentences whose word count stays <= threshold.
std::vector<Sentence> truncate_training(const std::vector<Sentence>& sentences,
                                        int64_t threshold);

// Splits off the smallest suffix of whole sentences totaling at least
// target_words as the validation set; the rest stays training data.
std::pair<std::vector<Sentence>, std::vector<Sentence>> split_validation(
    const std::vector<Sentence>& sentences, size_t target_words);

// Token <-> dense index map with the 25% lowest-frequency UNK replacement.
// Index 0 is always "<unk>"; when built with eos_count > 0, "<eos>" is
// pinned at index 1 and exempt from replacement and from the type count.
struct Vocabulary {
  std::vector<std::string> index_to_token;
  std::unordered_map<std::string, int32_t> token_to_index;
  std::unordered_map<std::string, int64_t> frequencies;
  int32_t unk_index = 0;
  size_t replaced_types = 0;

  size_t size() const { return index_to_token.size(); }
  int32_t eos_index() const;
  int32_t encode(const std::string& token) const;
  const std::string& decode(int32_t index) const;

  static Vocabulary build(const std::vector<Sentence>& train,
                          size_t eos_count);
};

// One language's prepared splits as flat index streams ("<eos>" appended per
// sentence) plus the vocabulary they are encoded with.
struct LanguagePack {
  std::string language;
  Vocabulary vocab;
  std::vector<int32_t> train, valid, test;
  size_t train_words = 0, valid_words = 0, test_words = 0;
  size_t train_sentences = 0, valid_sentences = 0, test_sentences = 0;
  int64_t threshold = kFullThreshold;
  uint64_t seed = 0;
};

std::vector<int32_t> encode_stream(const std::vector<Sentence>& sentences,
                                   const Vocabulary& vocab);

// preprocess -> carve validation (sized by the test split) -> truncate ->
// build vocabulary -> encode.
LanguagePack prepare_pack(const std::string& language,
                          const std::string& train_text,
                          const std::string& test_text, int64_t threshold,
                          uint64_t seed);

void save_pack(const LanguagePack& pack, const std::filesystem::path& dir);
LanguagePack load_pack(const std::filesystem::path& dir);

// Continuous-stream batch view: B rows, each a contiguous slice of the
// corpus, consumed cyclically.
class BatchStream {
 public:
  BatchStream(std::string language, const std::vector<int32_t>& stream,
              size_t batch);

  struct Segment {
    size_t batch = 0, length = 0;
    std::vector<int32_t> inputs, targets;  // row-major B x length
  };

  // Inputs at the cursor, targets shifted by one, both wrapping modulo the
  // stream length; advances the cursor by len.
  Segment next(size_t len);

  const std::string& language() const { return language_; }
  size_t batch() const { return batch_; }
  size_t length() const { return length_; }
  size_t cursor() const { return cursor_; }
  size_t consumed() const { return consumed_; }
  void reset_cursor();

 private:
  std::string language_;
  std::vector<int32_t> rows_;  // batch_ x length_ row-major
  size_t batch_, length_, cursor_ = 0, consumed_ = 0;
};

// Per-step segment sizing for variable length backpropagation sequences;
// the learning rate is scaled by length/base.
struct SegmentPlan {
  size_t base = 70;
  size_t length = 70;
  double lr_scale = 1.0;
};

// Pure mapping from raw draws to a plan (kept separate so replay tests can
// inject draws).
SegmentPlan plan_from_draws(size_t base, bool half_center, double normal_draw);
SegmentPlan sample_segment_plan(Rng& rng, size_t base, bool deterministic);

// One segment per language, all with the same length; each stream advances
// with wraparound.
std::unordered_map<std::string, BatchStream::Segment>
next_multilingual_segment(std::vector<BatchStream>& streams,
                          const SegmentPlan& plan);

// Segments per epoch: enough to traverse the longest language's batchified
// stream once at the given segment length.
size_t epoch_segments(const std::vector<BatchStream>& streams,
                      size_t segment_length);

}  // namespace mllm
