#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mllm {

// Throws IngestionError on malformed UTF-8 (overlong forms, surrogates,
// truncated sequences), reporting the byte offset.
std::vector<uint32_t> decode_utf8(std::string_view s);
std::string encode_utf8(const std::vector<uint32_t>& cps);

// Unicode punctuation (general category P, common blocks).
bool is_punct(uint32_t cp);
bool is_space(uint32_t cp);
// Simple default case folding for the common bicameral blocks (Latin,
// Greek, Cyrillic, fullwidth); identity elsewhere.
uint32_t fold_case(uint32_t cp);

// Punctuation deleted in place, text case-folded, split on whitespace runs.
std::vector<std::string> normalize_line(std::string_view line);

}  // namespace mllm
