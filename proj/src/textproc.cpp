#include "mllm/textproc.hpp"

#include <algorithm>
#include <array>

#include "mllm/errors.hpp"

namespace mllm {

std::vector<uint32_t> decode_utf8(std::string_view s) {
  std::vector<uint32_t> out;
  out.reserve(s.size());
  size_t i = 0;
  auto bad = [&](size_t at) {
    throw IngestionError("invalid UTF-8 at byte " + std::to_string(at));
  };
  while (i < s.size()) {
    const unsigned char b0 = s[i];
    if (b0 < 0x80) {
      out.push_back(b0);
      ++i;
      continue;
    }
    int len;
    uint32_t cp;
    if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    } else {
      bad(i);
      return out;
    }
    if (i + len > s.size()) bad(i);
    for (int k = 1; k < len; ++k) {
      const unsigned char bk = s[i + k];
      if ((bk & 0xC0) != 0x80) bad(i + k);
      cp = (cp << 6) | (bk & 0x3F);
    }
    static constexpr std::array<uint32_t, 5> min_cp{0, 0, 0x80, 0x800,
                                                    0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      bad(i);
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string encode_utf8(const std::vector<uint32_t>& cps) {
  std::string out;
  out.reserve(cps.size());
  for (uint32_t cp : cps) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

namespace {

struct Range {
  uint32_t lo, hi;
};

// Category-P ranges for the blocks this pipeline is expected to meet.
constexpr Range kPunct[] = {
    {0x21, 0x23},     {0x25, 0x2A},     {0x2C, 0x2F},     {0x3A, 0x3B},
    {0x3F, 0x40},     {0x5B, 0x5D},     {0x5F, 0x5F},     {0x7B, 0x7B},
    {0x7D, 0x7D},     {0xA1, 0xA1},     {0xA7, 0xA7},     {0xAB, 0xAB},
    {0xB6, 0xB7},     {0xBB, 0xBB},     {0xBF, 0xBF},     {0x37E, 0x37E},
    {0x387, 0x387},   {0x55A, 0x55F},   {0x589, 0x58A},   {0x5BE, 0x5BE},
    {0x5C0, 0x5C0},   {0x5C3, 0x5C3},   {0x5C6, 0x5C6},   {0x5F3, 0x5F4},
    {0x609, 0x60A},   {0x60C, 0x60D},   {0x61B, 0x61B},   {0x61E, 0x61F},
    {0x66A, 0x66D},   {0x6D4, 0x6D4},   {0x964, 0x965},   {0x970, 0x970},
    {0xDF4, 0xDF4},   {0x104A, 0x104F}, {0x10FB, 0x10FB}, {0x1360, 0x1368},
    {0x166E, 0x166E}, {0x16EB, 0x16ED}, {0x1735, 0x1736}, {0x17D4, 0x17D6},
    {0x17D8, 0x17DA}, {0x2010, 0x2027}, {0x2030, 0x2043}, {0x2045, 0x2051},
    {0x2053, 0x205E}, {0x2CF9, 0x2CFC}, {0x2CFE, 0x2CFF}, {0x2E00, 0x2E2E},
    {0x2E30, 0x2E4F}, {0x3001, 0x3003}, {0x3008, 0x3011}, {0x3014, 0x301F},
    {0x3030, 0x3030}, {0x303D, 0x303D}, {0x30A0, 0x30A0}, {0x30FB, 0x30FB},
    {0xFE50, 0xFE52}, {0xFE54, 0xFE57}, {0xFE63, 0xFE63}, {0xFE68, 0xFE68},
    {0xFE6A, 0xFE6B}, {0xFF01, 0xFF03}, {0xFF05, 0xFF0A}, {0xFF0C, 0xFF0F},
    {0xFF1A, 0xFF1B}, {0xFF1F, 0xFF20}, {0xFF3B, 0xFF3D}, {0xFF3F, 0xFF3F},
    {0xFF5B, 0xFF5B}, {0xFF5D, 0xFF5D}, {0xFF5F, 0xFF65},
};

}  // namespace

bool is_punct(uint32_t cp) {
  auto it = std::upper_bound(
      std::begin(kPunct), std::end(kPunct), cp,
      [](uint32_t v, const Range& r) { return v < r.lo; });
  return it != std::begin(kPunct) && cp <= (it - 1)->hi;
}

bool is_space(uint32_t cp) {
  return (cp >= 0x09 && cp <= 0x0D) || cp == 0x20 || cp == 0x85 ||
         cp == 0xA0 || cp == 0x1680 || (cp >= 0x2000 && cp <= 0x200A) ||
         cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F ||
         cp == 0x3000;
}

uint32_t fold_case(uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp < 0x80) return cp;
  // Latin-1 supplement (multiplication sign excluded).
  if ((cp >= 0xC0 && cp <= 0xD6) || (cp >= 0xD8 && cp <= 0xDE))
    return cp + 0x20;
  // Latin Extended-A.
  if (cp == 0x130) return 'i';  // I with dot above
  if (cp == 0x178) return 0xFF;
  if (cp >= 0x100 && cp <= 0x137) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x139 && cp <= 0x148) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x14A && cp <= 0x177) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x179 && cp <= 0x17E) return (cp % 2 == 1) ? cp + 1 : cp;
  // Latin Extended-B, the regular alternating stretches.
  if (cp >= 0x1CD && cp <= 0x1DC) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x1DE && cp <= 0x1EF) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x1F8 && cp <= 0x21F) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x222 && cp <= 0x233) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x246 && cp <= 0x24F) return (cp % 2 == 0) ? cp + 1 : cp;
  // Greek.
  if (cp == 0x386) return 0x3AC;
  if (cp >= 0x388 && cp <= 0x38A) return cp + 0x25;
  if (cp == 0x38C) return 0x3CC;
  if (cp == 0x38E || cp == 0x38F) return cp + 0x3F;
  if ((cp >= 0x391 && cp <= 0x3A1) || (cp >= 0x3A3 && cp <= 0x3AB))
    return cp + 0x20;
  // Cyrillic.
  if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
  if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
  if (cp >= 0x460 && cp <= 0x481) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x48A && cp <= 0x4BF) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x4C1 && cp <= 0x4CE) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x4D0 && cp <= 0x52F) return (cp % 2 == 0) ? cp + 1 : cp;
  // Armenian.
  if (cp >= 0x531 && cp <= 0x556) return cp + 0x30;
  // Fullwidth Latin.
  if (cp >= 0xFF21 && cp <= 0xFF3A) return cp + 0x20;
  return cp;
}

std::vector<std::string> normalize_line(std::string_view line) {
  auto cps = decode_utf8(line);
  std::vector<std::string> tokens;
  std::vector<uint32_t> cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(encode_utf8(cur));
      cur.clear();
    }
  };
  for (uint32_t cp : cps) {
    if (is_space(cp)) {
      flush();
    } else if (!is_punct(cp)) {
      cur.push_back(fold_case(cp));
    }
  }
  flush();
  return tokens;
}

}  // namespace mllm
