#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace iurkit::utf8 {

// Decodes UTF-8 into scalar values. Throws iurkit::Error on malformed input.
std::vector<char32_t> decode(std::string_view text);

void append(std::string& out, char32_t cp);
std::string encode(char32_t cp);

bool is_space(char32_t cp);
bool is_cjk(char32_t cp);
bool is_punct(char32_t cp);
// Letters, digits and anything else that is neither space, CJK nor punctuation.
inline bool is_word(char32_t cp) { return !is_space(cp) && !is_cjk(cp) && !is_punct(cp); }

// True if any scalar is CJK / any scalar is an ASCII letter.
bool has_cjk(std::string_view text);
bool has_latin(std::string_view text);

std::string ascii_lower(std::string_view text);

}  // namespace iurkit::utf8
