#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mcqa {

// Hex-encoded SHA-256 of the raw bytes.
std::string sha256_hex(std::string_view bytes);

// Trim both ends and collapse internal whitespace runs to a single space.
std::string normalize_whitespace(std::string_view text);

// Lower-cased word tokens, split on whitespace and punctuation.
// Decodes UTF-8; lowercases ASCII, Latin-1, Latin Extended-A, Greek and
// Cyrillic. Invalid byte sequences are treated as U+FFFD (a letter).
std::vector<std::string> word_tokens(std::string_view text);

}  // namespace mcqa
