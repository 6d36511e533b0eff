#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace relabel {

// Identifier recorded in every manifest.
inline constexpr std::string_view kDefaultTokenizer = "nfc-lower-whitespace/1";

// Unicode NFC normalization followed by full lowercasing.
std::string normalize_text(std::string_view text);

// normalize_text, then split on Unicode White_Space.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace relabel
