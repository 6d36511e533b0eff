#include "relabel/tokenize.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "relabel/error.hpp"

namespace relabel {

namespace {

icu::UnicodeString nfc_lower(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::io, "ICU NFC normalizer unavailable");
  icu::UnicodeString source =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString normalized = nfc->normalize(source, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::invalid_argument, "text is not normalizable");
  normalized.toLower(icu::Locale::getRoot());
  return normalized;
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  nfc_lower(text).toUTF8String(out);
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const icu::UnicodeString s = nfc_lower(text);
  std::vector<std::string> tokens;
  int32_t i = 0;
  int32_t token_start = -1;
  while (i < s.length()) {
    const UChar32 c = s.char32At(i);
    const int32_t next = s.moveIndex32(i, 1);
    if (u_isUWhiteSpace(c)) {
      if (token_start >= 0) {
        std::string tok;
        s.tempSubStringBetween(token_start, i).toUTF8String(tok);
        tokens.push_back(std::move(tok));
        token_start = -1;
      }
    } else if (token_start < 0) {
      token_start = i;
    }
    i = next;
  }
  if (token_start >= 0) {
    std::string tok;
    s.tempSubStringBetween(token_start, s.length()).toUTF8String(tok);
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

}  // namespace relabel
