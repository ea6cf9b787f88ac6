#pragma once

#include <cctype>
#include <cstddef>
#include <functional>
#include <string_view>

namespace conceptlm {

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Fallback token estimate used when a backend reports no usage. Splits on
/// whitespace and punctuation; every punctuation character is one token and
/// each run of word characters costs ceil(length / 4) tokens. Outputs built
/// from it are labelled as estimates.
inline std::size_t estimate_tokens(std::string_view text) {
  std::size_t tokens = 0;
  std::size_t run = 0;
  auto flush = [&] {
    tokens += (run + 3) / 4;
    run = 0;
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      ++run;
    } else {
      flush();
      if (!std::isspace(c)) ++tokens;
    }
  }
  flush();
  return tokens;
}

inline TokenCounter default_token_counter() { return [](std::string_view s) { return estimate_tokens(s); }; }

}  // namespace conceptlm
