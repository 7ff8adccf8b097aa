#include "mailproto/tokenizer.hpp"

#include <cctype>
#include <stdexcept>

#include "mailproto/corpus.hpp"
#include "mailproto/random.hpp"

namespace mailproto {

namespace {

bool word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

std::vector<TextToken> split_words(std::string_view text) {
  std::vector<TextToken> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (word_char(c)) {
      ++i;
      while (i < text.size()) {
        const auto d = static_cast<unsigned char>(text[i]);
        if (word_char(d)) {
          ++i;
        } else if ((d == '\'' || d == '-') && i + 1 < text.size() &&
                   word_char(static_cast<unsigned char>(text[i + 1]))) {
          i += 2;
        } else {
          break;
        }
      }
    } else {
      ++i;
    }
    out.push_back(TextToken{std::string(text.substr(start, i - start)), start, i});
  }
  return out;
}

HashingVocabulary::HashingVocabulary(int buckets, std::uint64_t salt) : buckets_(buckets), salt_(salt) {
  if (buckets <= kReserved) throw std::invalid_argument("vocabulary needs more buckets than reserved ids");
}

int HashingVocabulary::id(std::string_view token) const {
  if (token == kPadToken) return kPad;
  if (token == kClsToken) return kCls;
  if (token == kSepToken) return kSep;
  const std::uint64_t h = fnv1a(to_lower(token), mix_seed(14695981039346656037ULL, salt_));
  return kReserved + static_cast<int>(h % static_cast<std::uint64_t>(buckets_ - kReserved));
}

std::vector<int> HashingVocabulary::ids(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

}  // namespace mailproto
