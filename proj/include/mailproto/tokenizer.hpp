#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mailproto {

struct TextToken {
  std::string text;
  std::size_t begin = 0;  // byte offsets into the source text
  std::size_t end = 0;
};

// Word runs (letters/digits with inner apostrophes or hyphens) and single
// punctuation characters. Offsets let callers edit the source text in place.
std::vector<TextToken> split_words(std::string_view text);

inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kPadToken = "[PAD]";

// Maps lowercased surface forms to a fixed number of buckets with a salted hash.
// Ids 0..2 are reserved for [PAD], [CLS], [SEP].
class HashingVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kReserved = 3;

  HashingVocabulary(int buckets, std::uint64_t salt);

  int id(std::string_view token) const;
  std::vector<int> ids(const std::vector<std::string>& tokens) const;
  int size() const { return buckets_; }
  std::uint64_t salt() const { return salt_; }

 private:
  int buckets_;
  std::uint64_t salt_;
};

}  // namespace mailproto
