// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace petfuse {

inline constexpr std::size_t kMaxSequenceLength = 512;

/// Lowercased word, number and punctuation tokens. Bracketed mask tokens such
/// as "[FINDING]" are kept whole and upper-case.
std::vector<std::string> tokenize(std::string_view text);

/// Corpus-built vocabulary. Ids 0..4 are the specials [CLS] [UNK] [FINDING]
/// [NUM] [LOC]; corpus tokens follow in lexicographic order.
class Vocabulary {
 public:
  static constexpr std::size_t kCls = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// [CLS] followed by token ids, right-truncated to `max_len` ids in total.
  std::vector<std::size_t> encode(std::string_view text, std::size_t max_len = kMaxSequenceLength) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace petfuse
