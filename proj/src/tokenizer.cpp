// SPDX-License-Identifier: Apache-2.0
#include "petfuse/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "petfuse/error.hpp"

namespace petfuse {

namespace {

const std::vector<std::string>& specials() {
  static const std::vector<std::string> kSpecials = {"[CLS]", "[UNK]", "[FINDING]", "[NUM]", "[LOC]"};
  return kSpecials;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (c == '[') {
      std::size_t j = i + 1;
      while (j < n && std::isupper(static_cast<unsigned char>(text[j]))) ++j;
      if (j < n && text[j] == ']' && j > i + 1) {
        out.emplace_back(text.substr(i, j - i + 1));
        i = j + 1;
      } else {
        out.emplace_back(1, '[');
        ++i;
      }
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < n) {
        const auto cj = static_cast<unsigned char>(text[j]);
        if (is_word_char(cj)) {
          ++j;
        } else if (cj == '.' && j + 1 < n && std::isdigit(static_cast<unsigned char>(text[j + 1])) &&
                   j > i && std::isdigit(static_cast<unsigned char>(text[j - 1]))) {
          ++j;  // decimal point inside a number
        } else {
          break;
        }
      }
      std::string tok(text.substr(i, j - i));
      for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      out.push_back(std::move(tok));
      i = j;
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = specials();
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::set<std::string> seen;
  const auto& sp = specials();
  for (const auto& doc : corpus) {
    for (auto& tok : tokenize(doc)) {
      if (std::find(sp.begin(), sp.end(), tok) == sp.end()) seen.insert(std::move(tok));
    }
  }
  std::vector<std::string> tokens = sp;
  tokens.insert(tokens.end(), seen.begin(), seen.end());
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& sp = specials();
  if (tokens.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens.begin())) {
    throw InputError("vocabulary must start with the special tokens");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) {
      throw InputError("duplicate vocabulary token: " + v.tokens_[i]);
    }
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(std::string_view text, std::size_t max_len) const {
  std::vector<std::size_t> ids{kCls};
  for (const auto& tok : tokenize(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(id(tok));
  }
  return ids;
}

}  // namespace petfuse
