// SPDX-License-Identifier: Apache-2.0
//
// Lexicon-driven masking of report text. Pathology phrases become [FINDING];
// numbers become [NUM]; location terms become [LOC]. Matching is on whole
// tokens and is case-insensitive; text between matches is copied unchanged.
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace petfuse {

struct Lexicon {
  std::vector<std::string> pathology;
  std::vector<std::string> negation;
  std::vector<std::string> location;

  /// Lists shipped with the library (also mirrored under data/lexicon/).
  static Lexicon builtin();
  /// Reads pathology.txt, negation.txt and location.txt from `dir`. A file
  /// that is absent keeps the built-in list for that category.
  static Lexicon load_dir(const std::filesystem::path& dir);
  /// One term per line; blank lines and '#' comments are skipped; terms are
  /// lowercased and surrounding whitespace trimmed.
  static std::vector<std::string> read_terms(const std::filesystem::path& file);
};

struct SubstitutionCounts {
  std::size_t finding = 0;
  std::size_t number = 0;
  std::size_t location = 0;
  std::size_t negation = 0;  // only non-zero when negation stripping is on

  std::size_t total() const { return finding + number + location + negation; }
};

struct RedactedReport {
  std::string text;
  SubstitutionCounts substitutions;
};

struct RedactOptions {
  /// Delete negation terms as well. Off by default: negation words are kept.
  bool strip_negation = false;
};

/// Numeric token: digits, optional decimal part, optional unit suffix of
/// lowercase letters or '%' (e.g. "3", "2.5", "4cm", "10%").
bool is_numeric_token(std::string_view token);

/// Compiled lexicon. Construction is the only expensive step; `redact` is
/// const and safe to call from several threads.
class Redactor {
 public:
  explicit Redactor(const Lexicon& lexicon, RedactOptions options = {});

  RedactedReport redact(std::string_view text) const;

  /// Occurrences of lexicon terms (all three categories) found by the same
  /// leftmost-longest scan used for masking.
  std::size_t count_terms(std::string_view text) const;

 private:
  using Phrase = std::vector<std::string>;
  struct PhraseSet {
    // Keyed by first token; each bucket sorted longest first.
    std::unordered_map<std::string, std::vector<Phrase>> by_head;
    void add(const std::string& term);
  };

  PhraseSet pathology_, negation_, location_;
  RedactOptions options_;
};

RedactedReport redact(std::string_view text, const Lexicon& lexicon, RedactOptions options = {});

}  // namespace petfuse
