// SPDX-License-Identifier: Apache-2.0
#include "petfuse/redaction.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "petfuse/error.hpp"

namespace petfuse {

namespace {

enum class PieceKind { word, mask, punct, space };

struct Piece {
  PieceKind kind;
  std::string text;   // original spelling
  std::string lower;  // lowercased, for matching
};

bool word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }
bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

// Lossless split: concatenating the pieces' text reproduces the input.
std::vector<Piece> scan(std::string_view text) {
  std::vector<Piece> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](PieceKind kind, std::size_t end) {
    std::string_view t = text.substr(i, end - i);
    out.push_back({kind, std::string(t), lowercase(t)});
    i = end;
  };
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      std::size_t j = i;
      while (j < n && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      emit(PieceKind::space, j);
    } else if (c == '[') {
      std::size_t j = i + 1;
      while (j < n && std::isupper(static_cast<unsigned char>(text[j]))) ++j;
      if (j < n && j > i + 1 && text[j] == ']') {
        emit(PieceKind::mask, j + 1);
      } else {
        emit(PieceKind::punct, i + 1);
      }
    } else if (word_byte(c)) {
      std::size_t j = i;
      while (j < n) {
        if (word_byte(static_cast<unsigned char>(text[j]))) {
          ++j;
        } else if (text[j] == '.' && j > i && digit(text[j - 1]) && j + 1 < n && digit(text[j + 1])) {
          ++j;
        } else {
          break;
        }
      }
      if (digit(text[i])) {
        while (j < n && text[j] == '%') ++j;
      }
      emit(PieceKind::word, j);
    } else {
      emit(PieceKind::punct, i + 1);
    }
  }
  return out;
}

// Indices of non-space pieces; phrases may only be separated by whitespace.
std::vector<std::size_t> content_positions(const std::vector<Piece>& pieces) {
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (pieces[i].kind != PieceKind::space) pos.push_back(i);
  }
  return pos;
}

std::vector<std::string> builtin_pathology() {
  return {
      // the fourteen labels
      "atelectasis", "cardiomegaly", "effusion", "infiltration", "mass", "nodule", "pneumonia",
      "pneumothorax", "consolidation", "edema", "emphysema", "fibrosis", "pleural thickening", "hernia",
      // inflections and synonyms
      "atelectases", "atelectatic", "subsegmental atelectasis", "enlarged heart", "cardiac enlargement",
      "enlarged cardiac silhouette", "heart enlargement", "effusions", "pleural effusion", "pleural effusions",
      "pleural fluid", "infiltrate", "infiltrates", "masses", "nodules", "nodular", "pulmonary nodule",
      "pneumonias", "pneumothoraces", "consolidations", "consolidative", "airspace disease",
      "airspace opacity", "pulmonary edema", "interstitial edema", "vascular congestion", "emphysematous",
      "hyperinflation", "hyperinflated", "copd", "fibrotic", "interstitial fibrosis", "pleural thickenings",
      "pleural scarring", "hiatal hernia", "hiatus hernia", "opacity", "opacities",
      // incidental findings
      "granuloma", "granulomas", "calcified granuloma", "scoliosis", "osteophytes", "degenerative changes",
      "scarring", "cicatrix", "tortuous aorta", "aortic calcification", "spondylosis", "cholecystectomy clips"};
}

std::vector<std::string> builtin_negation() {
  return {"no", "not", "without", "negative for", "free of", "absent", "absence of", "resolved",
          "ruled out", "no evidence of", "none"};
}

std::vector<std::string> builtin_location() {
  return {"left", "right", "bilateral", "bilaterally", "base", "bases", "basilar", "bibasilar", "apex",
          "apices", "apical", "upper", "lower", "middle", "mid", "lobe", "lobes", "lingula", "lingular",
          "perihilar", "hilar", "retrocardiac", "costophrenic", "lateral", "medial", "anterior", "posterior",
          "zone", "hemithorax", "subpleural", "peripheral", "central"};
}

}  // namespace

Lexicon Lexicon::builtin() { return {builtin_pathology(), builtin_negation(), builtin_location()}; }

std::vector<std::string> Lexicon::read_terms(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw InputError("cannot open lexicon file " + file.string());
  std::vector<std::string> terms;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r\n");
    terms.push_back(lowercase(std::string_view(line).substr(b, e - b + 1)));
  }
  return terms;
}

Lexicon Lexicon::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("lexicon directory not found: " + dir.string());
  Lexicon lex = builtin();
  auto maybe = [&](const char* name, std::vector<std::string>& slot) {
    const auto p = dir / name;
    if (std::filesystem::exists(p)) slot = read_terms(p);
  };
  maybe("pathology.txt", lex.pathology);
  maybe("negation.txt", lex.negation);
  maybe("location.txt", lex.location);
  return lex;
}

bool is_numeric_token(std::string_view token) {
  std::size_t i = 0;
  const std::size_t n = token.size();
  if (n == 0 || !digit(token[0])) return false;
  while (i < n && digit(token[i])) ++i;
  if (i < n && token[i] == '.') {
    if (i + 1 >= n || !digit(token[i + 1])) return false;
    ++i;
    while (i < n && digit(token[i])) ++i;
  }
  for (; i < n; ++i) {
    const char c = token[i];
    if (!(c == '%' || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'))) return false;
  }
  return true;
}

void Redactor::PhraseSet::add(const std::string& term) {
  Phrase phrase;
  for (auto& p : scan(term)) {
    if (p.kind == PieceKind::space) continue;
    if (p.kind == PieceKind::mask) throw ConfigError("lexicon term contains a mask token: " + term);
    phrase.push_back(std::move(p.lower));
  }
  if (phrase.empty()) return;
  auto& bucket = by_head[phrase.front()];
  if (std::find(bucket.begin(), bucket.end(), phrase) != bucket.end()) return;
  bucket.push_back(std::move(phrase));
  std::stable_sort(bucket.begin(), bucket.end(), [](const Phrase& a, const Phrase& b) { return a.size() > b.size(); });
}

Redactor::Redactor(const Lexicon& lexicon, RedactOptions options) : options_(options) {
  for (const auto& t : lexicon.pathology) pathology_.add(lowercase(t));
  for (const auto& t : lexicon.negation) negation_.add(lowercase(t));
  for (const auto& t : lexicon.location) location_.add(lowercase(t));
}

namespace {

// Length (in content pieces) of the longest phrase starting at content index
// `k`, or 0. Mask pieces never match.
template <typename PhraseMap>
std::size_t longest_match(const PhraseMap& set, const std::vector<Piece>& pieces,
                          const std::vector<std::size_t>& content, std::size_t k) {
  const Piece& head = pieces[content[k]];
  if (head.kind == PieceKind::mask) return 0;
  auto it = set.by_head.find(head.lower);
  if (it == set.by_head.end()) return 0;
  for (const auto& phrase : it->second) {
    if (k + phrase.size() > content.size()) continue;
    bool ok = true;
    for (std::size_t m = 1; m < phrase.size() && ok; ++m) {
      const Piece& p = pieces[content[k + m]];
      ok = p.kind != PieceKind::mask && p.lower == phrase[m];
    }
    if (ok) return phrase.size();
  }
  return 0;
}

Piece mask_piece(const std::string& mask) { return {PieceKind::mask, mask, mask}; }

std::string join(const std::vector<Piece>& pieces) {
  std::string s;
  for (const auto& p : pieces) s += p.text;
  return s;
}

}  // namespace

RedactedReport Redactor::redact(std::string_view text) const {
  RedactedReport report;
  auto& counts = report.substitutions;

  // Stage 1: pathology phrases (and negation terms if requested).
  std::vector<Piece> pieces = scan(text);
  {
    const auto content = content_positions(pieces);
    std::vector<Piece> out;
    std::size_t next_piece = 0;
    bool drop_space = false;
    for (std::size_t k = 0; k < content.size();) {
      std::size_t len = longest_match(pathology_, pieces, content, k);
      bool negation = false;
      if (len == 0 && options_.strip_negation) {
        len = longest_match(negation_, pieces, content, k);
        negation = len > 0;
      }
      if (len == 0) {
        ++k;
        continue;
      }
      // Copy the untouched stretch before the match.
      for (; next_piece < content[k]; ++next_piece) {
        if (drop_space && pieces[next_piece].kind == PieceKind::space) {
          drop_space = false;
          continue;
        }
        drop_space = false;
        out.push_back(pieces[next_piece]);
      }
      if (negation) {
        ++counts.negation;
        drop_space = true;  // swallow the separator that followed the term
      } else {
        ++counts.finding;
        out.push_back(mask_piece("[FINDING]"));
      }
      next_piece = content[k + len - 1] + 1;
      k += len;
    }
    for (; next_piece < pieces.size(); ++next_piece) {
      if (drop_space && pieces[next_piece].kind == PieceKind::space) {
        drop_space = false;
        continue;
      }
      drop_space = false;
      out.push_back(pieces[next_piece]);
    }
    pieces = std::move(out);
  }

  // Stage 2: numbers and locations.
  {
    const auto content = content_positions(pieces);
    std::vector<Piece> out;
    std::size_t next_piece = 0;
    for (std::size_t k = 0; k < content.size();) {
      const Piece& p = pieces[content[k]];
      std::size_t len = 0;
      const char* mask = nullptr;
      if (p.kind == PieceKind::word && is_numeric_token(p.text)) {
        len = 1;
        mask = "[NUM]";
        ++counts.number;
      } else if ((len = longest_match(location_, pieces, content, k)) > 0) {
        mask = "[LOC]";
        ++counts.location;
      } else {
        ++k;
        continue;
      }
      for (; next_piece < content[k]; ++next_piece) out.push_back(pieces[next_piece]);
      out.push_back(mask_piece(mask));
      next_piece = content[k + len - 1] + 1;
      k += len;
    }
    for (; next_piece < pieces.size(); ++next_piece) out.push_back(pieces[next_piece]);
    pieces = std::move(out);
  }

  report.text = join(pieces);
  return report;
}

std::size_t Redactor::count_terms(std::string_view text) const {
  const auto pieces = scan(text);
  const auto content = content_positions(pieces);
  std::size_t found = 0;
  for (std::size_t k = 0; k < content.size();) {
    std::size_t len = longest_match(pathology_, pieces, content, k);
    if (len == 0) len = longest_match(negation_, pieces, content, k);
    if (len == 0) len = longest_match(location_, pieces, content, k);
    if (len == 0) {
      ++k;
    } else {
      ++found;
      k += len;
    }
  }
  return found;
}

RedactedReport redact(std::string_view text, const Lexicon& lexicon, RedactOptions options) {
  return Redactor(lexicon, options).redact(text);
}

}  // namespace petfuse
