#include "mbch/iwv.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "mbch/format.hpp"
#include "mbch/hashing.hpp"

namespace mbch {

namespace {

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  std::size_t consumed = 0;
  try {
    out = std::stod(text, &consumed);
  } catch (const std::exception&) {
    return false;
  }
  return consumed == text.size();
}

bool is_unsigned_integer(const std::string& text) {
  return !text.empty() &&
         std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isdigit(c); });
}

std::vector<std::string> split_whitespace(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace

std::vector<double> WordVectorTable::lookup(const std::string& word) const {
  auto it = entries.find(word);
  if (it != entries.end()) return it->second;
  std::mt19937_64 rng(mix64(fnv1a64(word) ^ mix64(oov_seed)));
  std::uniform_real_distribution<double> dist(-0.25, 0.25);
  std::vector<double> v(dim);
  for (double& x : v) x = dist(rng);
  return v;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path,
                                  std::uint64_t oov_seed) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open word-vector file: " + path.string());

  WordVectorTable table;
  table.oov_seed = oov_seed;
  const std::string path_str = path.string();

  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_whitespace(line);
    if (fields.empty()) continue;

    if (table.entries.empty() && !saw_header && lineno == 1 &&
        fields.size() == 2 && is_unsigned_integer(fields[0]) &&
        is_unsigned_integer(fields[1])) {
      table.dim = static_cast<std::size_t>(std::stoull(fields[1]));
      saw_header = true;
      continue;
    }

    if (fields.size() < 2) {
      throw ParseError(path_str, lineno, "expected a word and its components");
    }
    if (table.dim == 0 && table.entries.empty() && !saw_header) {
      table.dim = fields.size() - 1;
    }
    if (fields.size() - 1 != table.dim) {
      throw ParseError(path_str, lineno,
                       "expected " + std::to_string(table.dim) +
                           " components, got " +
                           std::to_string(fields.size() - 1));
    }
    std::vector<double> vec(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) {
      if (!parse_double(fields[i + 1], vec[i])) {
        throw ParseError(path_str, lineno,
                         "bad decimal component '" + fields[i + 1] + "'");
      }
    }
    auto [it, inserted] = table.entries.emplace(fields[0], std::move(vec));
    (void)it;
    if (!inserted) ++table.duplicates_skipped;
  }
  if (table.entries.empty()) {
    throw ParseError(path_str, lineno ? lineno : 1,
                     "word-vector file contains no entries");
  }
  return table;
}

Lexicon load_lexicon(const std::filesystem::path& path,
                     const std::string& name) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open lexicon file: " + path.string());

  Lexicon lex;
  lex.name = name;
  const std::string path_str = path.string();

  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(path_str, lineno, "expected term<TAB>score");
    }
    std::string term = line.substr(0, tab);
    std::string rest = line.substr(tab + 1);
    const auto next_tab = rest.find('\t');
    std::string score_text =
        next_tab == std::string::npos ? rest : rest.substr(0, next_tab);
    // only unigram scores: skip terms containing whitespace
    if (std::any_of(term.begin(), term.end(),
                    [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    double score = 0.0;
    if (!parse_double(score_text, score)) {
      throw ParseError(path_str, lineno, "bad score '" + score_text + "'");
    }
    auto [it, inserted] = lex.entries.emplace(std::move(term), score);
    (void)it;
    if (!inserted) continue;
    if (first) {
      lex.observed_min = lex.observed_max = score;
      first = false;
    } else {
      lex.observed_min = std::min(lex.observed_min, score);
      lex.observed_max = std::max(lex.observed_max, score);
    }
  }
  return lex;
}

double normalized_score(const Lexicon& lex, const std::string& word) {
  auto it = lex.entries.find(word);
  if (it == lex.entries.end()) return 0.0;
  const double span = lex.observed_max - lex.observed_min;
  if (span == 0.0) return 0.0;
  return 2.0 * (it->second - lex.observed_min) / span - 1.0;
}

LexiconSet::LexiconSet(std::vector<Lexicon> lexicons)
    : lexicons_(std::move(lexicons)) {
  if (lexicons_.size() != kLexiconSlots) {
    throw ConfigError("a lexicon set holds exactly " +
                      std::to_string(kLexiconSlots) + " lexicons, got " +
                      std::to_string(lexicons_.size()));
  }
}

std::vector<std::string> LexiconSet::names() const {
  std::vector<std::string> out;
  out.reserve(lexicons_.size());
  for (const Lexicon& l : lexicons_) out.push_back(l.name);
  return out;
}

PosTagset PosTagset::penn_treebank() {
  return from_tags({"CC",  "CD",  "DT",   "EX",  "FW",  "IN",  "JJ",  "JJR",
                    "JJS", "LS",  "MD",   "NN",  "NNS", "NNP", "NNPS", "PDT",
                    "POS", "PRP", "PRP$", "RB",  "RBR", "RBS", "RP",  "SYM",
                    "TO",  "UH",  "VB",   "VBD", "VBG", "VBN", "VBP", "VBZ",
                    "WDT", "WP",  "WP$",  "WRB"});
}

PosTagset PosTagset::from_tags(std::vector<std::string> tags) {
  PosTagset set;
  set.tags_ = std::move(tags);
  if (std::find(set.tags_.begin(), set.tags_.end(), kFallbackTag) ==
      set.tags_.end()) {
    set.tags_.push_back(kFallbackTag);
  }
  for (std::size_t i = 0; i < set.tags_.size(); ++i) {
    auto [it, inserted] = set.index_.emplace(set.tags_[i], i);
    (void)it;
    if (!inserted) {
      throw ConfigError("duplicate POS tag '" + set.tags_[i] + "'");
    }
  }
  return set;
}

std::size_t PosTagset::index_of(const std::string& tag) const {
  auto it = index_.find(tag);
  if (it != index_.end()) return it->second;
  return index_.at(kFallbackTag);
}

std::vector<double> pos_vector(const PosTagset& tagset,
                               const std::string& tag) {
  std::vector<double> v(tagset.dim(), 0.0);
  v[tagset.index_of(tag)] = 1.0;
  return v;
}

std::vector<double> compose_iwv(const std::string& word,
                                const std::string& tag,
                                const IwvTable& table) {
  const std::size_t M = table.dim();
  std::vector<double> out;
  out.reserve(M);
  if (word == kPadToken) {
    out.assign(M, 0.0);
    return out;
  }
  const std::vector<double> wv = table.words.lookup(word);
  out.insert(out.end(), wv.begin(), wv.end());
  const std::vector<double> pv = pos_vector(table.tagset, tag);
  out.insert(out.end(), pv.begin(), pv.end());
  if (table.lexicons) {
    for (const Lexicon& lex : table.lexicons->lexicons()) {
      out.push_back(normalized_score(lex, word));
    }
  } else {
    out.insert(out.end(), kLexiconSlots, 0.0);
  }
  return out;
}

Tensor embed_sentence(std::span<const std::string> tokens,
                      std::span<const std::string> tags,
                      const IwvTable& table) {
  if (tokens.empty()) throw ContractError("embed_sentence: empty sentence");
  if (tokens.size() != tags.size()) {
    throw DimensionError("embed_sentence: " + std::to_string(tokens.size()) +
                         " tokens vs " + std::to_string(tags.size()) +
                         " tags");
  }
  const std::size_t M = table.dim();
  Tensor out = Tensor::zeros({tokens.size(), M});
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::vector<double> row = compose_iwv(tokens[i], tags[i], table);
    std::copy(row.begin(), row.end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * M));
  }
  return out;
}

void write_iwv_cache(
    const std::filesystem::path& path, const IwvTable& table,
    std::span<const std::pair<std::string, std::string>> vocab) {
  std::ofstream out(path, std::ios::binary);  // binary: LF endings everywhere
  if (!out) throw Error("cannot write IWV cache: " + path.string());

  out << "#lexicon-order:";
  if (table.lexicons) {
    const auto names = table.lexicons->names();
    for (std::size_t i = 0; i < names.size(); ++i) {
      out << (i ? "," : " ") << names[i];
    }
  }
  out << "\n#tagset:";
  for (std::size_t i = 0; i < table.tagset.tags().size(); ++i) {
    out << (i ? "," : " ") << table.tagset.tags()[i];
  }
  out << "\n" << vocab.size() << " " << table.dim() << "\n";

  for (const auto& [word, tag] : vocab) {
    out << word << "_" << tag;
    for (double v : compose_iwv(word, tag, table)) {
      out << " " << format_g17(v);
    }
    out << "\n";
  }
  if (!out) throw Error("failed writing IWV cache: " + path.string());
}

}  // namespace mbch
