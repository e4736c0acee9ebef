#include "senti/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "senti/util.hpp"

namespace senti {

namespace fs = std::filesystem;

std::string_view to_string(Label l) {
  switch (l) {
    case Label::Negative: return "negative";
    case Label::Positive: return "positive";
    case Label::Unlabeled: return "unlabeled";
  }
  return "unlabeled";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Label parse_label(std::string_view s) {
  if (s == "positive" || s == "pos" || s == "1" || s == "+1") return Label::Positive;
  if (s == "negative" || s == "neg" || s == "0" || s == "-1") return Label::Negative;
  if (s == "unlabeled" || s == "unsup" || s == "?") return Label::Unlabeled;
  throw CorpusError("unknown label '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw CorpusError("unknown split '" + std::string(s) + "'");
}

std::string TokenizerConfig::hash() const {
  std::string canon = "lowercase=" + std::to_string(lowercase) +
                      ";strip_line_breaks=" + std::to_string(strip_line_breaks) +
                      ";split_punctuation=" + std::to_string(split_punctuation) +
                      ";keep_apostrophes=" + std::to_string(keep_apostrophes);
  return Fnv1a().update(canon).hex();
}

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_word(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

// Length of a line-break tag (<br>, <br/>, <br />, any case) starting at i, or 0.
std::size_t line_break_tag(std::string_view s, std::size_t i) {
  if (i + 3 > s.size() || s[i] != '<') return 0;
  if ((s[i + 1] | 0x20) != 'b' || (s[i + 2] | 0x20) != 'r') return 0;
  std::size_t j = i + 3;
  while (j < s.size() && s[j] == ' ') ++j;
  if (j < s.size() && s[j] == '/') ++j;
  while (j < s.size() && s[j] == ' ') ++j;
  if (j < s.size() && s[j] == '>') return j + 1 - i;
  return 0;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view raw_text, const TokenizerConfig& config) {
  std::string text;
  text.reserve(raw_text.size());
  for (std::size_t i = 0; i < raw_text.size();) {
    if (config.strip_line_breaks) {
      if (std::size_t n = line_break_tag(raw_text, i)) {
        text.push_back(' ');
        i += n;
        continue;
      }
    }
    char c = raw_text[i++];
    if (config.lowercase && c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    text.push_back(c);
  }

  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      flush();
    } else if (!config.split_punctuation || is_word(c)) {
      current.push_back(static_cast<char>(c));
    } else if (c == '\'' && config.keep_apostrophes && !current.empty() &&
               is_word(static_cast<unsigned char>(current.back())) && i + 1 < text.size() &&
               is_word(static_cast<unsigned char>(text[i + 1]))) {
      current.push_back('\'');
    } else {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

Vocabulary::Vocabulary() {
  add(std::string(kBosToken), 0);
  add(std::string(kEosToken), 0);
  add(std::string(kUnkToken), 0);
}

void Vocabulary::add(std::string token, std::uint64_t freq) {
  auto idx = static_cast<std::uint32_t>(tokens_.size());
  index_.emplace(token, idx);
  tokens_.push_back(std::move(token));
  freq_.push_back(freq);
}

Vocabulary Vocabulary::from_entries(std::span<const std::pair<std::string, std::uint64_t>> entries,
                                    std::uint64_t min_count) {
  Vocabulary v;
  v.min_count_ = min_count;
  for (const auto& [tok, f] : entries) {
    if (auto existing = v.find(tok)) {
      if (*existing < 3) continue;
      throw CorpusError("duplicate vocabulary token '" + tok + "'");
    }
    v.add(tok, f);
  }
  return v;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t Vocabulary::index(std::string_view token) const {
  return find(token).value_or(kUnk);
}

std::vector<std::uint32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::uint32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    auto it = index_.find(t);
    out.push_back(it == index_.end() ? kUnk : it->second);
  }
  return out;
}

Vocabulary build_vocab(std::span<const Document> docs, std::uint64_t min_count,
                       std::optional<std::size_t> max_size) {
  if (docs.empty()) throw CorpusError("build_vocab: empty document set");
  if (min_count < 1) throw CorpusError("build_vocab: min_count must be >= 1");
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& d : docs)
    for (const auto& t : d.tokens) ++counts[t];

  std::vector<std::pair<std::string, std::uint64_t>> entries;
  entries.reserve(counts.size());
  for (auto& [tok, c] : counts) {
    if (c < min_count) continue;
    if (tok == Vocabulary::kBosToken || tok == Vocabulary::kEosToken || tok == Vocabulary::kUnkToken)
      continue;
    entries.emplace_back(tok, c);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (max_size && entries.size() > *max_size) entries.resize(*max_size);
  return Vocabulary::from_entries(entries, min_count);
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorpusError("cannot read file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw CorpusError("error reading file: " + p.string());
  return ss.str();
}

}  // namespace

DocumentSet load_imdb(const fs::path& root, const TokenizerConfig& config, unsigned workers) {
  struct Leaf {
    const char* rel;
    Split split;
    Label label;
  };
  static constexpr Leaf kLeaves[] = {
      {"test/neg", Split::Test, Label::Negative},
      {"test/pos", Split::Test, Label::Positive},
      {"train/neg", Split::Train, Label::Negative},
      {"train/pos", Split::Train, Label::Positive},
  };

  DocumentSet set;
  std::vector<std::pair<std::string, const Leaf*>> files;
  std::map<std::string, std::size_t> per_leaf;
  for (const auto& leaf : kLeaves) {
    fs::path dir = root / leaf.rel;
    if (!fs::is_directory(dir)) throw CorpusError(std::string("missing directory: ") + leaf.rel);
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
      files.emplace_back(std::string(leaf.rel) + "/" + entry.path().filename().string(), &leaf);
      ++n;
    }
    per_leaf[leaf.rel] = n;
    if (n == 0) set.warnings.push_back(std::string("count mismatch: ") + leaf.rel + " is empty");
  }
  for (const char* split : {"train", "test"}) {
    auto pos = per_leaf[std::string(split) + "/pos"];
    auto neg = per_leaf[std::string(split) + "/neg"];
    if (pos != neg)
      set.warnings.push_back(std::string("count mismatch: ") + split + " has " + std::to_string(pos) +
                             " pos vs " + std::to_string(neg) + " neg");
  }
  std::sort(files.begin(), files.end());

  set.documents.resize(files.size());
  parallel_for(files.size(), workers, [&](std::size_t i) {
    const auto& [rel, leaf] = files[i];
    Document& d = set.documents[i];
    d.id = rel.substr(0, rel.size() - 4);
    d.raw_text = read_file(root / rel);
    d.tokens = tokenize(d.raw_text, config);
    d.label = leaf->label;
    d.split = leaf->split;
  });
  return set;
}

std::vector<Document> load_unlabeled(const fs::path& root, const TokenizerConfig& config, unsigned workers) {
  fs::path dir = root / "train" / "unsup";
  if (!fs::is_directory(dir)) return {};
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<Document> docs(names.size());
  parallel_for(names.size(), workers, [&](std::size_t i) {
    Document& d = docs[i];
    d.id = "train/unsup/" + names[i].substr(0, names[i].size() - 4);
    d.raw_text = read_file(dir / names[i]);
    d.tokens = tokenize(d.raw_text, config);
    d.label = Label::Unlabeled;
    d.split = Split::Train;
  });
  return docs;
}

std::pair<std::vector<Document>, std::vector<Document>> split_validation(
    std::span<const Document> train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw CorpusError("split_validation: fraction must be in (0, 1)");

  std::vector<bool> in_valid(train.size(), false);
  for (Label label : {Label::Negative, Label::Positive, Label::Unlabeled}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train[i].label == label) members.push_back(i);
    if (members.empty()) continue;
    // Each class draws from its own stream so class membership never shifts
    // the other class's selection.
    Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(label) + 1)));
    rng.shuffle(members);
    auto n_valid = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < n_valid; ++k) in_valid[members[k]] = true;
  }

  std::pair<std::vector<Document>, std::vector<Document>> out;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (in_valid[i]) {
      out.second.push_back(train[i]);
      out.second.back().split = Split::Valid;
    } else {
      out.first.push_back(train[i]);
    }
  }
  return out;
}

std::vector<Document> cap_per_class(std::span<const Document> docs, std::size_t per_class) {
  std::map<Label, std::size_t> seen;
  std::vector<Document> out;
  for (const auto& d : docs)
    if (seen[d.label]++ < per_class) out.push_back(d);
  return out;
}

void write_token_cache(const fs::path& path, std::span<const Document> docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  for (const auto& d : docs) {
    out << d.id << '\t' << to_string(d.label) << '\t';
    for (std::size_t i = 0; i < d.tokens.size(); ++i) {
      if (i) out << ' ';
      out << d.tokens[i];
    }
    out << '\n';
  }
  if (!out) throw CorpusError("error writing " + path.string());
}

std::vector<Document> read_token_cache(const fs::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::vector<Document> docs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>label<TAB>tokens");
    Document d;
    d.id = line.substr(0, t1);
    d.label = parse_label(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    d.split = split;
    d.raw_text = line.substr(t2 + 1);
    std::istringstream ts(d.raw_text);
    std::string tok;
    while (ts >> tok) d.tokens.push_back(tok);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Document> select_label(std::span<const Document> docs, Label label) {
  std::vector<Document> out;
  for (const auto& d : docs)
    if (d.label == label) out.push_back(d);
  return out;
}

}  // namespace senti
