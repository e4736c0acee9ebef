#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace senti {

enum class Label : std::uint8_t { Negative, Positive, Unlabeled };
enum class Split : std::uint8_t { Train, Valid, Test };

std::string_view to_string(Label l);
std::string_view to_string(Split s);
Label parse_label(std::string_view s);
Split parse_split(std::string_view s);

/// Raised for malformed corpus layouts, unreadable files and invalid arguments.
class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string id;
  std::string raw_text;
  std::vector<std::string> tokens;
  Label label = Label::Unlabeled;
  Split split = Split::Train;
};

struct TokenizerConfig {
  bool lowercase = true;
  bool strip_line_breaks = true;
  bool split_punctuation = true;
  bool keep_apostrophes = true;

  /// Stable hash of the settings, recorded in run manifests.
  std::string hash() const;
};

/// Lowercases, replaces <br /> tags with spaces, and splits punctuation into
/// single-character tokens. An apostrophe between two word characters stays
/// inside the token ("doesn't"). Bytes >= 0x80 count as word characters.
std::vector<std::string> tokenize(std::string_view raw_text, const TokenizerConfig& config = {});

/// Token <-> index bijection with frequencies. Indices 0..2 are the reserved
/// markers; the rest are ordered by descending frequency, then bytewise.
class Vocabulary {
 public:
  static constexpr std::uint32_t kBos = 0;
  static constexpr std::uint32_t kEos = 1;
  static constexpr std::uint32_t kUnk = 2;
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kEosToken = "</s>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  /// Builds from explicit (token, frequency) pairs in the given order after the
  /// reserved markers. Reserved tokens in the list are skipped.
  static Vocabulary from_entries(std::span<const std::pair<std::string, std::uint64_t>> entries,
                                 std::uint64_t min_count);

  std::size_t size() const { return tokens_.size(); }
  std::uint32_t index(std::string_view token) const;
  std::optional<std::uint32_t> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(std::uint32_t index) const { return tokens_.at(index); }
  std::uint64_t frequency(std::uint32_t index) const { return freq_.at(index); }
  std::uint64_t min_count() const { return min_count_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::uint64_t>& frequencies() const { return freq_; }

  /// Maps tokens to indices; out-of-vocabulary tokens become kUnk.
  std::vector<std::uint32_t> encode(std::span<const std::string> tokens) const;

 private:
  void add(std::string token, std::uint64_t freq);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freq_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::uint64_t min_count_ = 1;
};

/// Vocabulary over the tokens of `docs` with frequency >= min_count. When
/// max_size is set, only the most frequent max_size non-reserved tokens are kept.
Vocabulary build_vocab(std::span<const Document> docs, std::uint64_t min_count,
                       std::optional<std::size_t> max_size = std::nullopt);

struct DocumentSet {
  std::vector<Document> documents;
  std::uint64_t split_seed = 0;
  std::vector<std::string> warnings;
};

/// Reads the standard IMDB layout: {train,test}/{pos,neg}/*.txt. Documents are
/// ordered lexicographically by relative path; ids are the path without ".txt".
DocumentSet load_imdb(const std::filesystem::path& root, const TokenizerConfig& config = {},
                      unsigned workers = 1);

/// Reads `train/unsup/*.txt` as unlabeled training documents, sorted by path.
/// Returns nothing when the directory is absent.
std::vector<Document> load_unlabeled(const std::filesystem::path& root, const TokenizerConfig& config = {},
                                     unsigned workers = 1);

/// Stratified split of `train` into (train_sub, valid). Per class, a seeded
/// permutation selects floor(fraction * class_size) documents for validation.
/// Both outputs preserve input order; valid documents get Split::Valid.
std::pair<std::vector<Document>, std::vector<Document>> split_validation(
    std::span<const Document> train, double fraction, std::uint64_t seed);

/// Keeps at most `per_class` documents of each label, in input order.
std::vector<Document> cap_per_class(std::span<const Document> docs, std::size_t per_class);

/// Tokenized cache: `id<TAB>label<TAB>tok tok ...` per line.
void write_token_cache(const std::filesystem::path& path, std::span<const Document> docs);
std::vector<Document> read_token_cache(const std::filesystem::path& path, Split split);

std::vector<Document> select_label(std::span<const Document> docs, Label label);

}  // namespace senti
