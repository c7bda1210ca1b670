#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace skd {

using TokenId = std::int32_t;
using Sentence = std::vector<TokenId>;

inline constexpr TokenId kBlankId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr std::size_t kMaxSentenceLength = 1024;

/// Surface <-> id map. Ids 0 and 1 are reserved for the CTC blank and the
/// unknown token; regular surfaces get ids >= 2 in first-occurrence order.
class Vocabulary {
 public:
  static constexpr std::string_view kBlankSurface = "<blank>";
  static constexpr std::string_view kUnkSurface = "<unk>";

  Vocabulary();

  /// Returns the id of `surface`, adding it if new. The blank surface is
  /// rejected; the unknown surface maps to kUnkId.
  TokenId add(std::string_view surface);
  std::optional<TokenId> find(std::string_view surface) const;
  /// Like find() but unseen surfaces map to kUnkId.
  TokenId lookup(std::string_view surface) const;
  const std::string& surface(TokenId id) const;

  std::size_t size() const { return surfaces_.size(); }
  std::span<const std::string> surfaces() const { return surfaces_; }
  /// SHA-256 over the surfaces in id order; identifies the id assignment.
  std::string hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.surfaces_ == b.surfaces_;
  }

 private:
  std::vector<std::string> surfaces_;
  std::unordered_map<std::string, TokenId> ids_;
};

enum class Side { kSource, kRaw, kDistilled };

std::string_view side_name(Side side);
Side parse_side(std::string_view name);

struct TriExample {
  Sentence source;
  Sentence raw_target;
  Sentence distilled_target;
  std::size_t index = 0;

  const Sentence& side(Side s) const;
};

/// Parallel source/target sentence lists; the unit the aligner and the
/// metrics consume.
struct Bitext {
  std::vector<Sentence> source;
  std::vector<Sentence> target;

  std::size_t size() const { return source.size(); }
  bool empty() const { return source.empty(); }
  void push_back(Sentence src, Sentence tgt) {
    source.push_back(std::move(src));
    target.push_back(std::move(tgt));
  }
};

struct CorpusOptions {
  /// One vocabulary for both sides instead of separate ones.
  bool shared_vocabulary = false;
  /// Map tokens through existing vocabularies (unseen -> <unk>) instead of
  /// building new ones. Used to read held-out data for a trained model.
  std::shared_ptr<const Vocabulary> fixed_source_vocab;
  std::shared_ptr<const Vocabulary> fixed_target_vocab;
};

/// Immutable list of (source, raw, distilled) triples and the vocabularies
/// that own their ids. Order is load order.
class Corpus {
 public:
  using Lines = std::vector<std::vector<std::string>>;

  Corpus() = default;

  /// Builds a corpus from tokenized lines. Source ids are assigned in
  /// first-occurrence order over `src`; target ids over `raw` then `kd`
  /// (with a shared vocabulary: src, raw, kd).
  static Corpus from_tokens(const Lines& src, const Lines& raw,
                            const Lines& kd, const CorpusOptions& options = {});

  std::span<const TriExample> examples() const { return examples_; }
  const TriExample& operator[](std::size_t i) const { return examples_[i]; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  const Vocabulary& source_vocab() const { return *source_vocab_; }
  const Vocabulary& target_vocab() const { return *target_vocab_; }
  std::shared_ptr<const Vocabulary> source_vocab_ptr() const {
    return source_vocab_;
  }
  std::shared_ptr<const Vocabulary> target_vocab_ptr() const {
    return target_vocab_;
  }
  bool shared_vocabulary() const { return source_vocab_ == target_vocab_; }

  const Vocabulary& vocab(Side side) const {
    return side == Side::kSource ? source_vocab() : target_vocab();
  }

  /// Source side paired with the chosen target side.
  Bitext bitext(Side target_side) const;

 private:
  std::vector<TriExample> examples_;
  std::shared_ptr<const Vocabulary> source_vocab_ = std::make_shared<Vocabulary>();
  std::shared_ptr<const Vocabulary> target_vocab_ = std::make_shared<Vocabulary>();
};

/// Splits one line on ASCII whitespace.
std::vector<std::string> tokenize(std::string_view line);

/// Reads a whitespace-tokenized file, one sentence per line. Empty lines and
/// sentences over kMaxSentenceLength tokens are errors.
Corpus::Lines read_token_file(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& src_path,
                   const std::filesystem::path& raw_path,
                   const std::filesystem::path& kd_path,
                   const CorpusOptions& options = {});

/// One sentence per line, single spaces, trailing newline.
std::string format_sentences(const Vocabulary& vocab,
                             std::span<const Sentence> sentences);
std::string format_bitext(const Corpus& corpus, Side side);

void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

void write_bitext(const Corpus& corpus, Side side,
                  const std::filesystem::path& path);

}  // namespace skd
