#include "skd/corpus.hpp"

#include <fstream>
#include <sstream>

#include "skd/checksum.hpp"
#include "skd/error.hpp"

namespace skd {

Vocabulary::Vocabulary() {
  surfaces_ = {std::string(kBlankSurface), std::string(kUnkSurface)};
  ids_.emplace(kBlankSurface, kBlankId);
  ids_.emplace(kUnkSurface, kUnkId);
}

TokenId Vocabulary::add(std::string_view surface) {
  if (surface == kBlankSurface)
    throw Error(ErrorKind::kFormat, "the blank symbol may not appear in text");
  if (auto id = find(surface)) return *id;
  const auto id = static_cast<TokenId>(surfaces_.size());
  surfaces_.emplace_back(surface);
  ids_.emplace(surfaces_.back(), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
  auto it = ids_.find(std::string(surface));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::lookup(std::string_view surface) const {
  return find(surface).value_or(kUnkId);
}

const std::string& Vocabulary::surface(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= surfaces_.size())
    throw Error(ErrorKind::kFormat, "token id out of range: " + std::to_string(id));
  return surfaces_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::hash() const {
  std::string joined;
  for (const auto& s : surfaces_) {
    joined += s;
    joined += '\n';
  }
  return sha256_hex(joined);
}

std::string_view side_name(Side side) {
  switch (side) {
    case Side::kSource: return "source";
    case Side::kRaw: return "raw";
    case Side::kDistilled: return "distilled";
  }
  return "?";
}

Side parse_side(std::string_view name) {
  if (name == "source") return Side::kSource;
  if (name == "raw") return Side::kRaw;
  if (name == "distilled" || name == "kd") return Side::kDistilled;
  throw Error(ErrorKind::kConfig, "unknown side: " + std::string(name));
}

const Sentence& TriExample::side(Side s) const {
  switch (s) {
    case Side::kSource: return source;
    case Side::kRaw: return raw_target;
    case Side::kDistilled: return distilled_target;
  }
  return source;
}

namespace {

Sentence encode(Vocabulary* building, const Vocabulary& fixed,
                const std::vector<std::string>& tokens) {
  Sentence out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (t == Vocabulary::kBlankSurface)
      throw Error(ErrorKind::kFormat, "the blank symbol may not appear in text");
    out.push_back(building ? building->add(t) : fixed.lookup(t));
  }
  return out;
}

}  // namespace

Corpus Corpus::from_tokens(const Lines& src, const Lines& raw, const Lines& kd,
                           const CorpusOptions& options) {
  if (src.size() != raw.size() || src.size() != kd.size())
    throw Error(ErrorKind::kFormat,
                "line-count mismatch: source has " + std::to_string(src.size()) +
                    ", raw has " + std::to_string(raw.size()) +
                    ", distilled has " + std::to_string(kd.size()));
  for (const Lines* lines : {&src, &raw, &kd})
    for (std::size_t i = 0; i < lines->size(); ++i) {
      if ((*lines)[i].empty())
        throw Error(ErrorKind::kFormat,
                    "empty sentence at line " + std::to_string(i + 1));
      if ((*lines)[i].size() > kMaxSentenceLength)
        throw Error(ErrorKind::kFormat,
                    "sentence longer than " + std::to_string(kMaxSentenceLength) +
                        " tokens at line " + std::to_string(i + 1));
    }

  Corpus c;
  const bool fixed = options.fixed_source_vocab || options.fixed_target_vocab;
  if (fixed) {
    if (!options.fixed_source_vocab || !options.fixed_target_vocab)
      throw Error(ErrorKind::kConfig, "fixed vocabularies must be given for both sides");
    c.source_vocab_ = options.fixed_source_vocab;
    c.target_vocab_ = options.fixed_target_vocab;
  }
  auto src_vocab = std::make_shared<Vocabulary>();
  auto tgt_vocab = options.shared_vocabulary ? src_vocab : std::make_shared<Vocabulary>();
  Vocabulary* src_build = fixed ? nullptr : src_vocab.get();
  Vocabulary* tgt_build = fixed ? nullptr : tgt_vocab.get();

  c.examples_.resize(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    c.examples_[i].index = i;
    c.examples_[i].source = encode(src_build, *c.source_vocab_, src[i]);
  }
  for (std::size_t i = 0; i < raw.size(); ++i)
    c.examples_[i].raw_target = encode(tgt_build, *c.target_vocab_, raw[i]);
  for (std::size_t i = 0; i < kd.size(); ++i)
    c.examples_[i].distilled_target = encode(tgt_build, *c.target_vocab_, kd[i]);
  if (!fixed) {
    c.source_vocab_ = src_vocab;
    c.target_vocab_ = tgt_vocab;
  }
  return c;
}

Bitext Corpus::bitext(Side target_side) const {
  Bitext b;
  b.source.reserve(size());
  b.target.reserve(size());
  for (const auto& ex : examples_) b.push_back(ex.source, ex.side(target_side));
  return b;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char ch) {
    return ch == ' ' || ch == '\t' || ch == '\r' || ch == '\v' || ch == '\f';
  };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

Corpus::Lines read_token_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingInput, "cannot open " + path.string());
  Corpus::Lines lines;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = tokenize(line);
    if (tokens.empty())
      throw Error(ErrorKind::kFormat, path.string() + ": empty line " +
                                          std::to_string(lines.size() + 1));
    if (tokens.size() > kMaxSentenceLength)
      throw Error(ErrorKind::kFormat,
                  path.string() + ": line " + std::to_string(lines.size() + 1) +
                      " exceeds " + std::to_string(kMaxSentenceLength) + " tokens");
    lines.push_back(std::move(tokens));
  }
  return lines;
}

Corpus load_corpus(const std::filesystem::path& src_path,
                   const std::filesystem::path& raw_path,
                   const std::filesystem::path& kd_path,
                   const CorpusOptions& options) {
  const auto src = read_token_file(src_path);
  const auto raw = read_token_file(raw_path);
  const auto kd = read_token_file(kd_path);
  auto check = [&](const std::filesystem::path& other, std::size_t n) {
    if (n != src.size())
      throw Error(ErrorKind::kFormat,
                  "line-count mismatch: " + src_path.string() + " has " +
                      std::to_string(src.size()) + " lines, " + other.string() +
                      " has " + std::to_string(n));
  };
  check(raw_path, raw.size());
  check(kd_path, kd.size());
  return Corpus::from_tokens(src, raw, kd, options);
}

std::string format_sentences(const Vocabulary& vocab,
                             std::span<const Sentence> sentences) {
  std::string out;
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ' ';
      out += vocab.surface(s[i]);
    }
    out += '\n';
  }
  return out;
}

std::string format_bitext(const Corpus& corpus, Side side) {
  std::vector<Sentence> sentences;
  sentences.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) sentences.push_back(ex.side(side));
  return format_sentences(corpus.vocab(side), sentences);
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bitext(const Corpus& corpus, Side side,
                  const std::filesystem::path& path) {
  write_text_file(path, format_bitext(corpus, side));
}

}  // namespace skd
