#include "skd/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

#include "skd/error.hpp"
#include "skd/parallel.hpp"

namespace skd {

std::string_view variant_name(ScoreVariant v) {
  return v == ScoreVariant::kPlain ? "plain" : "ctc";
}

ScoreVariant parse_variant(std::string_view name) {
  if (name == "plain") return ScoreVariant::kPlain;
  if (name == "ctc") return ScoreVariant::kCtc;
  throw Error(ErrorKind::kConfig, "unknown score variant: " + std::string(name));
}

CtcNormalizer parse_normalizer(std::string_view name) {
  if (name == "frames") return CtcNormalizer::kFrames;
  if (name == "reference") return CtcNormalizer::kReference;
  throw Error(ErrorKind::kConfig, "unknown normalizer: " + std::string(name));
}

void ScoreTable::validate_covers(std::size_t corpus_size) const {
  if (records.size() != corpus_size)
    throw Error(ErrorKind::kFormat, "score table has " + std::to_string(records.size()) +
                                        " rows for a corpus of " + std::to_string(corpus_size));
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].index != i)
      throw Error(ErrorKind::kFormat, "missing score for index " + std::to_string(i));
}

std::vector<double> ScoreTable::scores() const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.score);
  return out;
}

std::size_t hamming_distance(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t common = std::min(a.size(), b.size());
  std::size_t d = std::max(a.size(), b.size()) - common;
  for (std::size_t i = 0; i < common; ++i) d += a[i] != b[i];
  return d;
}

double score_plain(std::span<const TokenId> reference, std::span<const TokenId> hypothesis) {
  if (reference.empty()) throw Error(ErrorKind::kFormat, "empty reference");
  if (hypothesis.empty()) return 0.0;
  const double s = 1.0 - static_cast<double>(hamming_distance(reference, hypothesis)) /
                             static_cast<double>(reference.size());
  return std::max(0.0, s);
}

ScoreRecord score_plain(const NatModel& model, const Sentence& source, const Sentence& reference) {
  const auto layout = fixed_length_layout(source.size(), reference.size());
  const EmissionMatrix<double> lattice = model.forward(source, layout);
  Sentence hyp(reference.size());
  for (Eigen::Index t = 0; t < lattice.rows(); ++t) {
    Eigen::Index arg = 0;
    lattice.row(t).tail(lattice.cols() - 1).maxCoeff(&arg);
    hyp[static_cast<std::size_t>(t)] = static_cast<TokenId>(arg + 1);
  }
  ScoreRecord r;
  r.variant = ScoreVariant::kPlain;
  r.reference_length = reference.size();
  r.distance = hamming_distance(reference, hyp);
  r.score = score_plain(reference, hyp);
  return r;
}

ScoreRecord score_ctc_lattice(const EmissionMatrix<double>& lattice, const Sentence& reference,
                              CtcNormalizer normalizer) {
  ScoreRecord r;
  r.variant = ScoreVariant::kCtc;
  r.reference_length = reference.size();
  r.frame_length = static_cast<std::size_t>(lattice.rows());
  FramePath aligned;
  try {
    aligned = viterbi_align(lattice, reference);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kInfeasible) throw;
    r.infeasible = true;
    r.distance = r.frame_length;
    r.score = 0.0;
    return r;
  }
  const GreedyDecode greedy = decode_greedy(lattice);
  r.empty_hypothesis = greedy.empty;
  r.distance = hamming_distance(aligned.labels, greedy.frames.labels);
  const double denom = normalizer == CtcNormalizer::kFrames
                           ? static_cast<double>(r.frame_length)
                           : static_cast<double>(r.reference_length);
  r.score = std::clamp(1.0 - static_cast<double>(r.distance) / denom, 0.0, 1.0);
  return r;
}

ScoreRecord score_ctc(const NatModel& model, const Sentence& source, const Sentence& reference,
                      CtcNormalizer normalizer) {
  return score_ctc_lattice(model.forward(source), reference, normalizer);
}

ScoreTable score_corpus(const NatModel& model, const Corpus& corpus, const ScoreOptions& options) {
  model.check_compatible(corpus);
  ScoreTable table;
  table.checkpoint_id = options.checkpoint_id;
  table.records.resize(corpus.size());
  parallel_for(corpus.size(), options.threads, [&](std::size_t i) {
    const auto& ex = corpus[i];
    ScoreRecord r = options.variant == ScoreVariant::kPlain
                        ? score_plain(model, ex.source, ex.raw_target)
                        : score_ctc(model, ex.source, ex.raw_target, options.normalizer);
    r.index = ex.index;
    table.records[i] = r;
  });
  return table;
}

std::string format_score_tsv(const ScoreTable& table) {
  std::string out;
  char buf[128];
  for (const auto& r : table.records) {
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%zu\t%zu\t%zu\n", r.index, r.score, r.distance,
                  r.reference_length, r.frame_length);
    out += buf;
  }
  return out;
}

void write_score_tsv(const ScoreTable& table, const std::filesystem::path& path) {
  write_text_file(path, format_score_tsv(table));
}

ScoreTable parse_score_tsv(std::string_view text) {
  ScoreTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    auto bad = [&] {
      return Error(ErrorKind::kFormat, "malformed score row " + std::to_string(line_no));
    };
    if (cols.size() != 5) throw bad();
    ScoreRecord r;
    auto parse_uint = [&](std::string_view s, std::size_t& v) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) throw bad();
    };
    parse_uint(cols[0], r.index);
    {
      auto [p, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), r.score);
      if (ec != std::errc{} || p != cols[1].data() + cols[1].size()) throw bad();
    }
    if (!(r.score >= 0.0 && r.score <= 1.0)) throw bad();
    parse_uint(cols[2], r.distance);
    parse_uint(cols[3], r.reference_length);
    parse_uint(cols[4], r.frame_length);
    r.variant = r.frame_length ? ScoreVariant::kCtc : ScoreVariant::kPlain;
    table.records.push_back(r);
  }
  std::stable_sort(table.records.begin(), table.records.end(),
                   [](const ScoreRecord& a, const ScoreRecord& b) { return a.index < b.index; });
  return table;
}

ScoreTable read_score_tsv(const std::filesystem::path& path) {
  return parse_score_tsv(read_text_file(path));
}

}  // namespace skd
