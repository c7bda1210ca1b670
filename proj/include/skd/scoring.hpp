#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skd/corpus.hpp"
#include "skd/nat_model.hpp"

namespace skd {

enum class ScoreVariant { kPlain, kCtc };

/// Denominator of the CTC-variant score: the number of decoder frames
/// (bounded score) or the reference length.
enum class CtcNormalizer { kFrames, kReference };

std::string_view variant_name(ScoreVariant v);
ScoreVariant parse_variant(std::string_view name);
CtcNormalizer parse_normalizer(std::string_view name);

struct ScoreRecord {
  std::size_t index = 0;
  double score = 0.0;
  std::size_t distance = 0;
  std::size_t reference_length = 0;
  /// Decoder frames compared; CTC variant only.
  std::size_t frame_length = 0;
  ScoreVariant variant = ScoreVariant::kCtc;
  bool infeasible = false;
  bool empty_hypothesis = false;
};

struct ScoreTable {
  std::vector<ScoreRecord> records;
  std::string checkpoint_id;

  std::size_t size() const { return records.size(); }
  const ScoreRecord& operator[](std::size_t i) const { return records[i]; }
  /// Throws Error(kFormat) unless the indices are exactly 0..n-1 in order.
  void validate_covers(std::size_t corpus_size) const;
  std::vector<double> scores() const;
};

/// Position-wise mismatches over the common prefix plus one per surplus
/// position of the longer sentence.
std::size_t hamming_distance(std::span<const TokenId> a, std::span<const TokenId> b);

/// max(0, 1 - hamming(reference, hypothesis) / |reference|); 0 for an empty
/// hypothesis.
double score_plain(std::span<const TokenId> reference, std::span<const TokenId> hypothesis);

/// Plain variant end to end: the model decodes |Y| frames without blanks and
/// the output is compared position by position with Y.
ScoreRecord score_plain(const NatModel& model, const Sentence& source, const Sentence& reference);

/// Compares the Viterbi alignment of Y with the frame-wise argmax labels.
ScoreRecord score_ctc(const NatModel& model, const Sentence& source, const Sentence& reference,
                      CtcNormalizer normalizer = CtcNormalizer::kFrames);

/// Score and distance from an existing lattice; exposed for testing.
ScoreRecord score_ctc_lattice(const EmissionMatrix<double>& lattice, const Sentence& reference,
                              CtcNormalizer normalizer = CtcNormalizer::kFrames);

struct ScoreOptions {
  ScoreVariant variant = ScoreVariant::kCtc;
  CtcNormalizer normalizer = CtcNormalizer::kFrames;
  int threads = 1;
  std::string checkpoint_id;
};

/// Scores the raw target of every example. Throws Error(kVocabMismatch)
/// before scoring anything if the vocabularies differ.
ScoreTable score_corpus(const NatModel& model, const Corpus& corpus,
                        const ScoreOptions& options = {});

/// `index<TAB>score<TAB>distance<TAB>raw_len<TAB>frame_len`, score with 6
/// decimals, frame_len 0 for the plain variant.
std::string format_score_tsv(const ScoreTable& table);
void write_score_tsv(const ScoreTable& table, const std::filesystem::path& path);
ScoreTable parse_score_tsv(std::string_view text);
ScoreTable read_score_tsv(const std::filesystem::path& path);

}  // namespace skd
