#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skd/align.hpp"
#include "skd/corpus.hpp"
#include "skd/curriculum.hpp"
#include "skd/scoring.hpp"

namespace skd {

/// Mean over source types with at least one non-NULL link of the entropy
/// (nats) of the target types linked to them. Throws Error(kConfig) when no
/// word is linked at all.
double translation_uncertainty(const Bitext& bitext, std::span<const AlignmentLinks> links);
double translation_uncertainty(const Bitext& bitext, const AlignmentModel& model, int threads = 1);

/// (1/|Y|) sum_j |i/|X| - j/|Y|| over non-NULL links j -> i, 1-based.
double alignment_shift_pair(std::span<const TokenId> source, std::span<const TokenId> target,
                            const AlignmentLinks& links);
double alignment_shift(const Bitext& bitext, std::span<const AlignmentLinks> links);
double alignment_shift(const Bitext& bitext, const AlignmentModel& model, int threads = 1);

/// Tokens equal to their predecessor in the same sentence, per mille of all
/// tokens; 0 when every sentence is empty (e.g. all-blank decodes).
double repetition_ratio(std::span<const Sentence> sentences);

/// Corpus BLEU-4 in [0, 100] with uniform weights and the usual brevity
/// penalty. A zero n-gram match count for n >= 2 is smoothed to
/// (0 + 1) / (candidates + 1); a zero unigram precision gives 0.
double corpus_bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

/// Fraction of hypothesis positions that match the reference at the same
/// position, over total reference tokens.
double token_accuracy(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

enum class ViewKind { kRaw, kDistilled, kSelectedRaw, kReplacedRaw, kTrainingMix };

std::string_view view_name(ViewKind kind);

/// The sentence pairs a view contains at threshold T. Selected raw: raw
/// targets with score >= T; replaced raw: the raw targets below T; training
/// mix: selected raw plus the distilled targets of the replaced examples.
/// Also returns, per pair, the originating example index.
Bitext build_view(const Corpus& corpus, const ScoreTable* scores, double threshold, ViewKind kind,
                  std::vector<std::size_t>* origin = nullptr);

struct LengthBucket {
  std::string label;
  std::size_t count = 0;
  double mean_score = 0.0;
  double mean_exposure = 0.0;
};

/// Raw-length buckets <10, [10,20), ..., [50,60), >=60.
std::vector<LengthBucket> length_buckets(std::span<const std::size_t> lengths,
                                         std::span<const double> scores,
                                         const ThresholdSchedule& schedule);

struct MetricReport {
  std::string label;
  double uncertainty = 0.0;   // C(d)
  double shift = 0.0;         // S(d)
  double repetition_permille = 0.0;
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::vector<LengthBucket> buckets;
};

/// Trains an aligner on the view and computes every metric. Throws
/// Error(kConfig) for an empty view.
MetricReport metric_report(const Bitext& view, const std::string& label,
                           const AlignOptions& align = {});

}  // namespace skd
