#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skd/corpus.hpp"

namespace skd {

struct AlignOptions {
  int iterations = 5;
  /// Strength of the diagonal prior exp(-tension * |i/|X| - j/|Y||).
  double tension = 4.0;
  /// Prior probability of a NULL link.
  double null_prob = 0.08;
  int threads = 1;
};

/// Lexical translation table t(y | x) over co-occurring pairs, with source id
/// 0 standing for NULL, plus the fixed distortion prior parameters.
class AlignmentModel {
 public:
  static constexpr TokenId kNull = 0;

  AlignmentModel() = default;

  /// t(y | x); 0 outside the support.
  double prob(TokenId source, TokenId target) const;
  /// Support of t(. | source) as (target, probability), sorted by target.
  std::span<const std::pair<TokenId, double>> row(TokenId source) const;
  std::size_t source_rows() const { return table_.size(); }

  double tension() const { return tension_; }
  double null_prob() const { return null_prob_; }
  /// Corpus log-likelihood before each M-step, one entry per iteration.
  const std::vector<double>& log_likelihood() const { return log_likelihood_; }

  /// Normalized diagonal prior over source positions 1..n for target
  /// position j (1-based) of m, written into `out` (size n).
  void distortion(std::size_t j, std::size_t m, std::size_t n, std::span<double> out) const;

 private:
  friend AlignmentModel em_train(const Bitext& bitext, const AlignOptions& options);

  std::vector<std::vector<std::pair<TokenId, double>>> table_;
  double tension_ = 4.0;
  double null_prob_ = 0.08;
  std::vector<double> log_likelihood_;
};

/// EM for the lexical table with a fixed diagonal prior and NULL weight.
/// Throws Error(kConfig) on an empty bitext or iterations < 1.
AlignmentModel em_train(const Bitext& bitext, const AlignOptions& options = {});

/// Per target position j (0-based), the aligned source position, 1-based,
/// or 0 for NULL.
struct AlignmentLinks {
  std::vector<std::size_t> source_of;
  /// Target tokens never seen in training (linked to NULL).
  std::size_t unseen = 0;

  bool is_null(std::size_t j) const { return source_of[j] == 0; }
};

/// Posterior argmax link for each target word; ties go to the smaller source
/// position, with NULL counted as position 0.
AlignmentLinks align_pair(const AlignmentModel& model, std::span<const TokenId> source,
                          std::span<const TokenId> target);

std::vector<AlignmentLinks> align_bitext(const AlignmentModel& model, const Bitext& bitext,
                                         int threads = 1);

/// Pharaoh format: `i-j` pairs (0-based source-target), NULL links omitted,
/// one line per sentence pair.
std::string format_pharaoh(std::span<const AlignmentLinks> links);

}  // namespace skd
