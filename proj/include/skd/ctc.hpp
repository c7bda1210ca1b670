#pragma once

// Connectionist temporal classification over a frame lattice of
// log-probabilities: forward/backward loss and gradient, max-plus Viterbi
// alignment, and greedy decoding. Templated on the scalar type; the toolkit
// instantiates it with double.

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "skd/corpus.hpp"
#include "skd/error.hpp"

namespace skd {

/// T x V lattice, one row per frame.
template <typename Scalar>
using EmissionMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
Scalar log_sum_exp(Scalar a, Scalar b) {
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

/// Removes blanks after merging adjacent duplicates.
inline Sentence collapse(std::span<const TokenId> path) {
  Sentence out;
  TokenId prev = -1;
  for (TokenId id : path) {
    if (id != prev && id != kBlankId) out.push_back(id);
    prev = id;
  }
  return out;
}

struct FramePath {
  std::vector<TokenId> labels;
  double log_prob = 0.0;

  Sentence collapsed() const { return collapse(labels); }
};

/// Fewest frames that can emit `target`: one per label plus a separating
/// blank between equal neighbours.
inline std::size_t ctc_min_frames(std::span<const TokenId> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1];
  return n;
}

namespace detail {

inline TokenId extended_label(std::span<const TokenId> target, std::size_t s) {
  return s % 2 == 0 ? kBlankId : target[(s - 1) / 2];
}

/// Whether state s may be entered from s - 2 (skipping a blank).
inline bool can_skip(std::span<const TokenId> target, std::size_t s) {
  return s % 2 == 1 && s >= 2 && target[(s - 1) / 2] != target[(s - 3) / 2];
}

[[noreturn]] inline void throw_infeasible(Eigen::Index frames, std::size_t labels) {
  throw Error(ErrorKind::kInfeasible,
              "CTC target of " + std::to_string(labels) +
                  " labels cannot be emitted in " + std::to_string(frames) +
                  " frames");
}

}  // namespace detail

template <typename Scalar>
struct CtcResult {
  Scalar loss;
  /// d loss / d log_probs, same shape as the lattice.
  EmissionMatrix<Scalar> gradient;
};

/// Forward variables alpha(t, s) over the extended label sequence.
template <typename Derived>
EmissionMatrix<typename Derived::Scalar> ctc_alpha(
    const Eigen::MatrixBase<Derived>& log_probs, std::span<const TokenId> target) {
  using Scalar = typename Derived::Scalar;
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  const Eigen::Index frames = log_probs.rows();
  const auto states = static_cast<Eigen::Index>(2 * target.size() + 1);
  EmissionMatrix<Scalar> alpha =
      EmissionMatrix<Scalar>::Constant(frames, states, kNegInf);
  if (frames == 0) return alpha;
  alpha(0, 0) = log_probs(0, kBlankId);
  if (states > 1) alpha(0, 1) = log_probs(0, target[0]);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const auto su = static_cast<std::size_t>(s);
      Scalar acc = alpha(t - 1, s);
      if (s >= 1) acc = log_sum_exp(acc, alpha(t - 1, s - 1));
      if (detail::can_skip(target, su)) acc = log_sum_exp(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) acc += log_probs(t, detail::extended_label(target, su));
      alpha(t, s) = acc;
    }
  }
  return alpha;
}

/// log p(target | lattice). Returns -inf when the target is unreachable.
template <typename Derived>
typename Derived::Scalar ctc_log_likelihood(const Eigen::MatrixBase<Derived>& log_probs,
                                            std::span<const TokenId> target) {
  using Scalar = typename Derived::Scalar;
  const auto alpha = ctc_alpha(log_probs, target);
  if (alpha.rows() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Eigen::Index last = alpha.cols() - 1;
  Scalar ll = alpha(alpha.rows() - 1, last);
  if (last >= 1) ll = log_sum_exp(ll, alpha(alpha.rows() - 1, last - 1));
  return ll;
}

/// Negative log-likelihood of `target` and its gradient with respect to every
/// lattice entry. Throws Error(kInfeasible) when no frame path collapses to
/// the target.
template <typename Derived>
CtcResult<typename Derived::Scalar> ctc_loss_and_grad(
    const Eigen::MatrixBase<Derived>& log_probs, std::span<const TokenId> target) {
  using Scalar = typename Derived::Scalar;
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  const Eigen::Index frames = log_probs.rows();
  const auto states = static_cast<Eigen::Index>(2 * target.size() + 1);

  const auto alpha = ctc_alpha(log_probs, target);
  Scalar log_p = kNegInf;
  if (frames > 0) {
    log_p = alpha(frames - 1, states - 1);
    if (states > 1) log_p = log_sum_exp(log_p, alpha(frames - 1, states - 2));
  }
  if (log_p == kNegInf) detail::throw_infeasible(frames, target.size());

  // beta(t, s): log-probability of finishing from state s at frame t,
  // excluding frame t's own emission.
  EmissionMatrix<Scalar> beta = EmissionMatrix<Scalar>::Constant(frames, states, kNegInf);
  beta(frames - 1, states - 1) = 0;
  if (states > 1) beta(frames - 1, states - 2) = 0;
  for (Eigen::Index t = frames - 2; t >= 0; --t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      Scalar acc = kNegInf;
      for (Eigen::Index next = s; next <= std::min(s + 2, states - 1); ++next) {
        const auto nu = static_cast<std::size_t>(next);
        if (next == s + 2 && !detail::can_skip(target, nu)) continue;
        const Scalar b = beta(t + 1, next);
        if (b == kNegInf) continue;
        acc = log_sum_exp(acc, b + log_probs(t + 1, detail::extended_label(target, nu)));
      }
      beta(t, s) = acc;
    }
  }

  CtcResult<Scalar> result{-log_p, EmissionMatrix<Scalar>::Zero(frames, log_probs.cols())};
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index s = 0; s < states; ++s) {
      const Scalar occ = alpha(t, s) + beta(t, s);
      if (occ == kNegInf) continue;
      result.gradient(t, detail::extended_label(target, static_cast<std::size_t>(s))) -=
          std::exp(occ - log_p);
    }
  return result;
}

/// Highest-scoring frame path that collapses to `target`. On score ties the
/// backtrace prefers a blank at the earlier frame. Throws Error(kInfeasible)
/// when no such path exists.
template <typename Derived>
FramePath viterbi_align(const Eigen::MatrixBase<Derived>& log_probs,
                        std::span<const TokenId> target) {
  using Scalar = typename Derived::Scalar;
  constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();
  const Eigen::Index frames = log_probs.rows();
  const auto states = static_cast<Eigen::Index>(2 * target.size() + 1);
  if (frames == 0) detail::throw_infeasible(frames, target.size());

  EmissionMatrix<Scalar> score = EmissionMatrix<Scalar>::Constant(frames, states, kNegInf);
  Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> back =
      Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(
          frames, states);
  score(0, 0) = log_probs(0, kBlankId);
  if (states > 1) score(0, 1) = log_probs(0, target[0]);
  for (Eigen::Index t = 1; t < frames; ++t) {
    for (Eigen::Index s = 0; s < states; ++s) {
      const auto su = static_cast<std::size_t>(s);
      // Blank predecessor first; later candidates must win strictly.
      std::int8_t best_step = su % 2 == 0 ? 0 : 1;
      Scalar best = best_step <= s ? score(t - 1, s - best_step) : kNegInf;
      auto consider = [&](std::int8_t step) {
        if (step > s) return;
        if (step == 2 && !detail::can_skip(target, su)) return;
        const Scalar v = score(t - 1, s - step);
        if (v > best) {
          best = v;
          best_step = step;
        }
      };
      if (su % 2 == 0) {
        consider(1);
      } else {
        consider(0);
        consider(2);
      }
      if (best == kNegInf) continue;
      score(t, s) = best + log_probs(t, detail::extended_label(target, su));
      back(t, s) = best_step;
    }
  }

  Eigen::Index s = states - 1;
  if (states > 1 && score(frames - 1, states - 2) > score(frames - 1, s)) s = states - 2;
  if (score(frames - 1, s) == kNegInf) detail::throw_infeasible(frames, target.size());

  FramePath path;
  path.log_prob = static_cast<double>(score(frames - 1, s));
  path.labels.resize(static_cast<std::size_t>(frames));
  for (Eigen::Index t = frames - 1; t >= 0; --t) {
    path.labels[static_cast<std::size_t>(t)] =
        detail::extended_label(target, static_cast<std::size_t>(s));
    if (t > 0) s -= back(t, s);
  }
  return path;
}

struct GreedyDecode {
  FramePath frames;
  Sentence output;
  /// Every frame chose the blank, so the output is empty.
  bool empty = false;
};

/// Per-frame argmax (lowest id on ties) and its collapse.
template <typename Derived>
GreedyDecode decode_greedy(const Eigen::MatrixBase<Derived>& log_probs) {
  GreedyDecode out;
  out.frames.labels.resize(static_cast<std::size_t>(log_probs.rows()));
  double total = 0.0;
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    Eigen::Index arg = 0;
    total += static_cast<double>(log_probs.row(t).maxCoeff(&arg));
    out.frames.labels[static_cast<std::size_t>(t)] = static_cast<TokenId>(arg);
  }
  out.frames.log_prob = total;
  out.output = collapse(out.frames.labels);
  out.empty = out.output.empty();
  return out;
}

}  // namespace skd
