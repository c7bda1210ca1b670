#include "skd/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "skd/error.hpp"

namespace skd {

double translation_uncertainty(const Bitext& bitext, std::span<const AlignmentLinks> links) {
  std::map<TokenId, std::map<TokenId, std::size_t>> counts;
  for (std::size_t p = 0; p < bitext.size(); ++p)
    for (std::size_t j = 0; j < bitext.target[p].size(); ++j) {
      if (links[p].is_null(j)) continue;
      const TokenId x = bitext.source[p][links[p].source_of[j] - 1];
      ++counts[x][bitext.target[p][j]];
    }
  if (counts.empty()) throw Error(ErrorKind::kConfig, "no aligned words to measure");
  double sum = 0.0;
  for (const auto& [x, ys] : counts) {
    double total = 0.0;
    for (const auto& [y, c] : ys) total += static_cast<double>(c);
    double h = 0.0;
    for (const auto& [y, c] : ys) {
      const double p = static_cast<double>(c) / total;
      h -= p * std::log(p);
    }
    sum += h;
  }
  return sum / static_cast<double>(counts.size());
}

double translation_uncertainty(const Bitext& bitext, const AlignmentModel& model, int threads) {
  const auto links = align_bitext(model, bitext, threads);
  return translation_uncertainty(bitext, links);
}

double alignment_shift_pair(std::span<const TokenId> source, std::span<const TokenId> target,
                            const AlignmentLinks& links) {
  if (target.empty()) return 0.0;
  const auto n = static_cast<double>(source.size());
  const auto m = static_cast<double>(target.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (links.is_null(j)) continue;
    sum += std::abs(static_cast<double>(links.source_of[j]) / n - static_cast<double>(j + 1) / m);
  }
  return sum / m;
}

double alignment_shift(const Bitext& bitext, std::span<const AlignmentLinks> links) {
  if (bitext.empty()) throw Error(ErrorKind::kConfig, "alignment shift of an empty bitext");
  double sum = 0.0;
  for (std::size_t p = 0; p < bitext.size(); ++p)
    sum += alignment_shift_pair(bitext.source[p], bitext.target[p], links[p]);
  return sum / static_cast<double>(bitext.size());
}

double alignment_shift(const Bitext& bitext, const AlignmentModel& model, int threads) {
  const auto links = align_bitext(model, bitext, threads);
  return alignment_shift(bitext, links);
}

double repetition_ratio(std::span<const Sentence> sentences) {
  if (sentences.empty()) throw Error(ErrorKind::kConfig, "repetition ratio of an empty corpus");
  std::size_t repeats = 0, tokens = 0;
  for (const auto& s : sentences) {
    tokens += s.size();
    for (std::size_t i = 1; i < s.size(); ++i) repeats += s[i] == s[i - 1];
  }
  if (tokens == 0) return 0.0;
  return 1000.0 * static_cast<double>(repeats) / static_cast<double>(tokens);
}

double corpus_bleu(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.empty()) throw Error(ErrorKind::kConfig, "BLEU of an empty hypothesis set");
  if (hypotheses.size() != references.size())
    throw Error(ErrorKind::kConfig, "BLEU needs as many references as hypotheses");
  constexpr int kOrder = 4;
  std::array<double, kOrder> matches{}, candidates{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int n = 1; n <= kOrder; ++n) {
      std::map<std::vector<TokenId>, int> ref_counts;
      for (std::size_t i = 0; i + n <= r.size(); ++i)
        ++ref_counts[std::vector<TokenId>(r.begin() + i, r.begin() + i + n)];
      std::map<std::vector<TokenId>, int> hyp_counts;
      for (std::size_t i = 0; i + n <= h.size(); ++i)
        ++hyp_counts[std::vector<TokenId>(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, c] : hyp_counts) {
        candidates[n - 1] += c;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[n - 1] += std::min(c, it->second);
      }
    }
  }
  if (hyp_len == 0.0 || matches[0] == 0.0) return 0.0;
  double log_precision = 0.0;
  for (int n = 0; n < kOrder; ++n) {
    double p = matches[n] / candidates[n];
    if (matches[n] == 0.0) p = 1.0 / (candidates[n] + 1.0);
    log_precision += std::log(p) / kOrder;
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_precision);
}

double token_accuracy(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size())
    throw Error(ErrorKind::kConfig, "accuracy needs as many references as hypotheses");
  std::size_t hits = 0, total = 0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& r = references[s];
    total += r.size();
    for (std::size_t i = 0; i < std::min(h.size(), r.size()); ++i) hits += h[i] == r[i];
  }
  if (total == 0) throw Error(ErrorKind::kConfig, "accuracy against empty references");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::string_view view_name(ViewKind kind) {
  switch (kind) {
    case ViewKind::kRaw: return "raw";
    case ViewKind::kDistilled: return "distilled";
    case ViewKind::kSelectedRaw: return "selected_raw";
    case ViewKind::kReplacedRaw: return "replaced_raw";
    case ViewKind::kTrainingMix: return "training";
  }
  return "?";
}

Bitext build_view(const Corpus& corpus, const ScoreTable* scores, double threshold, ViewKind kind,
                  std::vector<std::size_t>* origin) {
  const bool needs_scores = kind == ViewKind::kSelectedRaw || kind == ViewKind::kReplacedRaw ||
                            kind == ViewKind::kTrainingMix;
  if (needs_scores) {
    if (!scores) throw Error(ErrorKind::kConfig, "this view needs a score table");
    scores->validate_covers(corpus.size());
  }
  Bitext view;
  if (origin) origin->clear();
  for (const auto& ex : corpus.examples()) {
    const Sentence* target = nullptr;
    switch (kind) {
      case ViewKind::kRaw: target = &ex.raw_target; break;
      case ViewKind::kDistilled: target = &ex.distilled_target; break;
      case ViewKind::kSelectedRaw:
        if (choose((*scores)[ex.index].score, threshold) == Choice::kRaw) target = &ex.raw_target;
        break;
      case ViewKind::kReplacedRaw:
        if (choose((*scores)[ex.index].score, threshold) == Choice::kDistilled)
          target = &ex.raw_target;
        break;
      case ViewKind::kTrainingMix:
        target = choose((*scores)[ex.index].score, threshold) == Choice::kRaw
                     ? &ex.raw_target
                     : &ex.distilled_target;
        break;
    }
    if (!target) continue;
    view.push_back(ex.source, *target);
    if (origin) origin->push_back(ex.index);
  }
  return view;
}

std::vector<LengthBucket> length_buckets(std::span<const std::size_t> lengths,
                                         std::span<const double> scores,
                                         const ThresholdSchedule& schedule) {
  static const char* kLabels[] = {"<10",     "[10,20)", "[20,30)", "[30,40)",
                                  "[40,50)", "[50,60)", ">=60"};
  std::vector<LengthBucket> buckets(7);
  for (std::size_t b = 0; b < buckets.size(); ++b) buckets[b].label = kLabels[b];
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto& b = buckets[std::min<std::size_t>(lengths[i] / 10, 6)];
    ++b.count;
    b.mean_score += scores[i];
    b.mean_exposure += exposure_period(scores[i], schedule);
  }
  for (auto& b : buckets)
    if (b.count) {
      b.mean_score /= static_cast<double>(b.count);
      b.mean_exposure /= static_cast<double>(b.count);
    }
  return buckets;
}

MetricReport metric_report(const Bitext& view, const std::string& label, const AlignOptions& align) {
  if (view.empty()) throw Error(ErrorKind::kConfig, "view '" + label + "' is empty");
  MetricReport r;
  r.label = label;
  r.sentences = view.size();
  for (const auto& t : view.target) r.tokens += t.size();
  const AlignmentModel model = em_train(view, align);
  const auto links = align_bitext(model, view, align.threads);
  r.uncertainty = translation_uncertainty(view, links);
  r.shift = alignment_shift(view, links);
  r.repetition_permille = repetition_ratio(view.target);
  return r;
}

}  // namespace skd
