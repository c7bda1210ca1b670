#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skd/corpus.hpp"
#include "skd/nat_model.hpp"
#include "skd/scoring.hpp"

namespace skd {

enum class ScheduleMode { kLinear, kFixed };

/// T_k = T_0 + (k / K) (T_1 - T_0) for the linear mode; T_0 for the fixed one.
struct ThresholdSchedule {
  double t0 = 0.4;
  double t1 = 1.0;
  std::size_t updates = 1;
  ScheduleMode mode = ScheduleMode::kLinear;

  static ThresholdSchedule linear(double t0, double t1, std::size_t updates) {
    return {t0, t1, updates, ScheduleMode::kLinear};
  }
  static ThresholdSchedule fixed(double t, std::size_t updates) {
    return {t, t, updates, ScheduleMode::kFixed};
  }

  void validate() const;
};

double threshold_at(const ThresholdSchedule& schedule, std::size_t k);

enum class Choice { kRaw, kDistilled };

std::string_view choice_name(Choice c);

struct SelectionDecision {
  std::size_t index = 0;
  Choice choice = Choice::kDistilled;
  double score = 0.0;
  double threshold = 0.0;
};

/// Keep the raw target iff score >= threshold, otherwise take the distilled
/// one. One decision per example, in corpus order.
inline Choice choose(double score, double threshold) {
  return score >= threshold ? Choice::kRaw : Choice::kDistilled;
}

std::vector<SelectionDecision> select_for_update(const ScoreTable& scores, const Corpus& corpus,
                                                 double threshold);

/// Fraction of scores >= threshold.
double raw_ratio(std::span<const double> scores, double threshold);
double raw_ratio(const ScoreTable& scores, double threshold);

/// Fraction of the K updates during which a raw target with this score is
/// selected: clamp((score - T_0) / (T_1 - T_0), 0, 1) for a rising linear
/// schedule, an indicator for a fixed one.
double exposure_period(double score, const ThresholdSchedule& schedule);

/// Score quantiles (q in [0, 1], nearest-rank) to help choose T_0.
double score_quantile(std::span<const double> scores, double q);

/// `index<TAB>choice<TAB>score<TAB>threshold`.
std::string format_decisions_tsv(std::span<const SelectionDecision> decisions);

struct StudentConfig {
  ModelConfig model;
  /// Start from these parameters (e.g. an early evaluator checkpoint); the
  /// architecture dims are taken from it.
  std::optional<NatModel> init;
  std::size_t updates = 1;
  int threads = 1;
};

struct UpdateLogRecord {
  std::size_t k = 0;
  double threshold = 0.0;
  double batch_raw_fraction = 0.0;
  double loss = 0.0;
  std::size_t skipped = 0;
};

struct StudentResult {
  NatModel model;
  std::vector<UpdateLogRecord> log;
  std::size_t skipped_pairs = 0;
};

/// Picks the target for example `index` at update k.
using TargetChooser = std::function<Choice(std::size_t index, std::size_t k)>;

/// K clipped-SGD updates over seeded round-robin batches of the whole corpus,
/// resolving each example's target through `chooser`. `threshold_for_log`
/// only fills the log's threshold column.
StudentResult train_updates(const Corpus& corpus, const StudentConfig& config,
                            const TargetChooser& chooser,
                            const std::function<double(std::size_t)>& threshold_for_log = {});

/// Selective training: at update k an example trains on its raw target iff
/// its score >= threshold_at(schedule, k), else on the distilled target.
StudentResult train_student(const Corpus& corpus, const ScoreTable& scores,
                            const ThresholdSchedule& schedule, const StudentConfig& config);

/// `k<TAB>threshold<TAB>batch_raw_fraction<TAB>loss<TAB>skipped` with a header.
std::string format_update_log(std::span<const UpdateLogRecord> log);

}  // namespace skd
