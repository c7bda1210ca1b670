#include "skd/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "skd/error.hpp"

namespace skd {

void ThresholdSchedule::validate() const {
  if (updates < 1) throw Error(ErrorKind::kConfig, "schedule needs K >= 1 updates");
  if (!std::isfinite(t0) || !std::isfinite(t1) || t0 < 0.0 || t1 < 0.0)
    throw Error(ErrorKind::kConfig, "thresholds must be finite and nonnegative");
  if (mode == ScheduleMode::kFixed && t0 != t1)
    throw Error(ErrorKind::kConfig, "a fixed schedule needs T_0 == T_1");
}

double threshold_at(const ThresholdSchedule& schedule, std::size_t k) {
  schedule.validate();
  if (k > schedule.updates)
    throw Error(ErrorKind::kConfig, "update index " + std::to_string(k) + " outside [0, " +
                                        std::to_string(schedule.updates) + "]");
  if (schedule.mode == ScheduleMode::kFixed) return schedule.t0;
  return schedule.t0 + static_cast<double>(k) / static_cast<double>(schedule.updates) *
                           (schedule.t1 - schedule.t0);
}

std::string_view choice_name(Choice c) { return c == Choice::kRaw ? "RAW" : "KD"; }

std::vector<SelectionDecision> select_for_update(const ScoreTable& scores, const Corpus& corpus,
                                                 double threshold) {
  scores.validate_covers(corpus.size());
  std::vector<SelectionDecision> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples()) {
    const double s = scores[ex.index].score;
    out.push_back({ex.index, choose(s, threshold), s, threshold});
  }
  return out;
}

double raw_ratio(std::span<const double> scores, double threshold) {
  if (scores.empty()) throw Error(ErrorKind::kConfig, "raw ratio of an empty score table");
  const auto kept = std::count_if(scores.begin(), scores.end(),
                                  [&](double s) { return s >= threshold; });
  return static_cast<double>(kept) / static_cast<double>(scores.size());
}

double raw_ratio(const ScoreTable& scores, double threshold) {
  const auto s = scores.scores();
  return raw_ratio(s, threshold);
}

double exposure_period(double score, const ThresholdSchedule& schedule) {
  if (schedule.mode == ScheduleMode::kFixed || schedule.t1 <= schedule.t0)
    return score >= schedule.t0 ? 1.0 : 0.0;
  return std::clamp((score - schedule.t0) / (schedule.t1 - schedule.t0), 0.0, 1.0);
}

double score_quantile(std::span<const double> scores, double q) {
  if (scores.empty()) throw Error(ErrorKind::kConfig, "quantile of an empty score table");
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(sorted.size())));
  return sorted[rank == 0 ? 0 : rank - 1];
}

std::string format_decisions_tsv(std::span<const SelectionDecision> decisions) {
  std::string out;
  char buf[128];
  for (const auto& d : decisions) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6f\t%.6f\n", d.index,
                  std::string(choice_name(d.choice)).c_str(), d.score, d.threshold);
    out += buf;
  }
  return out;
}

namespace {

NatModel initial_student(const Corpus& corpus, StudentConfig& config) {
  if (!config.init) return NatModel(config.model, corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  config.init->check_compatible(corpus);
  const auto& arch = config.init->config();
  config.model.embedding_dim = arch.embedding_dim;
  config.model.hidden_dim = arch.hidden_dim;
  config.model.upsample = arch.upsample;
  config.model.window = arch.window;
  return NatModel(config.model, corpus.source_vocab_ptr(), corpus.target_vocab_ptr(),
                  config.init->parameters());
}

}  // namespace

StudentResult train_updates(const Corpus& corpus, const StudentConfig& config_in,
                            const TargetChooser& chooser,
                            const std::function<double(std::size_t)>& threshold_for_log) {
  if (corpus.empty()) throw Error(ErrorKind::kTraining, "empty training corpus");
  StudentConfig config = config_in;
  StudentResult result{initial_student(corpus, config), {}, 0};
  std::vector<std::size_t> all(corpus.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  BatchStream stream(std::move(all), static_cast<std::size_t>(config.model.batch_size),
                     config.model.seed ^ 0x5E1EC7u);

  result.log.reserve(config.updates);
  std::vector<TrainingExample> batch;
  std::size_t total_used = 0;
  for (std::size_t k = 0; k < config.updates; ++k) {
    batch.clear();
    std::size_t raw = 0;
    for (std::size_t i : stream.next()) {
      const Choice c = chooser(i, k);
      raw += c == Choice::kRaw;
      batch.push_back({&corpus[i].source,
                       c == Choice::kRaw ? &corpus[i].raw_target : &corpus[i].distilled_target});
    }
    const StepResult step = sgd_step(result.model, batch, config.threads);
    total_used += step.used;
    result.skipped_pairs += step.skipped;
    UpdateLogRecord rec;
    rec.k = k;
    rec.threshold = threshold_for_log ? threshold_for_log(k) : 0.0;
    rec.batch_raw_fraction = static_cast<double>(raw) / static_cast<double>(batch.size());
    rec.loss = step.used ? step.loss_sum / static_cast<double>(step.used) : 0.0;
    rec.skipped = step.skipped;
    result.log.push_back(rec);
  }
  if (config.updates > 0 && total_used == 0)
    throw Error(ErrorKind::kTraining, "every training pair was infeasible for CTC");
  return result;
}

StudentResult train_student(const Corpus& corpus, const ScoreTable& scores,
                            const ThresholdSchedule& schedule, const StudentConfig& config) {
  schedule.validate();
  scores.validate_covers(corpus.size());
  if (config.updates != schedule.updates)
    throw Error(ErrorKind::kConfig, "student updates must equal the schedule's K");
  // T_k changes every update; cache it per k.
  std::size_t cached_k = static_cast<std::size_t>(-1);
  double cached_t = 0.0;
  auto threshold = [&](std::size_t k) {
    if (k != cached_k) {
      cached_t = threshold_at(schedule, k);
      cached_k = k;
    }
    return cached_t;
  };
  return train_updates(
      corpus, config,
      [&](std::size_t i, std::size_t k) { return choose(scores[i].score, threshold(k)); },
      threshold);
}

std::string format_update_log(std::span<const UpdateLogRecord> log) {
  std::string out = "k\tthreshold\tbatch_raw_fraction\tloss\tskipped\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t%zu\n", r.k, r.threshold,
                  r.batch_raw_fraction, r.loss, r.skipped);
    out += buf;
  }
  return out;
}

}  // namespace skd
