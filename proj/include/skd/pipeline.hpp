#pragma once

// Stage runners behind the `skd` command line. Every stage reads its inputs
// from files, writes its artifacts plus a JSON manifest next to them, and
// removes partial outputs if it fails.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skd/align.hpp"
#include "skd/curriculum.hpp"
#include "skd/error.hpp"
#include "skd/nat_model.hpp"
#include "skd/scoring.hpp"
#include "skd/synth.hpp"

namespace skd::pipeline {

using std::filesystem::path;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "SKD_OUTPUT_ROOT";

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitMissingInput = 3,
  kExitChecksum = 4,
  kExitBadData = 5,
  kExitTraining = 6,
  kExitVocabMismatch = 7,
  kExitIo = 8,
};

int exit_code_for(ErrorKind kind);
std::string exit_code_help();

/// $SKD_OUTPUT_ROOT/<name>, or runs/<name> when unset.
path default_output_dir(const std::string& name);

struct Execution {
  int threads = 1;
  /// Inputs must hash to the values recorded in this manifest.
  std::optional<path> verify_manifest;
};

struct CorpusPaths {
  path src, raw, kd;
};

struct SynthStage {
  SynthTaskSpec task;
  std::size_t n = 2000;
  /// Sample streams for the training and held-out sentences; the task tables
  /// come from task.seed.
  std::uint64_t seed = 11;
  std::uint64_t heldout_seed = 12;
  /// Also write heldout.src.txt / heldout.ref.txt (canonical references).
  std::size_t heldout = 0;
  path out_dir;

  /// task.seed = s, sample streams 10s+1 and 10s+2.
  void set_seed(std::uint64_t s);
};

struct TrainEvaluatorStage {
  CorpusPaths corpus;
  Side target_side = Side::kDistilled;
  ModelConfig model;
  path out;
  /// Per-epoch loss TSV; defaults to <out>.log.tsv.
  path log;
  /// Snapshot after this many updates, written to early_out (0 = none).
  std::size_t early_updates = 0;
  path early_out;
};

struct ScoreStage {
  path checkpoint;
  CorpusPaths corpus;
  ScoreVariant variant = ScoreVariant::kCtc;
  CtcNormalizer normalizer = CtcNormalizer::kFrames;
  path out;
};

struct SelectStage {
  CorpusPaths corpus;
  path scores;
  ThresholdSchedule schedule;
  std::size_t k = 0;
  path out_dir;
};

struct TrainStudentStage {
  CorpusPaths corpus;
  path scores;
  ThresholdSchedule schedule;
  ModelConfig model;
  std::optional<path> init;
  path out;
  /// Per-update TSV; defaults to <out>.log.tsv.
  path log;
};

struct MetricsStage {
  CorpusPaths corpus;
  std::optional<path> scores;
  std::vector<double> thresholds = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.01};
  AlignOptions align;
  /// Schedule used for the exposure column of the length buckets.
  ThresholdSchedule schedule = ThresholdSchedule::linear(0.4, 1.0, 1);
  path out;
  std::optional<path> pharaoh;
};

struct ReportStage {
  /// (label, checkpoint) pairs decoded on the held-out sources.
  std::vector<std::pair<std::string, path>> models;
  path heldout_src;
  path heldout_ref;
  std::optional<path> scores;
  path out;

  /// Picks up the files `full` writes under run_dir.
  static ReportStage from_run_dir(const path& run_dir);
};

struct FullStage {
  path out_dir;
  SynthStage synth;
  ModelConfig model;
  ThresholdSchedule schedule = ThresholdSchedule::linear(0.4, 1.0, 2000);
  AlignOptions align;
  std::vector<double> thresholds = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.01};
  /// Evaluator epochs; the student starts from its ceil(K/12)-update
  /// snapshot when teacher_init is set.
  bool teacher_init = true;
  /// Also train KD-only and raw-only students for the report.
  bool baselines = true;

  /// The default synthetic configuration: n = 2000, K = 2000, s = 3.
  static FullStage defaults(const path& out_dir);
};

void run_synth(const SynthStage& stage, const Execution& exec = {});
void run_train_evaluator(const TrainEvaluatorStage& stage, const Execution& exec = {});
void run_score(const ScoreStage& stage, const Execution& exec = {});
void run_select(const SelectStage& stage, const Execution& exec = {});
void run_train_student(const TrainStudentStage& stage, const Execution& exec = {});
void run_metrics(const MetricsStage& stage, const Execution& exec = {});
void run_report(const ReportStage& stage, const Execution& exec = {});
void run_full(const FullStage& stage, const Execution& exec = {});

/// Checks every file `manifest` records against its checksum. Throws
/// Error(kMissingInput) or Error(kChecksum).
void verify_manifest(const path& manifest, bool inputs_only = false);

/// Re-executes the stage a manifest describes, with the recorded config.
void rerun(const path& manifest, const Execution& exec = {});

/// Manifest path written for a stage whose primary output is `output`.
path manifest_for(const path& output);

}  // namespace skd::pipeline
