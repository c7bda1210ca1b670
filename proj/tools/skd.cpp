// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "skd/pipeline.hpp"

namespace {

using namespace skd;
using namespace skd::pipeline;

struct CorpusFlags {
  std::string dir;
  std::string src, raw, kd;

  void add(CLI::App* app) {
    app->add_option("--corpus-dir", dir, "Directory holding src.txt, raw.txt and kd.txt");
    app->add_option("--src", src, "Source sentences (overrides --corpus-dir)");
    app->add_option("--raw", raw, "Raw targets (overrides --corpus-dir)");
    app->add_option("--kd", kd, "Distilled targets (overrides --corpus-dir)");
  }

  CorpusPaths resolve() const {
    auto pick = [&](const std::string& explicit_path, const char* name) {
      if (!explicit_path.empty()) return path(explicit_path);
      if (dir.empty())
        throw Error(ErrorKind::kConfig, std::string("--") + name + " or --corpus-dir is required");
      return path(dir) / (std::string(name) + ".txt");
    };
    return {pick(src, "src"), pick(raw, "raw"), pick(kd, "kd")};
  }
};

void add_model_flags(CLI::App* app, ModelConfig& m) {
  app->add_option("--embedding-dim", m.embedding_dim, "Token embedding size")->capture_default_str();
  app->add_option("--hidden-dim", m.hidden_dim, "Hidden layer size")->capture_default_str();
  app->add_option("--upsample", m.upsample, "Decoder frames per source token")->capture_default_str();
  app->add_option("--window", m.window, "Source context half-width")->capture_default_str();
  app->add_option("--lr", m.learning_rate, "SGD learning rate")->capture_default_str();
  app->add_option("--epochs", m.epochs, "Training epochs (evaluator)")->capture_default_str();
  app->add_option("--batch-size", m.batch_size, "Sentence pairs per update")->capture_default_str();
  app->add_option("--clip-norm", m.clip_norm, "Gradient norm clip, <= 0 disables")->capture_default_str();
}

struct ScheduleFlags {
  double t0 = 0.4;
  double t1 = 1.0;
  std::size_t updates = 2000;
  std::optional<double> fixed;

  void add(CLI::App* app) {
    app->add_option("--t0", t0, "Initial threshold")->capture_default_str();
    app->add_option("--t1", t1, "Final threshold")->capture_default_str();
    app->add_option("--updates", updates, "Number of updates K")->capture_default_str();
    app->add_option("--fixed-threshold", fixed, "Constant threshold instead of the linear schedule");
  }

  ThresholdSchedule schedule() const {
    return fixed ? ThresholdSchedule::fixed(*fixed, updates)
                 : ThresholdSchedule::linear(t0, t1, updates);
  }
};

std::string out_or_default(const std::string& out, const char* name) {
  return out.empty() ? default_output_dir(name).string() : out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective knowledge distillation pipeline for toy CTC translation models"};
  app.footer(exit_code_help() + "\nDefault outputs go under $" + kOutputRootEnv +
             " (or ./runs when unset).");
  app.require_subcommand(1);
  app.fallthrough();

  Execution exec;
  std::optional<std::uint64_t> seed;
  std::string verify;
  app.add_option("--threads", exec.threads, "Worker threads; never changes results")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", seed, "Seed for stages that sample (synth, training, full)");
  app.add_option("--verify-manifest", verify,
                 "Refuse to run unless every file this manifest records is unchanged");

  // synth
  SynthStage synth;
  synth.heldout = 1000;
  std::string synth_out, mistake = "repeat-token";
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic multimodal corpus");
  c_synth->add_option("--out", synth_out, "Output directory");
  c_synth->add_option("-n,--sentences", synth.n, "Training sentences")->capture_default_str();
  c_synth->add_option("--heldout", synth.heldout, "Held-out sentences (0 = none)")->capture_default_str();
  c_synth->add_option("--source-vocab", synth.task.source_vocab_size)->capture_default_str();
  c_synth->add_option("--target-vocab", synth.task.target_vocab_size)->capture_default_str();
  c_synth->add_option("--min-length", synth.task.min_length)->capture_default_str();
  c_synth->add_option("--max-length", synth.task.max_length)->capture_default_str();
  c_synth->add_option("--modes", synth.task.modes)->capture_default_str();
  c_synth->add_option("--mode-distribution", synth.task.mode_distribution,
                      "Mode probabilities (default uniform)")
      ->delimiter(',');
  c_synth->add_option("--mistake-rate", synth.task.mistake_rate)->capture_default_str();
  c_synth->add_option("--mistake", mistake, "repeat-token or synonym-swap")->capture_default_str();

  // train-evaluator
  TrainEvaluatorStage evaluator;
  CorpusFlags eval_corpus;
  std::string eval_side = "kd", eval_out, eval_log, eval_early_out;
  auto* c_eval = app.add_subcommand("train-evaluator", "Train the NAT evaluator on one target side");
  eval_corpus.add(c_eval);
  add_model_flags(c_eval, evaluator.model);
  c_eval->add_option("--side", eval_side, "Target side: raw or kd")->capture_default_str();
  c_eval->add_option("--out", eval_out, "Checkpoint path");
  c_eval->add_option("--log", eval_log, "Epoch loss TSV (default <out>.log.tsv)");
  c_eval->add_option("--early-updates", evaluator.early_updates,
                     "Also save a checkpoint after this many updates");
  c_eval->add_option("--early-out", eval_early_out, "Early checkpoint path (default <out stem>.early.ckpt)");

  // score
  ScoreStage score;
  CorpusFlags score_corpus;
  std::string score_ckpt, score_out, variant = "ctc", normalizer = "frames";
  auto* c_score = app.add_subcommand("score", "Score every raw target with the evaluator");
  score_corpus.add(c_score);
  c_score->add_option("--checkpoint", score_ckpt, "Evaluator checkpoint")->required();
  c_score->add_option("--variant", variant, "ctc or plain")->capture_default_str();
  c_score->add_option("--normalizer", normalizer, "CTC score denominator: frames or reference")
      ->capture_default_str();
  c_score->add_option("--out", score_out, "Score TSV");

  // select
  SelectStage select;
  CorpusFlags select_corpus;
  ScheduleFlags select_schedule;
  std::string select_scores, select_out;
  auto* c_select = app.add_subcommand("select", "Resolve each example's target at update k");
  select_corpus.add(c_select);
  select_schedule.add(c_select);
  c_select->add_option("--scores", select_scores, "Score TSV")->required();
  c_select->add_option("-k,--k", select.k, "Update index")->capture_default_str();
  c_select->add_option("--out", select_out, "Output directory");

  // train-student
  TrainStudentStage student;
  CorpusFlags student_corpus;
  ScheduleFlags student_schedule;
  std::string student_scores, student_init, student_out, student_log;
  auto* c_student = app.add_subcommand("train-student", "Train a student with selective distillation");
  student_corpus.add(c_student);
  student_schedule.add(c_student);
  add_model_flags(c_student, student.model);
  c_student->add_option("--scores", student_scores, "Score TSV")->required();
  c_student->add_option("--init", student_init, "Initialize from this checkpoint");
  c_student->add_option("--out", student_out, "Checkpoint path");
  c_student->add_option("--log", student_log, "Per-update TSV (default <out>.log.tsv)");

  // metrics
  MetricsStage metrics;
  CorpusFlags metrics_corpus;
  std::string metrics_scores, metrics_out, pharaoh;
  double bucket_t0 = 0.4, bucket_t1 = 1.0;
  auto* c_metrics = app.add_subcommand("metrics", "Corpus complexity metrics per view and threshold");
  metrics_corpus.add(c_metrics);
  c_metrics->add_option("--scores", metrics_scores, "Score TSV (enables the threshold table)");
  c_metrics->add_option("--thresholds", metrics.thresholds, "Comma-separated thresholds")
      ->delimiter(',')
      ->capture_default_str();
  c_metrics->add_option("--iterations", metrics.align.iterations, "Aligner EM iterations")
      ->capture_default_str();
  c_metrics->add_option("--tension", metrics.align.tension, "Aligner diagonal tension")
      ->capture_default_str();
  c_metrics->add_option("--null-prob", metrics.align.null_prob, "Aligner NULL probability")
      ->capture_default_str();
  c_metrics->add_option("--t0", bucket_t0, "Schedule start for the exposure column")->capture_default_str();
  c_metrics->add_option("--t1", bucket_t1, "Schedule end for the exposure column")->capture_default_str();
  c_metrics->add_option("--out", metrics_out, "Report path");
  c_metrics->add_option("--pharaoh", pharaoh, "Also dump raw-side alignment links here");

  // report
  std::string run_dir, report_out, report_src, report_ref, report_scores;
  std::vector<std::string> report_models;
  auto* c_report = app.add_subcommand("report", "Held-out evaluation of checkpoints");
  c_report->add_option("--run-dir", run_dir, "Directory written by `full`");
  c_report->add_option("--model", report_models, "label=checkpoint (repeatable)");
  c_report->add_option("--heldout-src", report_src, "Held-out sources");
  c_report->add_option("--heldout-ref", report_ref, "Held-out references");
  c_report->add_option("--scores", report_scores, "Score TSV for the quantile table");
  c_report->add_option("--out", report_out, "Report path");

  // full
  FullStage full = FullStage::defaults({});
  std::string full_out;
  bool no_baselines = false, no_init = false;
  auto* c_full = app.add_subcommand("full", "Run every stage on a synthetic corpus");
  c_full->add_option("--out", full_out, "Output directory");
  c_full->add_option("-n,--sentences", full.synth.n)->capture_default_str();
  c_full->add_option("--heldout", full.synth.heldout)->capture_default_str();
  c_full->add_option("--updates", full.schedule.updates, "Student updates K")->capture_default_str();
  c_full->add_option("--t0", full.schedule.t0)->capture_default_str();
  c_full->add_option("--t1", full.schedule.t1)->capture_default_str();
  c_full->add_option("--mistake-rate", full.synth.task.mistake_rate)->capture_default_str();
  c_full->add_option("--modes", full.synth.task.modes)->capture_default_str();
  add_model_flags(c_full, full.model);
  c_full->add_flag("--no-baselines", no_baselines, "Skip the KD-only and raw-only students");
  c_full->add_flag("--no-teacher-init", no_init, "Start the students from random parameters");

  // rerun
  std::string rerun_manifest;
  auto* c_rerun = app.add_subcommand("rerun", "Re-execute the stage a manifest describes");
  c_rerun->add_option("--manifest", rerun_manifest, "Manifest to replay")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (!verify.empty()) exec.verify_manifest = path(verify);

    if (c_synth->parsed()) {
      synth.task.mistake = parse_mistake(mistake);
      if (seed) synth.set_seed(*seed);
      synth.out_dir = out_or_default(synth_out, "synth");
      run_synth(synth, exec);
    } else if (c_eval->parsed()) {
      evaluator.corpus = eval_corpus.resolve();
      evaluator.target_side = parse_side(eval_side);
      if (seed) evaluator.model.seed = *seed;
      evaluator.out = out_or_default(eval_out, "evaluator.ckpt");
      evaluator.log = eval_log;
      evaluator.early_out = eval_early_out;
      run_train_evaluator(evaluator, exec);
    } else if (c_score->parsed()) {
      score.checkpoint = score_ckpt;
      score.corpus = score_corpus.resolve();
      score.variant = parse_variant(variant);
      score.normalizer = parse_normalizer(normalizer);
      score.out = out_or_default(score_out, "scores.tsv");
      run_score(score, exec);
    } else if (c_select->parsed()) {
      select.corpus = select_corpus.resolve();
      select.scores = select_scores;
      select.schedule = select_schedule.schedule();
      select.out_dir = out_or_default(select_out, "select");
      run_select(select, exec);
    } else if (c_student->parsed()) {
      student.corpus = student_corpus.resolve();
      student.scores = student_scores;
      student.schedule = student_schedule.schedule();
      if (seed) student.model.seed = *seed;
      if (!student_init.empty()) student.init = path(student_init);
      student.out = out_or_default(student_out, "student.ckpt");
      student.log = student_log;
      run_train_student(student, exec);
    } else if (c_metrics->parsed()) {
      metrics.corpus = metrics_corpus.resolve();
      if (!metrics_scores.empty()) metrics.scores = path(metrics_scores);
      metrics.schedule = ThresholdSchedule::linear(bucket_t0, bucket_t1, 1);
      metrics.out = out_or_default(metrics_out, "metrics.txt");
      if (!pharaoh.empty()) metrics.pharaoh = path(pharaoh);
      run_metrics(metrics, exec);
    } else if (c_report->parsed()) {
      ReportStage report = run_dir.empty() ? ReportStage{} : ReportStage::from_run_dir(run_dir);
      if (!report_models.empty()) report.models.clear();
      for (const auto& spec : report_models) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0)
          throw Error(ErrorKind::kConfig, "--model expects label=checkpoint, got '" + spec + "'");
        report.models.emplace_back(spec.substr(0, eq), path(spec.substr(eq + 1)));
      }
      if (!report_src.empty()) report.heldout_src = report_src;
      if (!report_ref.empty()) report.heldout_ref = report_ref;
      if (!report_scores.empty()) report.scores = path(report_scores);
      if (!report_out.empty()) report.out = report_out;
      if (report.out.empty()) report.out = default_output_dir("report.txt");
      if (report.heldout_src.empty() || report.heldout_ref.empty())
        throw Error(ErrorKind::kConfig, "report needs --run-dir or --heldout-src and --heldout-ref");
      run_report(report, exec);
    } else if (c_full->parsed()) {
      full.out_dir = out_or_default(full_out, "full");
      if (seed) {
        full.synth.set_seed(*seed);
        full.model.seed = *seed;
      }
      full.baselines = !no_baselines;
      full.teacher_init = !no_init;
      run_full(full, exec);
    } else if (c_rerun->parsed()) {
      rerun(rerun_manifest, exec);
    }
  } catch (const skd::Error& e) {
    std::fprintf(stderr, "skd: error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "skd: internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitOk;
}
