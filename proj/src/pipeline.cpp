#include "skd/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "skd/checksum.hpp"
#include "skd/corpus.hpp"
#include "skd/ctc.hpp"
#include "skd/metrics.hpp"
#include "skd/parallel.hpp"

namespace skd::pipeline {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

path absolute_of(const path& p) { return fs::weakly_canonical(fs::absolute(p)); }

path resolve(const path& dir, const json& value) {
  const path p(value.get<std::string>());
  return p.is_absolute() ? p : (dir / p).lexically_normal();
}

void require_input(const path& p) {
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::kMissingInput, "missing input " + p.string());
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

path with_suffix(const path& p, const std::string& suffix) { return path(p.string() + suffix); }

path early_path(const path& out) {
  return out.parent_path() / (out.stem().string() + ".early" + out.extension().string());
}

// Removes everything it tracks unless commit() ran. Directories it created
// are removed last, and only when empty.
class ArtifactGuard {
 public:
  ArtifactGuard() = default;
  ArtifactGuard(const ArtifactGuard&) = delete;
  ArtifactGuard& operator=(const ArtifactGuard&) = delete;
  ~ArtifactGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = files_.rbegin(); it != files_.rend(); ++it) fs::remove(*it, ec);
    for (auto it = dirs_.rbegin(); it != dirs_.rend(); ++it) fs::remove(*it, ec);
  }

  path file(const path& p) {
    make_dir(p.parent_path());
    files_.push_back(p);
    return p;
  }

  void make_dir(const path& dir) {
    if (dir.empty() || fs::exists(dir)) return;
    make_dir(dir.parent_path());
    std::error_code ec;
    if (!fs::create_directory(dir, ec) && ec)
      throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
    dirs_.push_back(dir);
  }

  void commit() { committed_ = true; }

 private:
  std::vector<path> files_;
  std::vector<path> dirs_;
  bool committed_ = false;
};

class Manifest {
 public:
  Manifest(const std::string& stage, const path& file)
      : file_(absolute_of(file)), dir_(file_.parent_path()) {
    doc_["tool"] = "skd";
    doc_["version"] = kToolVersion;
    doc_["stage"] = stage;
    doc_["config"] = json::object();
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
  }

  json& config() { return doc_["config"]; }
  const path& file() const { return file_; }

  // Relative to the manifest so a run directory can be moved as a whole.
  std::string rel(const path& p) const {
    const path a = absolute_of(p);
    const path r = a.lexically_relative(dir_);
    return r.empty() ? a.generic_string() : r.generic_string();
  }

  void input(const std::string& name, const path& p) {
    require_input(p);
    record("inputs", name, p);
  }
  void output(const std::string& name, const path& p) { record("outputs", name, p); }

  void write(ArtifactGuard& guard) const {
    write_text_file(guard.file(file_), doc_.dump(2) + "\n");
  }

 private:
  void record(const char* section, const std::string& name, const path& p) {
    json entry;
    entry["path"] = rel(p);
    entry["sha256"] = sha256_file(p);
    doc_[section][name] = std::move(entry);
  }

  path file_;
  path dir_;
  json doc_;
};

json read_manifest(const path& file) {
  require_input(file);
  try {
    json doc = json::parse(read_text_file(file));
    if (!doc.is_object() || doc.value("tool", "") != "skd" || !doc.contains("stage") ||
        !doc.contains("config"))
      throw Error(ErrorKind::kFormat, file.string() + " is not an skd manifest");
    return doc;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, file.string() + ": " + e.what());
  }
}

void maybe_verify(const Execution& exec) {
  if (exec.verify_manifest) verify_manifest(*exec.verify_manifest);
}

// Config (de)serialization. Threads are deliberately absent: they never
// change an artifact.

json to_json(const SynthTaskSpec& s) {
  json j;
  j["source_vocab_size"] = s.source_vocab_size;
  j["target_vocab_size"] = s.target_vocab_size;
  j["min_length"] = s.min_length;
  j["max_length"] = s.max_length;
  j["modes"] = s.modes;
  j["mode_distribution"] = s.mode_distribution;
  j["mistake_rate"] = s.mistake_rate;
  j["mistake"] = std::string(mistake_name(s.mistake));
  j["seed"] = s.seed;
  return j;
}

SynthTaskSpec task_from(const json& j) {
  SynthTaskSpec s;
  s.source_vocab_size = j.at("source_vocab_size").get<int>();
  s.target_vocab_size = j.at("target_vocab_size").get<int>();
  s.min_length = j.at("min_length").get<int>();
  s.max_length = j.at("max_length").get<int>();
  s.modes = j.at("modes").get<int>();
  s.mode_distribution = j.at("mode_distribution").get<std::vector<double>>();
  s.mistake_rate = j.at("mistake_rate").get<double>();
  s.mistake = parse_mistake(j.at("mistake").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

json to_json(const ModelConfig& m) {
  json j;
  j["embedding_dim"] = m.embedding_dim;
  j["hidden_dim"] = m.hidden_dim;
  j["upsample"] = m.upsample;
  j["window"] = m.window;
  j["learning_rate"] = m.learning_rate;
  j["epochs"] = m.epochs;
  j["batch_size"] = m.batch_size;
  j["clip_norm"] = m.clip_norm;
  j["seed"] = m.seed;
  return j;
}

ModelConfig model_from(const json& j) {
  ModelConfig m;
  m.embedding_dim = j.at("embedding_dim").get<int>();
  m.hidden_dim = j.at("hidden_dim").get<int>();
  m.upsample = j.at("upsample").get<int>();
  m.window = j.at("window").get<int>();
  m.learning_rate = j.at("learning_rate").get<double>();
  m.epochs = j.at("epochs").get<int>();
  m.batch_size = j.at("batch_size").get<int>();
  m.clip_norm = j.at("clip_norm").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

json to_json(const ThresholdSchedule& s) {
  json j;
  j["mode"] = s.mode == ScheduleMode::kFixed ? "fixed" : "linear";
  j["t0"] = s.t0;
  j["t1"] = s.t1;
  j["updates"] = s.updates;
  return j;
}

ThresholdSchedule schedule_from(const json& j) {
  ThresholdSchedule s;
  const auto mode = j.at("mode").get<std::string>();
  if (mode != "fixed" && mode != "linear") throw Error(ErrorKind::kFormat, "unknown schedule " + mode);
  s.mode = mode == "fixed" ? ScheduleMode::kFixed : ScheduleMode::kLinear;
  s.t0 = j.at("t0").get<double>();
  s.t1 = j.at("t1").get<double>();
  s.updates = j.at("updates").get<std::size_t>();
  return s;
}

json to_json(const AlignOptions& a) {
  json j;
  j["iterations"] = a.iterations;
  j["tension"] = a.tension;
  j["null_prob"] = a.null_prob;
  return j;
}

AlignOptions align_from(const json& j) {
  AlignOptions a;
  a.iterations = j.at("iterations").get<int>();
  a.tension = j.at("tension").get<double>();
  a.null_prob = j.at("null_prob").get<double>();
  return a;
}

json corpus_json(const CorpusPaths& c, const Manifest& m) {
  json j;
  j["src"] = m.rel(c.src);
  j["raw"] = m.rel(c.raw);
  j["kd"] = m.rel(c.kd);
  return j;
}

CorpusPaths corpus_from(const json& j, const path& dir) {
  return {resolve(dir, j.at("src")), resolve(dir, j.at("raw")), resolve(dir, j.at("kd"))};
}

void record_corpus_inputs(Manifest& m, const CorpusPaths& c) {
  m.input("src", c.src);
  m.input("raw", c.raw);
  m.input("kd", c.kd);
}

Corpus load(const CorpusPaths& c) { return load_corpus(c.src, c.raw, c.kd); }

NatModel load_model(const path& p) {
  require_input(p);
  return load_checkpoint(p);
}

ScoreTable load_scores(const path& p, const Corpus& corpus) {
  require_input(p);
  ScoreTable table = read_score_tsv(p);
  table.validate_covers(corpus.size());
  return table;
}

std::string quantile_section(const ScoreTable& scores) {
  const std::vector<double> values = scores.scores();
  std::string out = "# score_quantiles\nq\tscore\n";
  for (double q : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0})
    out += fmt("%.2f", q) + "\t" + fmt("%.6f", score_quantile(values, q)) + "\n";
  return out;
}

// Synth stage paths, relative to its output directory.
CorpusPaths synth_corpus(const path& dir) { return {dir / "src.txt", dir / "raw.txt", dir / "kd.txt"}; }

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitUsage;
    case ErrorKind::kMissingInput: return kExitMissingInput;
    case ErrorKind::kChecksum: return kExitChecksum;
    case ErrorKind::kFormat: return kExitBadData;
    case ErrorKind::kInfeasible:
    case ErrorKind::kTraining: return kExitTraining;
    case ErrorKind::kVocabMismatch: return kExitVocabMismatch;
    case ErrorKind::kIo: return kExitIo;
  }
  return kExitInternal;
}

std::string exit_code_help() {
  return "Exit codes:\n"
         "  0  success\n"
         "  1  internal error\n"
         "  2  invalid flags or configuration\n"
         "  3  missing input file\n"
         "  4  checksum mismatch against a manifest\n"
         "  5  malformed input data\n"
         "  6  training failure or infeasible CTC targets\n"
         "  7  vocabulary mismatch between a checkpoint and a corpus\n"
         "  8  I/O error\n";
}

path default_output_dir(const std::string& name) {
  const char* root = std::getenv(kOutputRootEnv);
  return (root && *root ? path(root) : path("runs")) / name;
}

path manifest_for(const path& output) { return with_suffix(output, ".manifest.json"); }

void SynthStage::set_seed(std::uint64_t s) {
  task.seed = s;
  seed = 10 * s + 1;
  heldout_seed = 10 * s + 2;
}

ReportStage ReportStage::from_run_dir(const path& run_dir) {
  ReportStage r;
  for (const char* name : {"evaluator", "student", "student-kd", "student-raw"}) {
    const path ckpt = run_dir / (std::string(name) + ".ckpt");
    if (fs::exists(ckpt)) r.models.emplace_back(name, ckpt);
  }
  r.heldout_src = run_dir / "synth" / "heldout.src.txt";
  r.heldout_ref = run_dir / "synth" / "heldout.ref.txt";
  if (fs::exists(run_dir / "scores.tsv")) r.scores = run_dir / "scores.tsv";
  r.out = run_dir / "report.txt";
  return r;
}

FullStage FullStage::defaults(const path& out_dir) {
  FullStage f;
  f.out_dir = out_dir;
  f.synth.n = 2000;
  f.synth.heldout = 1000;
  f.synth.set_seed(1);
  f.model.upsample = 3;
  f.model.epochs = 10;
  f.schedule = ThresholdSchedule::linear(0.4, 1.0, 2000);
  return f;
}

void verify_manifest(const path& manifest, bool inputs_only) {
  const json doc = read_manifest(manifest);
  const path dir = absolute_of(manifest).parent_path();
  for (const char* section : {"inputs", "outputs"}) {
    if (inputs_only && std::string(section) == "outputs") break;
    if (!doc.contains(section)) continue;
    for (const auto& [name, entry] : doc[section].items()) {
      const path p = resolve(dir, entry.at("path"));
      require_input(p);
      if (sha256_file(p) != entry.at("sha256").get<std::string>())
        throw Error(ErrorKind::kChecksum, p.string() + " does not match " + manifest.string());
    }
  }
}

// ---------------------------------------------------------------- synth

namespace {

json stage_json(const SynthStage& s, const Manifest& m) {
  json c;
  c["task"] = to_json(s.task);
  c["n"] = s.n;
  c["seed"] = s.seed;
  c["heldout"] = s.heldout;
  c["heldout_seed"] = s.heldout_seed;
  c["out_dir"] = m.rel(s.out_dir);
  return c;
}

SynthStage synth_from(const json& c, const path& dir) {
  SynthStage s;
  s.task = task_from(c.at("task"));
  s.n = c.at("n").get<std::size_t>();
  s.seed = c.at("seed").get<std::uint64_t>();
  s.heldout = c.at("heldout").get<std::size_t>();
  s.heldout_seed = c.at("heldout_seed").get<std::uint64_t>();
  s.out_dir = resolve(dir, c.at("out_dir"));
  return s;
}

}  // namespace

void run_synth(const SynthStage& stage, const Execution& exec) {
  maybe_verify(exec);
  stage.task.validate();
  ArtifactGuard guard;
  guard.make_dir(stage.out_dir);
  Manifest m("synth", stage.out_dir / "manifest.json");
  m.config() = stage_json(stage, m);

  const SynthTask task(stage.task);
  const SynthCorpus data = task.generate(stage.n, stage.seed);
  const CorpusPaths paths = synth_corpus(stage.out_dir);
  write_text_file(guard.file(paths.src), format_bitext(data.corpus, Side::kSource));
  write_text_file(guard.file(paths.raw), format_bitext(data.corpus, Side::kRaw));
  write_text_file(guard.file(paths.kd), format_bitext(data.corpus, Side::kDistilled));
  const path sidecar = guard.file(stage.out_dir / "synth.tsv");
  write_text_file(sidecar, format_synth_sidecar(data));
  m.output("src", paths.src);
  m.output("raw", paths.raw);
  m.output("kd", paths.kd);
  m.output("sidecar", sidecar);

  if (stage.heldout > 0) {
    // Own vocabulary: the files carry surfaces, and a model maps them
    // through its own tables when it reads them.
    const SynthCorpus held = task.generate(stage.heldout, stage.heldout_seed);
    const path src = guard.file(stage.out_dir / "heldout.src.txt");
    const path ref = guard.file(stage.out_dir / "heldout.ref.txt");
    write_text_file(src, format_bitext(held.corpus, Side::kSource));
    write_text_file(ref, format_sentences(held.corpus.target_vocab(), held.canonical));
    m.output("heldout_src", src);
    m.output("heldout_ref", ref);
  }
  m.write(guard);
  guard.commit();
}

// ------------------------------------------------------- train-evaluator

namespace {

json stage_json(const TrainEvaluatorStage& s, const Manifest& m) {
  json c;
  c["corpus"] = corpus_json(s.corpus, m);
  c["target_side"] = std::string(side_name(s.target_side));
  c["model"] = to_json(s.model);
  c["out"] = m.rel(s.out);
  c["log"] = m.rel(s.log.empty() ? with_suffix(s.out, ".log.tsv") : s.log);
  c["early_updates"] = s.early_updates;
  if (s.early_updates > 0) c["early_out"] = m.rel(s.early_out.empty() ? early_path(s.out) : s.early_out);
  return c;
}

TrainEvaluatorStage evaluator_from(const json& c, const path& dir) {
  TrainEvaluatorStage s;
  s.corpus = corpus_from(c.at("corpus"), dir);
  s.target_side = parse_side(c.at("target_side").get<std::string>());
  s.model = model_from(c.at("model"));
  s.out = resolve(dir, c.at("out"));
  s.log = resolve(dir, c.at("log"));
  s.early_updates = c.at("early_updates").get<std::size_t>();
  if (s.early_updates > 0) s.early_out = resolve(dir, c.at("early_out"));
  return s;
}

}  // namespace

void run_train_evaluator(const TrainEvaluatorStage& stage_in, const Execution& exec) {
  maybe_verify(exec);
  TrainEvaluatorStage stage = stage_in;
  if (stage.log.empty()) stage.log = with_suffix(stage.out, ".log.tsv");
  if (stage.early_updates > 0 && stage.early_out.empty()) stage.early_out = early_path(stage.out);
  stage.model.validate();
  if (stage.target_side == Side::kSource)
    throw Error(ErrorKind::kConfig, "the evaluator trains on a target side (raw or kd)");

  ArtifactGuard guard;
  Manifest m("train-evaluator", manifest_for(stage.out));
  m.config() = stage_json(stage, m);
  record_corpus_inputs(m, stage.corpus);
  const Corpus corpus = load(stage.corpus);

  TrainOptions options;
  options.threads = exec.threads;
  options.snapshot_at_update = stage.early_updates;
  const TrainResult result = train(corpus, stage.target_side, stage.model, options);
  if (stage.early_updates > 0 && !result.snapshot)
    throw Error(ErrorKind::kConfig, "early checkpoint requested after " +
                                        std::to_string(stage.early_updates) +
                                        " updates but training ran " +
                                        std::to_string(result.updates));

  std::string log = "epoch\tloss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    log += std::to_string(e + 1) + "\t" + fmt("%.6f", result.epoch_loss[e]) + "\n";
  write_text_file(guard.file(stage.log), log);
  save_checkpoint(result.model, guard.file(stage.out));
  m.output("checkpoint", stage.out);
  m.output("log", stage.log);
  if (result.snapshot) {
    save_checkpoint(*result.snapshot, guard.file(stage.early_out));
    m.output("early_checkpoint", stage.early_out);
  }
  m.write(guard);
  guard.commit();
}

// ----------------------------------------------------------------- score

namespace {

json stage_json(const ScoreStage& s, const Manifest& m) {
  json c;
  c["checkpoint"] = m.rel(s.checkpoint);
  c["corpus"] = corpus_json(s.corpus, m);
  c["variant"] = std::string(variant_name(s.variant));
  c["normalizer"] = s.normalizer == CtcNormalizer::kFrames ? "frames" : "reference";
  c["out"] = m.rel(s.out);
  return c;
}

ScoreStage score_from(const json& c, const path& dir) {
  ScoreStage s;
  s.checkpoint = resolve(dir, c.at("checkpoint"));
  s.corpus = corpus_from(c.at("corpus"), dir);
  s.variant = parse_variant(c.at("variant").get<std::string>());
  s.normalizer = parse_normalizer(c.at("normalizer").get<std::string>());
  s.out = resolve(dir, c.at("out"));
  return s;
}

}  // namespace

void run_score(const ScoreStage& stage, const Execution& exec) {
  maybe_verify(exec);
  ArtifactGuard guard;
  Manifest m("score", manifest_for(stage.out));
  m.config() = stage_json(stage, m);
  m.input("checkpoint", stage.checkpoint);
  record_corpus_inputs(m, stage.corpus);
  const NatModel model = load_model(stage.checkpoint);
  const Corpus corpus = load(stage.corpus);

  ScoreOptions options;
  options.variant = stage.variant;
  options.normalizer = stage.normalizer;
  options.threads = exec.threads;
  options.checkpoint_id = sha256_file(stage.checkpoint);
  const ScoreTable table = score_corpus(model, corpus, options);
  write_score_tsv(table, guard.file(stage.out));
  m.output("scores", stage.out);
  m.write(guard);
  guard.commit();
}

// ---------------------------------------------------------------- select

namespace {

json stage_json(const SelectStage& s, const Manifest& m) {
  json c;
  c["corpus"] = corpus_json(s.corpus, m);
  c["scores"] = m.rel(s.scores);
  c["schedule"] = to_json(s.schedule);
  c["k"] = s.k;
  c["out_dir"] = m.rel(s.out_dir);
  return c;
}

SelectStage select_from(const json& c, const path& dir) {
  SelectStage s;
  s.corpus = corpus_from(c.at("corpus"), dir);
  s.scores = resolve(dir, c.at("scores"));
  s.schedule = schedule_from(c.at("schedule"));
  s.k = c.at("k").get<std::size_t>();
  s.out_dir = resolve(dir, c.at("out_dir"));
  return s;
}

}  // namespace

void run_select(const SelectStage& stage, const Execution& exec) {
  maybe_verify(exec);
  const double threshold = threshold_at(stage.schedule, stage.k);
  ArtifactGuard guard;
  guard.make_dir(stage.out_dir);
  Manifest m("select", stage.out_dir / "manifest.json");
  m.config() = stage_json(stage, m);
  record_corpus_inputs(m, stage.corpus);
  m.input("scores", stage.scores);
  const Corpus corpus = load(stage.corpus);
  const ScoreTable scores = load_scores(stage.scores, corpus);

  const auto decisions = select_for_update(scores, corpus, threshold);
  std::vector<Sentence> chosen;
  chosen.reserve(decisions.size());
  for (const auto& d : decisions)
    chosen.push_back(d.choice == Choice::kRaw ? corpus[d.index].raw_target
                                              : corpus[d.index].distilled_target);
  const path src = guard.file(stage.out_dir / "selected.src.txt");
  const path tgt = guard.file(stage.out_dir / "selected.tgt.txt");
  const path dec = guard.file(stage.out_dir / "decisions.tsv");
  write_text_file(src, format_bitext(corpus, Side::kSource));
  write_text_file(tgt, format_sentences(corpus.target_vocab(), chosen));
  write_text_file(dec, format_decisions_tsv(decisions));
  m.output("selected_src", src);
  m.output("selected_tgt", tgt);
  m.output("decisions", dec);
  m.write(guard);
  guard.commit();
}

// --------------------------------------------------------- train-student

namespace {

json stage_json(const TrainStudentStage& s, const Manifest& m) {
  json c;
  c["corpus"] = corpus_json(s.corpus, m);
  c["scores"] = m.rel(s.scores);
  c["schedule"] = to_json(s.schedule);
  c["model"] = to_json(s.model);
  c["init"] = s.init ? json(m.rel(*s.init)) : json(nullptr);
  c["out"] = m.rel(s.out);
  c["log"] = m.rel(s.log.empty() ? with_suffix(s.out, ".log.tsv") : s.log);
  return c;
}

TrainStudentStage student_from(const json& c, const path& dir) {
  TrainStudentStage s;
  s.corpus = corpus_from(c.at("corpus"), dir);
  s.scores = resolve(dir, c.at("scores"));
  s.schedule = schedule_from(c.at("schedule"));
  s.model = model_from(c.at("model"));
  if (!c.at("init").is_null()) s.init = resolve(dir, c.at("init"));
  s.out = resolve(dir, c.at("out"));
  s.log = resolve(dir, c.at("log"));
  return s;
}

}  // namespace

void run_train_student(const TrainStudentStage& stage_in, const Execution& exec) {
  maybe_verify(exec);
  TrainStudentStage stage = stage_in;
  if (stage.log.empty()) stage.log = with_suffix(stage.out, ".log.tsv");
  stage.schedule.validate();
  stage.model.validate();

  ArtifactGuard guard;
  Manifest m("train-student", manifest_for(stage.out));
  m.config() = stage_json(stage, m);
  record_corpus_inputs(m, stage.corpus);
  m.input("scores", stage.scores);
  if (stage.init) m.input("init", *stage.init);
  const Corpus corpus = load(stage.corpus);
  const ScoreTable scores = load_scores(stage.scores, corpus);

  StudentConfig config;
  config.model = stage.model;
  config.updates = stage.schedule.updates;
  config.threads = exec.threads;
  if (stage.init) config.init = load_model(*stage.init);
  const StudentResult result = train_student(corpus, scores, stage.schedule, config);

  save_checkpoint(result.model, guard.file(stage.out));
  write_text_file(guard.file(stage.log), format_update_log(result.log));
  m.output("checkpoint", stage.out);
  m.output("log", stage.log);
  m.write(guard);
  guard.commit();
}

// --------------------------------------------------------------- metrics

namespace {

json stage_json(const MetricsStage& s, const Manifest& m) {
  json c;
  c["corpus"] = corpus_json(s.corpus, m);
  c["scores"] = s.scores ? json(m.rel(*s.scores)) : json(nullptr);
  c["thresholds"] = s.thresholds;
  c["align"] = to_json(s.align);
  c["schedule"] = to_json(s.schedule);
  c["out"] = m.rel(s.out);
  c["pharaoh"] = s.pharaoh ? json(m.rel(*s.pharaoh)) : json(nullptr);
  return c;
}

MetricsStage metrics_from(const json& c, const path& dir) {
  MetricsStage s;
  s.corpus = corpus_from(c.at("corpus"), dir);
  if (!c.at("scores").is_null()) s.scores = resolve(dir, c.at("scores"));
  s.thresholds = c.at("thresholds").get<std::vector<double>>();
  s.align = align_from(c.at("align"));
  s.schedule = schedule_from(c.at("schedule"));
  s.out = resolve(dir, c.at("out"));
  if (!c.at("pharaoh").is_null()) s.pharaoh = resolve(dir, c.at("pharaoh"));
  return s;
}

std::string view_row(const MetricReport& r) {
  return r.label + "\t" + std::to_string(r.sentences) + "\t" + std::to_string(r.tokens) + "\t" +
         fmt("%.6f", r.uncertainty) + "\t" + fmt("%.6f", r.shift) + "\t" +
         fmt("%.3f", r.repetition_permille) + "\n";
}

// "C<TAB>S" of a view, or NA for an empty one.
std::string view_cs(const Bitext& view, const std::string& label, const AlignOptions& align) {
  if (view.empty()) return "NA\tNA";
  const MetricReport r = metric_report(view, label, align);
  return fmt("%.6f", r.uncertainty) + "\t" + fmt("%.6f", r.shift);
}

}  // namespace

void run_metrics(const MetricsStage& stage, const Execution& exec) {
  maybe_verify(exec);
  stage.schedule.validate();
  ArtifactGuard guard;
  Manifest m("metrics", manifest_for(stage.out));
  m.config() = stage_json(stage, m);
  record_corpus_inputs(m, stage.corpus);
  if (stage.scores) m.input("scores", *stage.scores);
  const Corpus corpus = load(stage.corpus);
  std::optional<ScoreTable> scores;
  if (stage.scores) scores = load_scores(*stage.scores, corpus);

  AlignOptions align = stage.align;
  align.threads = exec.threads;

  std::string out = "# views\nview\tsentences\ttokens\tC\tS\trepetition_permille\n";
  for (ViewKind kind : {ViewKind::kRaw, ViewKind::kDistilled})
    out += view_row(metric_report(build_view(corpus, nullptr, 0.0, kind), std::string(view_name(kind)), align));

  if (scores) {
    out += "\n# thresholds\nT\traw_ratio\tC_selected\tS_selected\tC_replaced\tS_replaced\t"
           "C_training\tS_training\n";
    for (double t : stage.thresholds) {
      out += fmt("%.4f", t) + "\t" + fmt("%.6f", raw_ratio(*scores, t));
      for (ViewKind kind : {ViewKind::kSelectedRaw, ViewKind::kReplacedRaw, ViewKind::kTrainingMix})
        out += "\t" + view_cs(build_view(corpus, &*scores, t, kind), std::string(view_name(kind)), align);
      out += "\n";
    }

    std::vector<std::size_t> lengths;
    lengths.reserve(corpus.size());
    for (const auto& ex : corpus.examples()) lengths.push_back(ex.raw_target.size());
    const std::vector<double> values = scores->scores();
    out += "\n# length_buckets\nbucket\tcount\tmean_score\texposure\n";
    for (const auto& b : length_buckets(lengths, values, stage.schedule))
      out += b.label + "\t" + std::to_string(b.count) + "\t" + fmt("%.6f", b.mean_score) + "\t" +
             fmt("%.6f", b.mean_exposure) + "\n";
    out += "\n" + quantile_section(*scores);
  }

  write_text_file(guard.file(stage.out), out);
  m.output("report", stage.out);
  if (stage.pharaoh) {
    const Bitext raw = corpus.bitext(Side::kRaw);
    const AlignmentModel model = em_train(raw, align);
    const auto links = align_bitext(model, raw, exec.threads);
    write_text_file(guard.file(*stage.pharaoh), format_pharaoh(links));
    m.output("pharaoh", *stage.pharaoh);
  }
  m.write(guard);
  guard.commit();
}

// ---------------------------------------------------------------- report

namespace {

json stage_json(const ReportStage& s, const Manifest& m) {
  json c;
  json models = json::array();
  for (const auto& [label, ckpt] : s.models) models.push_back({{"label", label}, {"checkpoint", m.rel(ckpt)}});
  c["models"] = std::move(models);
  c["heldout_src"] = m.rel(s.heldout_src);
  c["heldout_ref"] = m.rel(s.heldout_ref);
  c["scores"] = s.scores ? json(m.rel(*s.scores)) : json(nullptr);
  c["out"] = m.rel(s.out);
  return c;
}

ReportStage report_from(const json& c, const path& dir) {
  ReportStage s;
  for (const auto& entry : c.at("models"))
    s.models.emplace_back(entry.at("label").get<std::string>(), resolve(dir, entry.at("checkpoint")));
  s.heldout_src = resolve(dir, c.at("heldout_src"));
  s.heldout_ref = resolve(dir, c.at("heldout_ref"));
  if (!c.at("scores").is_null()) s.scores = resolve(dir, c.at("scores"));
  s.out = resolve(dir, c.at("out"));
  return s;
}

std::vector<Sentence> map_lines(const Corpus::Lines& lines, const Vocabulary& vocab) {
  std::vector<Sentence> out;
  out.reserve(lines.size());
  for (const auto& line : lines) {
    Sentence s;
    s.reserve(line.size());
    for (const auto& tok : line) s.push_back(vocab.lookup(tok));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void run_report(const ReportStage& stage, const Execution& exec) {
  maybe_verify(exec);
  if (stage.models.empty()) throw Error(ErrorKind::kConfig, "report needs at least one checkpoint");
  ArtifactGuard guard;
  Manifest m("report", manifest_for(stage.out));
  m.config() = stage_json(stage, m);
  m.input("heldout_src", stage.heldout_src);
  m.input("heldout_ref", stage.heldout_ref);
  for (const auto& [label, ckpt] : stage.models) m.input("model:" + label, ckpt);
  if (stage.scores) m.input("scores", *stage.scores);

  const Corpus::Lines src_lines = read_token_file(stage.heldout_src);
  const Corpus::Lines ref_lines = read_token_file(stage.heldout_ref);
  if (src_lines.size() != ref_lines.size())
    throw Error(ErrorKind::kFormat, "held-out source has " + std::to_string(src_lines.size()) +
                                        " lines but the references have " +
                                        std::to_string(ref_lines.size()));

  std::string out = "# heldout\nmodel\tsentences\trepetition_permille\ttoken_accuracy\tbleu\n";
  {
    Vocabulary ref_vocab;
    std::vector<Sentence> refs;
    for (const auto& line : ref_lines) {
      Sentence s;
      for (const auto& tok : line) s.push_back(ref_vocab.add(tok));
      refs.push_back(std::move(s));
    }
    out += "reference\t" + std::to_string(refs.size()) + "\t" +
           fmt("%.3f", repetition_ratio(refs)) + "\tNA\tNA\n";
  }
  for (const auto& [label, ckpt] : stage.models) {
    const NatModel model = load_model(ckpt);
    const auto sources = map_lines(src_lines, model.source_vocab());
    const auto refs = map_lines(ref_lines, model.target_vocab());
    std::vector<Sentence> hyps(sources.size());
    parallel_for(sources.size(), exec.threads, [&](std::size_t i) {
      hyps[i] = decode_greedy(model.forward(sources[i])).output;
    });
    out += label + "\t" + std::to_string(hyps.size()) + "\t" + fmt("%.3f", repetition_ratio(hyps)) +
           "\t" + fmt("%.6f", token_accuracy(hyps, refs)) + "\t" + fmt("%.4f", corpus_bleu(hyps, refs)) +
           "\n";
  }
  if (stage.scores) {
    const ScoreTable table = read_score_tsv(*stage.scores);
    if (!table.records.empty()) out += "\n" + quantile_section(table);
  }

  write_text_file(guard.file(stage.out), out);
  m.output("report", stage.out);
  m.write(guard);
  guard.commit();
}

// ------------------------------------------------------------------ full

namespace {

json stage_json(const FullStage& s, const Manifest& m) {
  json c;
  c["out_dir"] = m.rel(s.out_dir);
  json synth = stage_json(s.synth, m);
  synth.erase("out_dir");
  c["synth"] = std::move(synth);
  c["model"] = to_json(s.model);
  c["schedule"] = to_json(s.schedule);
  c["align"] = to_json(s.align);
  c["thresholds"] = s.thresholds;
  c["teacher_init"] = s.teacher_init;
  c["baselines"] = s.baselines;
  return c;
}

FullStage full_from(const json& c, const path& dir) {
  FullStage s;
  s.out_dir = resolve(dir, c.at("out_dir"));
  json synth = c.at("synth");
  synth["out_dir"] = (s.out_dir / "synth").generic_string();
  s.synth = synth_from(synth, dir);
  s.model = model_from(c.at("model"));
  s.schedule = schedule_from(c.at("schedule"));
  s.align = align_from(c.at("align"));
  s.thresholds = c.at("thresholds").get<std::vector<double>>();
  s.teacher_init = c.at("teacher_init").get<bool>();
  s.baselines = c.at("baselines").get<bool>();
  return s;
}

}  // namespace

void run_full(const FullStage& stage_in, const Execution& exec) {
  maybe_verify(exec);
  FullStage stage = stage_in;
  const path out = stage.out_dir;
  stage.synth.out_dir = out / "synth";
  stage.synth.task.validate();
  stage.model.validate();
  stage.schedule.validate();
  if (stage.synth.heldout == 0) throw Error(ErrorKind::kConfig, "full needs held-out sentences for the report");

  Execution inner;
  inner.threads = exec.threads;

  // Everything a failed run must take back, sub-stage manifests included.
  ArtifactGuard guard;
  guard.make_dir(out);
  auto track = [&](const path& p) {
    guard.file(p);
    if (p.extension() != ".json") guard.file(manifest_for(p));
    return p;
  };
  for (const char* f : {"src.txt", "raw.txt", "kd.txt", "synth.tsv", "heldout.src.txt",
                        "heldout.ref.txt", "manifest.json"})
    guard.file(stage.synth.out_dir / f);
  for (const char* f : {"selected.src.txt", "selected.tgt.txt", "decisions.tsv", "manifest.json"})
    guard.file(out / "select" / f);
  guard.make_dir(out / "synth");
  guard.make_dir(out / "select");

  Manifest m("full", out / "manifest.json");
  m.config() = stage_json(stage, m);

  run_synth(stage.synth, inner);
  const CorpusPaths corpus = synth_corpus(stage.synth.out_dir);

  TrainEvaluatorStage evaluator;
  evaluator.corpus = corpus;
  evaluator.target_side = Side::kDistilled;
  evaluator.model = stage.model;
  evaluator.out = track(out / "evaluator.ckpt");
  evaluator.log = guard.file(out / "evaluator.ckpt.log.tsv");
  if (stage.teacher_init) {
    evaluator.early_updates = (stage.schedule.updates + 11) / 12;
    evaluator.early_out = guard.file(out / "evaluator.early.ckpt");
  }
  run_train_evaluator(evaluator, inner);

  ScoreStage score;
  score.checkpoint = evaluator.out;
  score.corpus = corpus;
  score.out = track(out / "scores.tsv");
  run_score(score, inner);

  SelectStage select;
  select.corpus = corpus;
  select.scores = score.out;
  select.schedule = stage.schedule;
  select.k = 0;
  select.out_dir = out / "select";
  run_select(select, inner);

  auto student = [&](const std::string& name, const ThresholdSchedule& schedule) {
    TrainStudentStage s;
    s.corpus = corpus;
    s.scores = score.out;
    s.schedule = schedule;
    s.model = stage.model;
    if (stage.teacher_init) s.init = evaluator.early_out;
    s.out = track(out / (name + ".ckpt"));
    s.log = guard.file(out / (name + ".ckpt.log.tsv"));
    run_train_student(s, inner);
    return s.out;
  };
  const std::size_t k = stage.schedule.updates;
  const path selective = student("student", stage.schedule);
  std::vector<std::pair<std::string, path>> students = {{"student", selective}};
  if (stage.baselines) {
    students.emplace_back("student-kd", student("student-kd", ThresholdSchedule::fixed(1.01, k)));
    students.emplace_back("student-raw", student("student-raw", ThresholdSchedule::fixed(0.0, k)));
  }

  MetricsStage metrics;
  metrics.corpus = corpus;
  metrics.scores = score.out;
  metrics.thresholds = stage.thresholds;
  metrics.align = stage.align;
  metrics.schedule = stage.schedule;
  metrics.out = track(out / "metrics.txt");
  metrics.pharaoh = guard.file(out / "raw.align");
  run_metrics(metrics, inner);

  ReportStage report;
  report.models.emplace_back("evaluator", evaluator.out);
  for (const auto& s : students) report.models.push_back(s);
  report.heldout_src = stage.synth.out_dir / "heldout.src.txt";
  report.heldout_ref = stage.synth.out_dir / "heldout.ref.txt";
  report.scores = score.out;
  report.out = track(out / "report.txt");
  run_report(report, inner);

  m.output("evaluator", evaluator.out);
  m.output("scores", score.out);
  for (const auto& [label, ckpt] : students) m.output(label, ckpt);
  m.output("metrics", metrics.out);
  m.output("report", report.out);
  m.write(guard);
  guard.commit();
}

// ----------------------------------------------------------------- rerun

void rerun(const path& manifest, const Execution& exec) {
  const json doc = read_manifest(manifest);
  verify_manifest(manifest, /*inputs_only=*/true);
  if (exec.verify_manifest) verify_manifest(*exec.verify_manifest);
  const path dir = absolute_of(manifest).parent_path();
  const std::string stage = doc.at("stage").get<std::string>();
  const json& c = doc.at("config");
  Execution inner;
  inner.threads = exec.threads;
  try {
    if (stage == "synth") return run_synth(synth_from(c, dir), inner);
    if (stage == "train-evaluator") return run_train_evaluator(evaluator_from(c, dir), inner);
    if (stage == "score") return run_score(score_from(c, dir), inner);
    if (stage == "select") return run_select(select_from(c, dir), inner);
    if (stage == "train-student") return run_train_student(student_from(c, dir), inner);
    if (stage == "metrics") return run_metrics(metrics_from(c, dir), inner);
    if (stage == "report") return run_report(report_from(c, dir), inner);
    if (stage == "full") return run_full(full_from(c, dir), inner);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormat, manifest.string() + ": " + e.what());
  }
  throw Error(ErrorKind::kFormat, manifest.string() + ": unknown stage '" + stage + "'");
}

}  // namespace skd::pipeline
