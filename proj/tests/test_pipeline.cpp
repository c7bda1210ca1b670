#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>

#include "doctest.h"
#include "skd/checksum.hpp"
#include "skd/corpus.hpp"
#include "skd/error.hpp"
#include "skd/pipeline.hpp"
#include "temp_dir.hpp"

using namespace skd;
using namespace skd::pipeline;
using skd::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig m;
  m.embedding_dim = 6;
  m.hidden_dim = 8;
  m.epochs = 2;
  m.upsample = 3;
  return m;
}

FullStage tiny_full(const path& out) {
  FullStage f = FullStage::defaults(out);
  f.synth.n = 80;
  f.synth.heldout = 20;
  f.model = tiny_model();
  f.schedule = ThresholdSchedule::linear(0.4, 1.0, 24);
  f.thresholds = {0.5, 1.01};
  return f;
}

std::map<std::string, std::string> hash_tree(const path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = sha256_file(e.path());
  return out;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kConfig;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SKD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("full run writes every artifact with manifests") {
  TempDir dir("skd_full");
  const path out = dir / "run";
  run_full(tiny_full(out));
  for (const char* f : {"manifest.json", "synth/src.txt", "synth/raw.txt", "synth/kd.txt", "synth/synth.tsv",
                        "synth/heldout.src.txt", "synth/heldout.ref.txt", "synth/manifest.json",
                        "evaluator.ckpt", "evaluator.ckpt.manifest.json", "evaluator.ckpt.log.tsv",
                        "evaluator.early.ckpt", "scores.tsv", "scores.tsv.manifest.json",
                        "select/selected.src.txt", "select/selected.tgt.txt", "select/decisions.tsv",
                        "student.ckpt", "student.ckpt.log.tsv", "student-kd.ckpt", "student-raw.ckpt",
                        "metrics.txt", "raw.align", "report.txt", "report.txt.manifest.json"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  const std::string report = read_text_file(out / "report.txt");
  CHECK(report.find("student-kd\t20\t") != std::string::npos);
  const std::string metrics = read_text_file(out / "metrics.txt");
  CHECK(metrics.find("# thresholds") != std::string::npos);
  CHECK(metrics.find("1.0100\t0.000000\tNA\tNA") != std::string::npos);

  SUBCASE("every manifest reproduces its directory byte for byte") {
    const auto before = hash_tree(out);
    Execution exec;
    exec.threads = 3;
    for (const char* m : {"synth/manifest.json", "evaluator.ckpt.manifest.json", "scores.tsv.manifest.json",
                          "select/manifest.json", "student.ckpt.manifest.json", "metrics.txt.manifest.json",
                          "report.txt.manifest.json", "manifest.json"})
      rerun(out / m, exec);
    CHECK(hash_tree(out) == before);
  }
  SUBCASE("a moved run directory still replays") {
    const auto before = hash_tree(out);
    fs::rename(out, dir / "moved");
    rerun(dir / "moved" / "student.ckpt.manifest.json");
    CHECK(hash_tree(dir / "moved") == before);
  }
  SUBCASE("changed inputs are refused") {
    write_text_file(out / "synth" / "kd.txt", read_text_file(out / "synth" / "kd.txt") + "t1\n");
    CHECK(kind_of([&] { rerun(out / "scores.tsv.manifest.json"); }) == ErrorKind::kChecksum);
    CHECK(kind_of([&] { verify_manifest(out / "synth" / "manifest.json"); }) == ErrorKind::kChecksum);
    fs::remove(out / "synth" / "raw.txt");
    CHECK(kind_of([&] { verify_manifest(out / "synth" / "manifest.json"); }) == ErrorKind::kMissingInput);
  }
}

TEST_CASE("degenerate selections reproduce one side exactly") {
  TempDir dir("skd_select");
  SynthStage synth;
  synth.n = 50;
  synth.heldout = 0;
  synth.out_dir = dir / "synth";
  run_synth(synth);
  const CorpusPaths corpus{dir / "synth/src.txt", dir / "synth/raw.txt", dir / "synth/kd.txt"};

  TrainEvaluatorStage ev;
  ev.corpus = corpus;
  ev.model = tiny_model();
  ev.out = dir / "ev.ckpt";
  run_train_evaluator(ev);
  ScoreStage sc;
  sc.checkpoint = ev.out;
  sc.corpus = corpus;
  sc.out = dir / "scores.tsv";
  run_score(sc);

  SelectStage sel;
  sel.corpus = corpus;
  sel.scores = sc.out;
  sel.schedule = ThresholdSchedule::fixed(1.01, 1);
  sel.out_dir = dir / "kd";
  run_select(sel);
  CHECK(read_text_file(dir / "kd/selected.tgt.txt") == read_text_file(corpus.kd));
  CHECK(read_text_file(dir / "kd/selected.src.txt") == read_text_file(corpus.src));

  sel.schedule = ThresholdSchedule::fixed(0.0, 1);
  sel.out_dir = dir / "raw";
  run_select(sel);
  CHECK(read_text_file(dir / "raw/selected.tgt.txt") == read_text_file(corpus.raw));

  sel.schedule = ThresholdSchedule::linear(0.4, 1.0, 10);
  sel.k = 11;
  sel.out_dir = dir / "late";
  CHECK(kind_of([&] { run_select(sel); }) == ErrorKind::kConfig);
  CHECK_FALSE(fs::exists(dir / "late"));
}

TEST_CASE("failed stages leave no partial outputs") {
  TempDir dir("skd_fail");
  SynthStage a, b;
  a.n = 20;
  a.heldout = 0;
  a.out_dir = dir / "a";
  run_synth(a);
  b = a;
  b.set_seed(2);
  b.task.source_vocab_size = 9;
  b.out_dir = dir / "b";
  run_synth(b);

  TrainEvaluatorStage ev;
  ev.corpus = {dir / "a/src.txt", dir / "a/raw.txt", dir / "a/kd.txt"};
  ev.model = tiny_model();
  ev.out = dir / "ev.ckpt";
  run_train_evaluator(ev);

  ScoreStage sc;
  sc.checkpoint = ev.out;
  sc.corpus = {dir / "b/src.txt", dir / "b/raw.txt", dir / "b/kd.txt"};
  sc.out = dir / "out/scores.tsv";
  CHECK(kind_of([&] { run_score(sc); }) == ErrorKind::kVocabMismatch);
  CHECK_FALSE(fs::exists(sc.out));
  CHECK_FALSE(fs::exists(manifest_for(sc.out)));
  CHECK_FALSE(fs::exists(dir / "out"));

  ev.early_updates = 1000;
  ev.out = dir / "ev2.ckpt";
  CHECK(kind_of([&] { run_train_evaluator(ev); }) == ErrorKind::kConfig);
  CHECK_FALSE(fs::exists(ev.out));
  CHECK_FALSE(fs::exists(dir / "ev2.ckpt.log.tsv"));
}

TEST_CASE("default output root follows the environment") {
  ::setenv(kOutputRootEnv, "/tmp/skd-root", 1);
  CHECK(default_output_dir("x") == path("/tmp/skd-root/x"));
  ::unsetenv(kOutputRootEnv);
  CHECK(default_output_dir("x") == path("runs/x"));
}

TEST_CASE("exit codes map error kinds") {
  CHECK(exit_code_for(ErrorKind::kConfig) == 2);
  CHECK(exit_code_for(ErrorKind::kMissingInput) == 3);
  CHECK(exit_code_for(ErrorKind::kChecksum) == 4);
  CHECK(exit_code_for(ErrorKind::kFormat) == 5);
  CHECK(exit_code_for(ErrorKind::kTraining) == 6);
  CHECK(exit_code_for(ErrorKind::kInfeasible) == 6);
  CHECK(exit_code_for(ErrorKind::kVocabMismatch) == 7);
  CHECK(exit_code_for(ErrorKind::kIo) == 8);
}

TEST_CASE("command line") {
  TempDir dir("skd_cli");
  const std::string d = dir.path.string();
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("synth --bogus") == 2);
  CHECK(run_cli("synth -n 30 --heldout 0 --out " + d + "/s") == 0);
  CHECK(run_cli("synth -n 30 --heldout 0 --modes 0 --out " + d + "/bad") == 2);
  CHECK(run_cli("score --checkpoint " + d + "/none.ckpt --corpus-dir " + d + "/s") == 3);
  CHECK(run_cli("train-evaluator --corpus-dir " + d + "/s --epochs 1 --embedding-dim 4 --hidden-dim 4 --out " +
                d + "/e.ckpt") == 0);
  CHECK(run_cli("score --checkpoint " + d + "/e.ckpt --corpus-dir " + d + "/s --out " + d + "/sc.tsv") == 0);
  write_text_file(dir / "broken.tsv", "0\tnot-a-number\t0\t1\t1\n");
  CHECK(run_cli("select --corpus-dir " + d + "/s --scores " + d + "/broken.tsv --out " + d + "/x") == 5);
  CHECK(run_cli("synth -n 30 --heldout 0 --seed 5 --source-vocab 7 --out " + d + "/other") == 0);
  CHECK(run_cli("score --checkpoint " + d + "/e.ckpt --corpus-dir " + d + "/other --out " + d + "/o.tsv") == 7);
  CHECK(run_cli("--verify-manifest " + d + "/s/manifest.json select --corpus-dir " + d + "/s --scores " + d +
                "/sc.tsv --fixed-threshold 1.01 --out " + d + "/sel") == 0);
  CHECK(read_text_file(dir / "sel/selected.tgt.txt") == read_text_file(dir / "s/kd.txt"));
  write_text_file(dir / "s/raw.txt", read_text_file(dir / "s/raw.txt") + "t0\n");
  CHECK(run_cli("--verify-manifest " + d + "/s/manifest.json select --corpus-dir " + d + "/s --scores " + d +
                "/sc.tsv --out " + d + "/sel2") == 4);
  CHECK(run_cli("rerun --manifest " + d + "/sc.tsv.manifest.json") == 4);
}
