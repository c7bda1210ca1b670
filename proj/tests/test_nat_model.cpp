#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "skd/error.hpp"
#include "skd/nat_model.hpp"
#include "skd/synth.hpp"
#include "temp_dir.hpp"

using namespace skd;
using skd::testing::TempDir;

namespace {

Corpus tiny_corpus() {
  return Corpus::from_tokens({{"qq", "b", "c"}, {"b", "c"}, {"c", "qq", "b", "b"}},
                             {{"xx", "y", "z"}, {"y", "z"}, {"z", "xx", "y", "y"}},
                             {{"xx", "y", "z"}, {"y", "z"}, {"z", "xx", "y", "y"}});
}

ModelConfig small_config() {
  ModelConfig c;
  c.embedding_dim = 6;
  c.hidden_dim = 10;
  c.upsample = 2;
  c.epochs = 5;
  c.seed = 3;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_parameters(const NatParameters& a, const NatParameters& b) {
  return a.embedding == b.embedding && a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 &&
         a.b2 == b.b2 && a.w_out == b.w_out && a.b_out == b.b_out;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.upsample = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.window = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("forward emits normalized frames") {
  const Corpus corpus = tiny_corpus();
  const NatModel model(small_config(), corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  CHECK(model.feature_dim() == 2 * 6 + 2 + 2);
  CHECK(model.output_dim() == static_cast<Eigen::Index>(corpus.target_vocab().size()));
  const auto lp = model.forward(corpus[2].source);
  CHECK(lp.rows() == 8);
  CHECK(lp.cols() == model.output_dim());
  for (Eigen::Index t = 0; t < lp.rows(); ++t)
    CHECK(std::exp(log_sum_exp(lp.row(t))) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("frames only see their window") {
  const Corpus corpus = Corpus::from_tokens({{"a", "b", "c", "d", "e", "f"}, {"a", "b", "c", "d", "e", "a"}},
                                            {{"x"}, {"x"}}, {{"x"}, {"x"}});
  const NatModel model(small_config(), corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  const auto a = model.forward(corpus[0].source);
  const auto b = model.forward(corpus[1].source);
  // Only position 5 differs; with window 1 positions 0..3 are untouched.
  for (Eigen::Index t = 0; t < 8; ++t) CHECK(a.row(t) == b.row(t));
  CHECK(a.row(10) != b.row(10));
}

TEST_CASE("fixed-length layout spreads positions") {
  const auto layout = fixed_length_layout(3, 5);
  REQUIRE(layout.size() == 5);
  const int expected[] = {0, 0, 1, 1, 2};
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(layout[j].position == expected[j]);
    CHECK(layout[j].phase == 0);
  }
  const auto up = upsampled_layout(2, 3);
  REQUIRE(up.size() == 6);
  CHECK(up[4].position == 1);
  CHECK(up[4].phase == 1);
}

TEST_CASE("backpropagated gradient matches finite differences") {
  const Corpus corpus = tiny_corpus();
  ModelConfig c = small_config();
  c.embedding_dim = 3;
  c.hidden_dim = 4;
  c.clip_norm = 0.0;
  c.learning_rate = 1.0;
  const NatModel start(c, corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  std::vector<TrainingExample> batch;
  for (const auto& ex : corpus.examples()) batch.push_back({&ex.source, &ex.raw_target});

  // One unclipped step with rate 1 moves every parameter by -gradient.
  NatModel stepped = start;
  sgd_step(stepped, batch);
  NatParameters grad = start.parameters();
  grad.add_scaled(stepped.parameters(), -1.0);

  auto loss_with = [&](auto&& edit) {
    NatModel m = start;
    edit(m.mutable_parameters());
    return mean_ctc_loss(m, batch);
  };
  const double h = 1e-5;
  auto check_entry = [&](auto member, Eigen::Index r, Eigen::Index col) {
    const double plus = loss_with([&](NatParameters& p) { (p.*member)(r, col) += h; });
    const double minus = loss_with([&](NatParameters& p) { (p.*member)(r, col) -= h; });
    const double numeric = (plus - minus) / (2 * h);
    const double analytic = (grad.*member)(r, col);
    CHECK(std::abs(numeric - analytic) <= 1e-6 + 1e-4 * std::abs(numeric));
  };
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index col = 0; col < 3; ++col) check_entry(&NatParameters::embedding, r, col);
  for (Eigen::Index r = 0; r < 4; ++r)
    for (Eigen::Index col = 0; col < start.feature_dim(); col += 2) check_entry(&NatParameters::w1, r, col);
  for (Eigen::Index r = 0; r < 4; ++r) check_entry(&NatParameters::w2, r, (r + 1) % 4);
  for (Eigen::Index r = 0; r < start.output_dim(); ++r) check_entry(&NatParameters::w_out, r, 1);
  auto check_vec = [&](auto member, Eigen::Index i) {
    const double plus = loss_with([&](NatParameters& p) { (p.*member)(i) += h; });
    const double minus = loss_with([&](NatParameters& p) { (p.*member)(i) -= h; });
    const double numeric = (plus - minus) / (2 * h);
    CHECK(std::abs(numeric - (grad.*member)(i)) <= 1e-6 + 1e-4 * std::abs(numeric));
  };
  for (Eigen::Index i = 0; i < 4; ++i) {
    check_vec(&NatParameters::b1, i);
    check_vec(&NatParameters::b2, i);
  }
  for (Eigen::Index i = 0; i < start.output_dim(); ++i) check_vec(&NatParameters::b_out, i);
}

TEST_CASE("clipping bounds the step") {
  const Corpus corpus = tiny_corpus();
  ModelConfig c = small_config();
  c.clip_norm = 1e-3;
  c.learning_rate = 1.0;
  NatModel model(c, corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  const NatParameters before = model.parameters();
  std::vector<TrainingExample> batch;
  for (const auto& ex : corpus.examples()) batch.push_back({&ex.source, &ex.raw_target});
  sgd_step(model, batch);
  NatParameters delta = model.parameters();
  delta.add_scaled(before, -1.0);
  CHECK(std::sqrt(delta.squared_norm()) <= 1e-3 * (1 + 1e-9));
}

TEST_CASE("training memorizes a tiny corpus") {
  const Corpus corpus = tiny_corpus();
  ModelConfig c = small_config();
  c.epochs = 200;
  const TrainResult r = train(corpus, Side::kRaw, c);
  REQUIRE(r.epoch_loss.size() == 200);
  for (int e = 1; e < 5; ++e) CHECK(r.epoch_loss[e] <= r.epoch_loss[e - 1]);
  std::vector<TrainingExample> all;
  for (const auto& ex : corpus.examples()) all.push_back({&ex.source, &ex.raw_target});
  CHECK(mean_ctc_loss(r.model, all) < 0.01);
  for (const auto& ex : corpus.examples())
    CHECK(decode_greedy(r.model.forward(ex.source)).output == ex.raw_target);
}

TEST_CASE("training is bit-identical for a seed and any thread count") {
  SynthTaskSpec spec;
  const SynthCorpus data = generate(spec, 120, 4);
  ModelConfig c = small_config();
  c.epochs = 3;
  TrainOptions one, four;
  four.threads = 4;
  const TrainResult a = train(data.corpus, Side::kDistilled, c, one);
  const TrainResult b = train(data.corpus, Side::kDistilled, c, four);
  CHECK(same_parameters(a.model.parameters(), b.model.parameters()));
  CHECK(a.epoch_loss == b.epoch_loss);
  c.seed = 4;
  const TrainResult other = train(data.corpus, Side::kDistilled, c, one);
  CHECK_FALSE(same_parameters(a.model.parameters(), other.model.parameters()));
}

TEST_CASE("infeasible pairs are skipped, all-infeasible fails") {
  const Corpus some = Corpus::from_tokens({{"a"}, {"a", "b"}}, {{"x", "x", "x"}, {"x", "y"}},
                                          {{"x"}, {"x", "y"}});
  ModelConfig c = small_config();
  c.epochs = 1;
  const TrainResult r = train(some, Side::kRaw, c);
  CHECK(r.skipped_pairs == 1);
  const Corpus none = Corpus::from_tokens({{"a"}}, {{"x", "x"}}, {{"x", "x"}});
  CHECK_THROWS_AS(train(none, Side::kRaw, c), Error);
}

TEST_CASE("snapshot after a given number of updates") {
  const Corpus corpus = tiny_corpus();
  ModelConfig c = small_config();
  c.batch_size = 1;
  c.epochs = 2;
  TrainOptions opt;
  opt.snapshot_at_update = 4;
  const TrainResult r = train(corpus, Side::kRaw, c, opt);
  CHECK(r.updates == 6);
  REQUIRE(r.snapshot.has_value());
  CHECK_FALSE(same_parameters(r.snapshot->parameters(), r.model.parameters()));
}

TEST_CASE("batch stream covers every item once per pass") {
  BatchStream s({0, 1, 2, 3, 4}, 2, 9);
  std::vector<std::size_t> seen;
  do {
    const auto b = s.next();
    CHECK(b.size() <= 2);
    seen.insert(seen.end(), b.begin(), b.end());
  } while (!s.at_pass_start());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("checkpoint round trip and corruption") {
  TempDir dir("skd_ckpt");
  const Corpus corpus = tiny_corpus();
  const NatModel model(small_config(), corpus.source_vocab_ptr(), corpus.target_vocab_ptr());
  const auto file = dir / "m.ckpt";
  save_checkpoint(model, file);
  const NatModel back = load_checkpoint(file);
  CHECK(same_parameters(model.parameters(), back.parameters()));
  CHECK(back.source_vocab() == model.source_vocab());
  CHECK(back.target_vocab() == model.target_vocab());
  CHECK(back.config().seed == model.config().seed);
  CHECK(back.forward(corpus[0].source) == model.forward(corpus[0].source));
  CHECK_NOTHROW(back.check_compatible(corpus));

  const std::string bytes = slurp(file);
  SUBCASE("edited vocabulary fails its hash") {
    std::string edited = bytes;
    const auto pos = edited.find("qq");
    REQUIRE(pos != std::string::npos);
    edited[pos + 1] = 'z';
    spit(file, edited);
    try {
      load_checkpoint(file);
      FAIL("expected a vocabulary mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kVocabMismatch);
    }
  }
  SUBCASE("truncation and bad magic") {
    spit(file, bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(file), Error);
    std::string bad = bytes;
    bad[0] = 'X';
    spit(file, bad);
    try {
      load_checkpoint(file);
      FAIL("expected a format error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
    }
  }
  SUBCASE("a different corpus is rejected") {
    const Corpus other = Corpus::from_tokens({{"b", "qq"}}, {{"y", "xx"}}, {{"y", "xx"}});
    try {
      back.check_compatible(other);
      FAIL("expected a vocabulary mismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kVocabMismatch);
    }
  }
}
