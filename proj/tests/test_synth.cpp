#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "skd/error.hpp"
#include "skd/metrics.hpp"
#include "skd/synth.hpp"

using namespace skd;

namespace {

SynthTaskSpec small_spec() {
  SynthTaskSpec s;
  s.source_vocab_size = 16;
  s.target_vocab_size = 64;
  s.modes = 4;
  s.seed = 7;
  return s;
}

}  // namespace

TEST_CASE("spec validation") {
  SynthTaskSpec s = small_spec();
  CHECK_NOTHROW(s.validate());
  auto bad = [](auto edit) {
    SynthTaskSpec s = small_spec();
    edit(s);
    CHECK_THROWS_AS(s.validate(), Error);
  };
  bad([](SynthTaskSpec& s) { s.modes = 0; });
  bad([](SynthTaskSpec& s) { s.min_length = 0; });
  bad([](SynthTaskSpec& s) { s.max_length = 2; s.min_length = 3; });
  bad([](SynthTaskSpec& s) { s.mistake_rate = 1.5; });
  bad([](SynthTaskSpec& s) { s.mode_distribution = {0.5, 0.5}; });
  bad([](SynthTaskSpec& s) { s.mode_distribution = {0.5, 0.5, 0.5, -0.5}; });
  bad([](SynthTaskSpec& s) { s.target_vocab_size = 3; });
}

TEST_CASE("dramatic modes are the upper half") {
  SynthTaskSpec s = small_spec();
  CHECK_FALSE(s.is_dramatic(0));
  CHECK_FALSE(s.is_dramatic(1));
  CHECK(s.is_dramatic(2));
  CHECK(s.is_dramatic(3));
  s.modes = 1;
  CHECK_FALSE(s.is_dramatic(0));
}

TEST_CASE("one mode without mistakes is a deterministic mapping") {
  SynthTaskSpec s = small_spec();
  s.modes = 1;
  s.mistake_rate = 0.0;
  const SynthCorpus c = generate(s, 300, 3);
  for (std::size_t i = 0; i < c.corpus.size(); ++i) {
    CHECK(c.corpus[i].raw_target == c.corpus[i].distilled_target);
    CHECK(c.corpus[i].raw_target == c.canonical[i]);
    CHECK(c.corpus[i].raw_target.size() == c.corpus[i].source.size());
    CHECK(c.mode[i] == 0);
    CHECK_FALSE(c.mistake[i]);
  }
  const Bitext kd = c.corpus.bitext(Side::kDistilled);
  CHECK(translation_uncertainty(kd, em_train(kd)) == doctest::Approx(0.0));
}

TEST_CASE("mode frequencies follow the distribution") {
  SynthTaskSpec s = small_spec();
  s.modes = 2;
  s.target_vocab_size = 40;
  s.mode_distribution = {0.5, 0.5};
  const SynthCorpus c = generate(s, 5000, 11);
  const auto counts = oracle_report(c, s).mode_counts;
  CHECK(counts[1] / 5000.0 == doctest::Approx(0.5).epsilon(0.04));

  s.modes = 4;
  s.target_vocab_size = 64;
  s.mode_distribution = {0.4, 0.0, 0.6, 0.0};
  const SynthCorpus d = generate(s, 3000, 12);
  const auto r = oracle_report(d, s);
  CHECK(r.mode_counts[1] == 0);
  CHECK(r.mode_counts[3] == 0);
  CHECK(r.mode_counts[0] + r.mode_counts[2] == 3000);
  CHECK(r.should_select_fraction == doctest::Approx(r.mode_counts[0] / 3000.0));
}

TEST_CASE("raw targets realize their mode") {
  const SynthTaskSpec s = small_spec();
  const SynthTask task(s);
  const SynthCorpus c = task.generate(400, 5);
  const int block = s.target_vocab_size / s.modes;
  const auto& tv = c.corpus.target_vocab();
  auto type_of = [&](TokenId id) { return std::stoi(tv.surface(id).substr(1)); };
  for (std::size_t i = 0; i < c.corpus.size(); ++i) {
    const auto& ex = c.corpus[i];
    Sentence raw = ex.raw_target;
    if (s.is_dramatic(c.mode[i])) std::reverse(raw.begin(), raw.end());
    REQUIRE(raw.size() == c.canonical[i].size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
      const int t = type_of(raw[j]);
      const int b = t / block;
      // Either the canonical word or a synonym from the mode's own block.
      CHECK((raw[j] == c.canonical[i][j] || b == c.mode[i]));
      if (c.mode[i] == 0) CHECK(raw[j] == c.canonical[i][j]);
    }
  }
}

TEST_CASE("canonical map is injective when the block has room") {
  const SynthTaskSpec s = small_spec();
  const SynthTask task(s);
  std::set<int> images;
  for (int a = 0; a < s.source_vocab_size; ++a) images.insert(task.canonical_type(a));
  CHECK(images.size() == static_cast<std::size_t>(s.source_vocab_size));
  for (int t : images) CHECK(t < s.target_vocab_size / s.modes);
}

TEST_CASE("every trigger source stutters the distilled target") {
  SynthTaskSpec s = small_spec();
  s.mistake_rate = 1.0;
  const SynthCorpus c = generate(s, 200, 9);
  for (std::size_t i = 0; i < c.corpus.size(); ++i) {
    const auto& kd = c.corpus[i].distilled_target;
    REQUIRE(kd.size() == c.canonical[i].size() + 1);
    CHECK(kd[0] == kd[1]);
    CHECK(Sentence(kd.begin() + 1, kd.end()) == c.canonical[i]);
    CHECK(c.mistake[i]);
  }
  CHECK(oracle_report(c, s).mistake_count == 200);
}

TEST_CASE("synonym-swap mistakes replace the first word") {
  SynthTaskSpec s = small_spec();
  s.mistake_rate = 1.0;
  s.mistake = MistakeKind::kSynonymSwap;
  const SynthCorpus c = generate(s, 100, 9);
  for (std::size_t i = 0; i < c.corpus.size(); ++i) {
    const auto& kd = c.corpus[i].distilled_target;
    REQUIRE(kd.size() == c.canonical[i].size());
    CHECK(kd[0] != c.canonical[i][0]);
    CHECK(Sentence(kd.begin() + 1, kd.end()) == Sentence(c.canonical[i].begin() + 1, c.canonical[i].end()));
  }
  CHECK(parse_mistake(mistake_name(MistakeKind::kSynonymSwap)) == MistakeKind::kSynonymSwap);
  CHECK_THROWS_AS(parse_mistake("typo"), Error);
}

TEST_CASE("distilled repetition matches the construction") {
  // With an injective canonical map, canonical repeats come only from equal
  // adjacent source words (probability 1/V each) and a triggered sentence
  // gains exactly one repeat and one token. Lengths are uniform on [4, 12].
  const SynthTaskSpec s = small_spec();
  const SynthTask task(s);
  int triggers = 0;
  for (int a = 0; a < s.source_vocab_size; ++a) triggers += task.is_trigger(a);
  CHECK(triggers == static_cast<int>(std::lround(s.mistake_rate * s.source_vocab_size)));
  const double v = s.source_vocab_size;
  const double q = triggers / v;
  const double mean_len = (s.min_length + s.max_length) / 2.0;
  const double expected = 1000.0 * ((mean_len - 1.0) / v + q) / (mean_len + q);

  const SynthCorpus c = task.generate(20000, 21);
  std::vector<Sentence> kd;
  for (const auto& ex : c.corpus.examples()) kd.push_back(ex.distilled_target);
  // About 0.65 per mille standard deviation at this size.
  CHECK(std::abs(repetition_ratio(kd) - expected) < 3.0);
}

TEST_CASE("generation is reproducible and seed-sensitive") {
  const SynthTaskSpec s = small_spec();
  const SynthCorpus a = generate(s, 50, 4);
  const SynthCorpus b = generate(s, 50, 4);
  const SynthCorpus other = generate(s, 50, 5);
  CHECK(format_bitext(a.corpus, Side::kRaw) == format_bitext(b.corpus, Side::kRaw));
  CHECK(format_bitext(a.corpus, Side::kDistilled) == format_bitext(b.corpus, Side::kDistilled));
  CHECK(format_synth_sidecar(a) == format_synth_sidecar(b));
  CHECK(format_bitext(a.corpus, Side::kSource) != format_bitext(other.corpus, Side::kSource));
}

TEST_CASE("sidecar lists mode and mistake per example") {
  SynthTaskSpec s = small_spec();
  s.mistake_rate = 0.0;
  const SynthCorpus c = generate(s, 3, 2);
  const std::string side = format_synth_sidecar(c);
  CHECK(std::count(side.begin(), side.end(), '\n') == 3);
  CHECK(side.rfind("0\t" + std::to_string(c.mode[0]) + "\t0\n", 0) == 0);
}
