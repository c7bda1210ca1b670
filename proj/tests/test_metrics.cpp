#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "skd/error.hpp"
#include "skd/metrics.hpp"
#include "skd/synth.hpp"

using namespace skd;

namespace {

AlignmentLinks links_of(std::vector<std::size_t> source_of) {
  AlignmentLinks l;
  l.source_of = std::move(source_of);
  return l;
}

ScoreTable table_of(const std::vector<double>& scores) {
  ScoreTable t;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ScoreRecord r;
    r.index = i;
    r.score = scores[i];
    t.records.push_back(r);
  }
  return t;
}

}  // namespace

TEST_CASE("translation uncertainty from fixed links") {
  SUBCASE("one target per source type") {
    Bitext b;
    b.push_back({2, 3}, {4, 5});
    b.push_back({3, 2}, {5, 4});
    const std::vector<AlignmentLinks> l{links_of({1, 2}), links_of({1, 2})};
    CHECK(translation_uncertainty(b, l) == 0.0);
  }
  SUBCASE("a 50/50 split is ln 2") {
    Bitext b;
    b.push_back({2}, {4});
    b.push_back({2}, {5});
    const std::vector<AlignmentLinks> l{links_of({1}), links_of({1})};
    CHECK(translation_uncertainty(b, l) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("NULL links are ignored and unlinked types excluded") {
    Bitext b;
    b.push_back({2, 3}, {4, 5});
    b.push_back({2, 3}, {6, 7});
    const std::vector<AlignmentLinks> l{links_of({1, 0}), links_of({1, 0})};
    // Only type 2 is linked, to 4 and 6 once each.
    CHECK(translation_uncertainty(b, l) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("no links at all is an error") {
    Bitext b;
    b.push_back({2}, {4});
    const std::vector<AlignmentLinks> l{links_of({0})};
    CHECK_THROWS_AS(translation_uncertainty(b, l), Error);
  }
}

TEST_CASE("alignment shift") {
  const Sentence x{2, 3}, y{4, 5};
  CHECK(alignment_shift_pair(x, y, links_of({1, 2})) == 0.0);
  CHECK(alignment_shift_pair(x, y, links_of({2, 1})) == doctest::Approx(0.5));
  CHECK(alignment_shift_pair(x, y, links_of({0, 0})) == 0.0);
  Bitext b;
  b.push_back(x, y);
  b.push_back(x, y);
  const std::vector<AlignmentLinks> l{links_of({1, 2}), links_of({2, 1})};
  CHECK(alignment_shift(b, l) == doctest::Approx(0.25));
  // Each term is below one, so the mean is too.
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + gen() % 7, m = 1 + gen() % 7;
    std::vector<std::size_t> s(m);
    for (auto& v : s) v = gen() % (n + 1);
    const double tau = alignment_shift_pair(Sentence(n, 2), Sentence(m, 3), links_of(s));
    CHECK(tau >= 0.0);
    CHECK(tau < 1.0);
  }
}

TEST_CASE("repetition ratio") {
  CHECK(repetition_ratio(std::vector<Sentence>{{2, 2, 3}}) == doctest::Approx(1000.0 / 3.0));
  CHECK(repetition_ratio(std::vector<Sentence>{{2, 3, 2}, {4}}) == 0.0);
  // Repeats never span a sentence boundary, and order does not matter.
  std::vector<Sentence> s{{2, 3}, {3, 3, 3}, {4, 5, 5, 6}};
  const double r = repetition_ratio(s);
  CHECK(r == doctest::Approx(3000.0 / 9.0));
  std::reverse(s.begin(), s.end());
  CHECK(repetition_ratio(s) == r);
  CHECK(repetition_ratio(std::vector<Sentence>{{}, {}}) == 0.0);
  CHECK_THROWS_AS(repetition_ratio(std::vector<Sentence>{}), Error);
}

TEST_CASE("corpus BLEU") {
  SUBCASE("identical is exactly 100") {
    const std::vector<Sentence> h{{2, 3, 4, 5, 6}, {7, 8}};
    CHECK(corpus_bleu(h, h) == 100.0);
  }
  SUBCASE("no shared unigram is 0") {
    CHECK(corpus_bleu(std::vector<Sentence>{{2, 3, 4, 5}}, std::vector<Sentence>{{6, 7, 8, 9}}) == 0.0);
  }
  SUBCASE("hand-worked two-sentence fixture") {
    // Sentence 1: hyp a b c d, ref a b c e. Sentence 2: hyp a a, ref a b.
    // Clipped matches / candidates: 1-grams 4/6, 2-grams 2/4, 3-grams 1/2,
    // 4-grams 0/1 -> smoothed 1/2. c = r = 6, so no brevity penalty.
    // BLEU = 100 * (2/3 * 1/2 * 1/2 * 1/2)^(1/4) = 100 * 12^(-1/4).
    const std::vector<Sentence> hyp{{2, 3, 4, 5}, {2, 2}};
    const std::vector<Sentence> ref{{2, 3, 4, 6}, {2, 3}};
    CHECK(corpus_bleu(hyp, ref) == doctest::Approx(53.728497).epsilon(1e-7));
  }
  SUBCASE("brevity penalty") {
    // All n-grams match; c = 4, r = 6, BP = exp(1 - 6/4).
    const std::vector<Sentence> hyp{{2, 3, 4, 5}};
    const std::vector<Sentence> ref{{2, 3, 4, 5, 6, 7}};
    CHECK(corpus_bleu(hyp, ref) == doctest::Approx(100.0 * std::exp(-0.5)));
  }
  CHECK_THROWS_AS(corpus_bleu(std::vector<Sentence>{}, std::vector<Sentence>{}), Error);
}

TEST_CASE("token accuracy") {
  const std::vector<Sentence> ref{{2, 3, 4}, {5}};
  CHECK(token_accuracy(ref, ref) == 1.0);
  CHECK(token_accuracy(std::vector<Sentence>{{2, 9}, {5, 5}}, ref) == doctest::Approx(0.5));
}

TEST_CASE("views partition the corpus by score") {
  const SynthCorpus data = generate(SynthTaskSpec{}, 10, 3);
  const ScoreTable scores = table_of({0.1, 0.9, 0.5, 0.5, 1.0, 0.0, 0.7, 0.2, 0.8, 0.6});
  std::vector<std::size_t> sel_origin, rep_origin, mix_origin;
  const Bitext sel = build_view(data.corpus, &scores, 0.5, ViewKind::kSelectedRaw, &sel_origin);
  const Bitext rep = build_view(data.corpus, &scores, 0.5, ViewKind::kReplacedRaw, &rep_origin);
  const Bitext mix = build_view(data.corpus, &scores, 0.5, ViewKind::kTrainingMix, &mix_origin);
  CHECK(sel.size() == 7);
  CHECK(rep.size() == 3);
  CHECK(mix.size() == 10);
  for (std::size_t k = 0; k < sel.size(); ++k) {
    CHECK(scores[sel_origin[k]].score >= 0.5);
    CHECK(sel.target[k] == data.corpus[sel_origin[k]].raw_target);
  }
  for (std::size_t k = 0; k < mix.size(); ++k) {
    const auto& ex = data.corpus[mix_origin[k]];
    CHECK(mix.target[k] == (scores[mix_origin[k]].score >= 0.5 ? ex.raw_target : ex.distilled_target));
  }
  CHECK(build_view(data.corpus, &scores, 1.01, ViewKind::kSelectedRaw).empty());
  CHECK_THROWS_AS(metric_report(build_view(data.corpus, &scores, 1.01, ViewKind::kSelectedRaw), "x"), Error);
  CHECK_THROWS_AS(build_view(data.corpus, nullptr, 0.5, ViewKind::kSelectedRaw), Error);
}

TEST_CASE("length buckets") {
  const std::vector<std::size_t> lengths{5, 9, 15, 65};
  const std::vector<double> scores{0.4, 1.0, 0.7, 0.826};
  const auto b = length_buckets(lengths, scores, ThresholdSchedule::linear(0.4, 1.0, 100));
  REQUIRE(b.size() == 7);
  CHECK(b[0].label == "<10");
  CHECK(b[0].count == 2);
  CHECK(b[0].mean_score == doctest::Approx(0.7));
  CHECK(b[0].mean_exposure == doctest::Approx(0.5));
  CHECK(b[1].mean_exposure == doctest::Approx(0.5));
  CHECK(b[2].count == 0);
  CHECK(b[6].label == ">=60");
  CHECK(b[6].mean_exposure == doctest::Approx(0.71));
}

TEST_CASE("synthetic corpora order as expected") {
  SynthTaskSpec spec;
  spec.mistake_rate = 0.0;
  const SynthCorpus data = generate(spec, 2000, 13);
  const MetricReport raw = metric_report(data.corpus.bitext(Side::kRaw), "raw");
  const MetricReport kd = metric_report(data.corpus.bitext(Side::kDistilled), "kd");
  CHECK(raw.uncertainty > kd.uncertainty);
  CHECK(raw.sentences == 2000);
  CHECK(kd.tokens == raw.tokens);

  Bitext reversed, canonical;
  for (std::size_t i = 0; i < data.corpus.size(); ++i) {
    const auto& ex = data.corpus[i];
    if (spec.is_dramatic(data.mode[i]))
      reversed.push_back(ex.source, ex.raw_target);
    else if (data.mode[i] == 0)
      canonical.push_back(ex.source, ex.raw_target);
  }
  CHECK(metric_report(reversed, "rev").shift > metric_report(canonical, "canon").shift);
}
