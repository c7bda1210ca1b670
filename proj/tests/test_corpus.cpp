#include <filesystem>

#include "doctest.h"
#include "skd/corpus.hpp"
#include "skd/error.hpp"
#include "skd/synth.hpp"
#include "temp_dir.hpp"

using namespace skd;
namespace fs = std::filesystem;

using skd::testing::TempDir;

TEST_CASE("vocabulary reserves blank and unknown") {
  Vocabulary v;
  CHECK(v.size() == 2);
  CHECK(v.add("a") == 2);
  CHECK(v.add("b") == 3);
  CHECK(v.add("a") == 2);
  CHECK(v.lookup("zzz") == kUnkId);
  CHECK(v.add("<unk>") == kUnkId);
  CHECK_THROWS_AS(v.add("<blank>"), Error);
  for (TokenId id = 0; id < static_cast<TokenId>(v.size()); ++id) CHECK(v.lookup(v.surface(id)) == id);
}

TEST_CASE("one-line corpus with identical targets") {
  TempDir dir;
  write_text_file(dir.path / "s", "a b\n");
  write_text_file(dir.path / "r", "c d\n");
  write_text_file(dir.path / "k", "c d\n");
  const Corpus c = load_corpus(dir.path / "s", dir.path / "r", dir.path / "k");
  REQUIRE(c.size() == 1);
  CHECK(c[0].raw_target == c[0].distilled_target);
  CHECK(c[0].index == 0);
  CHECK(format_bitext(c, Side::kSource) == "a b\n");
  write_bitext(c, Side::kSource, dir.path / "out");
  CHECK(read_text_file(dir.path / "out") == "a b\n");
}

TEST_CASE("load errors") {
  TempDir dir;
  write_text_file(dir.path / "s", "a\nb\n");
  write_text_file(dir.path / "r", "c\nd\ne\n");
  write_text_file(dir.path / "k", "c\nd\n");
  SUBCASE("line-count mismatch names the files") {
    try {
      load_corpus(dir.path / "s", dir.path / "r", dir.path / "k");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kFormat);
      CHECK(std::string(e.what()).find("3") != std::string::npos);
      CHECK(std::string(e.what()).find((dir.path / "r").string()) != std::string::npos);
    }
  }
  SUBCASE("empty line") {
    write_text_file(dir.path / "r", "c\n\n");
    try {
      load_corpus(dir.path / "s", dir.path / "r", dir.path / "k");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("too long") {
    std::string line;
    for (int i = 0; i < 1025; ++i) line += "x ";
    write_text_file(dir.path / "r", "c\n" + line + "\n");
    write_text_file(dir.path / "k", "c\nd\n");
    CHECK_THROWS_AS(load_corpus(dir.path / "s", dir.path / "r", dir.path / "k"), Error);
  }
  SUBCASE("missing file") {
    try {
      load_corpus(dir.path / "nope", dir.path / "r", dir.path / "k");
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMissingInput);
    }
  }
}

TEST_CASE("empty corpus writes an empty file") {
  TempDir dir;
  const Corpus c = Corpus::from_tokens({}, {}, {});
  write_bitext(c, Side::kRaw, dir.path / "e");
  CHECK(read_text_file(dir.path / "e").empty());
}

TEST_CASE("write then load is a fixed point") {
  TempDir dir;
  SynthTaskSpec spec;
  spec.modes = 3;
  spec.target_vocab_size = 12;
  const auto synth = generate(spec, 3, 42);
  for (Side s : {Side::kSource, Side::kRaw, Side::kDistilled})
    write_bitext(synth.corpus, s, dir.path / std::string(side_name(s)));
  const Corpus back = load_corpus(dir.path / "source", dir.path / "raw", dir.path / "distilled");
  REQUIRE(back.size() == synth.corpus.size());
  for (Side s : {Side::kSource, Side::kRaw, Side::kDistilled}) {
    CHECK(format_bitext(back, s) == format_bitext(synth.corpus, s));
    write_bitext(back, s, dir.path / "again");
    CHECK(read_text_file(dir.path / "again") == read_text_file(dir.path / std::string(side_name(s))));
  }
}

TEST_CASE("ids follow first occurrence and shared vocabularies") {
  const Corpus::Lines src = {{"x", "y"}};
  const Corpus::Lines raw = {{"p", "x"}};
  const Corpus::Lines kd = {{"q"}};
  const Corpus sep = Corpus::from_tokens(src, raw, kd);
  CHECK(sep[0].source == Sentence{2, 3});
  CHECK(sep[0].raw_target == Sentence{2, 3});
  CHECK(sep[0].distilled_target == Sentence{4});
  CHECK_FALSE(sep.shared_vocabulary());
  CorpusOptions opt;
  opt.shared_vocabulary = true;
  const Corpus shared = Corpus::from_tokens(src, raw, kd, opt);
  CHECK(shared.shared_vocabulary());
  CHECK(shared[0].raw_target == Sentence{4, 2});
}

TEST_CASE("fixed vocabularies map unseen tokens to unk") {
  const Corpus base = Corpus::from_tokens({{"a"}}, {{"b"}}, {{"b"}});
  CorpusOptions opt;
  opt.fixed_source_vocab = base.source_vocab_ptr();
  opt.fixed_target_vocab = base.target_vocab_ptr();
  const Corpus held = Corpus::from_tokens({{"a", "z"}}, {{"b"}}, {{"w"}}, opt);
  CHECK(held[0].source == Sentence{2, kUnkId});
  CHECK(held[0].distilled_target == Sentence{kUnkId});
  CHECK(held.source_vocab() == base.source_vocab());
}
