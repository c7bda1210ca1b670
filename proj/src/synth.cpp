#include "skd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "skd/error.hpp"
#include "skd/rng.hpp"

namespace skd {

std::string_view mistake_name(MistakeKind kind) {
  return kind == MistakeKind::kRepeatToken ? "repeat-token" : "synonym-swap";
}

MistakeKind parse_mistake(std::string_view name) {
  if (name == "repeat-token") return MistakeKind::kRepeatToken;
  if (name == "synonym-swap") return MistakeKind::kSynonymSwap;
  throw Error(ErrorKind::kConfig, "unknown mistake kind: " + std::string(name));
}

std::vector<double> SynthTaskSpec::resolved_distribution() const {
  if (!mode_distribution.empty()) return mode_distribution;
  return std::vector<double>(static_cast<std::size_t>(std::max(modes, 1)),
                             1.0 / std::max(modes, 1));
}

void SynthTaskSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
  if (modes < 1) fail("mode count must be >= 1");
  if (source_vocab_size < 1) fail("source vocabulary size must be >= 1");
  if (target_vocab_size < 2 * modes)
    fail("target vocabulary size must be >= 2 * modes");
  if (min_length < 1 || max_length < min_length)
    fail("length range must satisfy 1 <= min <= max");
  if (max_length > static_cast<int>(kMaxSentenceLength) - 1)
    fail("max length exceeds the sentence limit");
  if (!(mistake_rate >= 0.0 && mistake_rate <= 1.0))
    fail("mistake rate must lie in [0, 1]");
  if (!mode_distribution.empty()) {
    if (mode_distribution.size() != static_cast<std::size_t>(modes))
      fail("mode distribution length must equal the mode count");
    double sum = 0.0;
    for (double p : mode_distribution) {
      if (!(p >= 0.0)) fail("mode probabilities must be nonnegative");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12) fail("mode distribution must sum to 1");
  }
}

std::string SynthTask::source_surface(int type) { return "s" + std::to_string(type); }
std::string SynthTask::target_surface(int type) { return "t" + std::to_string(type); }

namespace {

/// Marks exactly `count` of `n` items, chosen by a seeded shuffle.
std::vector<bool> pick_subset(Xorshift64Star& rng, int n, int count) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<bool> marked(static_cast<std::size_t>(n), false);
  for (int i = 0; i < count; ++i) marked[static_cast<std::size_t>(order[i])] = true;
  return marked;
}

}  // namespace

SynthTask::SynthTask(SynthTaskSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int vs = spec_.source_vocab_size;
  const int m = spec_.modes;
  block_ = spec_.target_vocab_size / m;

  Xorshift64Star rng(spec_.seed);
  canonical_.resize(static_cast<std::size_t>(vs));
  if (block_ >= vs) {
    // Injective when the block has room: a random prefix of a permutation.
    std::vector<int> perm(static_cast<std::size_t>(block_));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::copy_n(perm.begin(), vs, canonical_.begin());
  } else {
    for (auto& t : canonical_) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(block_)));
  }

  synonym_.assign(static_cast<std::size_t>(m), {});
  substitute_.assign(static_cast<std::size_t>(m), std::vector<bool>(static_cast<std::size_t>(vs), false));
  for (int mode = 1; mode < m; ++mode) {
    auto& syn = synonym_[static_cast<std::size_t>(mode)];
    syn.resize(static_cast<std::size_t>(vs));
    for (auto& t : syn)
      t = mode * block_ + static_cast<int>(rng.below(static_cast<std::uint64_t>(block_)));
    const int count = static_cast<int>(std::lround(static_cast<double>(mode) / m * vs));
    substitute_[static_cast<std::size_t>(mode)] = pick_subset(rng, vs, count);
  }
  const int triggers = static_cast<int>(std::lround(spec_.mistake_rate * vs));
  trigger_ = pick_subset(rng, vs, triggers);
}

std::vector<int> SynthTask::map_sentence(const std::vector<int>& src, int mode) const {
  std::vector<int> out;
  out.reserve(src.size());
  for (int a : src) {
    const auto ai = static_cast<std::size_t>(a);
    if (mode > 0 && substitute_[static_cast<std::size_t>(mode)][ai])
      out.push_back(synonym_[static_cast<std::size_t>(mode)][ai]);
    else
      out.push_back(canonical_[ai]);
  }
  if (mode > 0 && spec_.is_dramatic(mode)) std::reverse(out.begin(), out.end());
  return out;
}

SynthCorpus SynthTask::generate(std::size_t n, std::uint64_t seed,
                                const CorpusOptions& options) const {
  if (n < 1) throw Error(ErrorKind::kConfig, "synthetic corpus size must be >= 1");
  Xorshift64Star rng(seed);
  const auto dist = spec_.resolved_distribution();

  Corpus::Lines src_lines(n), raw_lines(n), kd_lines(n), canon_lines(n);
  SynthCorpus out;
  out.mode.resize(n);
  out.mistake.resize(n);
  auto to_lines = [](const std::vector<int>& types, auto surface) {
    std::vector<std::string> line;
    line.reserve(types.size());
    for (int t : types) line.push_back(surface(t));
    return line;
  };

  for (std::size_t i = 0; i < n; ++i) {
    const auto len = rng.between(spec_.min_length, spec_.max_length);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (auto& a : src)
      a = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec_.source_vocab_size)));

    const double u = rng.uniform();
    int mode = 0;
    double acc = 0.0;
    for (std::size_t m = 0; m < dist.size(); ++m) {
      acc += dist[m];
      mode = static_cast<int>(m);
      if (u < acc) break;
    }
    // Skip trailing zero-probability modes if rounding left u >= acc.
    while (mode > 0 && dist[static_cast<std::size_t>(mode)] == 0.0) --mode;

    const auto raw = map_sentence(src, mode);
    const auto canonical = map_sentence(src, 0);
    auto kd = canonical;
    const bool corrupt = trigger_[static_cast<std::size_t>(src.front())];
    if (corrupt) {
      if (spec_.mistake == MistakeKind::kRepeatToken) {
        kd.insert(kd.begin() + 1, kd.front());
      } else {
        const int a = src.front();
        kd.front() = spec_.modes >= 2
                         ? synonym_[1][static_cast<std::size_t>(a)]
                         : (canonical_[static_cast<std::size_t>(a)] + 1) % block_;
      }
    }
    out.mode[i] = mode;
    out.mistake[i] = corrupt;
    src_lines[i] = to_lines(src, source_surface);
    raw_lines[i] = to_lines(raw, target_surface);
    kd_lines[i] = to_lines(kd, target_surface);
    canon_lines[i] = to_lines(canonical, target_surface);
  }
  out.corpus = Corpus::from_tokens(src_lines, raw_lines, kd_lines, options);
  const auto& tv = out.corpus.target_vocab();
  out.canonical.reserve(n);
  for (const auto& line : canon_lines) {
    Sentence s;
    for (const auto& t : line) s.push_back(tv.lookup(t));
    out.canonical.push_back(std::move(s));
  }
  return out;
}

SynthCorpus generate(const SynthTaskSpec& spec, std::size_t n, std::uint64_t seed) {
  return SynthTask(spec).generate(n, seed);
}

SynthOracleReport oracle_report(const SynthCorpus& synth, const SynthTaskSpec& spec) {
  SynthOracleReport r;
  r.mode_counts.assign(static_cast<std::size_t>(spec.modes), 0);
  r.should_select.resize(synth.mode.size());
  std::size_t selected = 0;
  for (std::size_t i = 0; i < synth.mode.size(); ++i) {
    ++r.mode_counts[static_cast<std::size_t>(synth.mode[i])];
    if (synth.mistake[i]) ++r.mistake_count;
    const bool keep = synth.mode[i] == 0 || !spec.is_dramatic(synth.mode[i]);
    r.should_select[i] = keep;
    selected += keep;
  }
  r.should_select_fraction =
      synth.mode.empty() ? 0.0 : static_cast<double>(selected) / synth.mode.size();
  return r;
}

std::string format_synth_sidecar(const SynthCorpus& synth) {
  std::string out;
  for (std::size_t i = 0; i < synth.mode.size(); ++i)
    out += std::to_string(i) + '\t' + std::to_string(synth.mode[i]) + '\t' +
           (synth.mistake[i] ? "1" : "0") + '\n';
  return out;
}

}  // namespace skd
