#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "skd/corpus.hpp"

namespace skd {

enum class MistakeKind { kRepeatToken, kSynonymSwap };

std::string_view mistake_name(MistakeKind kind);
MistakeKind parse_mistake(std::string_view name);

/// Parameters of a synthetic multimodal translation task.
///
/// Source sentences are i.i.d. uniform over `source_vocab_size` types. The
/// target vocabulary is split into `modes` equal blocks; the canonical map
/// sends every source type into block 0, and mode m >= 1 sends a fixed
/// fraction m/modes of the source types to a synonym in block m. Modes from
/// first_dramatic_mode() on also reverse the sentence.
///
/// The simulated teacher errs systematically: a fixed subset of
/// round(mistake_rate * source_vocab_size) source types are "trigger" types,
/// and a distilled target is corrupted exactly when its source starts with a
/// trigger type. Over uniform sources this happens with probability
/// mistake_rate (up to the rounding of the subset size).
struct SynthTaskSpec {
  int source_vocab_size = 16;
  int target_vocab_size = 64;
  int min_length = 4;
  int max_length = 12;
  int modes = 4;
  /// Empty means uniform.
  std::vector<double> mode_distribution;
  double mistake_rate = 0.1;
  MistakeKind mistake = MistakeKind::kRepeatToken;
  /// Seeds the task tables (maps, synonym sets, trigger types).
  std::uint64_t seed = 1;

  /// Throws Error(kConfig) when an invariant is violated.
  void validate() const;
  std::vector<double> resolved_distribution() const;
  int first_dramatic_mode() const { return modes <= 1 ? modes : (modes + 1) / 2; }
  bool is_dramatic(int mode) const { return mode >= first_dramatic_mode(); }
};

struct SynthCorpus {
  Corpus corpus;
  std::vector<int> mode;
  std::vector<bool> mistake;
  /// Uncorrupted canonical translation of each source (target ids).
  std::vector<Sentence> canonical;
};

/// The fixed tables of one task; generate() samples corpora from it.
class SynthTask {
 public:
  explicit SynthTask(SynthTaskSpec spec);

  const SynthTaskSpec& spec() const { return spec_; }

  /// n examples from the sample stream `seed`. `options` may pin
  /// vocabularies (held-out data for a trained model).
  SynthCorpus generate(std::size_t n, std::uint64_t seed,
                       const CorpusOptions& options = {}) const;

  static std::string source_surface(int type);
  static std::string target_surface(int type);

  int canonical_type(int source_type) const { return canonical_[source_type]; }
  bool is_trigger(int source_type) const { return trigger_[source_type]; }

 private:
  std::vector<int> map_sentence(const std::vector<int>& src, int mode) const;

  SynthTaskSpec spec_;
  int block_ = 0;
  std::vector<int> canonical_;
  std::vector<std::vector<int>> synonym_;     // [mode][source type]
  std::vector<std::vector<bool>> substitute_;  // [mode][source type]
  std::vector<bool> trigger_;
};

SynthCorpus generate(const SynthTaskSpec& spec, std::size_t n, std::uint64_t seed);

struct SynthOracleReport {
  std::vector<std::size_t> mode_counts;
  std::size_t mistake_count = 0;
  /// True for examples whose raw target is mode 0 or a non-reversing mode.
  std::vector<bool> should_select;
  double should_select_fraction = 0.0;
};

SynthOracleReport oracle_report(const SynthCorpus& synth, const SynthTaskSpec& spec);

/// TSV sidecar `index<TAB>mode<TAB>mistake`, one row per example.
std::string format_synth_sidecar(const SynthCorpus& synth);

}  // namespace skd
