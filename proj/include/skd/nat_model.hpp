#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "skd/corpus.hpp"
#include "skd/ctc.hpp"
#include "skd/rng.hpp"

namespace skd {

struct ModelConfig {
  int embedding_dim = 32;
  int hidden_dim = 64;
  /// Decoder frames per source token.
  int upsample = 2;
  /// Frames see source positions p - window .. p + window.
  int window = 1;
  double learning_rate = 0.5;
  int epochs = 10;
  int batch_size = 16;
  /// Global gradient-norm clip; <= 0 disables clipping.
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Parameter arrays of the frame classifier, in checkpoint order.
struct NatParameters {
  Eigen::MatrixXd embedding;  // V_src x E
  Eigen::MatrixXd w1;         // H x D
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;         // H x H
  Eigen::VectorXd b2;
  Eigen::MatrixXd w_out;      // V_tgt x H, row 0 is the blank
  Eigen::VectorXd b_out;

  /// Same shapes, all zeros.
  NatParameters zeros_like() const;
  double squared_norm() const;
  /// this += scale * other
  void add_scaled(const NatParameters& other, double scale);
  bool all_finite() const;

  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(embedding); fn(w1); fn(b1); fn(w2); fn(b2); fn(w_out); fn(b_out);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    fn(embedding); fn(w1); fn(b1); fn(w2); fn(b2); fn(w_out); fn(b_out);
  }
};

/// Which source position and upsampling phase a decoder frame reads.
struct FrameSlot {
  int position;
  int phase;
};

/// Upsampled layout: frame t reads position t / s with phase t % s.
std::vector<FrameSlot> upsampled_layout(std::size_t source_length, int upsample);
/// Fixed-length layout: frame j reads position floor(j * N / frames), phase 0.
std::vector<FrameSlot> fixed_length_layout(std::size_t source_length, std::size_t frames);

/// Non-autoregressive frame classifier. Every frame's distribution depends
/// only on the source: the frame features are the embedding of the frame's
/// own source token, the average embedding over a +-window neighbourhood
/// (zero-padded, divided by 2w+1), a one-hot upsampling phase and two
/// sentence-boundary flags; two tanh layers and a softmax follow.
class NatModel {
 public:
  NatModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> source_vocab,
           std::shared_ptr<const Vocabulary> target_vocab);
  NatModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> source_vocab,
           std::shared_ptr<const Vocabulary> target_vocab, NatParameters params);

  const ModelConfig& config() const { return config_; }
  const NatParameters& parameters() const { return params_; }
  NatParameters& mutable_parameters() { return params_; }
  const Vocabulary& source_vocab() const { return *source_vocab_; }
  const Vocabulary& target_vocab() const { return *target_vocab_; }
  std::shared_ptr<const Vocabulary> source_vocab_ptr() const { return source_vocab_; }
  std::shared_ptr<const Vocabulary> target_vocab_ptr() const { return target_vocab_; }

  int feature_dim() const;
  Eigen::Index output_dim() const { return params_.w_out.rows(); }

  /// s * |X| frames of log-probabilities.
  EmissionMatrix<double> forward(const Sentence& source) const;
  /// Frames laid out explicitly (e.g. fixed_length_layout).
  EmissionMatrix<double> forward(const Sentence& source,
                                 std::span<const FrameSlot> layout) const;

  /// Feature column for every frame of `layout`, written into `out`.
  void frame_features(const Sentence& source, std::span<const FrameSlot> layout,
                      Eigen::Ref<Eigen::MatrixXd> out) const;

  /// Throws Error(kVocabMismatch) unless the corpus ids mean the same
  /// surfaces as this model's.
  void check_compatible(const Corpus& corpus) const;

 private:
  ModelConfig config_;
  std::shared_ptr<const Vocabulary> source_vocab_;
  std::shared_ptr<const Vocabulary> target_vocab_;
  NatParameters params_;
};

/// Batched forward/backward for one SGD update. Pairs whose target cannot be
/// emitted in the available frames are skipped.
struct StepResult {
  double loss_sum = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

struct TrainingExample {
  const Sentence* source;
  const Sentence* target;
};

/// Computes the mean CTC loss gradient over the feasible examples and applies
/// one clipped SGD step. `threads` only affects wall time.
StepResult sgd_step(NatModel& model, std::span<const TrainingExample> batch, int threads = 1);

/// Mean CTC loss over the feasible examples without updating the model.
double mean_ctc_loss(const NatModel& model, std::span<const TrainingExample> examples,
                     int threads = 1);

/// Round-robin over a seeded permutation of [0, n), reshuffled each pass;
/// the final batch of a pass may be short.
class BatchStream {
 public:
  BatchStream(std::vector<std::size_t> items, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  bool at_pass_start() const { return cursor_ == 0; }

 private:
  std::vector<std::size_t> base_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
  Xorshift64Star rng_;
};

struct TrainOptions {
  int threads = 1;
  /// Keep a copy of the parameters after this many updates (0 = never).
  std::size_t snapshot_at_update = 0;
  /// Called after every epoch with (epoch, mean loss).
  std::function<void(int, double)> on_epoch;
};

struct TrainResult {
  NatModel model;
  std::vector<double> epoch_loss;
  std::size_t skipped_pairs = 0;
  std::size_t updates = 0;
  std::optional<NatModel> snapshot;
};

/// Mini-batch SGD on the mean CTC loss of (source, target_side) pairs.
/// Throws Error(kTraining) when every pair is infeasible.
TrainResult train(const Corpus& corpus, Side target_side, const ModelConfig& config,
                  const TrainOptions& options = {});

void save_checkpoint(const NatModel& model, const std::filesystem::path& path);
/// Throws Error(kFormat) on a malformed file, Error(kVocabMismatch) when a
/// stored vocabulary does not hash to its recorded value.
NatModel load_checkpoint(const std::filesystem::path& path);

}  // namespace skd
