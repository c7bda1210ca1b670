#include "skd/nat_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "skd/error.hpp"
#include "skd/parallel.hpp"

namespace skd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kConfig, msg); };
  if (embedding_dim < 1 || hidden_dim < 1) fail("embedding and hidden dims must be >= 1");
  if (upsample < 2) fail("upsample factor must be >= 2");
  if (window < 0) fail("window must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch size must be >= 1");
}

NatParameters NatParameters::zeros_like() const {
  NatParameters z;
  z.embedding = Eigen::MatrixXd::Zero(embedding.rows(), embedding.cols());
  z.w1 = Eigen::MatrixXd::Zero(w1.rows(), w1.cols());
  z.b1 = Eigen::VectorXd::Zero(b1.size());
  z.w2 = Eigen::MatrixXd::Zero(w2.rows(), w2.cols());
  z.b2 = Eigen::VectorXd::Zero(b2.size());
  z.w_out = Eigen::MatrixXd::Zero(w_out.rows(), w_out.cols());
  z.b_out = Eigen::VectorXd::Zero(b_out.size());
  return z;
}

double NatParameters::squared_norm() const {
  double s = 0.0;
  for_each([&](const auto& m) { s += m.squaredNorm(); });
  return s;
}

void NatParameters::add_scaled(const NatParameters& o, double scale) {
  embedding += scale * o.embedding;
  w1 += scale * o.w1;
  b1 += scale * o.b1;
  w2 += scale * o.w2;
  b2 += scale * o.b2;
  w_out += scale * o.w_out;
  b_out += scale * o.b_out;
}

bool NatParameters::all_finite() const {
  bool ok = true;
  for_each([&](const auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

std::vector<FrameSlot> upsampled_layout(std::size_t source_length, int upsample) {
  std::vector<FrameSlot> layout(source_length * static_cast<std::size_t>(upsample));
  for (std::size_t t = 0; t < layout.size(); ++t)
    layout[t] = {static_cast<int>(t / static_cast<std::size_t>(upsample)),
                 static_cast<int>(t % static_cast<std::size_t>(upsample))};
  return layout;
}

std::vector<FrameSlot> fixed_length_layout(std::size_t source_length, std::size_t frames) {
  std::vector<FrameSlot> layout(frames);
  for (std::size_t j = 0; j < frames; ++j)
    layout[j] = {static_cast<int>(j * source_length / frames), 0};
  return layout;
}

namespace {

NatParameters init_parameters(const ModelConfig& c, Eigen::Index src_vocab,
                              Eigen::Index tgt_vocab, int feature_dim) {
  Xorshift64Star rng(c.seed);
  auto fill = [&](Eigen::MatrixXd& m, double bound) {
    // Row-major fill order keeps the stream layout independent of storage.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index col = 0; col < m.cols(); ++col) m(r, col) = rng.uniform(-bound, bound);
  };
  const int e = c.embedding_dim, h = c.hidden_dim;
  NatParameters p;
  p.embedding.resize(src_vocab, e);
  fill(p.embedding, 0.5);
  p.w1.resize(h, feature_dim);
  fill(p.w1, std::sqrt(6.0 / (feature_dim + h)));
  p.b1 = Eigen::VectorXd::Zero(h);
  p.w2.resize(h, h);
  fill(p.w2, std::sqrt(6.0 / (2.0 * h)));
  p.b2 = Eigen::VectorXd::Zero(h);
  p.w_out.resize(tgt_vocab, h);
  fill(p.w_out, std::sqrt(6.0 / static_cast<double>(h + tgt_vocab)));
  p.b_out = Eigen::VectorXd::Zero(tgt_vocab);
  return p;
}

/// Column-wise log-softmax in place.
void log_softmax_columns(Eigen::MatrixXd& z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double lse = log_sum_exp(z.col(c));
    z.col(c).array() -= lse;
  }
}

}  // namespace

NatModel::NatModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> source_vocab,
                   std::shared_ptr<const Vocabulary> target_vocab)
    : config_(config), source_vocab_(std::move(source_vocab)),
      target_vocab_(std::move(target_vocab)) {
  config_.validate();
  params_ = init_parameters(config_, static_cast<Eigen::Index>(source_vocab_->size()),
                            static_cast<Eigen::Index>(target_vocab_->size()), feature_dim());
}

NatModel::NatModel(const ModelConfig& config, std::shared_ptr<const Vocabulary> source_vocab,
                   std::shared_ptr<const Vocabulary> target_vocab, NatParameters params)
    : config_(config), source_vocab_(std::move(source_vocab)),
      target_vocab_(std::move(target_vocab)), params_(std::move(params)) {
  config_.validate();
  const auto vs = static_cast<Eigen::Index>(source_vocab_->size());
  const auto vt = static_cast<Eigen::Index>(target_vocab_->size());
  const int e = config_.embedding_dim, h = config_.hidden_dim;
  if (params_.embedding.rows() != vs || params_.embedding.cols() != e ||
      params_.w1.rows() != h || params_.w1.cols() != feature_dim() ||
      params_.b1.size() != h || params_.w2.rows() != h || params_.w2.cols() != h ||
      params_.b2.size() != h || params_.w_out.rows() != vt || params_.w_out.cols() != h ||
      params_.b_out.size() != vt)
    throw Error(ErrorKind::kFormat, "parameter shapes do not match the model config");
}

int NatModel::feature_dim() const {
  return 2 * config_.embedding_dim + config_.upsample + 2;
}

void NatModel::frame_features(const Sentence& source, std::span<const FrameSlot> layout,
                              Eigen::Ref<Eigen::MatrixXd> out) const {
  const int e = config_.embedding_dim;
  const int w = config_.window;
  const auto n = static_cast<int>(source.size());
  const double inv_window = 1.0 / (2 * w + 1);
  auto row_of = [&](int pos) {
    TokenId id = source[static_cast<std::size_t>(pos)];
    if (id < 0 || id >= params_.embedding.rows()) id = kUnkId;
    return params_.embedding.row(id).transpose();
  };
  out.setZero();
  for (std::size_t t = 0; t < layout.size(); ++t) {
    const auto col = static_cast<Eigen::Index>(t);
    const FrameSlot slot = layout[t];
    out.col(col).head(e) = row_of(slot.position);
    for (int q = std::max(0, slot.position - w); q <= std::min(n - 1, slot.position + w); ++q)
      out.col(col).segment(e, e) += inv_window * row_of(q);
    out(2 * e + std::min(slot.phase, config_.upsample - 1), col) = 1.0;
    out(2 * e + config_.upsample, col) = slot.position == 0 ? 1.0 : 0.0;
    out(2 * e + config_.upsample + 1, col) = slot.position == n - 1 ? 1.0 : 0.0;
  }
}

EmissionMatrix<double> NatModel::forward(const Sentence& source) const {
  const auto layout = upsampled_layout(source.size(), config_.upsample);
  return forward(source, layout);
}

EmissionMatrix<double> NatModel::forward(const Sentence& source,
                                         std::span<const FrameSlot> layout) const {
  Eigen::MatrixXd features(feature_dim(), static_cast<Eigen::Index>(layout.size()));
  frame_features(source, layout, features);
  const Eigen::MatrixXd h1 = ((params_.w1 * features).colwise() + params_.b1).array().tanh();
  const Eigen::MatrixXd h2 = ((params_.w2 * h1).colwise() + params_.b2).array().tanh();
  Eigen::MatrixXd z = (params_.w_out * h2).colwise() + params_.b_out;
  log_softmax_columns(z);
  return z.transpose();
}

void NatModel::check_compatible(const Corpus& corpus) const {
  if (!(corpus.source_vocab() == *source_vocab_) || !(corpus.target_vocab() == *target_vocab_))
    throw Error(ErrorKind::kVocabMismatch,
                "corpus vocabularies do not match the checkpoint (source " +
                    corpus.source_vocab().hash().substr(0, 12) + " vs " +
                    source_vocab_->hash().substr(0, 12) + ", target " +
                    corpus.target_vocab().hash().substr(0, 12) + " vs " +
                    target_vocab_->hash().substr(0, 12) + ")");
}

namespace {

struct BatchForward {
  std::vector<Eigen::Index> offset;  // first column of each example
  std::vector<Eigen::Index> frames;
  Eigen::MatrixXd features, h1, h2, log_probs;  // columns are frames
};

BatchForward batch_forward(const NatModel& model, std::span<const TrainingExample> batch) {
  const auto& p = model.parameters();
  BatchForward f;
  f.offset.resize(batch.size());
  f.frames.resize(batch.size());
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    f.offset[i] = total;
    f.frames[i] = static_cast<Eigen::Index>(batch[i].source->size()) * model.config().upsample;
    total += f.frames[i];
  }
  f.features.resize(model.feature_dim(), total);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto layout = upsampled_layout(batch[i].source->size(), model.config().upsample);
    model.frame_features(*batch[i].source, layout,
                         f.features.middleCols(f.offset[i], f.frames[i]));
  }
  f.h1 = ((p.w1 * f.features).colwise() + p.b1).array().tanh();
  f.h2 = ((p.w2 * f.h1).colwise() + p.b2).array().tanh();
  f.log_probs = (p.w_out * f.h2).colwise() + p.b_out;
  log_softmax_columns(f.log_probs);
  return f;
}

struct BatchLoss {
  std::vector<double> loss;
  std::vector<bool> feasible;
  Eigen::MatrixXd grad;  // d loss / d log_probs, V x frames
};

BatchLoss batch_ctc(const BatchForward& f, std::span<const TrainingExample> batch,
                    int threads, bool want_grad) {
  BatchLoss out;
  out.loss.assign(batch.size(), 0.0);
  out.feasible.assign(batch.size(), false);
  if (want_grad) out.grad = Eigen::MatrixXd::Zero(f.log_probs.rows(), f.log_probs.cols());
  std::vector<char> ok(batch.size(), 0);
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const auto& target = *batch[i].target;
    if (ctc_min_frames(target) > static_cast<std::size_t>(f.frames[i])) return;
    const EmissionMatrix<double> lattice =
        f.log_probs.middleCols(f.offset[i], f.frames[i]).transpose();
    try {
      auto r = ctc_loss_and_grad(lattice, target);
      out.loss[i] = r.loss;
      if (want_grad) out.grad.middleCols(f.offset[i], f.frames[i]) = r.gradient.transpose();
      ok[i] = 1;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInfeasible) throw;
    }
  });
  for (std::size_t i = 0; i < batch.size(); ++i) out.feasible[i] = ok[i] != 0;
  return out;
}

}  // namespace

StepResult sgd_step(NatModel& model, std::span<const TrainingExample> batch, int threads) {
  StepResult result;
  if (batch.empty()) return result;
  const BatchForward f = batch_forward(model, batch);
  BatchLoss l = batch_ctc(f, batch, threads, /*want_grad=*/true);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (l.feasible[i]) {
      result.loss_sum += l.loss[i];
      ++result.used;
    } else {
      ++result.skipped;
    }
  }
  if (result.used == 0) return result;

  auto& p = model.mutable_parameters();
  const double scale = 1.0 / static_cast<double>(result.used);
  // Through log-softmax: dz = g - softmax * sum(g).
  const Eigen::MatrixXd probs = f.log_probs.array().exp();
  const Eigen::RowVectorXd col_sum = l.grad.colwise().sum();
  const Eigen::MatrixXd dz = scale * (l.grad - probs * col_sum.asDiagonal());

  NatParameters g = p.zeros_like();
  g.w_out = dz * f.h2.transpose();
  g.b_out = dz.rowwise().sum();
  const Eigen::MatrixXd dh2 =
      ((p.w_out.transpose() * dz).array() * (1.0 - f.h2.array().square())).matrix();
  g.w2 = dh2 * f.h1.transpose();
  g.b2 = dh2.rowwise().sum();
  const Eigen::MatrixXd dh1 =
      ((p.w2.transpose() * dh2).array() * (1.0 - f.h1.array().square())).matrix();
  g.w1 = dh1 * f.features.transpose();
  g.b1 = dh1.rowwise().sum();
  const Eigen::MatrixXd dfeat = p.w1.transpose() * dh1;

  const int e = model.config().embedding_dim;
  const int w = model.config().window;
  const double inv_window = 1.0 / (2 * w + 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sentence& src = *batch[i].source;
    const auto n = static_cast<int>(src.size());
    const int s = model.config().upsample;
    auto emb_row = [&](int pos) {
      TokenId id = src[static_cast<std::size_t>(pos)];
      if (id < 0 || id >= g.embedding.rows()) id = kUnkId;
      return g.embedding.row(id);
    };
    for (Eigen::Index t = 0; t < f.frames[i]; ++t) {
      const auto col = dfeat.col(f.offset[i] + t);
      const int pos = static_cast<int>(t / s);
      emb_row(pos) += col.head(e).transpose();
      for (int q = std::max(0, pos - w); q <= std::min(n - 1, pos + w); ++q)
        emb_row(q) += inv_window * col.segment(e, e).transpose();
    }
  }

  double step = model.config().learning_rate;
  if (model.config().clip_norm > 0.0) {
    const double norm = std::sqrt(g.squared_norm());
    if (norm > model.config().clip_norm) step *= model.config().clip_norm / norm;
  }
  p.add_scaled(g, -step);
  if (!p.all_finite()) throw Error(ErrorKind::kTraining, "non-finite parameters after update");
  return result;
}

double mean_ctc_loss(const NatModel& model, std::span<const TrainingExample> examples,
                     int threads) {
  double sum = 0.0;
  std::size_t used = 0;
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < examples.size(); lo += kChunk) {
    const auto chunk = examples.subspan(lo, std::min(kChunk, examples.size() - lo));
    const BatchForward f = batch_forward(model, chunk);
    const BatchLoss l = batch_ctc(f, chunk, threads, /*want_grad=*/false);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      if (l.feasible[i]) {
        sum += l.loss[i];
        ++used;
      }
  }
  return used ? sum / static_cast<double>(used) : 0.0;
}

BatchStream::BatchStream(std::vector<std::size_t> items, std::size_t batch_size,
                         std::uint64_t seed)
    : base_(std::move(items)), batch_size_(std::max<std::size_t>(1, batch_size)), rng_(seed) {
  if (base_.empty()) throw Error(ErrorKind::kTraining, "no training examples");
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ == 0) {
    order_ = base_;
    rng_.shuffle(order_);
  }
  const std::size_t hi = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(hi));
  cursor_ = hi == order_.size() ? 0 : hi;
  return out;
}

TrainResult train(const Corpus& corpus, Side target_side, const ModelConfig& config,
                  const TrainOptions& options) {
  config.validate();
  TrainResult result{NatModel(config, corpus.source_vocab_ptr(), corpus.target_vocab_ptr()),
                     {}, 0, 0, std::nullopt};
  std::vector<std::size_t> usable;
  for (const auto& ex : corpus.examples()) {
    const auto frames = ex.source.size() * static_cast<std::size_t>(config.upsample);
    if (ctc_min_frames(ex.side(target_side)) <= frames)
      usable.push_back(ex.index);
    else
      ++result.skipped_pairs;
  }
  if (usable.empty())
    throw Error(ErrorKind::kTraining, "every training pair is infeasible for CTC");

  BatchStream stream(usable, static_cast<std::size_t>(config.batch_size), config.seed ^ 0xB5u);
  std::vector<TrainingExample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t used = 0;
    do {
      batch.clear();
      for (std::size_t i : stream.next())
        batch.push_back({&corpus[i].source, &corpus[i].side(target_side)});
      const StepResult step = sgd_step(result.model, batch, options.threads);
      loss_sum += step.loss_sum;
      used += step.used;
      ++result.updates;
      if (options.snapshot_at_update != 0 && result.updates == options.snapshot_at_update)
        result.snapshot = result.model;
    } while (!stream.at_pass_start());
    const double mean = used ? loss_sum / static_cast<double>(used) : 0.0;
    result.epoch_loss.push_back(mean);
    if (options.on_epoch) options.on_epoch(epoch, mean);
  }
  return result;
}

// Checkpoint layout (little-endian):
//   magic "SKDNAT01"; u32 version
//   i32 embedding_dim, hidden_dim, upsample, window; f64 learning_rate;
//   i32 epochs, batch_size; f64 clip_norm; u64 seed
//   source vocabulary, target vocabulary: u32 count, count x string,
//     then the SHA-256 hex of the surfaces as a string
//   embedding, w1, b1, w2, b2, w_out, b_out: u32 rows, u32 cols, row-major f64
// Strings are u32 byte length followed by the bytes.
namespace {

constexpr char kMagic[8] = {'S', 'K', 'D', 'N', 'A', 'T', '0', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  }
  template <typename T>
  void pod(T v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void matrix(const Eigen::MatrixXd& m) {
    pod(static_cast<std::uint32_t>(m.rows()));
    pod(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) pod(m(r, c));
  }
  void vocab(const Vocabulary& v) {
    pod(static_cast<std::uint32_t>(v.size()));
    for (const auto& s : v.surfaces()) str(s);
    str(v.hash());
  }
  void raw(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw Error(ErrorKind::kIo, "checkpoint write failed");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorKind::kMissingInput, "cannot open " + path.string());
  }
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) throw Error(ErrorKind::kFormat, "truncated checkpoint");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 24)) throw Error(ErrorKind::kFormat, "corrupt checkpoint string");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    if (!in_) throw Error(ErrorKind::kFormat, "truncated checkpoint");
    return s;
  }
  Eigen::MatrixXd matrix() {
    const auto rows = pod<std::uint32_t>();
    const auto cols = pod<std::uint32_t>();
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 32))
      throw Error(ErrorKind::kFormat, "corrupt checkpoint matrix");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = pod<double>();
    return m;
  }
  std::shared_ptr<Vocabulary> vocab(const char* which) {
    const auto n = pod<std::uint32_t>();
    auto v = std::make_shared<Vocabulary>();
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::string s = str();
      if (i >= 2) v->add(s);
    }
    const std::string recorded = str();
    if (v->size() != n || v->hash() != recorded)
      throw Error(ErrorKind::kVocabMismatch,
                  std::string("checkpoint ") + which + " vocabulary hash mismatch");
    return v;
  }
  void expect_end() {
    in_.peek();
    if (!in_.eof()) throw Error(ErrorKind::kFormat, "trailing bytes in checkpoint");
  }
  void raw(char* p, std::size_t n) {
    in_.read(p, static_cast<std::streamsize>(n));
    if (!in_) throw Error(ErrorKind::kFormat, "truncated checkpoint");
  }

 private:
  std::ifstream in_;
};

}  // namespace

void save_checkpoint(const NatModel& model, const std::filesystem::path& path) {
  Writer w(path);
  w.raw(kMagic, sizeof kMagic);
  w.pod(kVersion);
  const auto& c = model.config();
  w.pod<std::int32_t>(c.embedding_dim);
  w.pod<std::int32_t>(c.hidden_dim);
  w.pod<std::int32_t>(c.upsample);
  w.pod<std::int32_t>(c.window);
  w.pod<double>(c.learning_rate);
  w.pod<std::int32_t>(c.epochs);
  w.pod<std::int32_t>(c.batch_size);
  w.pod<double>(c.clip_norm);
  w.pod<std::uint64_t>(c.seed);
  w.vocab(model.source_vocab());
  w.vocab(model.target_vocab());
  model.parameters().for_each([&](const auto& m) { w.matrix(m); });
  w.finish();
}

NatModel load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(ErrorKind::kFormat, path.string() + " is not a model checkpoint");
  if (r.pod<std::uint32_t>() != kVersion)
    throw Error(ErrorKind::kFormat, "unsupported checkpoint version");
  ModelConfig c;
  c.embedding_dim = r.pod<std::int32_t>();
  c.hidden_dim = r.pod<std::int32_t>();
  c.upsample = r.pod<std::int32_t>();
  c.window = r.pod<std::int32_t>();
  c.learning_rate = r.pod<double>();
  c.epochs = r.pod<std::int32_t>();
  c.batch_size = r.pod<std::int32_t>();
  c.clip_norm = r.pod<double>();
  c.seed = r.pod<std::uint64_t>();
  auto src = r.vocab("source");
  auto tgt = r.vocab("target");
  NatParameters p;
  p.embedding = r.matrix();
  p.w1 = r.matrix();
  p.b1 = r.matrix();
  p.w2 = r.matrix();
  p.b2 = r.matrix();
  p.w_out = r.matrix();
  p.b_out = r.matrix();
  r.expect_end();
  return NatModel(c, std::move(src), std::move(tgt), std::move(p));
}

}  // namespace skd
