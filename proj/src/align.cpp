#include "skd/align.hpp"

#include <algorithm>
#include <cmath>

#include "skd/error.hpp"
#include "skd/parallel.hpp"

namespace skd {

double AlignmentModel::prob(TokenId source, TokenId target) const {
  if (source < 0 || static_cast<std::size_t>(source) >= table_.size()) return 0.0;
  const auto& r = table_[static_cast<std::size_t>(source)];
  auto it = std::lower_bound(r.begin(), r.end(), target,
                             [](const auto& e, TokenId t) { return e.first < t; });
  return it != r.end() && it->first == target ? it->second : 0.0;
}

std::span<const std::pair<TokenId, double>> AlignmentModel::row(TokenId source) const {
  if (source < 0 || static_cast<std::size_t>(source) >= table_.size()) return {};
  return table_[static_cast<std::size_t>(source)];
}

void AlignmentModel::distortion(std::size_t j, std::size_t m, std::size_t n,
                                std::span<double> out) const {
  double z = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    const double d = std::abs(static_cast<double>(i) / static_cast<double>(n) -
                              static_cast<double>(j) / static_cast<double>(m));
    out[i - 1] = std::exp(-tension_ * d);
    z += out[i - 1];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= z;
}

namespace {

/// Position of `target` in the sorted support row.
std::size_t slot_of(const std::vector<std::pair<TokenId, double>>& row, TokenId target) {
  auto it = std::lower_bound(row.begin(), row.end(), target,
                             [](const auto& e, TokenId t) { return e.first < t; });
  return static_cast<std::size_t>(it - row.begin());
}

}  // namespace

AlignmentModel em_train(const Bitext& bitext, const AlignOptions& options) {
  if (bitext.empty()) throw Error(ErrorKind::kConfig, "cannot train an aligner on an empty bitext");
  if (options.iterations < 1) throw Error(ErrorKind::kConfig, "EM needs >= 1 iteration");
  if (!(options.null_prob >= 0.0 && options.null_prob < 1.0))
    throw Error(ErrorKind::kConfig, "NULL probability must lie in [0, 1)");
  if (!(options.tension >= 0.0)) throw Error(ErrorKind::kConfig, "tension must be >= 0");

  AlignmentModel model;
  model.tension_ = options.tension;
  model.null_prob_ = options.null_prob;

  TokenId max_src = 0;
  for (const auto& s : bitext.source)
    for (TokenId x : s) max_src = std::max(max_src, x);
  auto& table = model.table_;
  table.assign(static_cast<std::size_t>(max_src) + 1, {});

  // Support: every (x, y) that co-occur, plus (NULL, y) for every y.
  for (std::size_t p = 0; p < bitext.size(); ++p)
    for (TokenId y : bitext.target[p]) {
      table[0].emplace_back(y, 0.0);
      for (TokenId x : bitext.source[p]) table[static_cast<std::size_t>(x)].emplace_back(y, 0.0);
    }
  for (auto& row : table) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end(),
                          [](const auto& a, const auto& b) { return a.first == b.first; }),
              row.end());
    for (auto& e : row) e.second = 1.0 / static_cast<double>(row.size());
  }

  // Support slot of every (source position incl. NULL, target position).
  std::vector<std::vector<std::size_t>> slots(bitext.size());
  std::vector<std::size_t> offset(bitext.size() + 1, 0);
  for (std::size_t p = 0; p < bitext.size(); ++p) {
    const auto& src = bitext.source[p];
    const auto& tgt = bitext.target[p];
    auto& sl = slots[p];
    sl.reserve(tgt.size() * (src.size() + 1));
    for (TokenId y : tgt) {
      sl.push_back(slot_of(table[0], y));
      for (TokenId x : src) sl.push_back(slot_of(table[static_cast<std::size_t>(x)], y));
    }
    offset[p + 1] = offset[p] + sl.size();
  }

  std::vector<double> posterior(offset.back());
  std::vector<double> pair_ll(bitext.size());
  std::vector<std::vector<double>> counts(table.size());
  for (std::size_t x = 0; x < table.size(); ++x) counts[x].assign(table[x].size(), 0.0);

  const double p0 = options.null_prob;
  for (int iter = 0; iter < options.iterations; ++iter) {
    parallel_for(bitext.size(), options.threads, [&](std::size_t p) {
      const auto& src = bitext.source[p];
      const auto& tgt = bitext.target[p];
      const std::size_t n = src.size(), m = tgt.size(), width = n + 1;
      std::vector<double> prior(n);
      double ll = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        model.distortion(j + 1, m, n, prior);
        const std::size_t* sl = &slots[p][j * width];
        double* post = &posterior[offset[p] + j * width];
        post[0] = p0 * table[0][sl[0]].second;
        double z = post[0];
        for (std::size_t i = 0; i < n; ++i) {
          post[i + 1] =
              (1.0 - p0) * prior[i] * table[static_cast<std::size_t>(src[i])][sl[i + 1]].second;
          z += post[i + 1];
        }
        for (std::size_t i = 0; i < width; ++i) post[i] /= z;
        ll += std::log(z);
      }
      pair_ll[p] = ll;
    });

    double total = 0.0;
    for (auto& c : counts) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t p = 0; p < bitext.size(); ++p) {
      total += pair_ll[p];
      const auto& src = bitext.source[p];
      const std::size_t width = src.size() + 1;
      for (std::size_t j = 0; j < bitext.target[p].size(); ++j) {
        const std::size_t* sl = &slots[p][j * width];
        const double* post = &posterior[offset[p] + j * width];
        counts[0][sl[0]] += post[0];
        for (std::size_t i = 0; i < src.size(); ++i)
          counts[static_cast<std::size_t>(src[i])][sl[i + 1]] += post[i + 1];
      }
    }
    model.log_likelihood_.push_back(total);

    for (std::size_t x = 0; x < table.size(); ++x) {
      double sum = 0.0;
      for (double c : counts[x]) sum += c;
      if (sum <= 0.0) continue;
      for (std::size_t k = 0; k < table[x].size(); ++k) table[x][k].second = counts[x][k] / sum;
    }
  }
  return model;
}

AlignmentLinks align_pair(const AlignmentModel& model, std::span<const TokenId> source,
                          std::span<const TokenId> target) {
  AlignmentLinks links;
  links.source_of.assign(target.size(), 0);
  const std::size_t n = source.size(), m = target.size();
  std::vector<double> prior(n);
  const double p0 = model.null_prob();
  for (std::size_t j = 0; j < m; ++j) {
    if (n > 0) model.distortion(j + 1, m, n, prior);
    double best = p0 * model.prob(AlignmentModel::kNull, target[j]);
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = (1.0 - p0) * prior[i] * model.prob(source[i], target[j]);
      if (w > best) {
        best = w;
        arg = i + 1;
      }
    }
    if (best <= 0.0) ++links.unseen;
    links.source_of[j] = arg;
  }
  return links;
}

std::vector<AlignmentLinks> align_bitext(const AlignmentModel& model, const Bitext& bitext,
                                         int threads) {
  std::vector<AlignmentLinks> out(bitext.size());
  parallel_for(bitext.size(), threads, [&](std::size_t p) {
    out[p] = align_pair(model, bitext.source[p], bitext.target[p]);
  });
  return out;
}

std::string format_pharaoh(std::span<const AlignmentLinks> links) {
  std::string out;
  for (const auto& l : links) {
    bool first = true;
    for (std::size_t j = 0; j < l.source_of.size(); ++j) {
      if (l.is_null(j)) continue;
      if (!first) out += ' ';
      out += std::to_string(l.source_of[j] - 1) + '-' + std::to_string(j);
      first = false;
    }
    out += '\n';
  }
  return out;
}

}  // namespace skd
