// Copyright 2026 The jointnas Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "jointnas/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace jointnas {

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const std::vector<const std::vector<std::uint8_t>*>& rows, int width) {
  Mat x(width, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (static_cast<int>(rows[c]->size()) != width) {
      throw LayoutError("encoding has " + std::to_string(rows[c]->size()) + " bits, predictor expects " +
                        std::to_string(width));
    }
    for (int r = 0; r < width; ++r) x(r, static_cast<Eigen::Index>(c)) = (*rows[c])[static_cast<std::size_t>(r)];
  }
  return x;
}

void uniform_init(Mat& w, Vec& b, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = u(rng);
}

struct Adam {
  Mat m, v;
  void init(const Mat& like) {
    m = Mat::Zero(like.rows(), like.cols());
    v = Mat::Zero(like.rows(), like.cols());
  }
  template <typename P, typename G>
  void step(P& p, const G& g, double lr, int t) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, t);
    const double c2 = 1.0 - std::pow(b2, t);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

}  // namespace

double PredictorModel::predict_one(std::span<const std::uint8_t> bits) const {
  if (static_cast<int>(bits.size()) != input_bits()) {
    throw LayoutError("encoding has " + std::to_string(bits.size()) + " bits, predictor expects " +
                      std::to_string(input_bits()));
  }
  Vec x(input_bits());
  for (int i = 0; i < input_bits(); ++i) x[i] = bits[static_cast<std::size_t>(i)];
  const Vec h1 = (w1_ * x + b1_).cwiseMax(0.0);
  const Vec h2 = (w2_ * h1 + b2_).cwiseMax(0.0);
  return (w3_ * h2 + b3_)(0);
}

std::vector<double> PredictorModel::predict(const std::vector<std::vector<std::uint8_t>>& encodings) const {
  if (!fitted()) throw Error("predictor is not fitted");
  std::vector<double> out;
  out.reserve(encodings.size());
  for (const auto& e : encodings) out.push_back(predict_one(e));
  return out;
}

PredictorModel fit(const std::vector<TrainingPair>& pairs, const PredictorConfig& cfg, std::uint64_t seed) {
  if (pairs.size() < 2) throw RangeError("predictor needs at least 2 training pairs");
  if (cfg.hidden < 1 || cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw RangeError("invalid predictor configuration");
  }
  const int in = static_cast<int>(pairs.front().bits.size());
  const int h = cfg.hidden;
  std::vector<const std::vector<std::uint8_t>*> rows;
  Vec y(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rows.push_back(&pairs[i].bits);
    y[static_cast<Eigen::Index>(i)] = pairs[i].accuracy;
  }
  const Mat x_all = to_matrix(rows, in);

  PredictorModel m;
  std::mt19937_64 init_rng(derive_seed(seed, "init"));
  m.w1_.resize(h, in);
  m.b1_.resize(h);
  m.w2_.resize(h, h);
  m.b2_.resize(h);
  m.w3_.resize(1, h);
  m.b3_.resize(1);
  uniform_init(m.w1_, m.b1_, in, init_rng);
  uniform_init(m.w2_, m.b2_, h, init_rng);
  uniform_init(m.w3_, m.b3_, h, init_rng);

  Adam a_w1, a_b1, a_w2, a_b2, a_w3, a_b3;
  a_w1.init(m.w1_);
  a_b1.init(m.b1_);
  a_w2.init(m.w2_);
  a_b2.init(m.b2_);
  a_w3.init(m.w3_);
  a_b3.init(m.b3_);

  const std::size_t n = pairs.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  int t = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, "epoch", static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < n; lo += bs) {
      const std::size_t hi = std::min(n, lo + bs);
      const auto nb = static_cast<Eigen::Index>(hi - lo);
      Mat xb(in, nb);
      Vec yb(nb);
      for (Eigen::Index c = 0; c < nb; ++c) {
        xb.col(c) = x_all.col(static_cast<Eigen::Index>(order[lo + static_cast<std::size_t>(c)]));
        yb[c] = y[static_cast<Eigen::Index>(order[lo + static_cast<std::size_t>(c)])];
      }
      const Mat z1 = (m.w1_ * xb).colwise() + m.b1_;
      const Mat h1 = z1.cwiseMax(0.0);
      const Mat z2 = (m.w2_ * h1).colwise() + m.b2_;
      const Mat h2 = z2.cwiseMax(0.0);
      const Mat out = (m.w3_ * h2).colwise() + m.b3_;
      // d(mean squared error)/d(out)
      const Mat g_out = (2.0 / static_cast<double>(nb)) * (out - yb.transpose());
      const Mat g_w3 = g_out * h2.transpose();
      const Vec g_b3 = g_out.rowwise().sum();
      const Mat g_h2 = (m.w3_.transpose() * g_out).cwiseProduct((z2.array() > 0.0).cast<double>().matrix());
      const Mat g_w2 = g_h2 * h1.transpose();
      const Vec g_b2 = g_h2.rowwise().sum();
      const Mat g_h1 = (m.w2_.transpose() * g_h2).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
      const Mat g_w1 = g_h1 * xb.transpose();
      const Vec g_b1 = g_h1.rowwise().sum();
      ++t;
      a_w1.step(m.w1_, g_w1, cfg.lr, t);
      a_b1.step(m.b1_, g_b1, cfg.lr, t);
      a_w2.step(m.w2_, g_w2, cfg.lr, t);
      a_b2.step(m.b2_, g_b2, cfg.lr, t);
      a_w3.step(m.w3_, g_w3, cfg.lr, t);
      a_b3.step(m.b3_, g_b3, cfg.lr, t);
    }
  }

  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = m.predict_one(pairs[i].bits) - pairs[i].accuracy;
    se += d * d;
  }
  m.train_rmse_ = std::sqrt(se / static_cast<double>(n));
  if (!std::isfinite(m.train_rmse_)) throw NumericError("predictor training diverged");
  return m;
}

std::vector<std::size_t> top_half(std::span<const double> scores) {
  const std::size_t keep = (scores.size() + 1) / 2;
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> filter_children(const PredictorModel& model, const std::vector<EncodedGenome>& children) {
  if (!model.fitted()) {
    std::vector<std::size_t> all(children.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<double> scores;
  scores.reserve(children.size());
  for (const auto& c : children) scores.push_back(model.predict_one(c.bits));
  return top_half(scores);
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw RangeError("kendall_tau arguments differ in length");
  if (x.size() < 2) throw RangeError("kendall_tau needs at least 2 items");
  const std::size_t n = x.size();
  double concordant = 0.0, discordant = 0.0, tied_x = 0.0, tied_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0) tied_x += 1.0;
      if (dy == 0.0) tied_y += 1.0;
      if (dx == 0.0 || dy == 0.0) continue;
      if ((dx > 0.0) == (dy > 0.0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double denom = std::sqrt((n0 - tied_x) * (n0 - tied_y));
  if (denom == 0.0) return 0.0;
  return (concordant - discordant) / denom;
}

double crossval_ktau(const std::vector<TrainingPair>& pairs, const PredictorConfig& cfg, std::uint64_t seed) {
  const auto folds = static_cast<std::size_t>(cfg.folds);
  if (folds < 2) throw RangeError("crossval needs at least 2 folds");
  if (pairs.size() < folds) throw RangeError("crossval needs at least as many pairs as folds");
  const std::size_t n = pairs.size();
  if (n / folds < 2) throw RangeError("held-out folds would hold fewer than 2 pairs; Kendall tau is undefined");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, "folds"));
  std::shuffle(order.begin(), order.end(), rng);
  double sum = 0.0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds;
    const std::size_t hi = (f + 1) * n / folds;
    std::vector<TrainingPair> train_pairs;
    std::vector<double> truth, pred;
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= lo && i < hi) continue;
      train_pairs.push_back(pairs[order[i]]);
    }
    const PredictorModel m = fit(train_pairs, cfg, derive_seed(seed, "fold", f));
    for (std::size_t i = lo; i < hi; ++i) {
      pred.push_back(m.predict_one(pairs[order[i]].bits));
      truth.push_back(pairs[order[i]].accuracy);
    }
    sum += kendall_tau(pred, truth);
  }
  return sum / static_cast<double>(folds);
}

}  // namespace jointnas
