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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "jointnas/genome.hpp"

namespace jointnas {

struct PredictorConfig {
  int hidden = 256;
  int epochs = 300;
  double lr = 1e-3;
  int batch_size = 10;
  int folds = 5;
};

struct TrainingPair {
  std::vector<std::uint8_t> bits;
  double accuracy = 0.0;
};

/// Accuracy regressor over raw genome bits: two ReLU hidden layers of equal
/// width and a linear scalar output.
class PredictorModel {
 public:
  PredictorModel() = default;

  int input_bits() const { return static_cast<int>(w1_.cols()); }
  int hidden() const { return static_cast<int>(w1_.rows()); }
  bool fitted() const { return w1_.size() > 0; }
  /// Root-mean-square error on the training pairs after the last epoch.
  double train_rmse() const { return train_rmse_; }

  std::vector<double> predict(const std::vector<std::vector<std::uint8_t>>& encodings) const;
  double predict_one(std::span<const std::uint8_t> bits) const;

 private:
  friend PredictorModel fit(const std::vector<TrainingPair>&, const PredictorConfig&, std::uint64_t);

  Eigen::MatrixXd w1_, w2_, w3_;
  Eigen::VectorXd b1_, b2_, b3_;
  double train_rmse_ = 0.0;
};

/// Fresh model trained with Adam on mean squared error. Throws RangeError with
/// fewer than two pairs.
PredictorModel fit(const std::vector<TrainingPair>& pairs, const PredictorConfig& cfg, std::uint64_t seed);

/// Indices of the ceil(n/2) highest scores, in input order. Equal scores keep
/// the lower index.
std::vector<std::size_t> top_half(std::span<const double> scores);

/// Children kept by the predictor; every index when the model is not fitted.
std::vector<std::size_t> filter_children(const PredictorModel& model, const std::vector<EncodedGenome>& children);

/// Kendall tau-b: (C - D) / sqrt((n0 - T_x)(n0 - T_y)), with n0 = n(n-1)/2 and
/// T_x, T_y the pairs tied in each argument. Returns 0 when either argument
/// is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// Mean held-out Kendall tau over a seeded k-fold split.
double crossval_ktau(const std::vector<TrainingPair>& pairs, const PredictorConfig& cfg, std::uint64_t seed);

}  // namespace jointnas
