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
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jointnas/netbuild.hpp"

namespace jointnas {

/// Dense row-major float32 tensor.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, float fill = 0.0f);

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }
  bool operator==(const Tensor&) const = default;
};

std::size_t shape_numel(const std::vector<int>& shape);

/// Parameters and BN running statistics of one network.
///
/// Names are `<layer key>.<field>`; trainable fields are w, b, gamma, beta and
/// running statistics are mean, var. Momentum buffers are transient and are
/// reset at the start of every training run.
struct ModelState {
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> momentum;

  bool operator==(const ModelState& o) const { return params == o.params && buffers == o.buffers; }
};

/// Expected tensor shapes for a spec, trainable and running statistics.
std::map<std::string, std::vector<int>> param_shapes(const NetworkSpec& spec);
std::map<std::string, std::vector<int>> buffer_shapes(const NetworkSpec& spec);

/// Fresh state: He-normal weights (std sqrt(2 / fan_in)) except the logit
/// layer (std 0.01), zero biases,
/// BN gamma 1, beta 0, running mean 0, running var 1.
ModelState init_state(const NetworkSpec& spec, std::uint64_t seed);
/// He-normal initialization for the tensors of a single layer.
void init_layer(const LayerSpec& layer, ModelState& state, std::uint64_t seed);

/// Throws ShapeError when a tensor is missing or shaped differently from spec.
void validate_state(const NetworkSpec& spec, const ModelState& state);

enum class Mode { kTrain, kEval, kBnCalibrate };

struct TrainConfig {
  int epochs = 1;
  int batch_size = 64;
  double lr_init = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
};

inline constexpr float kBnMomentum = 0.1f;
inline constexpr float kBnEps = 1e-5f;

/// Cosine decay from lr_init at step 0 to 0 at step total_steps.
double cosine_lr(double lr_init, std::int64_t step, std::int64_t total_steps);

struct LabeledData {
  Tensor images;  // (N, C, H, W)
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  /// Copies the listed samples into a batch tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
  LabeledData subset(std::span<const std::size_t> indices) const;
};

/// Forward pass. Train mode normalizes with batch statistics and updates the
/// running statistics; eval uses running statistics; bn_calibrate normalizes
/// and updates like train but never touches trainable tensors and keeps no
/// autograd caches.
Tensor forward(const NetworkSpec& spec, ModelState& state, const Tensor& batch, Mode mode);

struct Gradients {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};

/// Mean softmax cross-entropy and its gradient with respect to every
/// trainable tensor, using train-mode batch statistics. Running statistics
/// are updated only when `update_running` is set.
Gradients compute_gradients(const NetworkSpec& spec, ModelState& state, const Tensor& batch,
                            std::span<const int> labels, bool update_running = false);

float softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// One SGD step with momentum and weight decay at the cosine rate for
/// `step` of `total_steps`. Returns the batch loss before the update.
float backward_and_step(const NetworkSpec& spec, ModelState& state, const Tensor& batch,
                        std::span<const int> labels, const TrainConfig& cfg, std::int64_t step,
                        std::int64_t total_steps);

struct TrainResult {
  float final_loss = 0.0f;
  std::vector<float> epoch_losses;
  std::int64_t steps = 0;
};

/// Called after every epoch with the 1-based epoch number.
using EpochHook = std::function<void(int epoch, const ModelState& state)>;

/// Shuffled mini-batch epochs; batch order is a function of cfg.seed.
TrainResult train(const NetworkSpec& spec, ModelState& state, const LabeledData& data,
                  const TrainConfig& cfg, const EpochHook& on_epoch = {});

/// Top-1 accuracy in eval mode.
double evaluate(const NetworkSpec& spec, const ModelState& state, const LabeledData& data);

struct FitResult {
  double accuracy = 0.0;
  bool diverged = false;
};

/// Trains, then evaluates on `val`. If the loss or the logits become
/// non-finite, the state is restored to its value on entry and the result is
/// accuracy 0 with `diverged` set.
FitResult train_and_evaluate(const NetworkSpec& spec, ModelState& state, const LabeledData& train_set,
                             const LabeledData& val, const TrainConfig& cfg);
/// Eval-mode logits for all samples, (N, classes).
Tensor predict_logits(const NetworkSpec& spec, const ModelState& state, const LabeledData& data);

/// Versioned binary checkpoint ("UENW").
void save_state(const std::filesystem::path& path, const ModelState& state);
ModelState load_state(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_state(const ModelState& state);
ModelState deserialize_state(std::span<const std::uint8_t> bytes);

}  // namespace jointnas
