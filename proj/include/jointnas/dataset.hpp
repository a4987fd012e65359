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
#include <span>
#include <vector>

#include "jointnas/tensorkit.hpp"

namespace jointnas {

/// Raw u8 image dataset as stored on disk.
///
/// File layout (little-endian): "UEDS", version u32, N u32, C u32, H u32,
/// W u32, class_count u32, N*C*H*W pixel bytes, N label bytes.
struct Dataset {
  int n = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  int class_count = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t image_bytes() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Dataset&) const = default;
};

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
/// Throws ParseError naming the byte offset on bad magic, version or truncation.
Dataset parse_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

/// Oriented sinusoidal gratings. Class c picks one of ceil(classes/2)
/// orientations and one of two periods; every sample draws a uniform phase,
/// a random per-channel tint and Gaussian pixel noise. Because the phase is
/// uniform, every class has the same mean image, so a linear model on raw
/// pixels sits near chance while conv + ReLU + pooling recovers the
/// orientation/frequency energy.
Dataset generate_synthetic(int classes, int per_class, int size, std::uint64_t seed);

struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;
};

/// Per-channel statistics over the listed samples (pixels scaled to [0, 1]).
Normalization compute_normalization(const Dataset& ds, std::span<const std::size_t> indices);

/// Float tensor of the listed samples: (pixel / 255 - mean) / std.
LabeledData to_labeled(const Dataset& ds, std::span<const std::size_t> indices, const Normalization& norm);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Seeded random hold-out of round(n * val_fraction) samples for validation.
Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed);

}  // namespace jointnas
