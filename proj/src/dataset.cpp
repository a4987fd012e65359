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

#include "jointnas/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace jointnas {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  std::vector<std::uint8_t> out{'U', 'E', 'D', 'S'};
  put_u32(out, kDatasetVersion);
  for (int v : {ds.n, ds.channels, ds.height, ds.width, ds.class_count}) put_u32(out, static_cast<std::uint32_t>(v));
  out.insert(out.end(), ds.pixels.begin(), ds.pixels.end());
  out.insert(out.end(), ds.labels.begin(), ds.labels.end());
  return out;
}

Dataset parse_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw ParseError("dataset truncated in magic at byte offset " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), "UEDS", 4) != 0) throw ParseError("bad dataset magic at byte offset 0");
  if (bytes.size() < kHeaderBytes) {
    throw ParseError("dataset truncated in header at byte offset " + std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kDatasetVersion) {
    throw ParseError("unsupported dataset version " + std::to_string(version) + " at byte offset 4");
  }
  Dataset ds;
  ds.n = static_cast<int>(get_u32(bytes, 8));
  ds.channels = static_cast<int>(get_u32(bytes, 12));
  ds.height = static_cast<int>(get_u32(bytes, 16));
  ds.width = static_cast<int>(get_u32(bytes, 20));
  ds.class_count = static_cast<int>(get_u32(bytes, 24));
  if (ds.n == 0) throw ParseError("empty dataset");
  if (ds.channels < 1 || ds.height < 1 || ds.width < 1) throw ParseError("invalid image dimensions at byte offset 12");
  if (ds.class_count < 1 || ds.class_count > 256) throw ParseError("invalid class_count at byte offset 24");
  const std::size_t pix = static_cast<std::size_t>(ds.n) * ds.image_bytes();
  const std::size_t need = kHeaderBytes + pix + static_cast<std::size_t>(ds.n);
  if (bytes.size() < need) {
    throw ParseError("dataset truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                     std::to_string(need) + " bytes)");
  }
  if (bytes.size() > need) throw ParseError("trailing bytes after dataset at byte offset " + std::to_string(need));
  ds.pixels.assign(bytes.begin() + kHeaderBytes, bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + pix));
  ds.labels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + pix), bytes.end());
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] >= ds.class_count) {
      throw ParseError("label out of range at byte offset " + std::to_string(kHeaderBytes + pix + i));
    }
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open dataset " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_dataset(bytes);
}

Dataset generate_synthetic(int classes, int per_class, int size, std::uint64_t seed) {
  if (size < 32) throw RangeError("synthetic image size must be >= 32 to survive 5 poolings");
  if (classes < 2 || classes > 256) throw RangeError("classes must be in [2, 256]");
  if (per_class < 1) throw RangeError("per_class must be >= 1");
  constexpr int kChannels = 3;
  constexpr double kPeriods[2] = {4.0, 8.0};
  const int orientations = (classes + 1) / 2;

  Dataset ds;
  ds.n = classes * per_class;
  ds.channels = kChannels;
  ds.height = ds.width = size;
  ds.class_count = classes;
  ds.pixels.resize(static_cast<std::size_t>(ds.n) * ds.image_bytes());
  ds.labels.resize(static_cast<std::size_t>(ds.n));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> tint(0.35, 1.0);
  std::uniform_real_distribution<double> amp(55.0, 85.0);
  std::normal_distribution<double> noise(0.0, 28.0);

  // Interleave classes so any prefix is roughly balanced.
  for (int i = 0; i < ds.n; ++i) {
    const int c = i % classes;
    const double theta = M_PI * static_cast<double>(c % orientations) / orientations;
    const double period = kPeriods[(c / orientations) % 2];
    const double kx = std::cos(theta) * 2.0 * M_PI / period;
    const double ky = std::sin(theta) * 2.0 * M_PI / period;
    const double ph = phase(rng);
    const double a = amp(rng);
    double t[kChannels];
    for (double& v : t) v = tint(rng);
    ds.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(c);
    std::uint8_t* img = ds.pixels.data() + static_cast<std::size_t>(i) * ds.image_bytes();
    for (int ch = 0; ch < kChannels; ++ch) {
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const double s = std::sin(kx * x + ky * y + ph);
          const double v = 128.0 + a * t[ch] * s + noise(rng);
          img[(static_cast<std::size_t>(ch) * size + y) * size + x] =
              static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    }
  }
  return ds;
}

Normalization compute_normalization(const Dataset& ds, std::span<const std::size_t> indices) {
  Normalization norm;
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  for (int ch = 0; ch < ds.channels; ++ch) {
    double s = 0.0, ss = 0.0;
    for (std::size_t idx : indices) {
      const std::uint8_t* p = ds.pixels.data() + idx * ds.image_bytes() + static_cast<std::size_t>(ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        const double v = p[q] / 255.0;
        s += v;
        ss += v * v;
      }
    }
    const double count = static_cast<double>(indices.size() * plane);
    const double mean = count > 0 ? s / count : 0.0;
    const double var = count > 0 ? std::max(ss / count - mean * mean, 0.0) : 1.0;
    norm.mean.push_back(static_cast<float>(mean));
    norm.stddev.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
  }
  return norm;
}

LabeledData to_labeled(const Dataset& ds, std::span<const std::size_t> indices, const Normalization& norm) {
  LabeledData out;
  out.num_classes = ds.class_count;
  out.images = Tensor({static_cast<int>(indices.size()), ds.channels, ds.height, ds.width});
  out.labels.resize(indices.size());
  const std::size_t plane = static_cast<std::size_t>(ds.height) * ds.width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t idx = indices[i];
    out.labels[i] = ds.labels[idx];
    const std::uint8_t* src = ds.pixels.data() + idx * ds.image_bytes();
    float* dst = out.images.ptr() + i * ds.image_bytes();
    for (int ch = 0; ch < ds.channels; ++ch) {
      const float m = norm.mean[static_cast<std::size_t>(ch)];
      const float inv = 1.0f / norm.stddev[static_cast<std::size_t>(ch)];
      for (std::size_t q = 0; q < plane; ++q) {
        const std::size_t o = static_cast<std::size_t>(ch) * plane + q;
        dst[o] = (static_cast<float>(src[o]) / 255.0f - m) * inv;
      }
    }
  }
  return out;
}

Split split_indices(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw RangeError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto nval = static_cast<std::size_t>(std::lround(static_cast<double>(n) * val_fraction));
  Split s;
  s.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nval));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(nval), order.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

}  // namespace jointnas
