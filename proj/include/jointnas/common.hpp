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

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace jointnas {

// Error hierarchy. Every failure surfaced by the library derives from Error so
// callers can catch one type at the boundary (the CLI does exactly that).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class BuildError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a base seed and a path of tags.
// All randomness in a run flows from (run seed, purpose, indices), never from
// a shared generator, so results do not depend on evaluation order.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return mix64(base ^ mix64(hash_tag(tag)));
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::uint64_t index, Rest... rest) {
  std::uint64_t s = mix64(derive_seed(base, tag) + mix64(index));
  if constexpr (sizeof...(rest) == 0) {
    return s;
  } else {
    return derive_seed(s, rest...);
  }
}

// Channel count after applying a keep-rate: round-half-up, floor 1. Shared by
// network construction and weight slicing so both always agree.
inline int scaled_channels(int base, double rate) {
  const long v = static_cast<long>(std::floor(static_cast<double>(base) * rate + 0.5));
  return v < 1 ? 1 : static_cast<int>(v);
}

}  // namespace jointnas
