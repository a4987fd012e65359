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

// ModelState checkpoints:
//   "UENW" | version u32 | tensor count u32 |
//   per tensor: name length u16, UTF-8 name, rank u8, dims u32..., f32 data
// All integers and floats little-endian. Running BN statistics are ordinary
// named tensors (suffix .mean / .var).

#include <bit>
#include <cstring>
#include <fstream>

#include "jointnas/tensorkit.hpp"

namespace jointnas {

namespace {

constexpr std::uint32_t kStateVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

bool is_buffer_name(const std::string& name) {
  auto ends_with = [&](std::string_view suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends_with(".mean") || ends_with(".var");
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw ParseError(std::string("checkpoint truncated reading ") + what + " at byte offset " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_state(const ModelState& state) {
  std::vector<std::uint8_t> out{'U', 'E', 'N', 'W'};
  put<std::uint32_t>(out, kStateVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(state.params.size() + state.buffers.size()));
  for (const auto* group : {&state.params, &state.buffers}) {
    for (const auto& [name, t] : *group) {
      put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
      for (int d : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
      out.insert(out.end(), p, p + t.data.size() * sizeof(float));
    }
  }
  return out;
}

ModelState deserialize_state(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, "UENW", 4) != 0) throw ParseError("bad checkpoint magic at byte offset 0");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kStateVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + " at byte offset 4");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  ModelState st;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name(len, '\0');
    r.read(name.data(), len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Tensor t;
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(static_cast<int>(r.get<std::uint32_t>("dims")));
    t.data.resize(shape_numel(t.shape));
    r.read(t.data.data(), t.data.size() * sizeof(float), "tensor data");
    (is_buffer_name(name) ? st.buffers : st.params)[name] = std::move(t);
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint at byte offset " + std::to_string(r.pos()));
  return st;
}

void save_state(const std::filesystem::path& path, const ModelState& state) {
  const auto bytes = serialize_state(state);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

ModelState load_state(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_state(bytes);
}

}  // namespace jointnas
