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

#include "jointnas/tensorkit.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

namespace jointnas {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tensor::Tensor(std::vector<int> dims, float fill) : shape(std::move(dims)), data(shape_numel(shape), fill) {}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

double cosine_lr(double lr_init, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return lr_init;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return lr_init * 0.5 * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// State construction

std::map<std::string, std::vector<int>> param_shapes(const NetworkSpec& spec) {
  std::map<std::string, std::vector<int>> out;
  for (const auto& l : spec.layers) {
    const std::string k = l.key();
    switch (l.role) {
      case LayerRole::kConv:
        out[k + ".w"] = {l.out_channels, l.in_channels, l.kernel, l.kernel};
        out[k + ".b"] = {l.out_channels};
        out[k + ".gamma"] = {l.out_channels};
        out[k + ".beta"] = {l.out_channels};
        break;
      case LayerRole::kShortcutConv1x1:
        out[k + ".w"] = {l.out_channels, l.in_channels, 1, 1};
        out[k + ".b"] = {l.out_channels};
        break;
      case LayerRole::kFc:
        out[k + ".w"] = {l.out_channels, l.in_channels};
        out[k + ".b"] = {l.out_channels};
        break;
      case LayerRole::kMaxPool:
      case LayerRole::kShortcutIdentity:
        break;
    }
  }
  return out;
}

std::map<std::string, std::vector<int>> buffer_shapes(const NetworkSpec& spec) {
  std::map<std::string, std::vector<int>> out;
  for (const auto& l : spec.layers) {
    if (l.role != LayerRole::kConv) continue;
    out[l.key() + ".mean"] = {l.out_channels};
    out[l.key() + ".var"] = {l.out_channels};
  }
  return out;
}

void init_layer(const LayerSpec& l, ModelState& state, std::uint64_t seed) {
  const std::string k = l.key();
  std::mt19937_64 rng(derive_seed(seed, k));
  auto he = [&](std::vector<int> shape, int fan_in) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(std::max(fan_in, 1))));
    for (auto& v : t.data) v = dist(rng);
    return t;
  };
  switch (l.role) {
    case LayerRole::kConv:
      state.params[k + ".w"] = he({l.out_channels, l.in_channels, l.kernel, l.kernel},
                                  l.in_channels * l.kernel * l.kernel);
      state.params[k + ".b"] = Tensor({l.out_channels});
      state.params[k + ".gamma"] = Tensor({l.out_channels}, 1.0f);
      state.params[k + ".beta"] = Tensor({l.out_channels});
      state.buffers[k + ".mean"] = Tensor({l.out_channels});
      state.buffers[k + ".var"] = Tensor({l.out_channels}, 1.0f);
      break;
    case LayerRole::kShortcutConv1x1:
      state.params[k + ".w"] = he({l.out_channels, l.in_channels, 1, 1}, l.in_channels);
      state.params[k + ".b"] = Tensor({l.out_channels});
      break;
    case LayerRole::kFc:
      if (l.slot_index < 0) {
        // Logit layer: small init keeps the initial loss near log(classes)
        // even when shortcut sums inflate the flattened features.
        Tensor w({l.out_channels, l.in_channels});
        std::normal_distribution<float> dist(0.0f, 0.01f);
        for (auto& v : w.data) v = dist(rng);
        state.params[k + ".w"] = std::move(w);
      } else {
        state.params[k + ".w"] = he({l.out_channels, l.in_channels}, l.in_channels);
      }
      state.params[k + ".b"] = Tensor({l.out_channels});
      break;
    case LayerRole::kMaxPool:
    case LayerRole::kShortcutIdentity:
      break;
  }
}

ModelState init_state(const NetworkSpec& spec, std::uint64_t seed) {
  ModelState st;
  for (const auto& l : spec.layers) init_layer(l, st, seed);
  return st;
}

void validate_state(const NetworkSpec& spec, const ModelState& state) {
  auto check = [](const std::map<std::string, std::vector<int>>& want,
                  const std::map<std::string, Tensor>& have, const char* what) {
    if (want.size() != have.size()) {
      throw ShapeError(std::string(what) + " count " + std::to_string(have.size()) + " != expected " +
                       std::to_string(want.size()));
    }
    for (const auto& [name, shape] : want) {
      auto it = have.find(name);
      if (it == have.end()) throw ShapeError(std::string("missing tensor '") + name + "'");
      if (it->second.shape != shape || it->second.numel() != shape_numel(shape)) {
        throw ShapeError(std::string("tensor '") + name + "' has the wrong shape");
      }
    }
  };
  check(param_shapes(spec), state.params, "parameter");
  check(buffer_shapes(spec), state.buffers, "buffer");
}

// ---------------------------------------------------------------------------
// Data

Tensor LabeledData::gather(std::span<const std::size_t> indices) const {
  std::vector<int> shape = images.shape;
  shape[0] = static_cast<int>(indices.size());
  Tensor out(shape);
  const std::size_t per = shape_numel(images.shape) / static_cast<std::size_t>(images.shape[0]);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::memcpy(out.ptr() + i * per, images.ptr() + indices[i] * per, per * sizeof(float));
  }
  return out;
}

std::vector<int> LabeledData::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels[indices[i]];
  return out;
}

LabeledData LabeledData::subset(std::span<const std::size_t> indices) const {
  return {gather(indices), gather_labels(indices), num_classes};
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

constexpr std::size_t kColumnBudget = std::size_t{1} << 18;  // floats per im2col chunk

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, ho, wo;
  int rows() const { return cin * k * k; }
  int plane_out() const { return ho * wo; }
};

ConvGeom conv_geom(const LayerSpec& l) {
  if (l.role == LayerRole::kShortcutConv1x1) {
    return {l.in_channels, l.in_spatial, l.in_spatial, l.out_channels, 1, l.stride, 0, l.out_spatial, l.out_spatial};
  }
  return {l.in_channels, l.in_spatial, l.in_spatial, l.out_channels, l.kernel, 1, l.kernel / 2,
          l.out_spatial, l.out_spatial};
}

int chunk_samples(const ConvGeom& g, int n) {
  const std::size_t per = static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(g.plane_out());
  return std::clamp(static_cast<int>(kColumnBudget / std::max<std::size_t>(per, 1)), 1, n);
}

void im2col(const float* x, int nb, const ConvGeom& g, float* cols) {
  const int m = nb * g.plane_out();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* dst = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * static_cast<std::size_t>(m);
        // valid output columns: 0 <= ox*stride + kx - pad < w
        int ox_lo = 0;
        while (ox_lo < g.wo && ox_lo * g.stride + kx - g.pad < 0) ++ox_lo;
        int ox_hi = g.wo;
        while (ox_hi > ox_lo && (ox_hi - 1) * g.stride + kx - g.pad >= g.w) --ox_hi;
        for (int n = 0; n < nb; ++n) {
          const float* src = x + (static_cast<std::size_t>(n) * g.cin + c) * g.h * g.w;
          float* d0 = dst + static_cast<std::size_t>(n) * g.plane_out();
          for (int oy = 0; oy < g.ho; ++oy) {
            float* d = d0 + oy * g.wo;
            const int iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.h) {
              std::fill(d, d + g.wo, 0.0f);
              continue;
            }
            std::fill(d, d + ox_lo, 0.0f);
            std::fill(d + ox_hi, d + g.wo, 0.0f);
            const float* s = src + iy * g.w + kx - g.pad;
            if (g.stride == 1) {
              if (ox_hi > ox_lo) std::memcpy(d + ox_lo, s + ox_lo, static_cast<std::size_t>(ox_hi - ox_lo) * sizeof(float));
            } else {
              for (int ox = ox_lo; ox < ox_hi; ++ox) d[ox] = s[ox * g.stride];
            }
          }
        }
      }
    }
  }
}

void col2im(const float* cols, int nb, const ConvGeom& g, float* dx) {
  const int m = nb * g.plane_out();
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* src_row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * static_cast<std::size_t>(m);
        int ox_lo = 0;
        while (ox_lo < g.wo && ox_lo * g.stride + kx - g.pad < 0) ++ox_lo;
        int ox_hi = g.wo;
        while (ox_hi > ox_lo && (ox_hi - 1) * g.stride + kx - g.pad >= g.w) --ox_hi;
        for (int n = 0; n < nb; ++n) {
          float* dst = dx + (static_cast<std::size_t>(n) * g.cin + c) * g.h * g.w;
          const float* s0 = src_row + static_cast<std::size_t>(n) * g.plane_out();
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.h) continue;
            const float* s = s0 + oy * g.wo;
            float* d = dst + iy * g.w + kx - g.pad;
            for (int ox = ox_lo; ox < ox_hi; ++ox) d[ox * g.stride] += s[ox];
          }
        }
      }
    }
  }
}

// y (N, cout, ho, wo) = conv(x) + b
void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeom& g, Tensor& y) {
  const int n = x.dim(0);
  y = Tensor({n, g.cout, g.ho, g.wo});
  const int nb_max = chunk_samples(g, n);
  std::vector<float> cols(static_cast<std::size_t>(g.rows()) * static_cast<std::size_t>(nb_max) * g.plane_out());
  RowMat out;
  CMapMat wm(w.ptr(), g.cout, g.rows());
  const std::size_t in_per = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_per = static_cast<std::size_t>(g.cout) * g.plane_out();
  for (int n0 = 0; n0 < n; n0 += nb_max) {
    const int nb = std::min(nb_max, n - n0);
    const int m = nb * g.plane_out();
    im2col(x.ptr() + static_cast<std::size_t>(n0) * in_per, nb, g, cols.data());
    CMapMat cm(cols.data(), g.rows(), m);
    out.noalias() = wm * cm;
    for (int i = 0; i < nb; ++i) {
      float* dst = y.ptr() + static_cast<std::size_t>(n0 + i) * out_per;
      for (int co = 0; co < g.cout; ++co) {
        const float* src = out.data() + static_cast<std::size_t>(co) * m + static_cast<std::size_t>(i) * g.plane_out();
        const float bias = b.data[static_cast<std::size_t>(co)];
        float* d = dst + static_cast<std::size_t>(co) * g.plane_out();
        for (int p = 0; p < g.plane_out(); ++p) d[p] = src[p] + bias;
      }
    }
  }
}

// Accumulates dw, db; writes dx when requested.
void conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, const ConvGeom& g, Tensor& dw, Tensor& db,
                   Tensor* dx) {
  const int n = x.dim(0);
  const int nb_max = chunk_samples(g, n);
  const std::size_t rows = static_cast<std::size_t>(g.rows());
  std::vector<float> cols(rows * static_cast<std::size_t>(nb_max) * g.plane_out());
  std::vector<float> dcols(dx ? cols.size() : 0);
  RowMat dym;
  CMapMat wm(w.ptr(), g.cout, g.rows());
  MapMat dwm(dw.ptr(), g.cout, g.rows());
  if (dx) *dx = Tensor(x.shape);
  const std::size_t in_per = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_per = static_cast<std::size_t>(g.cout) * g.plane_out();
  for (int n0 = 0; n0 < n; n0 += nb_max) {
    const int nb = std::min(nb_max, n - n0);
    const int m = nb * g.plane_out();
    dym.resize(g.cout, m);
    for (int i = 0; i < nb; ++i) {
      const float* src = dy.ptr() + static_cast<std::size_t>(n0 + i) * out_per;
      for (int co = 0; co < g.cout; ++co) {
        std::memcpy(dym.data() + static_cast<std::size_t>(co) * m + static_cast<std::size_t>(i) * g.plane_out(),
                    src + static_cast<std::size_t>(co) * g.plane_out(), sizeof(float) * g.plane_out());
      }
    }
    im2col(x.ptr() + static_cast<std::size_t>(n0) * in_per, nb, g, cols.data());
    CMapMat cm(cols.data(), g.rows(), m);
    dwm.noalias() += dym * cm.transpose();
    for (int co = 0; co < g.cout; ++co) db.data[static_cast<std::size_t>(co)] += dym.row(co).sum();
    if (dx) {
      MapMat dcm(dcols.data(), g.rows(), m);
      dcm.noalias() = wm.transpose() * dym;
      col2im(dcols.data(), nb, g, dx->ptr() + static_cast<std::size_t>(n0) * in_per);
    }
  }
}

struct LayerCache {
  Tensor input;  // conv/fc input
  Tensor xhat;   // BN normalized pre-activation
  std::vector<float> inv_std;
  Tensor out;    // post-activation output
  std::vector<int> argmax;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<Tensor> pooled;
};

const Tensor& get(const std::map<std::string, Tensor>& m, const std::string& name) {
  auto it = m.find(name);
  if (it == m.end()) throw ShapeError("missing tensor '" + name + "'");
  return it->second;
}

void check_shape(const Tensor& t, const std::vector<int>& want, std::size_t layer_index, const char* what) {
  if (t.shape != want) {
    throw ShapeError(std::string(what) + " shape mismatch at layer " + std::to_string(layer_index));
  }
}

// Batch norm + ReLU, in place on z. `running` receives statistic updates.
void bn_relu_forward(Tensor& z, const Tensor& gamma, const Tensor& beta, const Tensor& rmean, const Tensor& rvar,
                     Mode mode, Tensor* run_mean_out, Tensor* run_var_out, LayerCache* cache) {
  const int n = z.dim(0);
  const int c = z.dim(1);
  const std::size_t plane = z.numel() / (static_cast<std::size_t>(n) * c);
  const double count = static_cast<double>(n) * static_cast<double>(plane);
  if (cache) {
    cache->xhat = Tensor(z.shape);
    cache->inv_std.assign(static_cast<std::size_t>(c), 0.0f);
  }
  for (int ch = 0; ch < c; ++ch) {
    float mean;
    float inv;
    if (mode == Mode::kEval) {
      mean = rmean.data[static_cast<std::size_t>(ch)];
      inv = 1.0f / std::sqrt(rvar.data[static_cast<std::size_t>(ch)] + kBnEps);
    } else {
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = z.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) s += p[q];
      }
      const double mu = s / count;
      double ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* p = z.ptr() + (static_cast<std::size_t>(i) * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const double d = p[q] - mu;
          ss += d * d;
        }
      }
      const double var = ss / count;
      mean = static_cast<float>(mu);
      inv = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
      if (run_mean_out) {
        const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
        float& rm = run_mean_out->data[static_cast<std::size_t>(ch)];
        float& rv = run_var_out->data[static_cast<std::size_t>(ch)];
        rm = (1.0f - kBnMomentum) * rm + kBnMomentum * static_cast<float>(mu);
        rv = (1.0f - kBnMomentum) * rv + kBnMomentum * static_cast<float>(unbiased);
      }
    }
    const float gm = gamma.data[static_cast<std::size_t>(ch)];
    const float bt = beta.data[static_cast<std::size_t>(ch)];
    if (cache) cache->inv_std[static_cast<std::size_t>(ch)] = inv;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
      float* p = z.ptr() + off;
      float* xh = cache ? cache->xhat.ptr() + off : nullptr;
      for (std::size_t q = 0; q < plane; ++q) {
        const float x = (p[q] - mean) * inv;
        if (xh) xh[q] = x;
        const float y = gm * x + bt;
        p[q] = y > 0.0f ? y : 0.0f;
      }
    }
  }
}

void maxpool_forward(const Tensor& x, int out_size, Tensor& y, std::vector<int>* argmax) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  y = Tensor({n, c, out_size, out_size});
  if (argmax) argmax->assign(y.numel(), 0);
  for (int i = 0; i < n * c; ++i) {
    const float* src = x.ptr() + static_cast<std::size_t>(i) * h * w;
    float* dst = y.ptr() + static_cast<std::size_t>(i) * out_size * out_size;
    for (int oy = 0; oy < out_size; ++oy) {
      for (int ox = 0; ox < out_size; ++ox) {
        int best = (2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        dst[oy * out_size + ox] = src[best];
        if (argmax) (*argmax)[static_cast<std::size_t>(i) * out_size * out_size + oy * out_size + ox] = best;
      }
    }
  }
}

Tensor run_forward(const NetworkSpec& spec, const ModelState& st, const Tensor& batch, Mode mode,
                   ForwardCache* cache, ModelState* running) {
  if (batch.shape.size() != 4 || batch.dim(1) != spec.input_channels || batch.dim(2) != spec.input_size ||
      batch.dim(3) != spec.input_size) {
    throw ShapeError("input batch shape does not match network input at layer 0");
  }
  const int n = batch.dim(0);
  if (n < 1) throw ShapeError("empty batch at layer 0");
  const int num_stages = static_cast<int>(spec.stage_channels().size());
  std::vector<Tensor> pooled(static_cast<std::size_t>(num_stages));
  if (cache) cache->layers.assign(spec.layers.size(), {});
  Tensor cur = batch;
  bool flat = false;
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const LayerSpec& l = spec.layers[li];
    LayerCache* lc = cache ? &cache->layers[li] : nullptr;
    const std::string key = l.key();
    switch (l.role) {
      case LayerRole::kConv: {
        const ConvGeom g = conv_geom(l);
        if (cur.shape != std::vector<int>{n, g.cin, g.h, g.w}) {
          throw ShapeError("activation shape mismatch at layer " + std::to_string(li));
        }
        const Tensor& w = get(st.params, key + ".w");
        check_shape(w, {g.cout, g.cin, g.k, g.k}, li, "weight");
        Tensor z;
        conv_forward(cur, w, get(st.params, key + ".b"), g, z);
        Tensor* rm = running ? &running->buffers.at(key + ".mean") : nullptr;
        Tensor* rv = running ? &running->buffers.at(key + ".var") : nullptr;
        bn_relu_forward(z, get(st.params, key + ".gamma"), get(st.params, key + ".beta"),
                        get(st.buffers, key + ".mean"), get(st.buffers, key + ".var"), mode, rm, rv, lc);
        if (lc) {
          lc->input = std::move(cur);
          lc->out = z;
        }
        cur = std::move(z);
        break;
      }
      case LayerRole::kShortcutIdentity:
      case LayerRole::kShortcutConv1x1: {
        const Tensor& src = pooled.at(static_cast<std::size_t>(l.from_stage));
        if (l.role == LayerRole::kShortcutIdentity) {
          if (src.shape != cur.shape) throw ShapeError("identity shortcut shape mismatch at layer " + std::to_string(li));
          for (std::size_t i = 0; i < cur.numel(); ++i) cur.data[i] += src.data[i];
        } else {
          const ConvGeom g = conv_geom(l);
          const Tensor& w = get(st.params, key + ".w");
          check_shape(w, {g.cout, g.cin, 1, 1}, li, "weight");
          if (src.shape != std::vector<int>{n, g.cin, g.h, g.w}) {
            throw ShapeError("shortcut source shape mismatch at layer " + std::to_string(li));
          }
          Tensor s;
          conv_forward(src, w, get(st.params, key + ".b"), g, s);
          if (s.shape != cur.shape) throw ShapeError("shortcut output shape mismatch at layer " + std::to_string(li));
          for (std::size_t i = 0; i < cur.numel(); ++i) cur.data[i] += s.data[i];
        }
        break;
      }
      case LayerRole::kMaxPool: {
        Tensor y;
        maxpool_forward(cur, l.out_spatial, y, lc ? &lc->argmax : nullptr);
        if (lc) lc->input.shape = cur.shape;  // shape only
        pooled[static_cast<std::size_t>(l.stage_index)] = y;
        cur = std::move(y);
        break;
      }
      case LayerRole::kFc: {
        if (!flat) {
          cur.shape = {n, static_cast<int>(cur.numel() / static_cast<std::size_t>(n))};
          flat = true;
        }
        if (cur.dim(1) != l.in_channels) throw ShapeError("fc input width mismatch at layer " + std::to_string(li));
        const Tensor& w = get(st.params, key + ".w");
        check_shape(w, {l.out_channels, l.in_channels}, li, "weight");
        const Tensor& b = get(st.params, key + ".b");
        Tensor y({n, l.out_channels});
        MapMat ym(y.ptr(), n, l.out_channels);
        ym.noalias() = CMapMat(cur.ptr(), n, l.in_channels) * CMapMat(w.ptr(), l.out_channels, l.in_channels).transpose();
        const bool hidden = l.slot_index >= 0;
        for (int i = 0; i < n; ++i) {
          for (int o = 0; o < l.out_channels; ++o) {
            float& v = y.data[static_cast<std::size_t>(i) * l.out_channels + o];
            v += b.data[static_cast<std::size_t>(o)];
            if (hidden && v < 0.0f) v = 0.0f;
          }
        }
        if (lc) {
          lc->input = std::move(cur);
          lc->out = y;
        }
        cur = std::move(y);
        break;
      }
    }
  }
  for (float v : cur.data) {
    if (!std::isfinite(v)) throw NumericError("non-finite logits in forward pass");
  }
  if (cache) cache->pooled = std::move(pooled);
  return cur;
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.numel() == 0) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
}

// Gradients of the loss with respect to all trainable tensors, given dlogits.
void run_backward(const NetworkSpec& spec, const ModelState& st, ForwardCache& cache, Tensor g,
                  std::map<std::string, Tensor>& grads) {
  for (const auto& [name, t] : st.params) grads[name] = Tensor(t.shape);
  const int n = g.dim(0);
  std::vector<Tensor> pooled_grad(cache.pooled.size());
  Tensor stage_grad;  // gradient w.r.t. the pre-pool activation of the current stage
  for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
    const LayerSpec& l = spec.layers[ri];
    LayerCache& lc = cache.layers[ri];
    const std::string key = l.key();
    switch (l.role) {
      case LayerRole::kFc: {
        if (l.slot_index >= 0) {
          for (std::size_t i = 0; i < g.numel(); ++i) {
            if (lc.out.data[i] <= 0.0f) g.data[i] = 0.0f;
          }
        }
        CMapMat gm(g.ptr(), n, l.out_channels);
        CMapMat xm(lc.input.ptr(), n, l.in_channels);
        Tensor& dw = grads.at(key + ".w");
        MapMat(dw.ptr(), l.out_channels, l.in_channels).noalias() += gm.transpose() * xm;
        Tensor& db = grads.at(key + ".b");
        for (int o = 0; o < l.out_channels; ++o) db.data[static_cast<std::size_t>(o)] += gm.col(o).sum();
        Tensor gx({n, l.in_channels});
        MapMat(gx.ptr(), n, l.in_channels).noalias() =
            gm * CMapMat(get(st.params, key + ".w").ptr(), l.out_channels, l.in_channels);
        g = std::move(gx);
        break;
      }
      case LayerRole::kMaxPool: {
        const auto s = static_cast<std::size_t>(l.stage_index);
        const Tensor& pooled = cache.pooled[s];
        g.shape = pooled.shape;
        if (pooled_grad[s].numel() != 0) add_into(g, pooled_grad[s]);
        Tensor dx(lc.input.shape);
        const int c = pooled.dim(1);
        const std::size_t in_plane = static_cast<std::size_t>(l.in_spatial) * l.in_spatial;
        const std::size_t out_plane = static_cast<std::size_t>(l.out_spatial) * l.out_spatial;
        for (std::size_t i = 0; i < static_cast<std::size_t>(n) * c; ++i) {
          for (std::size_t q = 0; q < out_plane; ++q) {
            dx.data[i * in_plane + static_cast<std::size_t>(lc.argmax[i * out_plane + q])] += g.data[i * out_plane + q];
          }
        }
        g = std::move(dx);
        stage_grad = g;
        break;
      }
      case LayerRole::kShortcutIdentity: {
        add_into(pooled_grad[static_cast<std::size_t>(l.from_stage)], stage_grad);
        break;
      }
      case LayerRole::kShortcutConv1x1: {
        const ConvGeom geom = conv_geom(l);
        Tensor dsrc;
        conv_backward(cache.pooled[static_cast<std::size_t>(l.from_stage)], get(st.params, key + ".w"), stage_grad,
                      geom, grads.at(key + ".w"), grads.at(key + ".b"), &dsrc);
        add_into(pooled_grad[static_cast<std::size_t>(l.from_stage)], dsrc);
        break;
      }
      case LayerRole::kConv: {
        // ReLU, then BN, then conv.
        const int c = l.out_channels;
        const std::size_t plane = static_cast<std::size_t>(l.out_spatial) * l.out_spatial;
        const double count = static_cast<double>(n) * static_cast<double>(plane);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          if (lc.out.data[i] <= 0.0f) g.data[i] = 0.0f;
        }
        const Tensor& gamma = get(st.params, key + ".gamma");
        Tensor& dgamma = grads.at(key + ".gamma");
        Tensor& dbeta = grads.at(key + ".beta");
        for (int ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t q = 0; q < plane; ++q) {
              sum_dy += g.data[off + q];
              sum_dy_xhat += static_cast<double>(g.data[off + q]) * lc.xhat.data[off + q];
            }
          }
          dgamma.data[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy_xhat);
          dbeta.data[static_cast<std::size_t>(ch)] += static_cast<float>(sum_dy);
          const float gm = gamma.data[static_cast<std::size_t>(ch)];
          const float inv = lc.inv_std[static_cast<std::size_t>(ch)];
          const auto mean_dy = static_cast<float>(sum_dy / count);
          const auto mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
          for (int i = 0; i < n; ++i) {
            const std::size_t off = (static_cast<std::size_t>(i) * c + ch) * plane;
            for (std::size_t q = 0; q < plane; ++q) {
              g.data[off + q] = gm * inv * (g.data[off + q] - mean_dy - lc.xhat.data[off + q] * mean_dy_xhat);
            }
          }
        }
        const bool first = ri == 0;
        Tensor dx;
        conv_backward(lc.input, get(st.params, key + ".w"), g, conv_geom(l), grads.at(key + ".w"),
                      grads.at(key + ".b"), first ? nullptr : &dx);
        g = std::move(dx);
        break;
      }
    }
  }
}

std::vector<float> softmax_grad(const Tensor& logits, std::span<const int> labels, double& loss) {
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("label count does not match batch");
  std::vector<float> grad(logits.numel());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.ptr() + static_cast<std::size_t>(i) * k;
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ShapeError("label out of range");
    total += -(static_cast<double>(row[y] - mx) - std::log(z));
    for (int j = 0; j < k; ++j) {
      const double p = std::exp(static_cast<double>(row[j] - mx)) / z;
      grad[static_cast<std::size_t>(i) * k + j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / n);
    }
  }
  loss = total / n;
  return grad;
}

}  // namespace

Tensor forward(const NetworkSpec& spec, ModelState& state, const Tensor& batch, Mode mode) {
  return run_forward(spec, state, batch, mode, nullptr, mode == Mode::kEval ? nullptr : &state);
}

float softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  double loss = 0.0;
  softmax_grad(logits, labels, loss);
  return static_cast<float>(loss);
}

Gradients compute_gradients(const NetworkSpec& spec, ModelState& state, const Tensor& batch,
                            std::span<const int> labels, bool update_running) {
  ForwardCache cache;
  Tensor logits = run_forward(spec, state, batch, Mode::kTrain, &cache, update_running ? &state : nullptr);
  Gradients out;
  Tensor g(logits.shape);
  g.data = softmax_grad(logits, labels, out.loss);
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");
  run_backward(spec, state, cache, std::move(g), out.grads);
  return out;
}

float backward_and_step(const NetworkSpec& spec, ModelState& state, const Tensor& batch,
                        std::span<const int> labels, const TrainConfig& cfg, std::int64_t step,
                        std::int64_t total_steps) {
  Gradients gr = compute_gradients(spec, state, batch, labels, true);
  const auto lr = static_cast<float>(cosine_lr(cfg.lr_init, step, total_steps));
  const auto mom = static_cast<float>(cfg.momentum);
  const auto wd = static_cast<float>(cfg.weight_decay);
  for (auto& [name, w] : state.params) {
    const Tensor& g = gr.grads.at(name);
    Tensor& v = state.momentum[name];
    if (v.shape != w.shape) v = Tensor(w.shape);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const float gi = g.data[i] + wd * w.data[i];
      v.data[i] = mom * v.data[i] + gi;
      w.data[i] -= lr * v.data[i];
    }
  }
  return static_cast<float>(gr.loss);
}

TrainResult train(const NetworkSpec& spec, ModelState& state, const LabeledData& data, const TrainConfig& cfg,
                  const EpochHook& on_epoch) {
  if (cfg.epochs < 1) throw RangeError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw RangeError("batch_size must be >= 1");
  if (data.size() == 0) throw RangeError("empty dataset");
  validate_state(spec, state);
  state.momentum.clear();
  const std::size_t n = data.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  // A trailing batch of one sample carries no BN statistics; it is dropped.
  std::size_t per_epoch = n / bs + ((n % bs) >= 2 ? 1 : 0);
  if (per_epoch == 0) per_epoch = 1;
  const auto total = static_cast<std::int64_t>(per_epoch) * cfg.epochs;
  TrainResult res;
  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * bs;
      const std::size_t hi = std::min(n, lo + bs);
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      const Tensor x = data.gather(idx);
      const std::vector<int> y = data.gather_labels(idx);
      const float loss = backward_and_step(spec, state, x, y, cfg, step++, total);
      sum += loss;
      ++batches;
      res.final_loss = loss;
    }
    res.epoch_losses.push_back(static_cast<float>(sum / static_cast<double>(batches)));
    if (on_epoch) on_epoch(e + 1, state);
  }
  res.steps = step;
  return res;
}

FitResult train_and_evaluate(const NetworkSpec& spec, ModelState& state, const LabeledData& train_set,
                             const LabeledData& val, const TrainConfig& cfg) {
  const ModelState start = state;
  try {
    train(spec, state, train_set, cfg);
    return {evaluate(spec, state, val), false};
  } catch (const NumericError&) {
    state = start;
    return {0.0, true};
  }
}

Tensor predict_logits(const NetworkSpec& spec, const ModelState& state, const LabeledData& data) {
  if (data.size() == 0) throw RangeError("empty dataset");
  const std::size_t n = data.size();
  constexpr std::size_t kChunk = 256;
  Tensor all({static_cast<int>(n), spec.num_classes});
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < n; lo += kChunk) {
    const std::size_t hi = std::min(n, lo + kChunk);
    idx.resize(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const Tensor logits = run_forward(spec, state, data.gather(idx), Mode::kEval, nullptr, nullptr);
    std::copy(logits.data.begin(), logits.data.end(), all.data.begin() + static_cast<std::ptrdiff_t>(lo * spec.num_classes));
  }
  return all;
}

double evaluate(const NetworkSpec& spec, const ModelState& state, const LabeledData& data) {
  const Tensor logits = predict_logits(spec, state, data);
  const int k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float* row = logits.ptr() + i * static_cast<std::size_t>(k);
    const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
    if (pred == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace jointnas
