// Copyright 2026 The pcdarts Authors.
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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcdarts/core/tensor.hpp"

namespace pcdarts {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images stored normalised, NCHW, one float per element.
struct Dataset {
  std::string name;
  std::size_t channels = 3, height = 0, width = 0;
  std::size_t classes = 0;
  std::vector<float> images;
  std::vector<int> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t image_size() const { return channels * height * width; }
  const float* image(std::size_t i) const { return images.data() + i * image_size(); }
};

/// Per-channel normalisation applied to [0,1]-scaled pixels.
struct Normalization {
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> stddev{0.2470, 0.2435, 0.2616};
};

inline constexpr std::size_t kCifarRecord = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

/// Parses CIFAR-10 binary records from a byte buffer and appends them to `ds`.
/// `source` names the buffer in error messages.
inline void parse_cifar10(const std::vector<unsigned char>& bytes, const std::string& source,
                          const Normalization& norm, Dataset& ds) {
  const std::size_t whole = bytes.size() / kCifarRecord;
  if (bytes.size() % kCifarRecord != 0) {
    throw DataError("cifar10: " + source + ": incomplete record at byte offset " +
                    std::to_string(whole * kCifarRecord) + " (file has " +
                    std::to_string(bytes.size()) + " bytes, records are " +
                    std::to_string(kCifarRecord) + " bytes)");
  }
  ds.images.reserve(ds.images.size() + whole * kCifarPixels);
  for (std::size_t r = 0; r < whole; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] >= 10) {
      throw DataError("cifar10: " + source + ": record " + std::to_string(r) + " has label " +
                      std::to_string(rec[0]) + " (must be < 10)");
    }
    ds.labels.push_back(rec[0]);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p) {
        const double v = rec[1 + c * 1024 + p] / 255.0;
        ds.images.push_back(static_cast<float>((v - norm.mean[c]) / norm.stddev[c]));
      }
  }
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Dataset empty_cifar(const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.classes = 10;
  return ds;
}

inline Dataset read_cifar10_file(const std::filesystem::path& file, const Normalization& norm = {}) {
  Dataset ds = empty_cifar(file.filename().string());
  parse_cifar10(read_bytes(file), file.string(), norm, ds);
  if (ds.count() == 0) throw DataError("cifar10: '" + file.string() + "' holds no records");
  return ds;
}

/// Reads data_batch_1..5.bin (train) or test_batch.bin from the
/// binary-version directory.
inline Dataset read_cifar10(const std::filesystem::path& dir, const Normalization& norm = {},
                            bool train = true) {
  Dataset ds = empty_cifar(train ? "cifar10-train" : "cifar10-test");
  std::vector<std::string> files;
  if (train) {
    for (int b = 1; b <= 5; ++b) files.push_back("data_batch_" + std::to_string(b) + ".bin");
  } else {
    files.push_back("test_batch.bin");
  }
  for (const auto& f : files) {
    const auto path = dir / f;
    if (!std::filesystem::exists(path))
      throw DataError("cifar10: missing batch file '" + path.string() + "'");
    parse_cifar10(read_bytes(path), path.string(), norm, ds);
  }
  return ds;
}

struct SyntheticSpec {
  std::size_t classes = 2;
  std::size_t resolution = 8;
  std::size_t channels = 3;
  std::size_t count = 2000;
  double noise = 0.5;
  std::uint64_t seed = 0;
};

/// Class template: a sinusoidal grating whose orientation is set by the
/// class, with a per-channel phase offset.
inline std::vector<float> synthetic_template(const SyntheticSpec& spec, std::size_t cls) {
  const double theta = std::numbers::pi * static_cast<double>(cls) / static_cast<double>(spec.classes);
  const double freq = 2.0 / static_cast<double>(spec.resolution);
  std::vector<float> t(spec.channels * spec.resolution * spec.resolution);
  for (std::size_t c = 0; c < spec.channels; ++c)
    for (std::size_t y = 0; y < spec.resolution; ++y)
      for (std::size_t x = 0; x < spec.resolution; ++x) {
        const double u = std::cos(theta) * x + std::sin(theta) * y;
        const double phase = 0.5 * static_cast<double>(c);
        t[(c * spec.resolution + y) * spec.resolution + x] =
            static_cast<float>(std::sin(2 * std::numbers::pi * freq * u + phase));
      }
  return t;
}

/// Oriented gratings plus Gaussian noise; labels cycle through the classes so
/// the histogram is balanced within one.
inline Dataset make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes == 0 || spec.count < spec.classes)
    throw std::invalid_argument("synthetic: count must be >= classes >= 1");
  if (spec.resolution == 0 || spec.channels == 0)
    throw std::invalid_argument("synthetic: resolution and channels must be positive");
  Dataset ds;
  ds.name = "synthetic";
  ds.channels = spec.channels;
  ds.height = ds.width = spec.resolution;
  ds.classes = spec.classes;
  std::vector<std::vector<float>> templates;
  for (std::size_t c = 0; c < spec.classes; ++c) templates.push_back(synthetic_template(spec, c));
  std::mt19937_64 rng(spec.seed);
  std::vector<int> labels(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) labels[i] = static_cast<int>(i % spec.classes);
  std::shuffle(labels.begin(), labels.end(), rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  ds.images.reserve(spec.count * templates[0].size());
  for (int l : labels) {
    for (float v : templates[static_cast<std::size_t>(l)])
      ds.images.push_back(static_cast<float>(v + spec.noise * nd(rng)));
  }
  ds.labels = std::move(labels);
  return ds;
}

/// Disjoint equal halves: W trains the weights, A the architecture.
struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> w, a;
};

enum class Half { kW, kA };

/// Random equal halves; an odd trailing element is dropped.
inline SplitPlan split_half(std::size_t count, std::uint64_t seed) {
  if (count < 2) throw DataError("split: need at least 2 examples, got " + std::to_string(count));
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t half = count / 2;
  SplitPlan plan;
  plan.seed = seed;
  plan.w.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half));
  plan.a.assign(idx.begin() + static_cast<std::ptrdiff_t>(half),
                idx.begin() + static_cast<std::ptrdiff_t>(2 * half));
  return plan;
}

/// Index batches for one epoch of one half: shuffled with `epoch_seed`,
/// partial tail batch dropped.
inline std::vector<std::vector<std::size_t>> batches(const SplitPlan& plan, Half half,
                                                     std::size_t batch_size,
                                                     std::uint64_t epoch_seed) {
  const auto& members = half == Half::kW ? plan.w : plan.a;
  if (batch_size == 0) throw DataError("batches: batch size must be positive");
  if (batch_size > members.size()) {
    throw DataError("batches: batch size " + std::to_string(batch_size) +
                    " exceeds half size " + std::to_string(members.size()));
  }
  std::vector<std::size_t> order = members;
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s + batch_size <= order.size(); s += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(s + batch_size));
  return out;
}

struct AugmentOptions {
  bool enabled = false;
  std::size_t pad = 4;
  bool flip = true;
};

/// Gathers a batch into a tensor, optionally applying random crop (zero
/// padding) and horizontal flip.
template <class T, class Rng>
std::pair<Tensor<T>, std::vector<int>> make_batch(const Dataset& ds,
                                                  const std::vector<std::size_t>& idx,
                                                  const AugmentOptions& aug, Rng& rng) {
  const std::size_t C = ds.channels, H = ds.height, W = ds.width;
  Tensor<T> x = Tensor<T>::zeros({idx.size(), C, H, W});
  auto out = x.mutable_data();
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b) {
    if (idx[b] >= ds.count()) throw DataError("batch: index " + std::to_string(idx[b]) + " out of range");
    const float* src = ds.image(idx[b]);
    labels.push_back(ds.labels[idx[b]]);
    long dy = 0, dx = 0;
    bool flip = false;
    if (aug.enabled) {
      std::uniform_int_distribution<long> shift(-static_cast<long>(aug.pad), static_cast<long>(aug.pad));
      dy = shift(rng);
      dx = shift(rng);
      flip = aug.flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    }
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(flip ? W - 1 - xx : xx) + dx;
          if (sy < 0 || sx0 < 0 || sy >= static_cast<long>(H) || sx0 >= static_cast<long>(W)) continue;
          out[((b * C + c) * H + y) * W + xx] = static_cast<T>(src[(c * H + sy) * W + sx0]);
        }
  }
  return {x, labels};
}

}  // namespace pcdarts
