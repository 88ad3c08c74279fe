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

// Flat binary container of named tensors.
//
//   "PCNT"            4 bytes magic
//   version           u32
//   count             u32
//   per tensor:
//     name_len        u32, followed by name_len bytes of UTF-8
//     rank            u32
//     extents         rank x u64
//     dtype           u8   (0 = float32, 1 = float64)
//     data            prod(extents) little-endian values
//
// All integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "pcdarts/core/tensor.hpp"

namespace pcdarts {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// A stored tensor, decoupled from the precision it was written in.
struct StoredTensor {
  Shape shape;
  DType dtype = DType::kFloat64;
  std::vector<double> values;

  template <class T>
  Tensor<T> as() const {
    std::vector<T> v(values.begin(), values.end());
    return Tensor<T>(shape, std::move(v));
  }
};

/// Ordered by name so serialisation is deterministic.
using NamedTensors = std::map<std::string, StoredTensor>;

template <class T>
StoredTensor store(const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  StoredTensor s;
  s.shape = t.shape();
  s.dtype = std::is_same_v<T, float> ? DType::kFloat32 : DType::kFloat64;
  s.values.assign(t.data().begin(), t.data().end());
  return s;
}

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <class U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    if (pos_ + sizeof(U) > bytes_.size()) {
      throw CheckpointError("checkpoint truncated reading " + std::string(what) +
                            " at byte " + std::to_string(pos_));
    }
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError("checkpoint truncated reading " + std::string(what) +
                            " at byte " + std::to_string(pos_));
    }
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const NamedTensors& tensors) {
  std::string out = "PCNT";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (shape_numel(t.shape) != t.values.size())
      throw CheckpointError("tensor '" + name + "' extents disagree with data");
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::put<std::uint64_t>(out, e);
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    if (t.dtype == DType::kFloat32) {
      for (double v : t.values) detail::put<float>(out, static_cast<float>(v));
    } else {
      for (double v : t.values) detail::put<double>(out, v);
    }
  }
  return out;
}

inline NamedTensors decode_checkpoint(const std::string& bytes) {
  detail::Reader in(bytes);
  if (in.bytes(4, "magic") != "PCNT")
    throw CheckpointError("not a PCNT checkpoint (bad magic)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const auto count = in.get<std::uint32_t>("tensor count");
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = in.get<std::uint32_t>("name length");
    std::string name = in.bytes(len, "name");
    StoredTensor t;
    const auto rank = in.get<std::uint32_t>("rank");
    for (std::uint32_t r = 0; r < rank; ++r)
      t.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>("extent")));
    const auto tag = in.get<std::uint8_t>("dtype");
    if (tag > 1)
      throw CheckpointError("tensor '" + name + "' has unknown dtype tag " +
                            std::to_string(tag));
    t.dtype = static_cast<DType>(tag);
    const std::size_t n = shape_numel(t.shape);
    t.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      t.values.push_back(t.dtype == DType::kFloat32
                             ? static_cast<double>(in.get<float>("data"))
                             : in.get<double>("data"));
    }
    if (!out.emplace(std::move(name), std::move(t)).second)
      throw CheckpointError("duplicate tensor name in checkpoint");
  }
  if (!in.done())
    throw CheckpointError("trailing bytes after checkpoint at byte " +
                          std::to_string(in.pos()));
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const NamedTensors& tensors) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_checkpoint(tensors);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed for " + path.string());
}

inline NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pcdarts
