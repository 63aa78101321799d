// Copyright 2026 The lmkit Authors.
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

// Named-tensor container used for checkpoints and model files.
//
//   char[8]  "LMKTENS1"
//   u32      format version (1)
//   u64      manifest length, then that many bytes of JSON
//   u32      tensor count
//   per tensor:
//     u32 name length, name bytes, u32 rows, u32 cols,
//     rows*cols IEEE float32 values, row-major
// Integers and floats are little-endian.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/nn/graph.hpp"

namespace lmkit::nn {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

struct TensorFile {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::object();
  std::vector<std::string> order;  // insertion order of names
  std::map<std::string, Mat<float>> tensors;

  void put(const std::string& name, const Mat<float>& m) {
    if (!tensors.count(name)) order.push_back(name);
    tensors[name] = m;
  }

  const Mat<float>& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("tensor file: missing tensor '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

inline constexpr char kTensorMagic[8] = {'L', 'M', 'K', 'T', 'E', 'N', 'S', '1'};

namespace detail {

template <class U>
void write_pod(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_pod(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw DataError("tensor file: truncated");
  return v;
}

}  // namespace detail

inline void write_tensor_file(std::ostream& out, const TensorFile& f) {
  out.write(kTensorMagic, 8);
  detail::write_pod<std::uint32_t>(out, 1);
  const std::string m = f.manifest.dump();
  detail::write_pod<std::uint64_t>(out, m.size());
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(f.order.size()));
  for (const auto& name : f.order) {
    const auto& t = f.tensors.at(name);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows()));
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw DataError("tensor file: write failed");
}

inline TensorFile read_tensor_file(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kTensorMagic, 8) != 0) throw DataError("tensor file: bad magic");
  if (detail::read_pod<std::uint32_t>(in) != 1) throw DataError("tensor file: unsupported version");
  TensorFile f;
  const auto mlen = detail::read_pod<std::uint64_t>(in);
  if (mlen > (1u << 30)) throw DataError("tensor file: manifest too large");
  std::string m(mlen, '\0');
  in.read(m.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw DataError("tensor file: truncated manifest");
  try {
    f.manifest = nlohmann::ordered_json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("tensor file: bad manifest: ") + e.what());
  }
  const auto count = detail::read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::read_pod<std::uint32_t>(in);
    if (nlen > 4096) throw DataError("tensor file: bad tensor name");
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto rows = detail::read_pod<std::uint32_t>(in);
    const auto cols = detail::read_pod<std::uint32_t>(in);
    Mat<float> t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw DataError("tensor file: truncated tensor '" + name + "'");
    f.put(name, t);
  }
  return f;
}

inline void save_tensor_file(const std::string& path, const TensorFile& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  write_tensor_file(out, f);
}

inline TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  return read_tensor_file(in);
}

// Copies a stored tensor into a parameter, checking its shape.
inline void restore(Parameter<float>& p, const TensorFile& f, const std::string& prefix = "") {
  const auto& t = f.get(prefix + p.name);
  if (t.rows() != p.value.rows() || t.cols() != p.value.cols()) {
    throw DataError("tensor file: shape mismatch for '" + p.name + "'");
  }
  p.value = t;
  p.zero_grad();
}

}  // namespace lmkit::nn
