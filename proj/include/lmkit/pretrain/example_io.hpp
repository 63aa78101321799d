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

// Example files.
//
// Line-delimited JSON, one object per example, keys in this order:
//   {"ids":[...],"segment_ids":[...],"masked_positions":[...],
//    "masked_labels":[...],"is_next":true,"word_ids":[...]}
//
// Fixed-width binary, all integers little-endian:
//   header   char[8] "LMKPRE01"
//            u32 version (1), u32 max_len, u32 max_predictions, u32 0
//            u64 record count
//   record   u16 length, u8 is_next, u8 0, u16 num_masked, u16 0
//            u32 ids[max_len]               (zero padded = [PAD])
//            u8  segment_ids[max_len]
//            u16 masked_positions[max_predictions]
//            u32 masked_labels[max_predictions]
// Word ids are not stored in the binary form.

#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmkit/core/error.hpp"
#include "lmkit/pretrain/examples.hpp"

namespace lmkit::pretrain {

inline void write_jsonl(std::ostream& out, const std::vector<PretrainExample>& examples) {
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["ids"] = ex.ids;
    j["segment_ids"] = ex.segment_ids;
    j["masked_positions"] = ex.masked_positions;
    j["masked_labels"] = ex.masked_labels;
    j["is_next"] = ex.is_next;
    j["word_ids"] = ex.word_ids;
    out << j.dump() << '\n';
  }
}

inline std::vector<PretrainExample> read_jsonl(std::istream& in) {
  std::vector<PretrainExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PretrainExample ex;
      j.at("ids").get_to(ex.ids);
      j.at("segment_ids").get_to(ex.segment_ids);
      j.at("masked_positions").get_to(ex.masked_positions);
      j.at("masked_labels").get_to(ex.masked_labels);
      j.at("is_next").get_to(ex.is_next);
      if (j.contains("word_ids")) j.at("word_ids").get_to(ex.word_ids);
      if (ex.ids.size() != ex.segment_ids.size() ||
          ex.masked_positions.size() != ex.masked_labels.size()) {
        throw DataError("inconsistent field lengths");
      }
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("examples line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("examples line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> b;
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> b;
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("examples: truncated binary file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline constexpr char kBinaryMagic[8] = {'L', 'M', 'K', 'P', 'R', 'E', '0', '1'};

inline void write_binary(std::ostream& out, const std::vector<PretrainExample>& examples,
                         std::uint32_t max_len) {
  std::uint32_t max_pred = 0;
  for (const auto& ex : examples) {
    if (ex.ids.size() > max_len) throw ConfigError("write_binary: example longer than max_len");
    max_pred = std::max<std::uint32_t>(max_pred, ex.masked_positions.size());
  }
  out.write(kBinaryMagic, 8);
  detail::put_le<std::uint32_t>(out, 1);
  detail::put_le<std::uint32_t>(out, max_len);
  detail::put_le<std::uint32_t>(out, max_pred);
  detail::put_le<std::uint32_t>(out, 0);
  detail::put_le<std::uint64_t>(out, examples.size());
  for (const auto& ex : examples) {
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(ex.ids.size()));
    detail::put_le<std::uint8_t>(out, ex.is_next ? 1 : 0);
    detail::put_le<std::uint8_t>(out, 0);
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(ex.masked_positions.size()));
    detail::put_le<std::uint16_t>(out, 0);
    for (std::uint32_t i = 0; i < max_len; ++i) {
      detail::put_le<std::uint32_t>(out, i < ex.ids.size() ? ex.ids[i] : 0);
    }
    for (std::uint32_t i = 0; i < max_len; ++i) {
      detail::put_le<std::uint8_t>(out, i < ex.segment_ids.size() ? ex.segment_ids[i] : 0);
    }
    for (std::uint32_t i = 0; i < max_pred; ++i) {
      detail::put_le<std::uint16_t>(
          out, i < ex.masked_positions.size() ? ex.masked_positions[i] : 0);
    }
    for (std::uint32_t i = 0; i < max_pred; ++i) {
      detail::put_le<std::uint32_t>(out, i < ex.masked_labels.size() ? ex.masked_labels[i] : 0);
    }
  }
}

inline std::vector<PretrainExample> read_binary(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kBinaryMagic)) {
    throw DataError("examples: bad binary magic");
  }
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != 1) throw DataError("examples: unsupported binary version");
  const auto max_len = detail::get_le<std::uint32_t>(in);
  const auto max_pred = detail::get_le<std::uint32_t>(in);
  detail::get_le<std::uint32_t>(in);
  const auto count = detail::get_le<std::uint64_t>(in);
  std::vector<PretrainExample> out;
  for (std::uint64_t r = 0; r < count; ++r) {
    PretrainExample ex;
    const auto len = detail::get_le<std::uint16_t>(in);
    ex.is_next = detail::get_le<std::uint8_t>(in) != 0;
    detail::get_le<std::uint8_t>(in);
    const auto nm = detail::get_le<std::uint16_t>(in);
    detail::get_le<std::uint16_t>(in);
    if (len > max_len || nm > max_pred) throw DataError("examples: corrupt record");
    for (std::uint32_t i = 0; i < max_len; ++i) {
      const auto v = detail::get_le<std::uint32_t>(in);
      if (i < len) ex.ids.push_back(static_cast<int>(v));
    }
    for (std::uint32_t i = 0; i < max_len; ++i) {
      const auto v = detail::get_le<std::uint8_t>(in);
      if (i < len) ex.segment_ids.push_back(v);
    }
    for (std::uint32_t i = 0; i < max_pred; ++i) {
      const auto v = detail::get_le<std::uint16_t>(in);
      if (i < nm) ex.masked_positions.push_back(v);
    }
    for (std::uint32_t i = 0; i < max_pred; ++i) {
      const auto v = detail::get_le<std::uint32_t>(in);
      if (i < nm) ex.masked_labels.push_back(static_cast<int>(v));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace lmkit::pretrain
