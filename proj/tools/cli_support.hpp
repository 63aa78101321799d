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

// File helpers and run manifests for the command-line tool.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmkit/core/error.hpp"

namespace lmkit::cli {

namespace fs = std::filesystem;

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// Full precision, locale independent.
inline std::string exact(double v) { return fmt("%.17g", v); }

// Everything needed to re-run a command: global settings plus the resolved
// value of every option of the subcommand, defaults included.
struct RunSettings {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int threads = 1;
};

inline nlohmann::ordered_json resolved_options(const CLI::App& sub) {
  nlohmann::ordered_json opts = nlohmann::ordered_json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help" || name == "out") continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      if (o->get_expected_min() == 0) {
        opts[name] = o->as<bool>();
      } else if (r.size() == 1) {
        opts[name] = r.front();
      } else {
        opts[name] = r;
      }
    } else if (o->get_expected_min() == 0) {
      opts[name] = o->get_description().find("[default: on]") != std::string::npos;
    } else {
      opts[name] = o->get_default_str();
    }
  }
  return opts;
}

inline nlohmann::ordered_json manifest(const CLI::App& sub, const RunSettings& s) {
  nlohmann::ordered_json m;
  m["tool"] = "lmkit";
  m["manifest_version"] = 1;
  m["command"] = sub.get_name();
  m["preset"] = s.preset;
  m["seed"] = s.seed;
  m["threads"] = s.threads;
  m["options"] = resolved_options(sub);
  return m;
}

// Creates `dir` and writes manifest.json into it.
inline void write_manifest(const fs::path& dir, const CLI::App& sub, const RunSettings& s) {
  fs::create_directories(dir);
  auto out = open_out(dir / "manifest.json");
  out << manifest(sub, s).dump(2) << '\n';
  if (!out) throw DataError("cannot write manifest in " + dir.string());
}

}  // namespace lmkit::cli
