//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// Checkpoint container: a key/value header followed by named arrays. Values
// are written as C99 hexadecimal floats so the round trip is bit-exact.
//
//   meterlink-checkpoint 1
//   header <key> <value>
//   array <name> <rank> <d0> ... <dn>
//   <v0> <v1> ...
//   end

#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/io.hpp"
#include "meterlink/nk/tensor.hpp"

namespace meterlink::nk {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw DataError("checkpoint has no array '" + name + "'");
  }
  const std::string& value(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw DataError("checkpoint header lacks '" + key + "'");
    return it->second;
  }

  bool operator==(const Checkpoint&) const = default;
};

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline std::string serialize(const Checkpoint& ck) {
  std::ostringstream out;
  out << "meterlink-checkpoint 1\n";
  for (const auto& [k, v] : ck.header) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw DataError("checkpoint header entries may not contain newlines or spaces in keys");
    out << "header " << k << ' ' << v << '\n';
  }
  for (const auto& a : ck.arrays) {
    if (numel_of(a.shape) != a.data.size()) throw ShapeError("checkpoint array '" + a.name + "' has inconsistent shape");
    out << "array " << a.name << ' ' << a.shape.size();
    for (auto d : a.shape) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < a.data.size(); ++i) out << (i ? " " : "") << hexfloat(a.data[i]);
    out << '\n';
  }
  out << "end\n";
  return out.str();
}

inline Checkpoint deserialize(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "meterlink-checkpoint 1") throw DataError("not a checkpoint file");
  Checkpoint ck;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("header ", 0) == 0) {
      const auto rest = line.substr(7);
      const auto sp = rest.find(' ');
      if (sp == std::string::npos) throw DataError("malformed checkpoint header line");
      ck.header[rest.substr(0, sp)] = rest.substr(sp + 1);
    } else if (line.rfind("array ", 0) == 0) {
      std::istringstream hs(line.substr(6));
      NamedArray a;
      std::size_t rank = 0;
      if (!(hs >> a.name >> rank)) throw DataError("malformed checkpoint array line");
      a.shape.resize(rank);
      for (auto& d : a.shape)
        if (!(hs >> d)) throw DataError("malformed checkpoint array shape");
      std::string values;
      if (!std::getline(in, values)) throw DataError("truncated checkpoint array '" + a.name + "'");
      const std::size_t n = numel_of(a.shape);
      a.data.reserve(n);
      const char* p = values.c_str();
      for (std::size_t i = 0; i < n; ++i) {
        char* end = nullptr;
        const double v = std::strtod(p, &end);
        if (end == p) throw DataError("checkpoint array '" + a.name + "' has too few values");
        a.data.push_back(v);
        p = end;
      }
      ck.arrays.push_back(std::move(a));
    } else if (!line.empty()) {
      throw DataError("unexpected checkpoint line '" + line.substr(0, 40) + "'");
    }
  }
  if (!ended) throw DataError("truncated checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto out = io::open_output(path);
  out << serialize(ck);
  if (!out) throw DataError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

}  // namespace meterlink::nk
