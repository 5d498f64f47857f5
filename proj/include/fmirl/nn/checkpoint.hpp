#pragma once

// Parameter checkpoint container (text, exact):
//
//   fmirl-checkpoint 1
//   meta <key> <value...>            zero or more, value runs to end of line
//   tensor <name> <rows> <cols>      followed by one line of rows*cols values
//   <v0> <v1> ...                    C99 hex-float literals, row-major
//   end
//
// Hex floats make save/load bit-exact.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "fmirl/core/error.hpp"
#include "fmirl/nn/param_store.hpp"

namespace fmirl::nn {

struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamStore params;
};

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os << "fmirl-checkpoint 1\n";
  for (const auto& [k, v] : ck.meta) os << "meta " << k << ' ' << v << '\n';
  for (const auto& p : ck.params) {
    os << "tensor " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      if (i) os << ' ';
      os << hex_double(p.value.data()[i]);
    }
    os << '\n';
  }
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint ck;
  std::string line;
  if (!std::getline(is, line) || line != "fmirl-checkpoint 1") throw DataError("checkpoint: bad header");
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name;
      Eigen::Index rows = 0, cols = 0;
      if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0) throw DataError("checkpoint: bad tensor line");
      std::string data;
      if (!std::getline(is, data)) throw DataError("checkpoint: missing values for " + name);
      Tensor t(rows, cols);
      const char* p = data.c_str();
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        char* endp = nullptr;
        t.data()[i] = std::strtod(p, &endp);
        if (endp == p) throw DataError("checkpoint: short value list for " + name);
        p = endp;
      }
      ck.params.add(name, std::move(t));
    } else if (!kind.empty()) {
      throw DataError("checkpoint: unknown record '" + kind + "'");
    }
  }
  if (!ended) throw DataError("checkpoint: truncated (no end marker)");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(os, ck);
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Copies every parameter of `src` into `dst` under `prefix` (used to bundle nets).
inline void merge_params(ParamStore& dst, const ParamStore& src, const std::string& prefix) {
  for (const auto& p : src) dst.add(prefix + p.name, p.value);
}

/// Restores values of `dst` from `src` entries named `prefix + name`; shapes must agree.
inline void restore_params(ParamStore& dst, const ParamStore& src, const std::string& prefix) {
  for (auto& p : dst) {
    const Parameter& s = src.at(prefix + p.name);
    if (s.value.rows() != p.value.rows() || s.value.cols() != p.value.cols())
      throw ConfigError("checkpoint shape mismatch for '" + p.name + "': " + shape_str(s.value) + " vs " +
                        shape_str(p.value));
    p.value = s.value;
  }
}

}  // namespace fmirl::nn
