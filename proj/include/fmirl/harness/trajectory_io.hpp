#pragma once

// Line-delimited trajectory files. Line 1 is a header object; every following
// line is one transition:
//   {"episode":0,"t":0,"s":[...],"a":[...],"s_next":[...],"done":false,"reward":-0.3,"success":false}

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fmirl/core/error.hpp"
#include "fmirl/env/envs.hpp"
#include "fmirl/nn/tensor.hpp"

namespace fmirl::harness {

using json = nlohmann::json;

inline constexpr const char* kTrajectoryFormat = "fmirl-trajectories";
inline constexpr int kTrajectoryVersion = 1;

struct Transition {
  int episode = 0;
  int t = 0;
  std::vector<double> s, a, s_next;
  bool done = false;
  double reward = 0.0;
  bool success = false;
};

struct TrajectoryHeader {
  std::string env;
  std::string env_hash;
  int state_dim = 0;
  int action_dim = 0;
  std::string generator = "expert";
};

struct Dataset {
  TrajectoryHeader header;
  std::vector<Transition> transitions;

  int episodes() const {
    int n = 0;
    for (const auto& tr : transitions) n += tr.done;
    return n;
  }

  nn::Tensor states() const { return stack(&Transition::s, header.state_dim); }
  nn::Tensor actions() const { return stack(&Transition::a, header.action_dim); }

 private:
  nn::Tensor stack(std::vector<double> Transition::*field, int width) const {
    nn::Tensor out(static_cast<Eigen::Index>(transitions.size()), width);
    for (std::size_t i = 0; i < transitions.size(); ++i)
      for (int k = 0; k < width; ++k) out(static_cast<Eigen::Index>(i), k) = (transitions[i].*field)[k];
    return out;
  }
};

inline json header_json(const TrajectoryHeader& h) {
  return json{{"format", kTrajectoryFormat}, {"version", kTrajectoryVersion}, {"env", h.env},
              {"env_hash", h.env_hash},      {"state_dim", h.state_dim},      {"action_dim", h.action_dim},
              {"generator", h.generator}};
}

inline json transition_json(const Transition& tr) {
  return json{{"episode", tr.episode}, {"t", tr.t},       {"s", tr.s},         {"a", tr.a},
              {"s_next", tr.s_next},   {"done", tr.done}, {"reward", tr.reward}, {"success", tr.success}};
}

class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::string& path, const TrajectoryHeader& h) : out_(path, std::ios::trunc) {
    if (!out_) throw DataError("cannot write trajectory file '" + path + "'");
    out_ << header_json(h).dump() << '\n';
  }
  void write(const Transition& tr) { out_ << transition_json(tr).dump() << '\n'; }
  void close() {
    out_.close();
    if (out_.fail()) throw DataError("failed to finish trajectory file");
  }

 private:
  std::ofstream out_;
};

/// Reads and validates a trajectory file: header fields, vector widths,
/// contiguous time steps, and terminal flags only on the last transition of
/// each episode.
inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trajectory file '" + path + "'");
  Dataset ds;
  std::string line;
  if (!std::getline(in, line)) throw DataError("trajectory file '" + path + "' has no header");
  try {
    const json h = json::parse(line);
    if (h.at("format") != kTrajectoryFormat || h.at("version") != kTrajectoryVersion)
      throw DataError("trajectory file '" + path + "': unsupported format");
    ds.header.env = h.at("env").get<std::string>();
    ds.header.env_hash = h.at("env_hash").get<std::string>();
    ds.header.state_dim = h.at("state_dim").get<int>();
    ds.header.action_dim = h.at("action_dim").get<int>();
    ds.header.generator = h.value("generator", "expert");
  } catch (const json::exception& e) {
    throw DataError("trajectory file '" + path + "': bad header (" + e.what() + ")");
  }
  int line_no = 1;
  bool open_episode = false;
  int expect_t = 0, episode = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Transition tr;
    try {
      const json r = json::parse(line);
      tr.episode = r.at("episode").get<int>();
      tr.t = r.at("t").get<int>();
      tr.s = r.at("s").get<std::vector<double>>();
      tr.a = r.at("a").get<std::vector<double>>();
      tr.s_next = r.at("s_next").get<std::vector<double>>();
      tr.done = r.at("done").get<bool>();
      tr.reward = r.at("reward").get<double>();
      tr.success = r.at("success").get<bool>();
    } catch (const json::exception& e) {
      throw DataError("trajectory file '" + path + "' line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto where = "trajectory file '" + path + "' line " + std::to_string(line_no) + ": ";
    if (static_cast<int>(tr.s.size()) != ds.header.state_dim || static_cast<int>(tr.s_next.size()) != ds.header.state_dim ||
        static_cast<int>(tr.a.size()) != ds.header.action_dim)
      throw DataError(where + "vector width does not match header");
    if (!open_episode) {
      if (tr.t != 0 || tr.episode <= episode) throw DataError(where + "episode must start at t = 0");
      episode = tr.episode;
      expect_t = 0;
      open_episode = true;
    }
    if (tr.episode != episode || tr.t != expect_t) throw DataError(where + "time steps are not contiguous");
    ++expect_t;
    if (tr.done) open_episode = false;
    ds.transitions.push_back(std::move(tr));
  }
  if (open_episode) throw DataError("trajectory file '" + path + "': last episode has no terminal transition");
  return ds;
}

}  // namespace fmirl::harness
