#pragma once

// Two toy continuous-control tasks on the square arena [-1, 1]^2.
//
// point_goal: reach a goal drawn from a small central region. The goal region's
//   half-width is scaled by noise_mult, so noise_mult > 1 produces goals
//   outside the expert's coverage.
// maze_cont:  5x5 cell maze (cell size 0.4) with a wall between rows 1 and 2
//   that is open only in the rightmost column. Start and goal are fixed cell
//   centres plus noise_mult-scaled jitter.
//
// Observation: (x, y, goal_x, goal_y). Action: 2-D displacement in [-1, 1]^2,
// scaled by max_step per step.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmirl/core/error.hpp"
#include "fmirl/core/random.hpp"

namespace fmirl::env {

using Vec2 = Eigen::Vector2d;
using Vector = Eigen::VectorXd;

enum class EnvKind { point_goal, maze_cont };

inline std::string to_string(EnvKind k) { return k == EnvKind::point_goal ? "point_goal" : "maze_cont"; }

inline EnvKind parse_env_kind(const std::string& s) {
  if (s == "point_goal") return EnvKind::point_goal;
  if (s == "maze_cont") return EnvKind::maze_cont;
  throw ConfigError("unknown environment '" + s + "'");
}

inline constexpr double kArena = 1.0;
inline constexpr int kMazeCells = 5;
inline constexpr double kCellSize = 2.0 * kArena / kMazeCells;

struct EnvSpec {
  EnvKind kind = EnvKind::point_goal;
  int state_dim = 4;
  int action_dim = 2;
  double action_bound = 1.0;
  double max_step = 0.1;
  int horizon = 40;
  double success_threshold = 0.05;
  double noise_mult = 1.0;
  double goal_region = 0.4;   // point_goal: base half-width of the goal square
  double start_jitter = 0.05;  // maze_cont: base half-width of start/goal jitter

  std::string name() const { return to_string(kind); }

  static EnvSpec point_goal() { return EnvSpec{}; }

  static EnvSpec maze_cont() {
    EnvSpec s;
    s.kind = EnvKind::maze_cont;
    s.horizon = 100;
    s.success_threshold = 0.1;
    return s;
  }

  static EnvSpec make(EnvKind kind) { return kind == EnvKind::point_goal ? point_goal() : maze_cont(); }

  void validate() const {
    if (horizon < 1) throw ConfigError("env: horizon must be >= 1");
    if (!(noise_mult >= 1.0)) throw ConfigError("env: noise_mult must be >= 1");
    if (!std::isfinite(action_bound) || action_bound <= 0.0 || !(max_step > 0.0))
      throw ConfigError("env: bounds must be finite and positive");
    if (!(success_threshold > 0.0)) throw ConfigError("env: success_threshold must be > 0");
    if (state_dim != 4 || action_dim != 2) throw ConfigError("env: toy tasks are 4-D state, 2-D action");
  }

  /// Canonical description of everything that defines the task except noise_mult.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << name() << ';' << state_dim << ';' << action_dim << ';' << action_bound << ';' << max_step << ';' << horizon
       << ';' << success_threshold << ';' << goal_region << ';' << start_jitter;
    return os.str();
  }

  /// FNV-1a 64 of canonical(), hex-encoded. Identifies datasets and checkpoints.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : canonical()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
  }
};

struct EnvState {
  Vec2 pos = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  int t = 0;

  Vector observation() const {
    Vector o(4);
    o << pos, goal;
    return o;
  }
  double goal_distance() const { return (goal - pos).norm(); }
};

struct StepResult {
  EnvState next;
  double true_reward = 0.0;
  bool done = false;
  bool success = false;
};

// ---- maze geometry ----

struct Cell {
  int col = 0;
  int row = 0;
  bool operator==(const Cell&) const = default;
};

inline Cell cell_of(const Vec2& p) {
  auto idx = [](double v) {
    return std::clamp(static_cast<int>(std::floor((v + kArena) / kCellSize)), 0, kMazeCells - 1);
  };
  return Cell{idx(p.x()), idx(p.y())};
}

inline Vec2 cell_center(Cell c) {
  return Vec2(-kArena + (c.col + 0.5) * kCellSize, -kArena + (c.row + 0.5) * kCellSize);
}

/// Wall between vertically adjacent cells (col, row) and (col, row + 1).
inline bool horizontal_wall(int col, int row) { return row == 1 && col <= 3; }

/// Wall between horizontally adjacent cells (col, row) and (col + 1, row).
inline bool vertical_wall(int /*col*/, int /*row*/) { return false; }

inline bool blocked(Cell a, Cell b) {
  if (a.row == b.row && std::abs(a.col - b.col) == 1) return vertical_wall(std::min(a.col, b.col), a.row);
  if (a.col == b.col && std::abs(a.row - b.row) == 1) return horizontal_wall(a.col, std::min(a.row, b.row));
  return true;  // non-adjacent
}

inline Cell maze_start_cell() { return Cell{0, 0}; }
inline Cell maze_goal_cell() { return Cell{0, 4}; }

/// Shortest cell path from `from` to `to` (inclusive) by breadth-first search.
/// Neighbours are expanded in the fixed order right, up, left, down.
inline std::vector<Cell> maze_path(Cell from, Cell to) {
  std::array<std::array<int, kMazeCells>, kMazeCells> prev{};
  for (auto& r : prev) r.fill(-1);
  auto key = [](Cell c) { return c.row * kMazeCells + c.col; };
  std::deque<Cell> queue{from};
  prev[from.row][from.col] = key(from);
  const std::array<std::array<int, 2>, 4> dirs{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
  while (!queue.empty()) {
    Cell c = queue.front();
    queue.pop_front();
    if (c == to) break;
    for (auto [dc, dr] : dirs) {
      Cell n{c.col + dc, c.row + dr};
      if (n.col < 0 || n.row < 0 || n.col >= kMazeCells || n.row >= kMazeCells) continue;
      if (prev[n.row][n.col] != -1 || blocked(c, n)) continue;
      prev[n.row][n.col] = key(c);
      queue.push_back(n);
    }
  }
  std::vector<Cell> path{to};
  while (!(path.back() == from)) {
    const int k = prev[path.back().row][path.back().col];
    path.push_back(Cell{k % kMazeCells, k / kMazeCells});
  }
  std::reverse(path.begin(), path.end());
  return path;
}

/// Axis-wise move: x then y; a component that would cross a wall or leave the
/// arena is zeroed, the other component is kept.
inline Vec2 maze_move(const Vec2& pos, const Vec2& delta) {
  Vec2 p = pos;
  Vec2 trial(p.x() + delta.x(), p.y());
  if (std::abs(trial.x()) <= kArena && !(cell_of(trial) == cell_of(p)) && blocked(cell_of(p), cell_of(trial)))
    trial.x() = p.x();
  if (std::abs(trial.x()) > kArena) trial.x() = p.x();
  p = trial;
  trial = Vec2(p.x(), p.y() + delta.y());
  if (std::abs(trial.y()) <= kArena && !(cell_of(trial) == cell_of(p)) && blocked(cell_of(p), cell_of(trial)))
    trial.y() = p.y();
  if (std::abs(trial.y()) > kArena) trial.y() = p.y();
  return trial;
}

// ---- dynamics ----

inline Vec2 clip_arena(Vec2 p) { return p.cwiseMax(-kArena).cwiseMin(kArena); }

inline EnvState reset(const EnvSpec& spec, Rng& rng) {
  EnvState s;
  if (spec.kind == EnvKind::point_goal) {
    s.pos = Vec2(rng.uniform(-kArena, kArena), rng.uniform(-kArena, kArena));
    const double half = spec.goal_region * spec.noise_mult;
    s.goal = clip_arena(Vec2(rng.uniform(-1.0, 1.0) * half, rng.uniform(-1.0, 1.0) * half));
  } else {
    const double j = spec.start_jitter * spec.noise_mult;
    const Vec2 js(rng.uniform(-1.0, 1.0) * j, rng.uniform(-1.0, 1.0) * j);
    const Vec2 jg(rng.uniform(-1.0, 1.0) * j, rng.uniform(-1.0, 1.0) * j);
    s.pos = clip_arena(cell_center(maze_start_cell()) + js);
    s.goal = clip_arena(cell_center(maze_goal_cell()) + jg);
  }
  return s;
}

inline Vec2 clip_action(const EnvSpec& spec, const Vector& action) {
  if (action.size() != spec.action_dim) throw ConfigError("step: action has wrong dimension");
  if (!action.allFinite()) throw DataError("step: non-finite action");
  return Vec2(std::clamp(action[0], -spec.action_bound, spec.action_bound),
              std::clamp(action[1], -spec.action_bound, spec.action_bound));
}

inline StepResult step(const EnvSpec& spec, const EnvState& state, const Vector& action) {
  const Vec2 delta = clip_action(spec, action) * (spec.max_step / spec.action_bound);
  StepResult r;
  r.next = state;
  r.next.t = state.t + 1;
  r.next.pos = spec.kind == EnvKind::point_goal ? clip_arena(state.pos + delta) : maze_move(state.pos, delta);
  const double dist = r.next.goal_distance();
  r.true_reward = -dist;
  r.success = dist < spec.success_threshold;
  r.done = r.success || r.next.t >= spec.horizon;
  return r;
}

/// Scripted demonstrator. point_goal: proportional controller (gain 1 in units
/// of max_step) toward the goal. maze_cont: same controller toward the centre
/// of the next cell on the shortest cell path, then toward the goal.
inline Vector scripted_expert(const EnvSpec& spec, const EnvState& state) {
  Vec2 target = state.goal;
  if (spec.kind == EnvKind::maze_cont) {
    const Cell here = cell_of(state.pos);
    const Cell goal_cell = cell_of(state.goal);
    if (!(here == goal_cell)) target = cell_center(maze_path(here, goal_cell)[1]);
  }
  constexpr double kGain = 1.0;
  const Vec2 a = (kGain * (target - state.pos) / spec.max_step * spec.action_bound)
                     .cwiseMax(-spec.action_bound)
                     .cwiseMin(spec.action_bound);
  Vector out(2);
  out << a;
  return out;
}

}  // namespace fmirl::env
