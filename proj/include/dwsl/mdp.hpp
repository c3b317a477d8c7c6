#pragma once

#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dwsl {

// Deterministic finite-horizon MDP over enumerated states and actions.
// The transition table is total and every state has at least one action that
// maps the state to itself, so a policy can remain at an achieved goal.
// Immutable after construction; all operations on it are pure.
struct MdpSpec {
  std::string env_id;
  int num_states = 0;
  int num_actions = 0;
  int horizon = 0;
  int goal_count = 0;
  std::vector<int> transition;  // num_states * num_actions, row major
  std::vector<int> goal_of;     // phi: state -> goal id
  std::vector<int> start_states;
  std::vector<std::vector<double>> state_features;  // per state, values in [0, 1]
  std::vector<std::vector<double>> goal_features;   // per goal, values in [0, 1]

  int f(int s, int a) const { return transition[static_cast<std::size_t>(s) * num_actions + a]; }
  int phi(int s) const { return goal_of[s]; }
  int feature_dim() const {
    return static_cast<int>(state_features.at(0).size() + goal_features.at(0).size());
  }
  MdpSpec with_horizon(int t) const {
    MdpSpec out = *this;
    if (t < 1) throw std::invalid_argument("horizon must be positive");
    out.horizon = t;
    return out;
  }
};

inline void check_state(const MdpSpec& spec, int s) {
  if (s < 0 || s >= spec.num_states) throw std::invalid_argument("state out of range");
}
inline void check_action(const MdpSpec& spec, int a) {
  if (a < 0 || a >= spec.num_actions) throw std::invalid_argument("action out of range");
}
inline void check_goal(const MdpSpec& spec, int g) {
  if (g < 0 || g >= spec.goal_count) throw std::invalid_argument("goal out of range");
}

inline int step(const MdpSpec& spec, int s, int a) {
  check_state(spec, s);
  check_action(spec, a);
  return spec.f(s, a);
}

// Sparse reward: 0 iff the next state achieves the goal, else -1.
inline int reward(const MdpSpec& spec, int s, int a, int s_next, int g) {
  check_state(spec, s);
  check_action(spec, a);
  check_state(spec, s_next);
  check_goal(spec, g);
  return spec.phi(s_next) == g ? 0 : -1;
}

// Steps-to-goal for every state via reverse BFS from the set {s : phi(s)=g}.
// Unreachable states get -1.
inline std::vector<int> distance_map(const MdpSpec& spec, int g) {
  check_goal(spec, g);
  std::vector<std::vector<int>> rev(spec.num_states);
  for (int s = 0; s < spec.num_states; ++s)
    for (int a = 0; a < spec.num_actions; ++a) rev[spec.f(s, a)].push_back(s);
  std::vector<int> dist(spec.num_states, -1);
  std::deque<int> queue;
  for (int s = 0; s < spec.num_states; ++s)
    if (spec.phi(s) == g) {
      dist[s] = 0;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int p : rev[u])
      if (dist[p] < 0) {
        dist[p] = dist[u] + 1;
        queue.push_back(p);
      }
  }
  return dist;
}

// Minimum k >= 0 such that some action sequence of length k reaches a state
// achieving g; nullopt if no such sequence exists within num_states steps.
inline std::optional<int> shortest_distance(const MdpSpec& spec, int s, int g) {
  check_state(spec, s);
  check_goal(spec, g);
  const int d = distance_map(spec, g)[s];
  if (d < 0 || d > spec.num_states) return std::nullopt;
  return d;
}

// Lowest-id action with f(s, a) = s.
inline int stationary_action(const MdpSpec& spec, int s) {
  check_state(spec, s);
  for (int a = 0; a < spec.num_actions; ++a)
    if (spec.f(s, a) == s) return a;
  throw std::logic_error("no stationary action at state " + std::to_string(s));
}

inline std::vector<double> state_goal_features(const MdpSpec& spec, int s, int g) {
  check_state(spec, s);
  check_goal(spec, g);
  std::vector<double> x = spec.state_features[s];
  const auto& gf = spec.goal_features[g];
  x.insert(x.end(), gf.begin(), gf.end());
  return x;
}

inline void validate_spec(const MdpSpec& spec) {
  if (spec.num_states < 1 || spec.num_actions < 1 || spec.horizon < 1 || spec.goal_count < 1)
    throw std::invalid_argument("spec sizes must be positive");
  if (spec.transition.size() !=
      static_cast<std::size_t>(spec.num_states) * spec.num_actions)
    throw std::invalid_argument("transition table has wrong size");
  if (spec.start_states.empty()) throw std::invalid_argument("empty start state set");
  for (int s = 0; s < spec.num_states; ++s) {
    bool has_stationary = false;
    for (int a = 0; a < spec.num_actions; ++a) {
      const int n = spec.f(s, a);
      if (n < 0 || n >= spec.num_states)
        throw std::invalid_argument("transition leaves the state space");
      has_stationary = has_stationary || n == s;
    }
    if (!has_stationary)
      throw std::invalid_argument("state without a stationary action");
    if (spec.phi(s) < 0 || spec.phi(s) >= spec.goal_count)
      throw std::invalid_argument("goal map out of range");
  }
}

namespace detail {

inline double unit_coord(int v, int extent) {
  return extent > 1 ? static_cast<double>(v) / (extent - 1) : 0.0;
}

// Chain of n states; actions 0=left, 1=right, 2=stay; moves off either end
// are self transitions.
inline MdpSpec make_chain(int n, bool coarse) {
  if (n < 2) throw std::invalid_argument("chain needs at least 2 states");
  MdpSpec spec;
  spec.env_id = "chain-" + std::to_string(n) + (coarse ? ":coarse" : "");
  spec.num_states = n;
  spec.num_actions = 3;
  spec.horizon = 2 * n;
  spec.transition.resize(static_cast<std::size_t>(n) * 3);
  for (int s = 0; s < n; ++s) {
    spec.transition[s * 3 + 0] = std::max(0, s - 1);
    spec.transition[s * 3 + 1] = std::min(n - 1, s + 1);
    spec.transition[s * 3 + 2] = s;
  }
  if (coarse) {
    // Adjacent pairs of cells share a goal id.
    spec.goal_count = (n + 1) / 2;
    for (int s = 0; s < n; ++s) spec.goal_of.push_back(s / 2);
  } else {
    spec.goal_count = n;
    for (int s = 0; s < n; ++s) spec.goal_of.push_back(s);
  }
  for (int s = 0; s < n; ++s) {
    spec.start_states.push_back(s);
    spec.state_features.push_back({unit_coord(s, n)});
  }
  for (int g = 0; g < spec.goal_count; ++g)
    spec.goal_features.push_back({unit_coord(g, spec.goal_count)});
  return spec;
}

// Rectangular grid with an optional wall bitmap. States are the open cells in
// row-major order; actions 0=left, 1=right, 2=up, 3=down, 4=stay. Moves into
// walls or off the grid are self transitions.
inline MdpSpec make_grid(int w, int h, const std::vector<std::string>& wall_rows,
                         const std::string& env_id, bool coarse) {
  if (w < 1 || h < 1) throw std::invalid_argument("grid needs positive extents");
  if (!wall_rows.empty() && static_cast<int>(wall_rows.size()) != h)
    throw std::invalid_argument("wall bitmap has wrong height");
  auto is_wall = [&](int x, int y) {
    if (x < 0 || x >= w || y < 0 || y >= h) return true;
    if (wall_rows.empty()) return false;
    return wall_rows[y][x] == '#';
  };
  std::vector<int> cell_id(static_cast<std::size_t>(w) * h, -1);
  std::vector<std::pair<int, int>> cells;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!is_wall(x, y)) {
        cell_id[y * w + x] = static_cast<int>(cells.size());
        cells.push_back({x, y});
      }
  if (cells.empty()) throw std::invalid_argument("grid has no open cells");

  MdpSpec spec;
  spec.env_id = env_id;
  spec.num_states = static_cast<int>(cells.size());
  spec.num_actions = 5;
  spec.horizon = 2 * (w + h);
  spec.transition.resize(static_cast<std::size_t>(spec.num_states) * 5);
  static constexpr int kDx[5] = {-1, 1, 0, 0, 0};
  static constexpr int kDy[5] = {0, 0, -1, 1, 0};
  for (int s = 0; s < spec.num_states; ++s) {
    auto [x, y] = cells[s];
    for (int a = 0; a < 5; ++a) {
      const int nx = x + kDx[a], ny = y + kDy[a];
      spec.transition[s * 5 + a] = is_wall(nx, ny) ? s : cell_id[ny * w + nx];
    }
  }
  if (coarse) {
    spec.goal_count = w;  // phi = column index
    for (int s = 0; s < spec.num_states; ++s) spec.goal_of.push_back(cells[s].first);
    for (int g = 0; g < w; ++g) spec.goal_features.push_back({unit_coord(g, w)});
  } else {
    spec.goal_count = spec.num_states;
    for (int s = 0; s < spec.num_states; ++s) {
      spec.goal_of.push_back(s);
      spec.goal_features.push_back(
          {unit_coord(cells[s].first, w), unit_coord(cells[s].second, h)});
    }
  }
  for (int s = 0; s < spec.num_states; ++s) {
    spec.start_states.push_back(s);
    spec.state_features.push_back(
        {unit_coord(cells[s].first, w), unit_coord(cells[s].second, h)});
  }
  return spec;
}

// Four-rooms wall map, version 1. 11x11 cells, two vertical doorways in the
// center wall (rows 2 and 9), one doorway in each horizontal wall (columns 1
// and 8). 104 open cells.
inline const std::vector<std::string>& four_rooms_map_v1() {
  static const std::vector<std::string> rows = {
      ".....#.....",
      ".....#.....",
      "...........",
      ".....#.....",
      ".....#.....",
      "#.####.....",
      ".....###.##",
      ".....#.....",
      ".....#.....",
      "...........",
      ".....#.....",
  };
  return rows;
}

}  // namespace detail

// Environment registry. Known ids:
//   chain-<N>            line of N cells, actions left/right/stay
//   grid-<W>x<H>         open rectangle, actions left/right/up/down/stay
//   four-rooms           11x11 grid with the embedded v1 wall map, horizon 60
// Appending ":coarse" selects the coarse goal extraction (column index on
// grids, cell pairs on chains) instead of the identity map.
inline MdpSpec make_env(const std::string& env_id) {
  std::string base = env_id;
  bool coarse = false;
  if (const auto pos = base.rfind(":coarse"); pos != std::string::npos &&
      pos + 7 == base.size()) {
    coarse = true;
    base = base.substr(0, pos);
  }
  auto parse_int = [&](const std::string& text) {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument("unknown env id: " + env_id);
    return v;
  };
  MdpSpec spec;
  if (base.rfind("chain-", 0) == 0) {
    spec = detail::make_chain(parse_int(base.substr(6)), coarse);
  } else if (base.rfind("grid-", 0) == 0) {
    const std::string dims = base.substr(5);
    const auto x = dims.find('x');
    if (x == std::string::npos) throw std::invalid_argument("unknown env id: " + env_id);
    spec = detail::make_grid(parse_int(dims.substr(0, x)), parse_int(dims.substr(x + 1)),
                             {}, env_id, coarse);
  } else if (base == "four-rooms") {
    spec = detail::make_grid(11, 11, detail::four_rooms_map_v1(), env_id, coarse);
    spec.horizon = 60;
  } else {
    throw std::invalid_argument("unknown env id: " + env_id);
  }
  validate_spec(spec);
  return spec;
}

inline std::vector<std::string> registered_env_families() {
  return {"chain-<N>", "grid-<W>x<H>", "four-rooms", "<any>:coarse"};
}

}  // namespace dwsl
