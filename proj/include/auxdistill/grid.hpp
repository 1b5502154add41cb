#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace auxdistill {

struct Coord {
  int x = 0;
  int y = 0;

  friend bool operator==(const Coord&, const Coord&) = default;
};

inline int chebyshev(Coord a, Coord b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

// Static layout of a MiniRearrange scene.
struct GridWorldSpec {
  int width = 9;
  int height = 9;
  Coord container_cell{1, 1};
  Coord goal_cell{7, 7};
  std::vector<Coord> walls;
  int max_steps_main = 120;
  int max_steps_aux = 60;

  bool in_bounds(Coord c) const {
    return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
  }

  bool is_wall(Coord c) const {
    return std::find(walls.begin(), walls.end(), c) != walls.end();
  }

  bool is_free(Coord c) const { return in_bounds(c) && !is_wall(c); }

  int index(Coord c) const { return c.y * width + c.x; }
  Coord coord(int idx) const { return {idx % width, idx / width}; }
  int cell_count() const { return width * height; }

  // Throws std::invalid_argument on a malformed layout.
  void validate() const {
    if (width < 5 || height < 5) throw std::invalid_argument("grid must be at least 5x5");
    for (const auto& w : walls)
      if (!in_bounds(w)) throw std::invalid_argument("wall out of bounds");
    if (!is_free(container_cell)) throw std::invalid_argument("container cell must be a free cell");
    if (!is_free(goal_cell)) throw std::invalid_argument("goal cell must be a free cell");
    if (container_cell == goal_cell) throw std::invalid_argument("container and goal must differ");
    if (!(max_steps_main > max_steps_aux && max_steps_aux > 0))
      throw std::invalid_argument("require max_steps_main > max_steps_aux > 0");
  }

  // 9x9 default: a partial wall splits the room so the container and goal
  // sit on opposite sides and the shortest path bends around it.
  static GridWorldSpec default_9x9() {
    GridWorldSpec spec;
    spec.width = 9;
    spec.height = 9;
    spec.container_cell = {1, 1};
    spec.goal_cell = {7, 7};
    spec.walls = {{4, 0}, {4, 1}, {4, 2}, {4, 3}, {4, 4}, {4, 5}};
    spec.max_steps_main = 120;
    spec.max_steps_aux = 60;
    return spec;
  }
};

inline constexpr std::array<Coord, 4> kMoveDeltas{{{0, -1}, {1, 0}, {0, 1}, {-1, 0}}};  // N E S W

// All-pairs 4-connected geodesic distances over free cells, filled by one BFS
// per cell. Unreachable pairs hold kUnreachable.
class GeodesicTable {
 public:
  static constexpr int kUnreachable = std::numeric_limits<int>::max() / 4;

  GeodesicTable() = default;

  explicit GeodesicTable(const GridWorldSpec& spec) : width_(spec.width), cells_(spec.cell_count()) {
    dist_.assign(static_cast<std::size_t>(cells_) * cells_, kUnreachable);
    for (int src = 0; src < cells_; ++src) {
      const Coord s = spec.coord(src);
      if (!spec.is_free(s)) continue;
      int* row = dist_.data() + static_cast<std::size_t>(src) * cells_;
      std::deque<int> frontier{src};
      row[src] = 0;
      while (!frontier.empty()) {
        const int cur = frontier.front();
        frontier.pop_front();
        const Coord c = spec.coord(cur);
        for (const auto& d : kMoveDeltas) {
          const Coord n{c.x + d.x, c.y + d.y};
          if (!spec.is_free(n)) continue;
          const int ni = spec.index(n);
          if (row[ni] != kUnreachable) continue;
          row[ni] = row[cur] + 1;
          frontier.push_back(ni);
        }
      }
    }
  }

  int operator()(Coord a, Coord b) const {
    return dist_[static_cast<std::size_t>(a.y * width_ + a.x) * cells_ + (b.y * width_ + b.x)];
  }

 private:
  int width_ = 0;
  int cells_ = 0;
  std::vector<int> dist_;
};

}  // namespace auxdistill
