#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "auxdistill/grid.hpp"

namespace auxdistill {

enum class Split { train, eval };
enum class Difficulty { easy, hard };

inline constexpr std::uint64_t kTrainSeedCount = 1'000'000;
inline constexpr std::uint64_t kEvalSeedBase = 1'000'000;
inline constexpr std::uint64_t kEvalSeedCount = 10'000;

// Task 0 is the main rearrangement task; 1..4 are auxiliary tasks. The
// indices key the one-hot task indicator and the value-head slots.
struct TaskId {
  int index = 0;

  static constexpr int kMain = 0;
  static constexpr int kPick = 1;
  static constexpr int kPlace = 2;
  static constexpr int kOpenContainer = 3;
  static constexpr int kPickFromContainer = 4;
  static constexpr int kNumAux = 4;
  static constexpr int kNumTasks = kNumAux + 1;

  constexpr bool is_main() const { return index == kMain; }
  constexpr bool valid() const { return index >= 0 && index < kNumTasks; }

  friend constexpr bool operator==(TaskId, TaskId) = default;
};

inline constexpr TaskId kMainTask{TaskId::kMain};

inline std::string_view task_name(TaskId t) {
  static constexpr std::array<std::string_view, TaskId::kNumTasks> names{
      "main", "pick", "place", "open_container", "pick_from_container"};
  return t.valid() ? names[t.index] : std::string_view{"invalid"};
}

inline TaskId task_from_name(std::string_view name) {
  for (int i = 0; i < TaskId::kNumTasks; ++i)
    if (task_name(TaskId{i}) == name) return TaskId{i};
  throw std::invalid_argument("unknown task name: " + std::string(name));
}

inline std::string_view split_name(Split s) { return s == Split::train ? "train" : "eval"; }
inline std::string_view difficulty_name(Difficulty d) { return d == Difficulty::easy ? "easy" : "hard"; }

struct EpisodeConfig {
  std::uint64_t seed = 0;  // effective seed, already mapped into the split's range
  Split split = Split::train;
  Difficulty difficulty = Difficulty::easy;
  Coord object_start;
  bool object_in_container = false;
  Coord agent_spawn;

  friend bool operator==(const EpisodeConfig&, const EpisodeConfig&) = default;
};

struct EnvState {
  Coord agent_pos;
  Coord object_pos;
  bool holding = false;
  bool container_open = false;
  bool did_pick = false;
  int step_count = 0;
  TaskId task;
  EpisodeConfig episode;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Observation {
  static constexpr int kDim = 8 + TaskId::kNumTasks;

  std::array<double, 2> agent_pos_norm{};
  std::array<double, 2> object_start_rel{};
  std::array<double, 2> goal_rel{};
  double holding = 0.0;
  double container_open_sensed = 0.0;
  std::array<double, TaskId::kNumTasks> task_indicator{};

  // Flat layout consumed by the policy; the task indicator occupies the last
  // kNumTasks columns.
  std::array<double, kDim> flatten() const {
    return {agent_pos_norm[0], agent_pos_norm[1], object_start_rel[0], object_start_rel[1],
            goal_rel[0],       goal_rel[1],       holding,             container_open_sensed,
            task_indicator[0], task_indicator[1], task_indicator[2],   task_indicator[3],
            task_indicator[4]};
  }

  friend bool operator==(const Observation&, const Observation&) = default;
};

inline constexpr int kTaskIndicatorOffset = 8;

struct StageInfo {
  bool picked = false;
  bool opened = false;
  bool placed = false;
};

struct StepResult {
  EnvState next_state;
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  StageInfo stage_info;
};

enum class Action : int { north = 0, east, south, west, open, pick, place };
inline constexpr int kNumActions = 7;

enum class Stage { open, pick, pick_from_container, place };

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::open: return "open";
    case Stage::pick: return "pick";
    case Stage::pick_from_container: return "pick_from_container";
    case Stage::place: return "place";
  }
  return "?";
}

inline TaskId stage_task(Stage s) {
  switch (s) {
    case Stage::open: return TaskId{TaskId::kOpenContainer};
    case Stage::pick: return TaskId{TaskId::kPick};
    case Stage::pick_from_container: return TaskId{TaskId::kPickFromContainer};
    case Stage::place: return TaskId{TaskId::kPlace};
  }
  return kMainTask;
}

inline constexpr double kSuccessBonus = 10.0;
inline constexpr double kOpenBonus = 5.0;
inline constexpr double kPickBonus = 2.0;
inline constexpr double kShapingCoef = 0.1;
inline constexpr int kSenseRadius = 2;
inline constexpr int kInteractRadius = 1;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

template <class Rng>
std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng));
}

}  // namespace detail

// The MiniRearrange environment. Holds only the immutable layout and its
// distance table; all mutable data lives in EnvState, so one instance can be
// shared read-only by any number of rollout workers.
class MiniRearrange {
 public:
  explicit MiniRearrange(GridWorldSpec spec = GridWorldSpec::default_9x9())
      : spec_(std::move(spec)) {
    spec_.validate();
    geo_ = GeodesicTable(spec_);
    for (int i = 0; i < spec_.cell_count(); ++i) {
      const Coord c = spec_.coord(i);
      if (!spec_.is_free(c)) continue;
      if (geo_(c, spec_.container_cell) == GeodesicTable::kUnreachable ||
          geo_(c, spec_.goal_cell) == GeodesicTable::kUnreachable)
        continue;
      free_cells_.push_back(c);
      if (!(c == spec_.container_cell) && !(c == spec_.goal_cell)) object_cells_.push_back(c);
      if (!(c == spec_.container_cell) && chebyshev(c, spec_.container_cell) <= kSenseRadius)
        near_container_cells_.push_back(c);
    }
    if (object_cells_.empty() || near_container_cells_.empty())
      throw std::invalid_argument("layout leaves no valid spawn cells");
  }

  const GridWorldSpec& spec() const { return spec_; }
  const GeodesicTable& geodesic() const { return geo_; }
  int geodesic(Coord a, Coord b) const { return geo_(a, b); }

  int max_steps(TaskId task) const { return task.is_main() ? spec_.max_steps_main : spec_.max_steps_aux; }

  // Maps a raw seed into the split's reserved range, so train and eval never
  // share an episode.
  static std::uint64_t effective_seed(std::uint64_t seed, Split split) {
    return split == Split::train ? seed % kTrainSeedCount : kEvalSeedBase + seed % kEvalSeedCount;
  }

  EpisodeConfig generate_episode(std::uint64_t seed, Split split) const {
    EpisodeConfig ep;
    ep.seed = effective_seed(seed, split);
    ep.split = split;
    std::mt19937_64 rng(detail::splitmix64(ep.seed));
    ep.difficulty = (rng() & 1ULL) ? Difficulty::hard : Difficulty::easy;
    if (ep.difficulty == Difficulty::hard) {
      ep.object_in_container = true;
      ep.object_start = spec_.container_cell;
    } else {
      ep.object_in_container = false;
      ep.object_start = object_cells_[detail::uniform_index(rng, object_cells_.size())];
    }
    do {
      ep.agent_spawn = free_cells_[detail::uniform_index(rng, free_cells_.size())];
    } while (ep.agent_spawn == ep.object_start);
    return ep;
  }

  bool compatible(TaskId task, const EpisodeConfig& ep) const {
    if (task.index == TaskId::kPick) return ep.difficulty == Difficulty::easy;
    if (task.index == TaskId::kPickFromContainer) return ep.difficulty == Difficulty::hard;
    return true;
  }

  EnvState reset(TaskId task, const EpisodeConfig& ep) const {
    if (!task.valid()) throw std::invalid_argument("invalid task index");
    check_episode(ep);
    if (!compatible(task, ep))
      throw std::invalid_argument(std::string(task_name(task)) + " cannot run on a " +
                                  std::string(difficulty_name(ep.difficulty)) + " episode");
    EnvState s;
    s.task = task;
    s.episode = ep;
    s.agent_pos = ep.agent_spawn;
    s.object_pos = ep.object_start;
    s.step_count = 0;
    s.did_pick = false;
    s.holding = false;
    switch (task.index) {
      case TaskId::kMain:
      case TaskId::kPick:
        s.container_open = !ep.object_in_container;
        break;
      case TaskId::kPlace:
        s.holding = true;
        s.did_pick = true;
        s.container_open = true;
        s.object_pos = s.agent_pos;
        break;
      case TaskId::kOpenContainer:
        s.container_open = false;
        break;
      case TaskId::kPickFromContainer: {
        s.container_open = true;
        std::mt19937_64 rng(detail::splitmix64(ep.seed ^ 0xC0FFEEULL));
        s.agent_pos = near_container_cells_[detail::uniform_index(rng, near_container_cells_.size())];
        break;
      }
    }
    return s;
  }

  bool object_in_closed_container(const EnvState& s) const {
    return !s.holding && s.object_pos == spec_.container_cell && !s.container_open;
  }

  bool object_accessible(const EnvState& s) const { return !object_in_closed_container(s); }

  bool success(const EnvState& s) const {
    switch (s.task.index) {
      case TaskId::kMain:
      case TaskId::kPlace:
        return !s.holding && s.object_pos == spec_.goal_cell;
      case TaskId::kPick:
      case TaskId::kPickFromContainer:
        return s.did_pick;
      case TaskId::kOpenContainer:
        return s.container_open;
    }
    return false;
  }

  bool terminal(const EnvState& s) const { return success(s) || s.step_count >= max_steps(s.task); }

  Observation observe(const EnvState& s) const {
    Observation o;
    const double sx = spec_.width - 1;
    const double sy = spec_.height - 1;
    o.agent_pos_norm = {s.agent_pos.x / sx, s.agent_pos.y / sy};
    // Anchored to the episode's object start, never to the live object.
    o.object_start_rel = {(s.episode.object_start.x - s.agent_pos.x) / sx,
                          (s.episode.object_start.y - s.agent_pos.y) / sy};
    o.goal_rel = {(spec_.goal_cell.x - s.agent_pos.x) / sx, (spec_.goal_cell.y - s.agent_pos.y) / sy};
    o.holding = s.holding ? 1.0 : 0.0;
    const bool near = chebyshev(s.agent_pos, spec_.container_cell) <= kSenseRadius;
    o.container_open_sensed = (near && s.container_open) ? 1.0 : 0.0;
    o.task_indicator[s.task.index] = 1.0;
    return o;
  }

  StepResult step(const EnvState& state, int action) const {
    if (terminal(state)) throw std::logic_error("step called on a terminal state");
    if (action < 0 || action >= kNumActions) throw std::invalid_argument("action out of range");
    StepResult r;
    EnvState n = state;
    switch (static_cast<Action>(action)) {
      case Action::north:
      case Action::east:
      case Action::south:
      case Action::west: {
        const Coord d = kMoveDeltas[action];
        const Coord to{n.agent_pos.x + d.x, n.agent_pos.y + d.y};
        if (spec_.is_free(to)) n.agent_pos = to;
        if (n.holding) n.object_pos = n.agent_pos;
        break;
      }
      case Action::open:
        if (!n.container_open && chebyshev(n.agent_pos, spec_.container_cell) <= kInteractRadius) {
          n.container_open = true;
          r.stage_info.opened = true;
        }
        break;
      case Action::pick:
        if (!n.holding && object_accessible(n) && chebyshev(n.agent_pos, n.object_pos) <= kInteractRadius) {
          n.holding = true;
          n.did_pick = true;
          n.object_pos = n.agent_pos;
          r.stage_info.picked = true;
        }
        break;
      case Action::place:
        if (n.holding && (n.task.is_main() || n.task.index == TaskId::kPlace) &&
            chebyshev(n.agent_pos, spec_.goal_cell) <= kInteractRadius) {
          n.holding = false;
          n.object_pos = spec_.goal_cell;
          r.stage_info.placed = true;
        }
        break;
    }
    n.step_count += 1;
    r.reward = n.task.is_main() ? reward_main(state, n) : reward_aux(n.task, state, n);
    r.success = success(n);
    r.done = r.success || n.step_count >= max_steps(n.task);
    r.observation = observe(n);
    r.next_state = n;
    return r;
  }

  // Subgoal the main-task shaping term measures progress toward.
  Coord main_subgoal(const EnvState& s) const {
    if (object_in_closed_container(s)) return spec_.container_cell;
    if (!s.holding) return s.object_pos;
    return spec_.goal_cell;
  }

  Coord aux_subgoal(TaskId task, const EnvState& s) const {
    switch (task.index) {
      case TaskId::kPlace: return spec_.goal_cell;
      case TaskId::kOpenContainer: return spec_.container_cell;
      default: return s.object_pos;
    }
  }

  double shaping(Coord subgoal, const EnvState& prev, const EnvState& next) const {
    return kShapingCoef * (geo_(prev.agent_pos, subgoal) - geo_(next.agent_pos, subgoal));
  }

  double reward_main(const EnvState& prev, const EnvState& next) const {
    double r = 0.0;
    if (!next.holding && next.object_pos == spec_.goal_cell) r += kSuccessBonus;
    if (!prev.container_open && next.container_open) r += kOpenBonus;
    if (!prev.did_pick && next.did_pick) r += kPickBonus;
    return r + shaping(main_subgoal(prev), prev, next);
  }

  double reward_aux(TaskId task, const EnvState& prev, const EnvState& next) const {
    if (task.is_main() || !task.valid()) throw std::invalid_argument("reward_aux needs an auxiliary task");
    double r = 0.0;
    switch (task.index) {
      case TaskId::kPick:
      case TaskId::kPickFromContainer:
        if (next.did_pick) r += kSuccessBonus;
        if (!prev.did_pick && next.did_pick) r += kPickBonus;
        break;
      case TaskId::kPlace:
        if (!next.holding && next.object_pos == spec_.goal_cell) r += kSuccessBonus;
        break;
      case TaskId::kOpenContainer:
        if (next.container_open) r += kSuccessBonus;
        if (!prev.container_open && next.container_open) r += kOpenBonus;
        break;
    }
    return r + shaping(aux_subgoal(task, prev), prev, next);
  }

  // Remaining stage sequence for a main-task state.
  std::vector<Stage> oracle_task_plan(const EnvState& s) const {
    if (success(s)) return {};
    if (s.holding) return {Stage::place};
    if (object_in_closed_container(s)) return {Stage::open, Stage::pick_from_container, Stage::place};
    if (s.object_pos == spec_.container_cell) return {Stage::pick_from_container, Stage::place};
    return {Stage::pick, Stage::place};
  }

  const std::vector<Coord>& free_cells() const { return free_cells_; }

 private:
  void check_episode(const EpisodeConfig& ep) const {
    if (!spec_.is_free(ep.object_start) || !spec_.is_free(ep.agent_spawn))
      throw std::invalid_argument("episode coordinates must be free cells");
    if ((ep.difficulty == Difficulty::hard) != ep.object_in_container)
      throw std::invalid_argument("hard episodes and only hard episodes start in the container");
    if (ep.object_in_container && !(ep.object_start == spec_.container_cell))
      throw std::invalid_argument("object in container must start at the container cell");
  }

  GridWorldSpec spec_;
  GeodesicTable geo_;
  std::vector<Coord> free_cells_;
  std::vector<Coord> object_cells_;
  std::vector<Coord> near_container_cells_;
};

}  // namespace auxdistill
