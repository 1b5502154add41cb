#pragma once

#include "auxdistill/environment.hpp"

namespace auxdistill {

// Scripted shortest-path expert: walks the geodesic toward the current
// interaction target and fires the matching interaction once within reach.
inline int expert_action(const MiniRearrange& env, const EnvState& s) {
  const auto& spec = env.spec();
  Coord target;
  Action interaction;
  auto pick_target = [&](Stage stage) {
    switch (stage) {
      case Stage::open:
        target = spec.container_cell;
        interaction = Action::open;
        break;
      case Stage::pick:
      case Stage::pick_from_container:
        target = s.object_pos;
        interaction = Action::pick;
        break;
      case Stage::place:
        target = spec.goal_cell;
        interaction = Action::place;
        break;
    }
  };
  switch (s.task.index) {
    case TaskId::kMain: {
      const auto plan = env.oracle_task_plan(s);
      pick_target(plan.empty() ? Stage::place : plan.front());
      break;
    }
    case TaskId::kPick: pick_target(Stage::pick); break;
    case TaskId::kPickFromContainer: pick_target(Stage::pick_from_container); break;
    case TaskId::kPlace: pick_target(Stage::place); break;
    default: pick_target(Stage::open); break;
  }
  if (chebyshev(s.agent_pos, target) <= kInteractRadius) return static_cast<int>(interaction);
  int best = 0;
  int best_dist = GeodesicTable::kUnreachable;
  for (int a = 0; a < 4; ++a) {
    const Coord n{s.agent_pos.x + kMoveDeltas[a].x, s.agent_pos.y + kMoveDeltas[a].y};
    if (!spec.is_free(n)) continue;
    const int d = env.geodesic(n, target);
    if (d < best_dist) {
      best_dist = d;
      best = a;
    }
  }
  return best;
}

}  // namespace auxdistill
