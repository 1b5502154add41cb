#pragma once

#include <array>
#include <stdexcept>

#include "auxdistill/environment.hpp"

namespace auxdistill {

// w_i(s) for the auxiliary tasks, indexed by auxiliary TaskId - 1. Entries are
// exactly 0.0 or 1.0.
struct RelevanceVector {
  std::array<double, TaskId::kNumAux> weights{};

  double operator[](TaskId aux) const { return weights.at(static_cast<std::size_t>(aux.index - 1)); }
  double sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  friend bool operator==(const RelevanceVector&, const RelevanceVector&) = default;
};

// Reads privileged simulator state (container contents); the policy never
// sees this. Only main-task, non-terminal states are meaningful.
inline RelevanceVector relevance(const MiniRearrange& env, const EnvState& s) {
  if (!s.task.is_main()) throw std::invalid_argument("relevance is only defined on main-task states");
  RelevanceVector w;
  auto set = [&w](int task) { w.weights[static_cast<std::size_t>(task - 1)] = 1.0; };
  if (s.holding) {
    set(TaskId::kPlace);
  } else if (env.object_in_closed_container(s)) {
    set(TaskId::kOpenContainer);
  } else if (s.object_pos == env.spec().container_cell) {
    set(TaskId::kPickFromContainer);
  } else {
    set(TaskId::kPick);
  }
  return w;
}

}  // namespace auxdistill
