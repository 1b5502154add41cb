#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "auxdistill/environment.hpp"
#include "auxdistill/episode_io.hpp"
#include "auxdistill/expert.hpp"
#include "oracles.hpp"

using namespace auxdistill;

namespace {

const MiniRearrange& env9() {
  static const MiniRearrange env;
  return env;
}

EpisodeConfig first_episode(Difficulty d, Split split = Split::train) {
  for (std::uint64_t s = 0;; ++s) {
    auto ep = env9().generate_episode(s, split);
    if (ep.difficulty == d) return ep;
  }
}

// Random legal trajectory for `task`; returns every visited state.
std::vector<EnvState> random_walk(TaskId task, const EpisodeConfig& ep, std::mt19937_64& rng, int max_actions = 7) {
  std::vector<EnvState> out{env9().reset(task, ep)};
  while (!env9().terminal(out.back())) {
    const int a = std::uniform_int_distribution<int>(0, max_actions - 1)(rng);
    out.push_back(env9().step(out.back(), a).next_state);
  }
  return out;
}

}  // namespace

TEST(Grid, GeodesicTableMatchesBfs) {
  const auto& spec = env9().spec();
  for (int i = 0; i < spec.cell_count(); ++i) {
    const Coord a = spec.coord(i);
    if (!spec.is_free(a)) continue;
    const auto d = oracle::bfs(spec, a);
    for (int j = 0; j < spec.cell_count(); ++j) {
      const Coord b = spec.coord(j);
      if (!spec.is_free(b)) continue;
      ASSERT_EQ(env9().geodesic(a, b), d[static_cast<std::size_t>(j)]);
    }
  }
}

TEST(Grid, RejectsMalformedLayouts) {
  auto spec = GridWorldSpec::default_9x9();
  spec.goal_cell = spec.container_cell;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
  spec = GridWorldSpec::default_9x9();
  spec.walls.push_back(spec.goal_cell);
  EXPECT_THROW(MiniRearrange{spec}, std::invalid_argument);
}

TEST(Episode, GenerationIsDeterministic) {
  for (std::uint64_t s : {0ULL, 17ULL, 999'999ULL})
    for (Split sp : {Split::train, Split::eval}) {
      const auto a = env9().generate_episode(s, sp);
      const auto b = env9().generate_episode(s, sp);
      EXPECT_EQ(a.seed, b.seed);
      EXPECT_EQ(a.difficulty, b.difficulty);
      EXPECT_EQ(a.object_start, b.object_start);
      EXPECT_EQ(a.agent_spawn, b.agent_spawn);
    }
}

TEST(Episode, EasyFractionIsBalanced) {
  int easy = 0;
  for (std::uint64_t s = 0; s < 10'000; ++s) easy += env9().generate_episode(s, Split::train).difficulty == Difficulty::easy;
  EXPECT_GE(easy, 4800);
  EXPECT_LE(easy, 5200);
}

TEST(Episode, HardEpisodesStartInContainer) {
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto ep = env9().generate_episode(s, Split::train);
    if (ep.difficulty == Difficulty::hard) {
      EXPECT_TRUE(ep.object_in_container);
      EXPECT_EQ(ep.object_start, env9().spec().container_cell);
    } else {
      EXPECT_FALSE(ep.object_in_container);
      EXPECT_FALSE(ep.object_start == env9().spec().container_cell);
      EXPECT_FALSE(ep.object_start == env9().spec().goal_cell);
    }
    EXPECT_FALSE(ep.agent_spawn == ep.object_start);
  }
}

TEST(Episode, SplitsUseDisjointSeedRanges) {
  for (std::uint64_t s : {0ULL, 5ULL, 123'456'789ULL}) {
    EXPECT_LT(env9().generate_episode(s, Split::train).seed, kTrainSeedCount);
    const auto e = env9().generate_episode(s, Split::eval).seed;
    EXPECT_GE(e, kEvalSeedBase);
    EXPECT_LT(e, kEvalSeedBase + kEvalSeedCount);
  }
}

TEST(Episode, JsonlRoundTrip) {
  std::vector<EpisodeConfig> eps;
  for (std::uint64_t s = 0; s < 20; ++s) eps.push_back(env9().generate_episode(s, s % 2 ? Split::eval : Split::train));
  std::stringstream ss;
  write_episodes(ss, eps);
  const auto back = read_episodes(ss);
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(back[i].seed, eps[i].seed);
    EXPECT_EQ(back[i].split, eps[i].split);
    EXPECT_EQ(back[i].difficulty, eps[i].difficulty);
    EXPECT_EQ(back[i].object_start, eps[i].object_start);
    EXPECT_EQ(back[i].agent_spawn, eps[i].agent_spawn);
  }
}

TEST(Episode, JsonlErrorNamesTheLine) {
  std::stringstream ss;
  write_episodes(ss, {env9().generate_episode(0, Split::train)});
  ss << "{\"seed\": 1}\n";
  try {
    read_episodes(ss);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("record 2"), std::string::npos) << e.what();
  }
}

TEST(Reset, PlaceStartsHolding) {
  for (Difficulty d : {Difficulty::easy, Difficulty::hard}) {
    const auto s = env9().reset(TaskId{TaskId::kPlace}, first_episode(d));
    EXPECT_TRUE(s.holding);
    EXPECT_EQ(s.object_pos, s.agent_pos);
  }
}

TEST(Reset, MainEasyStartsOpenAndHardStartsClosed) {
  const auto e = env9().reset(kMainTask, first_episode(Difficulty::easy));
  EXPECT_TRUE(e.container_open);
  EXPECT_FALSE(e.holding);
  const auto h = env9().reset(kMainTask, first_episode(Difficulty::hard));
  EXPECT_FALSE(h.container_open);
  EXPECT_EQ(h.object_pos, env9().spec().container_cell);
}

TEST(Reset, OpenContainerStartsClosed) {
  for (Difficulty d : {Difficulty::easy, Difficulty::hard}) {
    const auto s = env9().reset(TaskId{TaskId::kOpenContainer}, first_episode(d));
    EXPECT_FALSE(s.container_open);
    EXPECT_FALSE(s.holding);
  }
}

TEST(Reset, PickFromContainerSpawnsNearOpenContainer) {
  for (std::uint64_t k = 0; k < 200; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    if (ep.difficulty != Difficulty::hard) continue;
    const auto s = env9().reset(TaskId{TaskId::kPickFromContainer}, ep);
    EXPECT_TRUE(s.container_open);
    EXPECT_EQ(s.object_pos, env9().spec().container_cell);
    EXPECT_LE(chebyshev(s.agent_pos, env9().spec().container_cell), 2);
  }
}

TEST(Reset, RejectsIncompatibleLayouts) {
  EXPECT_THROW(env9().reset(TaskId{TaskId::kPick}, first_episode(Difficulty::hard)), std::invalid_argument);
  EXPECT_THROW(env9().reset(TaskId{TaskId::kPickFromContainer}, first_episode(Difficulty::easy)),
               std::invalid_argument);
}

TEST(Step, MoveIntoWallLeavesAgentAndPaysNothing) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {3, 2};  // wall cell (4, 2) lies to the east
  if (ep.object_start == ep.agent_spawn) ep.object_start = {0, 8};
  const auto s = env9().reset(kMainTask, ep);
  const auto r = env9().step(s, static_cast<int>(Action::east));
  EXPECT_EQ(r.next_state.agent_pos, s.agent_pos);
  EXPECT_DOUBLE_EQ(r.reward, 0.0);
}

TEST(Step, MoveOutOfBoundsLeavesAgent) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {0, 0};
  if (ep.object_start == ep.agent_spawn) ep.object_start = {0, 8};
  const auto s = env9().reset(kMainTask, ep);
  EXPECT_EQ(env9().step(s, static_cast<int>(Action::north)).next_state.agent_pos, s.agent_pos);
  EXPECT_EQ(env9().step(s, static_cast<int>(Action::west)).next_state.agent_pos, s.agent_pos);
}

TEST(Step, PickAdjacentObjectPaysPickBonus) {
  auto ep = first_episode(Difficulty::easy);
  ep.object_start = {6, 6};
  ep.agent_spawn = {5, 5};
  const auto s = env9().reset(kMainTask, ep);
  const auto r = env9().step(s, static_cast<int>(Action::pick));
  EXPECT_TRUE(r.next_state.holding);
  EXPECT_TRUE(r.stage_info.picked);
  EXPECT_DOUBLE_EQ(r.reward, 2.0);
}

TEST(Step, PickInsideClosedContainerFails) {
  auto ep = first_episode(Difficulty::hard);
  ep.agent_spawn = {2, 2};
  const auto s = env9().reset(kMainTask, ep);
  const auto r = env9().step(s, static_cast<int>(Action::pick));
  EXPECT_FALSE(r.next_state.holding);
  EXPECT_DOUBLE_EQ(r.reward, 0.0);
  const auto opened = env9().step(s, static_cast<int>(Action::open));
  EXPECT_TRUE(opened.next_state.container_open);
  EXPECT_DOUBLE_EQ(opened.reward, 5.0);
  EXPECT_TRUE(env9().step(opened.next_state, static_cast<int>(Action::pick)).next_state.holding);
}

TEST(Step, PlaceOnGoalSucceeds) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {6, 7};
  ep.object_start = {6, 6};
  auto s = env9().reset(kMainTask, ep);
  s = env9().step(s, static_cast<int>(Action::pick)).next_state;
  const auto r = env9().step(s, static_cast<int>(Action::place));
  EXPECT_TRUE(r.success);
  EXPECT_TRUE(r.done);
  EXPECT_EQ(r.next_state.object_pos, env9().spec().goal_cell);
  EXPECT_DOUBLE_EQ(r.reward, 10.0);
}

TEST(Step, FinalPlacingStepIncludesShaping) {
  // Walking onto the goal cell while holding, then placing: the place step has
  // zero distance delta, the approach step pays +0.1.
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {7, 5};
  ep.object_start = {7, 4};
  auto s = env9().reset(kMainTask, ep);
  s = env9().step(s, static_cast<int>(Action::pick)).next_state;
  const auto approach = env9().step(s, static_cast<int>(Action::south));
  EXPECT_NEAR(approach.reward, 0.1, 1e-12);
  const auto place = env9().step(approach.next_state, static_cast<int>(Action::place));
  EXPECT_NEAR(place.reward, 10.0 + 0.1 * (env9().geodesic({7, 6}, {7, 7}) - env9().geodesic({7, 6}, {7, 7})), 1e-12);
  EXPECT_TRUE(place.success);
}

TEST(Step, PlaceIsANoOpInPickTask) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {6, 7};
  ep.object_start = {6, 6};
  auto s = env9().reset(TaskId{TaskId::kOpenContainer}, ep);
  s.holding = true;
  s.object_pos = s.agent_pos;
  const auto r = env9().step(s, static_cast<int>(Action::place));
  EXPECT_TRUE(r.next_state.holding);
}

TEST(Step, SteppingTerminalStateThrows) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {6, 7};
  ep.object_start = {6, 6};
  auto s = env9().reset(kMainTask, ep);
  s = env9().step(s, static_cast<int>(Action::pick)).next_state;
  s = env9().step(s, static_cast<int>(Action::place)).next_state;
  EXPECT_THROW(env9().step(s, 0), std::logic_error);
  EXPECT_THROW(env9().step(env9().reset(kMainTask, ep), 7), std::invalid_argument);
}

TEST(Step, DoneAtStepBudget) {
  const auto ep = first_episode(Difficulty::hard);
  auto s = env9().reset(TaskId{TaskId::kPlace}, ep);
  int steps = 0;
  StepResult r;
  do {
    r = env9().step(s, static_cast<int>(Action::open));
    s = r.next_state;
    ++steps;
  } while (!r.done);
  EXPECT_EQ(steps, env9().spec().max_steps_aux);
  EXPECT_FALSE(r.success);
}

TEST(Reward, OneCellCloserToObjectPaysShaping) {
  const auto& spec = env9().spec();
  std::mt19937_64 rng(3);
  int checked = 0;
  for (std::uint64_t k = 0; k < 200 && checked < 50; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    if (ep.difficulty != Difficulty::easy) continue;
    const auto s = env9().reset(kMainTask, ep);
    const auto d = oracle::bfs(spec, ep.object_start);
    const auto here = d[static_cast<std::size_t>(spec.index(s.agent_pos))];
    for (int a = 0; a < 4; ++a) {
      const Coord to{s.agent_pos.x + kMoveDeltas[a].x, s.agent_pos.y + kMoveDeltas[a].y};
      if (!spec.is_free(to) || d[static_cast<std::size_t>(spec.index(to))] != here - 1) continue;
      EXPECT_NEAR(env9().step(s, a).reward, 0.1, 1e-12);
      ++checked;
      break;
    }
  }
  EXPECT_GE(checked, 20);
}

TEST(Reward, OpenContainerTaskPaysSuccessAndOpen) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {2, 1};
  if (ep.object_start == ep.agent_spawn) ep.object_start = {0, 8};
  const auto s = env9().reset(TaskId{TaskId::kOpenContainer}, ep);
  const auto r = env9().step(s, static_cast<int>(Action::open));
  EXPECT_TRUE(r.success);
  EXPECT_DOUBLE_EQ(r.reward, 15.0);
}

TEST(Reward, PlaceTaskShapingTowardGoal) {
  auto ep = first_episode(Difficulty::easy);
  ep.agent_spawn = {7, 3};
  if (ep.object_start == ep.agent_spawn) ep.object_start = {0, 8};
  const auto s = env9().reset(TaskId{TaskId::kPlace}, ep);
  EXPECT_NEAR(env9().step(s, static_cast<int>(Action::south)).reward, 0.1, 1e-12);
  EXPECT_NEAR(env9().step(s, static_cast<int>(Action::north)).reward, -0.1, 1e-12);
}

TEST(Reward, PickTaskIdleStepPaysNothing) {
  const auto s = env9().reset(TaskId{TaskId::kPick}, first_episode(Difficulty::easy));
  EXPECT_DOUBLE_EQ(env9().step(s, static_cast<int>(Action::open)).reward, 0.0);
}

TEST(Plan, ExamplesAtReset) {
  const auto e = env9().oracle_task_plan(env9().reset(kMainTask, first_episode(Difficulty::easy)));
  EXPECT_EQ(e, (std::vector<Stage>{Stage::pick, Stage::place}));
  const auto h = env9().oracle_task_plan(env9().reset(kMainTask, first_episode(Difficulty::hard)));
  EXPECT_EQ(h, (std::vector<Stage>{Stage::open, Stage::pick_from_container, Stage::place}));
  auto s = env9().reset(kMainTask, first_episode(Difficulty::hard));
  s.container_open = true;
  EXPECT_EQ(env9().oracle_task_plan(s), (std::vector<Stage>{Stage::pick_from_container, Stage::place}));
  s.holding = true;
  s.object_pos = s.agent_pos;
  EXPECT_EQ(env9().oracle_task_plan(s), (std::vector<Stage>{Stage::place}));
}

TEST(Observation, ContainerSensingRadius) {
  auto s = env9().reset(kMainTask, first_episode(Difficulty::easy));
  ASSERT_TRUE(s.container_open);
  s.agent_pos = {3, 3};
  EXPECT_EQ(env9().observe(s).container_open_sensed, 1.0);
  s.agent_pos = {3, 4};
  EXPECT_EQ(env9().observe(s).container_open_sensed, 0.0);
  s.agent_pos = {2, 2};
  s.container_open = false;
  EXPECT_EQ(env9().observe(s).container_open_sensed, 0.0);
}

TEST(Observation, TaskIndicatorIsOneHot) {
  const auto ep = first_episode(Difficulty::hard);
  for (int t : {0, 2, 3, 4}) {
    const auto flat = env9().observe(env9().reset(TaskId{t}, ep)).flatten();
    for (int c = 0; c < TaskId::kNumTasks; ++c) EXPECT_EQ(flat[kTaskIndicatorOffset + c], c == t ? 1.0 : 0.0);
  }
}

// Property tests over random trajectories.

TEST(Properties, TrajectoriesAreDeterministic) {
  for (std::uint64_t k = 0; k < 30; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    for (int t = 0; t < TaskId::kNumTasks; ++t) {
      if (!env9().compatible(TaskId{t}, ep)) continue;
      std::mt19937_64 r1(k), r2(k);
      const auto a = random_walk(TaskId{t}, ep, r1);
      const auto b = random_walk(TaskId{t}, ep, r2);
      ASSERT_EQ(a, b);
    }
  }
}

TEST(Properties, HoldingImpliesColocation) {
  std::mt19937_64 rng(11);
  for (std::uint64_t k = 0; k < 400; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    for (int t = 0; t < TaskId::kNumTasks; ++t) {
      if (!env9().compatible(TaskId{t}, ep)) continue;
      for (const auto& s : random_walk(TaskId{t}, ep, rng)) {
        if (s.holding) ASSERT_EQ(s.object_pos, s.agent_pos);
        ASSERT_LE(s.step_count, env9().max_steps(s.task));
      }
    }
  }
}

TEST(Properties, DidPickIsMonotone) {
  std::mt19937_64 rng(12);
  for (std::uint64_t k = 0; k < 200; ++k) {
    const auto traj = random_walk(kMainTask, env9().generate_episode(k, Split::train), rng);
    for (std::size_t i = 1; i < traj.size(); ++i) ASSERT_FALSE(traj[i - 1].did_pick && !traj[i].did_pick);
  }
}

TEST(Properties, ShapingTelescopes) {
  std::mt19937_64 rng(13);
  for (std::uint64_t k = 0; k < 200; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    if (ep.difficulty != Difficulty::easy) continue;
    auto s = env9().reset(kMainTask, ep);
    const auto d = oracle::bfs(env9().spec(), ep.object_start);
    const int d0 = d[static_cast<std::size_t>(env9().spec().index(s.agent_pos))];
    double total = 0.0;
    while (!env9().terminal(s)) {
      const auto r = env9().step(s, std::uniform_int_distribution<int>(0, 3)(rng));
      total += r.reward;
      s = r.next_state;
    }
    const int d1 = d[static_cast<std::size_t>(env9().spec().index(s.agent_pos))];
    ASSERT_NEAR(total, 0.1 * (d0 - d1), 1e-9);
  }
}

TEST(Properties, ExpertSolvesEveryTask) {
  for (int t = 0; t < TaskId::kNumTasks; ++t)
    for (Difficulty d : {Difficulty::easy, Difficulty::hard}) {
      int runs = 0;
      for (std::uint64_t k = 0; runs < 200; ++k) {
        const auto ep = env9().generate_episode(k, Split::train);
        if (ep.difficulty != d) continue;
        if (!env9().compatible(TaskId{t}, ep)) break;
        auto s = env9().reset(TaskId{t}, ep);
        while (!env9().terminal(s)) s = env9().step(s, expert_action(env9(), s)).next_state;
        ASSERT_TRUE(env9().success(s)) << task_name(TaskId{t}) << " seed " << ep.seed;
        ++runs;
      }
    }
}

TEST(Properties, ObservationAnchoredToObjectStart) {
  std::mt19937_64 rng(14);
  for (std::uint64_t k = 0; k < 100; ++k) {
    const auto ep = env9().generate_episode(k, Split::train);
    auto s = env9().reset(kMainTask, ep);
    while (!env9().terminal(s)) {
      const auto o = env9().observe(s);
      EnvState moved = s;
      moved.object_pos = {0, 8};
      EXPECT_EQ(env9().observe(moved).object_start_rel, o.object_start_rel);
      EXPECT_NEAR(o.object_start_rel[0] * 8 + s.agent_pos.x, ep.object_start.x, 1e-12);
      EXPECT_NEAR(o.object_start_rel[1] * 8 + s.agent_pos.y, ep.object_start.y, 1e-12);
      s = env9().step(s, expert_action(env9(), s)).next_state;
    }
  }
}

TEST(Properties, ExpertShrinksPlanMonotonically) {
  for (std::uint64_t k = 0; k < 200; ++k) {
    auto s = env9().reset(kMainTask, env9().generate_episode(k, Split::train));
    std::size_t len = env9().oracle_task_plan(s).size();
    while (!env9().terminal(s)) {
      s = env9().step(s, expert_action(env9(), s)).next_state;
      const std::size_t now = env9().oracle_task_plan(s).size();
      ASSERT_LE(now, len);
      len = now;
    }
    EXPECT_EQ(len, 0u);
  }
}
