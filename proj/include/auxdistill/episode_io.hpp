#pragma once

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "auxdistill/environment.hpp"

namespace auxdistill {

// Episode datasets are stored one JSON object per line:
// {"seed":..,"split":"train","difficulty":"easy","object_start":[x,y],
//  "object_in_container":false,"agent_spawn":[x,y]}
inline nlohmann::json episode_to_json(const EpisodeConfig& ep) {
  return {{"seed", ep.seed},
          {"split", std::string(split_name(ep.split))},
          {"difficulty", std::string(difficulty_name(ep.difficulty))},
          {"object_start", {ep.object_start.x, ep.object_start.y}},
          {"object_in_container", ep.object_in_container},
          {"agent_spawn", {ep.agent_spawn.x, ep.agent_spawn.y}}};
}

inline EpisodeConfig episode_from_json(const nlohmann::json& j) {
  EpisodeConfig ep;
  ep.seed = j.at("seed").get<std::uint64_t>();
  const auto split = j.at("split").get<std::string>();
  if (split != "train" && split != "eval") throw std::invalid_argument("bad split: " + split);
  ep.split = split == "train" ? Split::train : Split::eval;
  const auto diff = j.at("difficulty").get<std::string>();
  if (diff != "easy" && diff != "hard") throw std::invalid_argument("bad difficulty: " + diff);
  ep.difficulty = diff == "easy" ? Difficulty::easy : Difficulty::hard;
  ep.object_start = {j.at("object_start").at(0).get<int>(), j.at("object_start").at(1).get<int>()};
  ep.object_in_container = j.at("object_in_container").get<bool>();
  ep.agent_spawn = {j.at("agent_spawn").at(0).get<int>(), j.at("agent_spawn").at(1).get<int>()};
  return ep;
}

inline void write_episodes(std::ostream& os, const std::vector<EpisodeConfig>& eps) {
  for (const auto& ep : eps) os << episode_to_json(ep).dump() << '\n';
}

inline std::vector<EpisodeConfig> read_episodes(std::istream& is) {
  std::vector<EpisodeConfig> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("episode record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace auxdistill
