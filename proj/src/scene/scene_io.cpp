#include "scenediff/scene/scene_io.hpp"

#include <fstream>

#include "json.hpp"
#include "scenediff/common.hpp"

namespace scenediff {

using nlohmann::json;

namespace {

const json& require_field(const json& j, const char* name, const char* ctx) {
  auto it = j.find(name);
  if (it == j.end()) {
    throw DataError(std::string("scene: missing field '") + name + "' in " + ctx);
  }
  return *it;
}

double require_number(const json& j, const char* name, const char* ctx) {
  const json& f = require_field(j, name, ctx);
  if (!f.is_number()) {
    throw DataError(std::string("scene: field '") + name + "' in " + ctx +
                    " must be a number");
  }
  return f.get<double>();
}

DenseArray parse_track_block(const json& arr, std::int64_t inner,
                             const char* ctx) {
  if (!arr.is_array() || arr.empty()) {
    throw DataError(std::string("scene: '") + ctx + "' must be a non-empty array");
  }
  const std::int64_t B = static_cast<std::int64_t>(arr.size());
  const std::int64_t T = static_cast<std::int64_t>(arr[0].size());
  DenseArray out({B, T, inner});
  for (std::int64_t b = 0; b < B; ++b) {
    if (static_cast<std::int64_t>(arr[b].size()) != T) {
      throw DataError(std::string("scene: '") + ctx +
                      "' rows must have equal length");
    }
    for (std::int64_t t = 0; t < T; ++t) {
      const json& e = arr[b][t];
      if (static_cast<std::int64_t>(e.size()) != inner) {
        throw DataError(std::string("scene: '") + ctx + "' entries must have " +
                        std::to_string(inner) + " values");
      }
      for (std::int64_t k = 0; k < inner; ++k) {
        out[(b * T + t) * inner + k] = e[k].get<double>();
      }
    }
  }
  return out;
}

json track_block_to_json(const DenseArray& a) {
  const std::int64_t B = a.dim(0), T = a.dim(1), K = a.dim(2);
  json out = json::array();
  for (std::int64_t b = 0; b < B; ++b) {
    json row = json::array();
    for (std::int64_t t = 0; t < T; ++t) {
      json e = json::array();
      for (std::int64_t k = 0; k < K; ++k) e.push_back(a[(b * T + t) * K + k]);
      row.push_back(std::move(e));
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

SceneRecord scene_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("scene: invalid JSON: ") + e.what());
  }
  const int version = static_cast<int>(require_number(j, "version", "root"));
  if (version != 1) {
    throw DataError("scene: unsupported version " + std::to_string(version));
  }

  SceneRecord rec;
  Scene& s = rec.scene;
  s.dt = require_number(j, "dt", "root");

  for (const json& lj : require_field(j, "lanes", "root")) {
    Lane lane;
    lane.id = static_cast<int>(require_number(lj, "id", "lane"));
    lane.half_width = require_number(lj, "half_width", "lane");
    if (lj.contains("left_id") && !lj["left_id"].is_null()) {
      lane.left_id = lj["left_id"].get<int>();
    }
    if (lj.contains("right_id") && !lj["right_id"].is_null()) {
      lane.right_id = lj["right_id"].get<int>();
    }
    for (const json& wj : require_field(lj, "waypoints", "lane")) {
      if (wj.size() != 3) {
        throw DataError("scene: lane waypoints must be [x, y, heading] triples");
      }
      lane.waypoints.push_back(
          {wj[0].get<double>(), wj[1].get<double>(), wj[2].get<double>()});
    }
    s.lanes.push_back(std::move(lane));
  }

  for (const json& aj : require_field(j, "agents", "root")) {
    Agent a;
    a.state.x = require_number(aj, "x", "agent");
    a.state.y = require_number(aj, "y", "agent");
    a.state.v = require_number(aj, "v", "agent");
    a.state.yaw = require_number(aj, "yaw", "agent");
    if (aj.contains("length")) a.length = aj["length"].get<double>();
    if (aj.contains("width")) a.width = aj["width"].get<double>();
    s.agents.push_back(a);
  }

  for (const json& hj : require_field(j, "history", "root")) {
    std::vector<AgentState> track;
    for (const json& e : hj) {
      if (e.size() != 4) {
        throw DataError("scene: history entries must be [x, y, v, yaw]");
      }
      track.push_back({e[0].get<double>(), e[1].get<double>(),
                       e[2].get<double>(), e[3].get<double>()});
    }
    s.history.push_back(std::move(track));
  }

  if (j.contains("goals") && !j["goals"].is_null()) {
    for (const json& gj : j["goals"]) {
      GoalSpec g;
      g.x = require_number(gj, "x", "goal");
      g.y = require_number(gj, "y", "goal");
      g.target_speed = require_number(gj, "target_speed", "goal");
      s.goals.push_back(g);
    }
  }

  if (j.contains("stop_region") && !j["stop_region"].is_null()) {
    const json& rj = j["stop_region"];
    StopRegion r;
    r.x_min = require_number(rj, "x_min", "stop_region");
    r.x_max = require_number(rj, "x_max", "stop_region");
    r.y_min = require_number(rj, "y_min", "stop_region");
    r.y_max = require_number(rj, "y_max", "stop_region");
    s.stop_region = r;
  }

  if (j.contains("expert") && !j["expert"].is_null()) {
    const json& ej = j["expert"];
    ExpertTrack track;
    track.states = parse_track_block(require_field(ej, "states", "expert"), 4,
                                     "expert.states");
    track.actions = parse_track_block(require_field(ej, "actions", "expert"), 2,
                                      "expert.actions");
    rec.expert = std::move(track);
  }

  s.validate();
  return rec;
}

std::string scene_to_json_text(const SceneRecord& rec) {
  const Scene& s = rec.scene;
  json j;
  j["version"] = 1;
  j["dt"] = s.dt;

  json lanes = json::array();
  for (const Lane& lane : s.lanes) {
    json lj;
    lj["id"] = lane.id;
    lj["half_width"] = lane.half_width;
    lj["left_id"] = lane.left_id ? json(*lane.left_id) : json(nullptr);
    lj["right_id"] = lane.right_id ? json(*lane.right_id) : json(nullptr);
    json wps = json::array();
    for (const auto& w : lane.waypoints) {
      wps.push_back(json::array({w.x, w.y, w.heading}));
    }
    lj["waypoints"] = std::move(wps);
    lanes.push_back(std::move(lj));
  }
  j["lanes"] = std::move(lanes);

  json agents = json::array();
  for (const Agent& a : s.agents) {
    json aj;
    aj["x"] = a.state.x;
    aj["y"] = a.state.y;
    aj["v"] = a.state.v;
    aj["yaw"] = a.state.yaw;
    aj["length"] = a.length;
    aj["width"] = a.width;
    agents.push_back(std::move(aj));
  }
  j["agents"] = std::move(agents);

  json history = json::array();
  for (const auto& track : s.history) {
    json tj = json::array();
    for (const AgentState& e : track) {
      tj.push_back(json::array({e.x, e.y, e.v, e.yaw}));
    }
    history.push_back(std::move(tj));
  }
  j["history"] = std::move(history);

  if (!s.goals.empty()) {
    json goals = json::array();
    for (const GoalSpec& g : s.goals) {
      goals.push_back({{"x", g.x}, {"y", g.y}, {"target_speed", g.target_speed}});
    }
    j["goals"] = std::move(goals);
  }
  if (s.stop_region) {
    j["stop_region"] = {{"x_min", s.stop_region->x_min},
                        {"x_max", s.stop_region->x_max},
                        {"y_min", s.stop_region->y_min},
                        {"y_max", s.stop_region->y_max}};
  }
  if (rec.expert) {
    j["expert"] = {{"states", track_block_to_json(rec.expert->states)},
                   {"actions", track_block_to_json(rec.expert->actions)}};
  }
  return j.dump(2);
}

SceneRecord load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("scene: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return scene_from_json_text(text);
}

void save_scene(const SceneRecord& record, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("scene: cannot write '" + path + "'");
  out << scene_to_json_text(record) << "\n";
}

}  // namespace scenediff
