#include "aidflow/types.hpp"

#include <algorithm>

namespace aidflow {

std::string to_string(IncidentTemplate t) {
  switch (t) {
    case IncidentTemplate::separation: return "separation";
    case IncidentTemplate::strong_separation: return "strong_separation";
    case IncidentTemplate::one_sided_drop: return "one_sided_drop";
    case IncidentTemplate::double_sided_drop: return "double_sided_drop";
  }
  return "unknown";
}

IncidentTemplate incident_template_from_string(std::string_view s) {
  if (s == "separation") return IncidentTemplate::separation;
  if (s == "strong_separation") return IncidentTemplate::strong_separation;
  if (s == "one_sided_drop") return IncidentTemplate::one_sided_drop;
  if (s == "double_sided_drop") return IncidentTemplate::double_sided_drop;
  throw Error("unknown incident template '" + std::string(s) + "'");
}

std::string to_string(Direction d) { return d == Direction::east ? "east" : "west"; }

Direction direction_from_string(std::string_view s) {
  if (s == "east") return Direction::east;
  if (s == "west") return Direction::west;
  throw Error("unknown direction '" + std::string(s) + "'");
}

std::vector<DetectorPair> form_pairs(const std::vector<DetectorMeta>& detectors) {
  std::vector<DetectorPair> pairs;
  for (Direction dir : {Direction::east, Direction::west}) {
    std::vector<const DetectorMeta*> along;
    for (const auto& d : detectors)
      if (d.direction == dir) along.push_back(&d);
    std::stable_sort(along.begin(), along.end(), [dir](const DetectorMeta* a, const DetectorMeta* b) {
      return dir == Direction::east ? a->milepost_km < b->milepost_km : a->milepost_km > b->milepost_km;
    });
    for (std::size_t i = 0; i + 1 < along.size(); i += 2) {
      pairs.push_back({along[i]->detector_id + "-" + along[i + 1]->detector_id, along[i]->detector_id,
                       along[i + 1]->detector_id});
    }
  }
  return pairs;
}

}  // namespace aidflow
