#pragma once

#include <array>
#include <string>
#include <string_view>

#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

// Desk-scale stand-in for simulator fitness. It scores structural motifs only
// and makes no claim about physical behaviour.
//
// Every feature is a ratio of cell counts or of interface-edge counts, so it is
// unchanged by k x k tiling: cell counts scale by k^2, and every edge between
// two different cells (or a cell and the grid border) appears exactly k times.
//
//   actuator_balance   1 - |A/N - 0.4| / 0.6, with A actuators among N cells
//   bottom_material    occupied cells in the lowest occupied row / n
//   actuator_support   rigid neighbours / non-actuator sides over all actuator
//                      sides (grid border and empty cells count as sides)
//   rigid_frame        perimeter of the largest 4-connected rigid component
//                      / 4n, clipped to 1
//   soft_contact       soft cells / occupied cells in the lowest occupied row
//
// Changing any feature or weight invalidates the golden values in the tests.

struct SurrogateFeatures {
  double actuator_balance = 0.0;
  double bottom_material = 0.0;
  double actuator_support = 0.0;
  double rigid_frame = 0.0;
  double soft_contact = 0.0;
};

struct SurrogateProfile {
  std::string name;
  double w_actuator_balance;
  double w_bottom_material;
  double w_actuator_support;
  double w_rigid_frame;
  double w_soft_contact;
};

const SurrogateProfile& walker_like();
const SurrogateProfile& carrier_like();
const SurrogateProfile& pusher_like();

/// Profile by name ("walker_like", ...). Throws std::invalid_argument.
const SurrogateProfile& surrogate_profile(std::string_view name);

/// Profile used for a task or env id (Carrier*, Pusher*, otherwise walker_like).
const SurrogateProfile& profile_for_task(std::string_view task);

/// Throws InvalidBody for bodies failing check_validity.
SurrogateFeatures surrogate_features(const Body& body);
double surrogate_fitness(const Body& body, const SurrogateProfile& profile);
double surrogate_fitness(const Body& body, std::string_view profile_name);

}  // namespace morphoskill
