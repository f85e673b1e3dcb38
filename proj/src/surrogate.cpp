#include "morphoskill/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "morphoskill/errors.hpp"

namespace morphoskill {

const SurrogateProfile& walker_like() {
  static const SurrogateProfile p{"walker_like", 2.0, 1.0, 4.0, 1.5, 1.0};
  return p;
}

const SurrogateProfile& carrier_like() {
  static const SurrogateProfile p{"carrier_like", 1.5, 1.5, 3.0, 2.5, 1.0};
  return p;
}

const SurrogateProfile& pusher_like() {
  static const SurrogateProfile p{"pusher_like", 1.5, 1.0, 3.0, 1.5, 2.5};
  return p;
}

const SurrogateProfile& surrogate_profile(std::string_view name) {
  for (const auto* p : {&walker_like(), &carrier_like(), &pusher_like()}) {
    if (p->name == name) return *p;
  }
  throw std::invalid_argument("unknown surrogate profile: " + std::string(name));
}

const SurrogateProfile& profile_for_task(std::string_view task) {
  if (task.rfind("Carrier", 0) == 0) return carrier_like();
  if (task.rfind("Pusher", 0) == 0) return pusher_like();
  return walker_like();
}

namespace {

int lowest_occupied_row(const Body& b) {
  for (int r = b.size() - 1; r >= 0; --r) {
    for (int c = 0; c < b.size(); ++c) {
      if (b.at(r, c) != 0) return r;
    }
  }
  return -1;
}

int largest_rigid_perimeter(const Body& b) {
  const int n = b.size();
  std::vector<int> label(static_cast<std::size_t>(n) * n, -1);
  int best = 0;
  int next = 0;
  std::vector<int> stack;
  for (int start = 0; start < n * n; ++start) {
    if (b.at(start / n, start % n) != 1 || label[start] >= 0) continue;
    const int id = next++;
    std::vector<int> cells;
    stack.push_back(start);
    label[start] = id;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      cells.push_back(i);
      const int r = i / n;
      const int c = i % n;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        if (!b.in_bounds(rc[0], rc[1])) continue;
        const int j = rc[0] * n + rc[1];
        if (b.at(rc[0], rc[1]) == 1 && label[j] < 0) {
          label[j] = id;
          stack.push_back(j);
        }
      }
    }
    int perimeter = 0;
    for (int i : cells) {
      const int r = i / n;
      const int c = i % n;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        if (!b.in_bounds(rc[0], rc[1]) || label[rc[0] * n + rc[1]] != id) ++perimeter;
      }
    }
    // Equal perimeters tie harmlessly; only the value is used.
    best = std::max(best, perimeter);
  }
  return best;
}

}  // namespace

SurrogateFeatures surrogate_features(const Body& body) {
  if (!is_valid(body)) throw InvalidBody("surrogate requires a valid body");
  const int n = body.size();
  SurrogateFeatures f;

  int occupied = 0;
  int actuators = 0;
  int actuator_sides = 0;
  int rigid_sides = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int code = body.at(r, c);
      if (code == 0) continue;
      ++occupied;
      if (!is_actuator(code)) continue;
      ++actuators;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        const int other = body.in_bounds(rc[0], rc[1]) ? body.at(rc[0], rc[1]) : 0;
        if (is_actuator(other)) continue;
        ++actuator_sides;
        if (other == 1) ++rigid_sides;
      }
    }
  }
  const double actuator_share = static_cast<double>(actuators) / occupied;
  f.actuator_balance = 1.0 - std::abs(actuator_share - 0.4) / 0.6;
  f.actuator_support = actuator_sides == 0 ? 0.0 : static_cast<double>(rigid_sides) / actuator_sides;

  const int bottom = lowest_occupied_row(body);
  int bottom_occupied = 0;
  int bottom_soft = 0;
  for (int c = 0; c < n; ++c) {
    const int code = body.at(bottom, c);
    if (code != 0) ++bottom_occupied;
    if (code == 2) ++bottom_soft;
  }
  f.bottom_material = static_cast<double>(bottom_occupied) / n;
  f.soft_contact = static_cast<double>(bottom_soft) / bottom_occupied;
  f.rigid_frame = std::min(1.0, static_cast<double>(largest_rigid_perimeter(body)) / (4.0 * n));
  return f;
}

double surrogate_fitness(const Body& body, const SurrogateProfile& p) {
  const auto f = surrogate_features(body);
  return p.w_actuator_balance * f.actuator_balance + p.w_bottom_material * f.bottom_material +
         p.w_actuator_support * f.actuator_support + p.w_rigid_frame * f.rigid_frame +
         p.w_soft_contact * f.soft_contact;
}

double surrogate_fitness(const Body& body, std::string_view profile_name) {
  return surrogate_fitness(body, surrogate_profile(profile_name));
}

}  // namespace morphoskill
