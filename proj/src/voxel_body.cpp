#include "morphoskill/voxel_body.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "morphoskill/errors.hpp"
#include "morphoskill/rng.hpp"

namespace morphoskill {

Body::Body(int size, int fill) : size_(size), cells_(static_cast<std::size_t>(size) * size, fill) {
  if (size < 0) throw MalformedBody("negative body size");
}

Body::Body(int size, std::vector<int> cells) : size_(size), cells_(std::move(cells)) {
  if (size < 0 || cells_.size() != static_cast<std::size_t>(size) * size) {
    throw MalformedBody("cell count does not match size " + std::to_string(size));
  }
}

Body Body::from_rows(const std::vector<std::vector<int>>& rows) {
  const int n = static_cast<int>(rows.size());
  std::vector<int> cells;
  cells.reserve(static_cast<std::size_t>(n) * n);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != n) throw MalformedBody("body matrix is not square");
    cells.insert(cells.end(), row.begin(), row.end());
  }
  return Body(n, std::move(cells));
}

std::size_t Body::index(int row, int col) const {
  if (!in_bounds(row, col)) throw std::out_of_range("voxel index out of range");
  return static_cast<std::size_t>(row) * size_ + col;
}

std::vector<std::vector<int>> Body::rows() const {
  std::vector<std::vector<int>> out(size_);
  for (int r = 0; r < size_; ++r) {
    out[r].assign(cells_.begin() + static_cast<std::ptrdiff_t>(r) * size_,
                  cells_.begin() + static_cast<std::ptrdiff_t>(r + 1) * size_);
  }
  return out;
}

std::string Body::to_text() const {
  std::ostringstream out;
  for (int r = 0; r < size_; ++r) {
    if (r) out << '\n';
    for (int c = 0; c < size_; ++c) {
      if (c) out << ' ';
      out << at(r, c);
    }
  }
  return out.str();
}

std::vector<std::vector<int>> components(const Body& body) {
  const int n = body.size();
  const auto cells = body.cells();
  std::vector<char> seen(cells.size(), 0);
  std::vector<std::vector<int>> out;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(cells.size()); ++start) {
    if (cells[start] == 0 || seen[start]) continue;
    std::vector<int> comp;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const int r = i / n;
      const int c = i % n;
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        if (!body.in_bounds(rc[0], rc[1])) continue;
        const int j = rc[0] * n + rc[1];
        if (cells[j] != 0 && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

ValidityReport check_validity(const Body& body) {
  ValidityReport report;
  const auto cells = body.cells();
  report.legal_codes = std::all_of(cells.begin(), cells.end(), is_legal_code);
  report.has_actuator = std::any_of(cells.begin(), cells.end(), is_actuator);

  const auto comps = components(body);
  report.component_count = static_cast<int>(comps.size());
  report.connected = comps.size() == 1;
  std::size_t total = 0;
  std::size_t largest = 0;
  for (const auto& c : comps) {
    total += c.size();
    largest = std::max(largest, c.size());
  }
  report.largest_component_fraction = total == 0 ? 0.0 : static_cast<double>(largest) / total;
  report.is_valid = report.legal_codes && report.connected && report.has_actuator && total > 0;
  return report;
}

std::optional<Body> repair(const Body& body) {
  std::vector<int> cells(body.cells().begin(), body.cells().end());
  // R1: illegal codes (including FIXED) are cleared.
  for (int& code : cells) {
    if (!is_legal_code(code)) code = 0;
  }
  Body out(body.size(), std::move(cells));

  // R2: erase strays around a dominant, actuated component.
  auto comps = components(out);
  if (comps.size() > 1) {
    std::size_t total = 0;
    for (const auto& c : comps) total += c.size();
    const auto dominant = std::max_element(comps.begin(), comps.end(),
                                           [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const auto flat = out.cells();
    const bool actuated = std::any_of(dominant->begin(), dominant->end(),
                                      [&](int i) { return is_actuator(flat[i]); });
    const double share = static_cast<double>(dominant->size()) / static_cast<double>(total);
    if (actuated && share >= kDominantComponentShare) {
      const int n = out.size();
      for (auto it = comps.begin(); it != comps.end(); ++it) {
        if (it == dominant) continue;
        for (int i : *it) out.set(i / n, i % n, 0);
      }
    }
  }

  if (!is_valid(out)) return std::nullopt;
  return out;
}

Body ga_mutate(const Body& parent, std::uint64_t seed, double per_voxel_rate, int max_attempts) {
  Rng rng{seed};
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> code(0, kNumVoxelCodes - 1);

  std::vector<int> cells;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    cells.assign(parent.cells().begin(), parent.cells().end());
    for (int& c : cells) {
      if (coin(rng) < per_voxel_rate) c = code(rng);
    }
    Body child(parent.size(), cells);
    if (is_valid(child)) return child;
  }
  if (!cells.empty()) {
    if (auto fixed = repair(Body(parent.size(), cells))) return *fixed;
  }
  throw MutationExhausted("no valid child after " + std::to_string(max_attempts) + " attempts");
}

VoxelDiff diff(const Body& parent, const Body& child) {
  if (parent.size() != child.size()) {
    throw SizeMismatch("diff: parent is " + std::to_string(parent.size()) + "x" + std::to_string(parent.size()) +
                       ", child is " + std::to_string(child.size()) + "x" + std::to_string(child.size()));
  }
  VoxelDiff d;
  for (int r = 0; r < parent.size(); ++r) {
    for (int c = 0; c < parent.size(); ++c) {
      if (parent.at(r, c) != child.at(r, c)) d.edits.push_back({r, c, parent.at(r, c), child.at(r, c)});
    }
  }
  return d;
}

Body upsample_tiling(const Body& source, int factor) {
  if (factor < 1) throw std::invalid_argument("tiling factor must be positive");
  const int n = source.size() * factor;
  Body out(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) out.set(r, c, source.at(r / factor, c / factor));
  }
  return out;
}

Body random_valid_body(int size, std::uint64_t seed, int max_attempts) {
  Rng rng{seed};
  std::uniform_int_distribution<int> code(0, kNumVoxelCodes - 1);
  std::vector<int> cells(static_cast<std::size_t>(size) * size);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    for (int& c : cells) c = code(rng);
    Body b(size, cells);
    if (is_valid(b)) return b;
  }
  throw MutationExhausted("no valid random body after " + std::to_string(max_attempts) + " draws");
}

nlohmann::json to_json(const Body& body) { return body.rows(); }

Body body_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw MalformedBody("body must be a non-empty array of arrays");
  std::vector<std::vector<int>> rows;
  for (const auto& row : j) {
    if (!row.is_array()) throw MalformedBody("body row is not an array");
    std::vector<int> r;
    for (const auto& v : row) {
      if (!v.is_number_integer()) throw MalformedBody("body entries must be integers");
      r.push_back(v.get<int>());
    }
    rows.push_back(std::move(r));
  }
  return Body::from_rows(rows);
}

nlohmann::json to_json(const VoxelDiff& d) {
  auto out = nlohmann::json::array();
  for (const auto& e : d.edits) out.push_back({e.row, e.col, e.old_code, e.new_code});
  return out;
}

}  // namespace morphoskill
