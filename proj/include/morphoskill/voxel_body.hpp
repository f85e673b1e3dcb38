#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace morphoskill {

/// Robot-body voxel codes. FIXED (5) belongs to the environment and is never legal in a body.
enum class VoxelType : int {
  Empty = 0,
  Rigid = 1,
  Soft = 2,
  HorizontalActuator = 3,
  VerticalActuator = 4,
};

constexpr int kFixedCode = 5;
constexpr int kNumVoxelCodes = 5;

constexpr bool is_legal_code(int code) noexcept { return code >= 0 && code < kNumVoxelCodes; }
constexpr bool is_actuator(int code) noexcept { return code == 3 || code == 4; }

/// Square voxel grid, row-major, rows top-to-bottom and columns left-to-right.
///
/// Cells hold raw integer codes so that malformed proposals (illegal codes such
/// as FIXED) stay representable for logging and repair. Validity is checked
/// separately with `check_validity`.
class Body {
 public:
  Body() = default;
  explicit Body(int size, int fill = 0);
  Body(int size, std::vector<int> cells);

  static Body from_rows(const std::vector<std::vector<int>>& rows);

  int size() const noexcept { return size_; }
  int cell_count() const noexcept { return size_ * size_; }
  bool empty_grid() const noexcept { return size_ == 0; }

  int at(int row, int col) const { return cells_[index(row, col)]; }
  void set(int row, int col, int code) { cells_[index(row, col)] = code; }
  bool in_bounds(int row, int col) const noexcept {
    return row >= 0 && col >= 0 && row < size_ && col < size_;
  }

  std::span<const int> cells() const noexcept { return cells_; }
  std::vector<std::vector<int>> rows() const;

  /// Rows of space-separated integers, one row per line, no trailing newline.
  std::string to_text() const;

  friend bool operator==(const Body&, const Body&) = default;

 private:
  std::size_t index(int row, int col) const;

  int size_ = 0;
  std::vector<int> cells_;
};

struct ValidityReport {
  bool is_valid = false;
  bool connected = false;
  bool has_actuator = false;
  bool legal_codes = false;
  int component_count = 0;
  double largest_component_fraction = 0.0;
};

struct VoxelEdit {
  int row = 0;
  int col = 0;
  int old_code = 0;
  int new_code = 0;

  friend bool operator==(const VoxelEdit&, const VoxelEdit&) = default;
};

struct VoxelDiff {
  std::vector<VoxelEdit> edits;
  std::size_t count() const noexcept { return edits.size(); }
};

/// Non-empty 4-connected components; each entry lists flat cell indices.
std::vector<std::vector<int>> components(const Body& body);

ValidityReport check_validity(const Body& body);
inline bool is_valid(const Body& body) { return check_validity(body).is_valid; }

/// Minimum share of non-empty cells the dominant component must hold before
/// the other components are erased.
constexpr double kDominantComponentShare = 0.8;

/// Local repair: illegal codes become empty, then stray components are erased
/// if one component holds at least 80% of the material and an actuator.
/// Returns nullopt when the result is still invalid.
std::optional<Body> repair(const Body& body);

constexpr double kDefaultMutationRate = 0.1;
constexpr int kDefaultMutationAttempts = 50;

/// Per-voxel uniform resampling. Throws MutationExhausted when no valid child
/// emerges within `max_attempts` draws plus a final repair.
Body ga_mutate(const Body& parent, std::uint64_t seed, double per_voxel_rate = kDefaultMutationRate,
               int max_attempts = kDefaultMutationAttempts);

/// Throws SizeMismatch on differing sizes.
VoxelDiff diff(const Body& parent, const Body& child);

Body upsample_tiling(const Body& source, int factor);

/// Uniform random valid body by rejection sampling.
Body random_valid_body(int size, std::uint64_t seed, int max_attempts = 10000);

// JSON: array of arrays of integers.
nlohmann::json to_json(const Body& body);
Body body_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VoxelDiff& d);

}  // namespace morphoskill
