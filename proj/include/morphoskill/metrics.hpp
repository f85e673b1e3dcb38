#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morphoskill {

struct CurvePoint {
  std::int64_t eval_index = 0;  // 1-based
  double best_so_far = 0.0;
};

/// Best-fitness-so-far curve over an evaluation budget.
struct FitnessCurve {
  std::vector<CurvePoint> points;
  std::int64_t budget = 0;
};

/// Running maximum of per-evaluation fitness. Missing values (failed
/// evaluations) repeat the previous best and are skipped before the first success.
FitnessCurve best_so_far_curve(std::span<const std::optional<double>> fitness, std::int64_t budget);

/// Throws EmptyCurve when there are no points; std::invalid_argument when the
/// indices are not strictly increasing, fall outside 1..budget, or the values decrease.
void check_curve(const FitnessCurve& curve);

/// Step function on e = 0..budget; entries before the first point are empty.
std::vector<std::optional<double>> densify(const FitnessCurve& curve);

double endpoint(const FitnessCurve& curve);

struct Speedup {
  std::optional<double> value;
  std::string reason;  // set when value is empty
};

/// Ratio of the first indices at which the GA curve and the agent curve reach
/// the GA endpoint. Comparisons are exact.
Speedup speedup(const FitnessCurve& agent, const FitnessCurve& ga);

/// Share of e in 1..B with agent(e) > ga(e); undefined points count as not ahead.
double lead_fraction(const FitnessCurve& agent, const FitnessCurve& ga);

struct ComparisonSummary {
  std::string task;
  double endpoint_ga = 0.0;
  double endpoint_agent = 0.0;
  double delta = 0.0;
  Speedup speedup;
  double lead_fraction = 0.0;
};

ComparisonSummary compare(const std::string& task, const FitnessCurve& agent, const FitnessCurve& ga);

/// "+1.42" / "-0.30" style signed value.
std::string format_signed(double value, int decimals = 2);

/// task,ga,ar,delta,speedup,lead_fraction. Full precision; null speedup as "n/r".
std::string summary_csv(std::span<const ComparisonSummary> rows);
/// Fixed-width table: Task, GA, Agent, Delta, S, L.
std::string summary_table(std::span<const ComparisonSummary> rows);

/// eval_index,best_fitness
std::string curve_csv(const FitnessCurve& curve);
/// Parses curve_csv output. `budget` defaults to the last index. Throws std::invalid_argument.
FitnessCurve parse_curve_csv(const std::string& text, std::int64_t budget = 0);

}  // namespace morphoskill
