#include "morphoskill/metrics.hpp"

#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "morphoskill/errors.hpp"

namespace morphoskill {

FitnessCurve best_so_far_curve(std::span<const std::optional<double>> fitness, std::int64_t budget) {
  FitnessCurve curve;
  curve.budget = budget;
  std::optional<double> best;
  for (std::size_t i = 0; i < fitness.size(); ++i) {
    if (fitness[i] && (!best || *fitness[i] > *best)) best = fitness[i];
    if (best) curve.points.push_back({static_cast<std::int64_t>(i) + 1, *best});
  }
  return curve;
}

void check_curve(const FitnessCurve& curve) {
  if (curve.points.empty()) throw EmptyCurve("fitness curve has no points");
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    if (p.eval_index < 1 || p.eval_index > curve.budget) {
      throw std::invalid_argument(fmt::format("eval_index {} outside 1..{}", p.eval_index, curve.budget));
    }
    if (i > 0 && p.eval_index <= curve.points[i - 1].eval_index) {
      throw std::invalid_argument("eval_index must be strictly increasing");
    }
    if (i > 0 && p.best_so_far < curve.points[i - 1].best_so_far) {
      throw std::invalid_argument("best_so_far must be nondecreasing");
    }
  }
}

std::vector<std::optional<double>> densify(const FitnessCurve& curve) {
  check_curve(curve);
  std::vector<std::optional<double>> out(static_cast<std::size_t>(curve.budget) + 1);
  std::size_t next = 0;
  std::optional<double> current;
  for (std::int64_t e = 1; e <= curve.budget; ++e) {
    while (next < curve.points.size() && curve.points[next].eval_index <= e) current = curve.points[next++].best_so_far;
    out[static_cast<std::size_t>(e)] = current;
  }
  return out;
}

double endpoint(const FitnessCurve& curve) {
  check_curve(curve);
  return curve.points.back().best_so_far;
}

namespace {

void require_shared_budget(const FitnessCurve& a, const FitnessCurve& g) {
  if (a.budget != g.budget) {
    throw std::invalid_argument(fmt::format("curves have different budgets ({} vs {})", a.budget, g.budget));
  }
}

std::optional<std::int64_t> first_reaching(const std::vector<std::optional<double>>& f, double target) {
  for (std::size_t e = 1; e < f.size(); ++e) {
    if (f[e] && *f[e] >= target) return static_cast<std::int64_t>(e);
  }
  return std::nullopt;
}

}  // namespace

Speedup speedup(const FitnessCurve& agent, const FitnessCurve& ga) {
  require_shared_budget(agent, ga);
  const auto fa = densify(agent);
  const auto fg = densify(ga);
  const double target = *fg.back();
  const auto eg = first_reaching(fg, target);
  const auto ea = first_reaching(fa, target);
  Speedup s;
  if (!ea) {
    s.reason = "target not reached";
    return s;
  }
  s.value = static_cast<double>(*eg) / static_cast<double>(*ea);
  return s;
}

double lead_fraction(const FitnessCurve& agent, const FitnessCurve& ga) {
  require_shared_budget(agent, ga);
  const auto fa = densify(agent);
  const auto fg = densify(ga);
  std::int64_t ahead = 0;
  for (std::size_t e = 1; e < fa.size(); ++e) {
    if (fa[e] && fg[e] && *fa[e] > *fg[e]) ++ahead;
  }
  return static_cast<double>(ahead) / static_cast<double>(agent.budget);
}

ComparisonSummary compare(const std::string& task, const FitnessCurve& agent, const FitnessCurve& ga) {
  ComparisonSummary s;
  s.task = task;
  s.endpoint_agent = endpoint(agent);
  s.endpoint_ga = endpoint(ga);
  s.delta = s.endpoint_agent - s.endpoint_ga;
  s.speedup = speedup(agent, ga);
  s.lead_fraction = lead_fraction(agent, ga);
  return s;
}

std::string format_signed(double value, int decimals) {
  std::string s = fmt::format("{:+.{}f}", value, decimals);
  // Avoid "-0.00" for tiny negative values.
  if (s.find_first_not_of("+-0.") == std::string::npos) s[0] = '+';
  return s;
}

std::string summary_csv(std::span<const ComparisonSummary> rows) {
  std::string out = "task,ga,ar,delta,speedup,lead_fraction\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.task, r.endpoint_ga, r.endpoint_agent, r.delta,
                       r.speedup.value ? fmt::format("{}", *r.speedup.value) : std::string("n/r"), r.lead_fraction);
  }
  return out;
}

std::string summary_table(std::span<const ComparisonSummary> rows) {
  std::string out = fmt::format("{:<14}{:>9}{:>9}{:>9}{:>7}{:>7}\n", "Task", "GA", "Agent", "Delta", "S", "L");
  for (const auto& r : rows) {
    out += fmt::format("{:<14}{:>9.2f}{:>9.2f}{:>9}{:>7}{:>7.2f}\n", r.task, r.endpoint_ga, r.endpoint_agent,
                       format_signed(r.delta),
                       r.speedup.value ? fmt::format("{:.2f}", *r.speedup.value) : std::string("n/r"),
                       r.lead_fraction);
  }
  return out;
}

std::string curve_csv(const FitnessCurve& curve) {
  std::string out = "eval_index,best_fitness\n";
  for (const auto& p : curve.points) out += fmt::format("{},{}\n", p.eval_index, p.best_so_far);
  return out;
}

FitnessCurve parse_curve_csv(const std::string& text, std::int64_t budget) {
  FitnessCurve curve;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("eval_index,best_fitness", 0) != 0) {
    throw std::invalid_argument("curve CSV must start with eval_index,best_fitness");
  }
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("bad curve row: " + line);
    curve.points.push_back({std::stoll(line.substr(0, comma)), std::stod(line.substr(comma + 1))});
  }
  curve.budget = budget > 0 ? budget : (curve.points.empty() ? 0 : curve.points.back().eval_index);
  return curve;
}

}  // namespace morphoskill
