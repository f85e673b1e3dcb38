#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "morphoskill/errors.hpp"
#include "morphoskill/orchestrator.hpp"

namespace morphoskill {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

void append_line(const fs::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << line << '\n';
  if (!out.flush()) throw IoError("append failed for " + path.string());
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void persist(const RunPaths& paths, const Orchestrator& orch, json record) {
  record["timestamp"] = utc_now();
  write_file(paths.checkpoint(), json{{"record", record}}.dump() + "\n");
  save_library(orch.state().library, paths.library().string());
  append_line(paths.log(), record.dump());
}

}  // namespace

std::vector<json> read_run_log(const fs::path& path) {
  std::vector<json> out;
  if (!fs::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    // A torn final line from a crash is ignored; anything earlier is corruption.
    if (j.is_discarded()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw IoError(fmt::format("{}: line {} is not valid JSON", path.string(), n));
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string comparable_log_payload(const fs::path& path) {
  std::string out;
  for (auto rec : read_run_log(path)) {
    rec.erase("timestamp");
    out += rec.dump() + "\n";
  }
  return out;
}

FitnessCurve run_curve(const RunState& state, std::int64_t budget) {
  const auto log = state.fitness_log();
  return best_so_far_curve(log, budget);
}

FitnessCurve load_run_curve(const fs::path& run_dir) {
  const RunPaths paths{run_dir};
  std::int64_t budget = 0;
  if (fs::exists(paths.config())) budget = load_config(paths.config()).budget;
  return parse_curve_csv(read_file(paths.curve()), budget);
}

std::string summary_for_run(const fs::path& run_dir, const std::string& task,
                            const std::optional<fs::path>& baseline_dir) {
  const auto agent = load_run_curve(run_dir);
  if (baseline_dir) {
    const auto ga = load_run_curve(*baseline_dir);
    const ComparisonSummary row = compare(task, agent, ga);
    return summary_csv(std::span<const ComparisonSummary>(&row, 1));
  }
  const std::string endpoint = agent.points.empty() ? "n/a" : fmt::format("{}", morphoskill::endpoint(agent));
  return "task,ga,ar,delta,speedup,lead_fraction\n" + fmt::format("{},n/a,{},n/a,n/a,n/a\n", task, endpoint);
}

void write_reports(const RunPaths& paths, const RunConfig& config, const RunState& state) {
  const auto curve = run_curve(state, config.budget);
  write_file(paths.curve(), curve_csv(curve));

  std::optional<std::int64_t> best;
  for (const auto& i : state.population) {
    if (i.fitness && (!best || *i.fitness > *state.at(*best).fitness)) best = i.eval_index;
  }
  json best_doc = nullptr;
  if (best) {
    const auto& b = state.at(*best);
    best_doc = {{"eval_index", b.eval_index}, {"generation", b.generation}, {"fitness", *b.fitness},
                {"task", config.task},        {"scale", config.scale},          {"body", to_json(b.body)}};
  }
  write_file(paths.best_body(), best_doc.dump(2) + "\n");

  std::optional<fs::path> baseline;
  if (!config.baseline_run.empty()) baseline = fs::path(config.baseline_run);
  write_file(paths.summary(), summary_for_run(paths.dir, config.task, baseline));
}

RunOutcome run_to_completion(const RunConfig& config, const fs::path& out_dir, bool resume,
                             const std::function<void(const json&)>& on_generation) {
  validate(config);
  const RunPaths paths{out_dir};
  fs::create_directories(out_dir);

  std::vector<json> records;
  SkillLibrary library;
  if (resume) {
    records = read_run_log(paths.log());
    // Drop any torn tail so later appends start on a fresh line.
    std::string clean;
    for (const auto& r : records) clean += r.dump() + "\n";
    if (fs::exists(paths.log()) && read_file(paths.log()) != clean) write_file(paths.log(), clean);
    if (fs::exists(paths.library())) library = load_library(paths.library().string());
    const int last = records.empty() ? -1 : records.back().at("generation").get<int>();
    // Crash between saving the library and appending the log: recover the record.
    if (library.generation == last + 1 && fs::exists(paths.checkpoint())) {
      auto cp = json::parse(read_file(paths.checkpoint()));
      auto rec = cp.at("record");
      if (rec.at("generation").get<int>() == last + 1) {
        append_line(paths.log(), rec.dump());
        records.push_back(std::move(rec));
      }
    } else if (library.generation > last + 1 || (library.generation < last && !records.empty())) {
      throw ConfigInvalid(fmt::format("run directory is inconsistent: library at generation {}, log at {}",
                                      library.generation, last));
    }
  } else {
    if (fs::exists(paths.log()) && fs::file_size(paths.log()) > 0) {
      throw ConfigInvalid("run directory " + out_dir.string() + " already holds a run; use resume");
    }
    write_file(paths.config(), serialize_config(config));
    for (const auto& p : {paths.prompts(), paths.log()}) {
      if (fs::exists(p)) fs::remove(p);
    }
  }

  std::unique_ptr<ProposalBackend> backend;
  if (config.mode != RunMode::GaOnly) {
    backend = make_backend(config.backend, config.remote,
                           SeedStreams(config.master_seed).seed(streams::kBackend, 0, 0));
  }
  auto evaluator =
      make_evaluator(config.evaluator, std::chrono::milliseconds(static_cast<std::int64_t>(config.eval_timeout_s * 1000)));
  PromptAuditLog prompt_log(paths.prompts());
  Orchestrator orch(config, RunServices{backend.get(), evaluator.get(), &prompt_log});

  RunOutcome outcome;
  if (records.empty()) {
    auto rec = orch.initialize();
    persist(paths, orch, rec);
    if (on_generation) on_generation(rec);
    ++outcome.generations;
  } else {
    orch.restore(records, std::move(library));
  }
  while (!orch.done()) {
    auto rec = orch.run_generation();
    persist(paths, orch, rec);
    if (on_generation) on_generation(rec);
    ++outcome.generations;
  }
  write_reports(paths, config, orch.state());
  outcome.state = orch.state();
  return outcome;
}

std::vector<Body> top_bodies_from_log(const fs::path& log_path, int count) {
  struct Entry {
    double fitness;
    std::int64_t eval_index;
    Body body;
  };
  std::vector<Entry> entries;
  for (const auto& rec : read_run_log(log_path)) {
    for (const auto& row : rec.at("slots")) {
      if (row.at("fitness").is_null()) continue;
      entries.push_back({row.at("fitness").get<double>(), row.at("eval_index").get<std::int64_t>(),
                         body_from_json(row.at("body"))});
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.fitness != b.fitness) return a.fitness > b.fitness;
    return a.eval_index < b.eval_index;
  });
  std::vector<Body> out;
  for (const auto& e : entries) {
    if (static_cast<int>(out.size()) >= count) break;
    if (std::find(out.begin(), out.end(), e.body) == out.end()) out.push_back(e.body);
  }
  return out;
}

}  // namespace morphoskill
