#include "morphoskill/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "morphoskill/errors.hpp"

namespace morphoskill {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

SurrogateEvaluator::SurrogateEvaluator(std::string profile_name) : profile_name_(std::move(profile_name)) {
  if (!profile_name_.empty()) surrogate_profile(profile_name_);  // validate eagerly
}

EvalResult SurrogateEvaluator::evaluate(const EvalRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  EvalResult result;
  result.request_id = request.request_id;
  result.evaluator = kind();
  try {
    const auto& profile = profile_name_.empty() ? profile_for_task(request.task) : surrogate_profile(profile_name_);
    result.fitness = surrogate_fitness(request.body, profile);
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  result.wall_time = seconds_since(start);
  return result;
}

std::vector<EvalResult> evaluate_batch(const std::vector<EvalRequest>& requests, Evaluator& evaluator,
                                       int parallelism) {
  if (requests.empty()) return {};
  for (const auto& r : requests) {
    if (!is_valid(r.body)) throw InvalidBody("request " + r.request_id + " carries an invalid body");
  }
  evaluator.ensure_available();

  std::vector<EvalResult> results(requests.size());
  std::atomic<std::size_t> next{0};
  std::mutex down_mutex;
  std::exception_ptr down;
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        results[i] = evaluator.evaluate(requests[i]);
      } catch (const EvaluatorUnavailable&) {
        // Lost evaluator: drain the queue and abort the whole batch.
        std::lock_guard lock(down_mutex);
        if (!down) down = std::current_exception();
        next = requests.size();
      } catch (const std::exception& e) {
        results[i].request_id = requests[i].request_id;
        results[i].evaluator = evaluator.kind();
        results[i].error = e.what();
      }
    }
  };

  const int workers = std::clamp(parallelism, 1, static_cast<int>(requests.size()));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  if (down) std::rethrow_exception(down);
  return results;
}

// ---------------------------------------------------------------------------

nlohmann::json handshake_to_json(const Handshake& h) {
  return {{"protocol", h.protocol}, {"version", h.version}, {"tasks", h.tasks}, {"pipelining", h.pipelining}};
}

Handshake parse_handshake(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    Handshake h;
    h.protocol = j.at("protocol").get<std::string>();
    h.version = j.at("version").get<int>();
    h.tasks = j.value("tasks", std::vector<std::string>{});
    h.pipelining = j.value("pipelining", false);
    if (h.protocol != kProtocolName) throw ProtocolViolation("unexpected protocol '" + h.protocol + "'");
    if (h.version != kProtocolVersion) throw ProtocolViolation("unsupported protocol version " + std::to_string(h.version));
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolViolation(std::string("malformed handshake: ") + e.what());
  }
}

std::string encode_request(const EvalRequest& r) {
  nlohmann::json j{{"type", "eval"},
                   {"request_id", r.request_id},
                   {"task", r.task},
                   {"scale", r.scale},
                   {"body", to_json(r.body)},
                   {"controller_seed", r.controller_seed},
                   {"budget_steps", r.budget_steps}};
  return j.dump();
}

EvalResult decode_reply(const std::string& line, const std::string& expected_id) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolViolation(std::string("reply is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j.contains("request_id") || !j["request_id"].is_string()) {
    throw ProtocolViolation("reply lacks type or request_id");
  }
  const auto id = j["request_id"].get<std::string>();
  if (id != expected_id) throw ProtocolViolation("reply for '" + id + "' while awaiting '" + expected_id + "'");

  EvalResult result;
  result.request_id = id;
  result.evaluator = "external";
  const auto type = j["type"].get<std::string>();
  if (type == "result") {
    if (!j.contains("fitness") || !j["fitness"].is_number()) throw ProtocolViolation("result reply without numeric fitness");
    const double f = j["fitness"].get<double>();
    if (!std::isfinite(f)) throw ProtocolViolation("non-finite fitness");
    result.fitness = f;
  } else if (type == "error") {
    result.error = j.value("message", std::string("evaluator error"));
  } else {
    throw ProtocolViolation("unknown reply type '" + type + "'");
  }
  return result;
}

ExternalEvaluator::ExternalEvaluator(std::unique_ptr<LineStream> stream, std::chrono::milliseconds timeout,
                                     std::chrono::milliseconds handshake_timeout)
    : stream_(std::move(stream)), timeout_(timeout) {
  auto line = stream_->read_line(handshake_timeout);
  if (!line) throw EvaluatorUnavailable("evaluator sent no handshake");
  handshake_ = parse_handshake(*line);
}

std::unique_ptr<ExternalEvaluator> ExternalEvaluator::connect(const std::string& endpoint,
                                                              std::chrono::milliseconds timeout) {
  if (endpoint.rfind("cmd:", 0) == 0) {
    return std::make_unique<ExternalEvaluator>(spawn_process_stream(endpoint.substr(4)), timeout);
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    const auto rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw EvaluatorUnavailable("tcp endpoint needs host:port");
    int port = 0;
    try {
      port = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception&) {
      throw EvaluatorUnavailable("bad port in endpoint " + endpoint);
    }
    return std::make_unique<ExternalEvaluator>(connect_tcp_stream(rest.substr(0, colon), port), timeout);
  }
  throw ConfigInvalid("unknown evaluator endpoint '" + endpoint + "' (use cmd:... or tcp:host:port)");
}

void ExternalEvaluator::ensure_available() {
  std::lock_guard lock(mutex_);
  if (broken_) throw EvaluatorUnavailable("external evaluator connection is closed");
}

EvalResult ExternalEvaluator::evaluate(const EvalRequest& request) {
  const auto start = std::chrono::steady_clock::now();
  std::lock_guard lock(mutex_);
  EvalResult result;
  result.request_id = request.request_id;
  result.evaluator = kind();
  if (broken_) throw EvaluatorUnavailable("external evaluator connection is closed");
  try {
    stream_->write_line(encode_request(request));
    const auto deadline = start + timeout_;
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      auto line = left.count() > 0 ? stream_->read_line(left) : std::nullopt;
      if (!line) {
        abandoned_.insert(request.request_id);
        result.error = "Timeout: no reply within " + std::to_string(timeout_.count()) + " ms";
        break;
      }
      // Drop late replies to requests that already timed out.
      try {
        const auto j = nlohmann::json::parse(*line);
        if (j.is_object() && j.contains("request_id") && j["request_id"].is_string() &&
            abandoned_.erase(j["request_id"].get<std::string>())) {
          continue;
        }
      } catch (const nlohmann::json::exception&) {
      }
      result = decode_reply(*line, request.request_id);
      break;
    }
  } catch (const ProtocolViolation& e) {
    result.error = std::string("ProtocolViolation: ") + e.what();
  } catch (const EvaluatorUnavailable&) {
    broken_ = true;
    throw;
  }
  result.wall_time = seconds_since(start);
  return result;
}

std::unique_ptr<Evaluator> make_evaluator(const std::string& selector, std::chrono::milliseconds timeout) {
  if (selector == "surrogate") return std::make_unique<SurrogateEvaluator>();
  if (selector.rfind("surrogate:", 0) == 0) return std::make_unique<SurrogateEvaluator>(selector.substr(10));
  if (selector.rfind("external:", 0) == 0) return ExternalEvaluator::connect(selector.substr(9), timeout);
  throw ConfigInvalid("unknown evaluator '" + selector + "' (surrogate, surrogate:<profile>, external:<endpoint>)");
}

}  // namespace morphoskill
