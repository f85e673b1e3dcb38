#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphoskill/surrogate.hpp"
#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

constexpr std::int64_t kDefaultBudgetSteps = 512000;

struct EvalRequest {
  std::string request_id;
  Body body;
  std::string task;
  int scale = 0;
  std::uint64_t controller_seed = 0;
  std::int64_t budget_steps = kDefaultBudgetSteps;
};

struct EvalResult {
  std::string request_id;
  std::optional<double> fitness;
  double wall_time = 0.0;
  std::string evaluator;
  std::optional<std::string> error;

  bool ok() const { return fitness.has_value(); }
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;

  virtual std::string kind() const = 0;

  /// Throws EvaluatorUnavailable if no request could be issued right now.
  virtual void ensure_available() {}

  /// Must be callable from several threads at once.
  virtual EvalResult evaluate(const EvalRequest& request) = 0;
};

class SurrogateEvaluator final : public Evaluator {
 public:
  /// Empty profile name selects a profile from each request's task.
  explicit SurrogateEvaluator(std::string profile_name = {});

  std::string kind() const override { return "surrogate"; }
  EvalResult evaluate(const EvalRequest& request) override;

 private:
  std::string profile_name_;
};

/// Evaluates every request in order-restoring fashion with up to `parallelism`
/// requests in flight. Throws EvaluatorUnavailable before issuing anything if
/// the evaluator is down. Rejects invalid bodies up front (InvalidBody).
std::vector<EvalResult> evaluate_batch(const std::vector<EvalRequest>& requests, Evaluator& evaluator,
                                       int parallelism = 1);

// ---------------------------------------------------------------------------
// External evaluator wire protocol: newline-delimited JSON over a byte stream.

inline constexpr const char* kProtocolName = "morphoskill-eval";
inline constexpr int kProtocolVersion = 1;

struct Handshake {
  std::string protocol;
  int version = 0;
  std::vector<std::string> tasks;
  bool pipelining = false;
};

nlohmann::json handshake_to_json(const Handshake& h);
/// Throws ProtocolViolation.
Handshake parse_handshake(const std::string& line);

std::string encode_request(const EvalRequest& request);
/// Decodes one reply line for `expected_id`. Throws ProtocolViolation on
/// malformed JSON, a missing fitness, or an id mismatch.
EvalResult decode_reply(const std::string& line, const std::string& expected_id);

/// Line-oriented duplex byte stream.
class LineStream {
 public:
  virtual ~LineStream() = default;
  virtual void write_line(const std::string& line) = 0;
  /// nullopt on timeout. Throws EvaluatorUnavailable on EOF or I/O error.
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
};

/// Child process speaking the protocol on its stdin/stdout.
std::unique_ptr<LineStream> spawn_process_stream(const std::string& command_line);
/// TCP connection to host:port.
std::unique_ptr<LineStream> connect_tcp_stream(const std::string& host, int port);

class ExternalEvaluator final : public Evaluator {
 public:
  /// Performs the handshake. Throws EvaluatorUnavailable or ProtocolViolation.
  ExternalEvaluator(std::unique_ptr<LineStream> stream, std::chrono::milliseconds timeout,
                    std::chrono::milliseconds handshake_timeout = std::chrono::seconds(30));

  /// "cmd:<command line>" or "tcp:<host>:<port>".
  static std::unique_ptr<ExternalEvaluator> connect(const std::string& endpoint, std::chrono::milliseconds timeout);

  std::string kind() const override { return "external"; }
  void ensure_available() override;
  EvalResult evaluate(const EvalRequest& request) override;

  const Handshake& handshake() const { return handshake_; }

 private:
  std::unique_ptr<LineStream> stream_;
  std::chrono::milliseconds timeout_;
  Handshake handshake_;
  std::mutex mutex_;
  std::set<std::string> abandoned_;  // ids that timed out; late replies are dropped
  bool broken_ = false;
};

/// Builds an evaluator from "surrogate", "surrogate:<profile>" or "external:<endpoint>".
std::unique_ptr<Evaluator> make_evaluator(const std::string& selector, std::chrono::milliseconds timeout);

}  // namespace morphoskill
