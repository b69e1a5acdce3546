#pragma once

#include <charconv>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
// <resolv.h> (pulled in by httplib) defines _res, which Eigen uses as a
// parameter name.
#ifdef _res
#undef _res
#endif
#include "json.hpp"
#include "psba/classifier.hpp"
#include "psba/error.hpp"
#include "psba/oracle.hpp"
#include "psba/tensor.hpp"

namespace psba {

// ---------------------------------------------------------------------------
// Wire format: doubles travel as shortest round-trip decimal strings.

inline std::string encode_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  if (r.ec != std::errc()) throw Error("cannot format double");
  return std::string(buf, r.ptr);
}

inline double decode_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw PreconditionError("not a number: " + s);
  return v;
}

inline nlohmann::json encode_values(std::span<const double> values) {
  auto arr = nlohmann::json::array();
  for (double v : values) arr.push_back(encode_double(v));
  return arr;
}

/// Accepts an array of decimal strings or plain JSON numbers.
inline std::vector<double> decode_values(const nlohmann::json& arr) {
  if (!arr.is_array()) throw PreconditionError("x must be an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& e : arr) {
    if (e.is_string()) {
      out.push_back(decode_double(e.get<std::string>()));
    } else if (e.is_number()) {
      out.push_back(e.get<double>());
    } else {
      throw PreconditionError("x entries must be numbers or decimal strings");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Server

struct ServerOptions {
  std::optional<std::uint64_t> budget;  // per session
  std::chrono::milliseconds delay{0};   // fixed latency added to every decision
  std::uint64_t fault_every = 0;        // > 0: every k-th decide answers 503 after counting (retry testing)
};

/// HTTP decision oracle. Sessions hold independent counters; requests within
/// the server are serialized, so the counter order is the arrival order.
class OracleServer {
 public:
  OracleServer(std::shared_ptr<const Classifier> model, AttackSpec spec, ServerOptions options = {})
      : model_(std::move(model)), spec_(std::move(spec)), options_(options) {
    if (!model_) throw PreconditionError("server needs a model");
    if (spec_.reference.shape() != model_->input_shape()) throw ShapeMismatch("reference shape differs from model");
    routes();
  }

  ~OracleServer() { stop(); }

  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Binds (port 0 picks a free port) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else {
      port_ = server_.bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw TransportError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Blocks until stop() is called from elsewhere.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  nlohmann::json stats() const {
    std::lock_guard lock(mutex_);
    return stats_locked();
  }

 private:
  struct Session {
    std::uint64_t count = 0;
    std::map<std::uint64_t, nlohmann::json> answered;  // query index -> response
  };

  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    reply(res, status, {{"error", code}, {"message", message}});
  }

  nlohmann::json stats_locked() const {
    nlohmann::json sessions = nlohmann::json::object();
    std::uint64_t total = 0;
    for (const auto& [id, s] : sessions_) {
      sessions[id] = s.count;
      total += s.count;
    }
    return {{"budget", options_.budget ? nlohmann::json(*options_.budget) : nlohmann::json(nullptr)},
            {"sessions", sessions},
            {"total_queries", total},
            {"input_shape", {model_->input_shape().channels, model_->input_shape().height,
                             model_->input_shape().width}}};
  }

  void routes() {
    server_.Post("/v1/session", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      const std::string id = "s" + std::to_string(++next_session_);
      sessions_[id];
      reply(res, 200,
            {{"session_id", id},
             {"budget", options_.budget ? nlohmann::json(*options_.budget) : nlohmann::json(nullptr)}});
    });

    server_.Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      reply(res, 200, stats_locked());
    });

    server_.Post("/v1/reset", [this](const httplib::Request& req, httplib::Response& res) {
      nlohmann::json body = nlohmann::json::object();
      if (!req.body.empty()) {
        body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return fail(res, 400, "malformed_body", "body is not a JSON object");
      }
      std::lock_guard lock(mutex_);
      if (body.contains("session_id")) {
        if (!body["session_id"].is_string()) return fail(res, 400, "malformed_body", "session_id must be a string");
        auto it = sessions_.find(body["session_id"].get<std::string>());
        if (it == sessions_.end()) return fail(res, 404, "unknown_session", "no such session");
        it->second = Session{};
      } else {
        sessions_.clear();
      }
      reply(res, 200, {{"ok", true}});
    });

    server_.Post("/v1/decide", [this](const httplib::Request& req, httplib::Response& res) { decide(req, res); });
  }

  void decide(const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object()) return fail(res, 400, "malformed_body", "body is not a JSON object");
    if (!body.contains("session_id") || !body["session_id"].is_string())
      return fail(res, 400, "missing_session", "session_id is required");
    if (!body.contains("x")) return fail(res, 400, "missing_input", "x is required");
    std::vector<double> values;
    try {
      values = decode_values(body["x"]);
    } catch (const Error& e) {
      return fail(res, 400, "invalid_input", e.what());
    }
    if (values.size() != model_->input_dim())
      return fail(res, 400, "shape_mismatch",
                  "x has " + std::to_string(values.size()) + " entries, expected " + std::to_string(model_->input_dim()));
    if (!all_finite(values)) return fail(res, 400, "invalid_input", "x contains non-finite values");

    std::optional<std::uint64_t> index;
    if (body.contains("key")) {
      if (!body["key"].is_string()) return fail(res, 400, "malformed_body", "key must be a string");
      const std::string key = body["key"].get<std::string>();
      const auto colon = key.rfind(':');
      std::uint64_t v = 0;
      const char* begin = key.data() + (colon == std::string::npos ? 0 : colon + 1);
      const auto r = std::from_chars(begin, key.data() + key.size(), v);
      if (colon == std::string::npos || r.ec != std::errc() || r.ptr != key.data() + key.size())
        return fail(res, 400, "malformed_key", "key must be <session>:<index>");
      index = v;
    }

    std::lock_guard lock(mutex_);
    auto it = sessions_.find(body["session_id"].get<std::string>());
    if (it == sessions_.end()) return fail(res, 404, "unknown_session", "no such session");
    Session& s = it->second;

    if (index) {
      if (auto done = s.answered.find(*index); done != s.answered.end()) return reply(res, 200, done->second);
      if (*index != s.count)
        return reply(res, 409, {{"error", "out_of_order"},
                                {"message", "query index does not match the session counter"},
                                {"queries_used", s.count}});
    }
    if (options_.budget && s.count >= *options_.budget)
      return reply(res, 429, {{"error", "budget_exhausted"}, {"queries_used", s.count}});

    if (options_.delay.count() > 0) std::this_thread::sleep_for(options_.delay);
    const ImageTensor x(model_->input_shape(), std::move(values));
    const int decision = sign(*model_, spec_, x);
    ++s.count;
    nlohmann::json out = {{"sign", decision}, {"queries_used", s.count}};
    out["budget_remaining"] = options_.budget ? nlohmann::json(*options_.budget - s.count) : nlohmann::json(nullptr);
    if (index) s.answered[*index] = out;
    ++decide_calls_;
    if (options_.fault_every > 0 && decide_calls_ % options_.fault_every == 0)
      return fail(res, 503, "injected_fault", "decision recorded but response dropped");
    reply(res, 200, out);
  }

  std::shared_ptr<const Classifier> model_;
  AttackSpec spec_;
  ServerOptions options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  mutable std::mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::uint64_t next_session_ = 0;
  std::uint64_t decide_calls_ = 0;
};

// ---------------------------------------------------------------------------
// Client

struct RemoteOptions {
  int max_attempts = 4;
  std::chrono::milliseconds backoff{20};
  std::chrono::seconds timeout{10};
};

/// Oracle backed by an OracleServer session. Every query carries the key
/// "<session>:<index>" so retried requests are deduplicated server-side,
/// and the server's counter is checked against the local one on every
/// answer.
class RemoteOracle final : public MeteredOracle {
 public:
  explicit RemoteOracle(const std::string& endpoint, std::optional<std::string> session = std::nullopt,
                        RemoteOptions options = {})
      : client_(endpoint), options_(options) {
    client_.set_connection_timeout(options_.timeout);
    client_.set_read_timeout(options_.timeout);
    client_.set_write_timeout(options_.timeout);
    if (session) {
      session_ = *session;
      const auto stats = request("GET", "/v1/stats", nlohmann::json());
      const auto& sessions = stats.body["sessions"];
      if (!sessions.contains(session_)) throw Error("unknown session " + session_);
      used_ = sessions[session_].get<std::uint64_t>();
      if (!stats.body["budget"].is_null()) budget_ = stats.body["budget"].get<std::uint64_t>();
    } else {
      const auto r = request("POST", "/v1/session", nlohmann::json::object());
      if (r.status != 200) throw Error("session creation failed: " + r.body.dump());
      session_ = r.body.at("session_id").get<std::string>();
      if (!r.body["budget"].is_null()) budget_ = r.body["budget"].get<std::uint64_t>();
    }
  }

  const std::string& session() const { return session_; }

  int query(const ImageTensor& x) override {
    nlohmann::json body = {{"session_id", session_},
                           {"key", session_ + ":" + std::to_string(used_)},
                           {"x", encode_values(x.values())}};
    const auto r = request("POST", "/v1/decide", body);
    if (r.status == 429) {
      check_counter(r.body, used_);
      throw BudgetExhausted(used_);
    }
    if (r.status == 409) throw DesyncError("server counter disagrees: " + r.body.dump());
    if (r.status != 200) throw Error("decide rejected (" + std::to_string(r.status) + "): " + r.body.dump());
    check_counter(r.body, used_ + 1);
    ++used_;
    const int s = r.body.at("sign").get<int>();
    if (s != 1 && s != -1) throw Error("server returned an invalid sign");
    return s;
  }

  std::uint64_t queries_used() const override { return used_; }
  std::optional<std::uint64_t> budget() const override { return budget_; }

  /// Server-side count for this session.
  std::uint64_t server_count() {
    const auto r = request("GET", "/v1/stats", nlohmann::json());
    return r.body.at("sessions").at(session_).get<std::uint64_t>();
  }

 private:
  struct Reply {
    int status = 0;
    nlohmann::json body;
  };

  static void check_counter(const nlohmann::json& body, std::uint64_t expected) {
    if (!body.contains("queries_used") || body["queries_used"].get<std::uint64_t>() != expected)
      throw DesyncError("server reports " + (body.contains("queries_used") ? body["queries_used"].dump() : "nothing") +
                        " queries, client expects " + std::to_string(expected));
  }

  // Retries transport failures and 5xx answers; anything else is returned.
  Reply request(const std::string& method, const std::string& path, const nlohmann::json& body) {
    std::string last = "no attempt";
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(options_.backoff * attempt);
      httplib::Result res = method == "GET" ? client_.Get(path)
                                            : client_.Post(path, body.dump(), "application/json");
      if (!res) {
        last = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last = "HTTP " + std::to_string(res->status);
        continue;
      }
      Reply r;
      r.status = res->status;
      r.body = nlohmann::json::parse(res->body, nullptr, false);
      if (r.body.is_discarded()) throw TransportError("unparseable response from " + path);
      return r;
    }
    throw TransportError(path + " failed after " + std::to_string(options_.max_attempts) + " attempts: " + last);
  }

  httplib::Client client_;
  RemoteOptions options_;
  std::string session_;
  std::uint64_t used_ = 0;
  std::optional<std::uint64_t> budget_;
};

}  // namespace psba
