#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "acnescore/image.hpp"
#include "acnescore/scoring.hpp"
#include "acnescore/settings.hpp"
#include "acnescore/store.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro that
// collides with Eigen parameter names.
#include "httplib.h"

namespace acnescore {

struct ServiceOptions {
  std::string listen_addr = "127.0.0.1:8080";
  std::size_t max_body_bytes = 10 * 1024 * 1024;
  bool retain_images = false;
  std::filesystem::path retain_dir = "retained_images";
  bool strict_users = false;
  std::size_t max_concurrent = 0;  // 0: one if any backend is not concurrency-safe, else hardware threads

  static ServiceOptions from(const KeyValueConfig& kv) {
    ServiceOptions o;
    o.listen_addr = kv.get_string("listen_addr", o.listen_addr);
    o.max_body_bytes = kv.get_number<std::size_t>("max_body_bytes", o.max_body_bytes);
    o.retain_images = kv.get_bool("retain_images", o.retain_images);
    o.retain_dir = kv.get_string("retain_dir", o.retain_dir.string());
    o.strict_users = kv.get_bool("strict_users", o.strict_users);
    o.max_concurrent = kv.get_number<std::size_t>("max_concurrent", o.max_concurrent);
    return o;
  }
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

using Clock = std::function<std::int64_t()>;

inline std::int64_t utc_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

/// Request handling for the scoring API, independent of the HTTP transport.
class ScoringService {
 public:
  /// `pipeline` may be null when loading failed; `unavailable_reason` then
  /// explains why and scoring answers 503.
  ScoringService(std::shared_ptr<const ScoringPipeline> pipeline, std::string unavailable_reason,
                 std::shared_ptr<AssessmentStore> store, ServiceOptions opts = {}, Clock clock = utc_seconds)
      : pipeline_(std::move(pipeline)),
        unavailable_reason_(std::move(unavailable_reason)),
        store_(std::move(store)),
        opts_(std::move(opts)),
        clock_(std::move(clock)),
        slots_(static_cast<std::ptrdiff_t>(slot_count())),
        next_id_(store_ ? store_->size() + 1 : 1) {}

  /// Builds the pipeline and store from settings; a pipeline that cannot load
  /// leaves the service up but unhealthy.
  static ScoringService from_settings(const KeyValueConfig& kv, Clock clock = utc_seconds) {
    std::shared_ptr<const ScoringPipeline> pipeline;
    std::string reason;
    try {
      pipeline = make_pipeline(kv);
    } catch (const Error& e) {
      reason = e.what();
    }
    std::shared_ptr<AssessmentStore> store;
    if (kv.contains("store_path")) {
      store = std::make_shared<FileStore>(kv.get_string("store_path"));
    } else {
      store = std::make_shared<MemoryStore>();
    }
    return ScoringService(std::move(pipeline), std::move(reason), std::move(store), ServiceOptions::from(kv),
                          std::move(clock));
  }

  const ServiceOptions& options() const { return opts_; }
  std::size_t slot_count() const {
    if (opts_.max_concurrent > 0) return opts_.max_concurrent;
    if (!pipeline_ || !pipeline_->concurrent_safe()) return 1;
    return std::max(1U, std::thread::hardware_concurrency());
  }

  HttpReply health() const {
    nlohmann::json body{{"status", pipeline_ ? "ok" : "unavailable"},
                        {"backbone_loaded", pipeline_ != nullptr},
                        {"head_version", pipeline_ ? nlohmann::json(pipeline_->version_of_head()) : nlohmann::json(nullptr)}};
    if (!pipeline_) body["reason"] = unavailable_reason_;
    return {pipeline_ ? 200 : 503, body};
  }

  HttpReply score(std::span<const std::uint8_t> bytes) {
    ImageScore result;
    if (auto err = run_scoring(bytes, result)) return *err;
    retain(bytes, "score-" + hex64(fnv1a64(bytes)));
    return {200, score_response_json(result, pipeline_->version())};
  }

  HttpReply post_assessment(const std::string& user_id, std::span<const std::uint8_t> bytes) {
    if (!valid_user_id(user_id)) return error(400, "invalid_user_id", "user id must be 1-64 characters");
    ImageScore result;
    if (auto err = run_scoring(bytes, result)) return *err;

    AssessmentRecord rec;
    {
      std::lock_guard lock(user_mutex(user_id));
      std::int64_t ts = clock_();
      const auto history = store_->list(user_id);
      if (!history.empty()) ts = std::max(ts, history.back().timestamp);
      char id[24];
      std::snprintf(id, sizeof(id), "a%012zu", next_id_.fetch_add(1));
      rec.assessment_id = id;
      rec.user_id = user_id;
      rec.timestamp = ts;
      result.image_id = rec.assessment_id;
      rec.score = std::move(result);
      rec.pipeline_version = pipeline_->version();
      store_->append(rec);
    }
    retain(bytes, rec.assessment_id);
    return {200, to_json(rec)};
  }

  HttpReply list_assessments(const std::string& user_id) const {
    if (!valid_user_id(user_id)) return error(400, "invalid_user_id", "user id must be 1-64 characters");
    if (opts_.strict_users && !store_->has_user(user_id)) return error(404, "unknown_user", "no such user");
    auto arr = nlohmann::json::array();
    for (const auto& r : store_->list(user_id)) arr.push_back(to_json(r));
    return {200, arr};
  }

  static bool valid_user_id(const std::string& id) {
    return !id.empty() && id.size() <= 64 && id.find('/') == std::string::npos;
  }

  /// Routes onto an httplib server.
  void mount(httplib::Server& server) {
    server.set_payload_max_length(opts_.max_body_bytes + 1);
    auto send = [](httplib::Response& res, const HttpReply& reply) {
      res.status = reply.status;
      res.set_content(reply.body.dump(), "application/json");
    };
    auto body_bytes = [](const httplib::Request& req) {
      return std::span(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size());
    };
    server.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Post("/v1/score", [this, send, body_bytes](const httplib::Request& req, httplib::Response& res) {
      send(res, score(body_bytes(req)));
    });
    server.Post(R"(/v1/users/([^/]+)/assessments)",
                [this, send, body_bytes](const httplib::Request& req, httplib::Response& res) {
                  send(res, post_assessment(req.matches[1].str(), body_bytes(req)));
                });
    server.Get(R"(/v1/users/([^/]+)/assessments)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, list_assessments(req.matches[1].str()));
    });
    server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
      if (res.status == 413) {
        send(res, error(413, "payload_too_large", "request body exceeds the configured limit"));
      } else if (res.body.empty()) {
        send(res, error(res.status, "http_error", httplib::status_message(res.status)));
      }
    });
  }

 private:
  static HttpReply error(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", code}, {"message", message}}};
  }

  std::optional<HttpReply> run_scoring(std::span<const std::uint8_t> bytes, ImageScore& out) {
    if (!pipeline_) return error(503, "backend_unavailable", unavailable_reason_);
    if (bytes.size() > opts_.max_body_bytes) return error(413, "payload_too_large", "image exceeds max_body_bytes");
    ImageBuffer img;
    try {
      img = decode_image(bytes);
    } catch (const Error& e) {
      return error(400, "undecodable_image", e.what());
    }
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};
    try {
      out = pipeline_->score(img);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::NoFaceFound: return error(422, "no_face", e.what());
        case ErrorCode::GeometryError: return error(422, "insufficient_skin", e.what());
        case ErrorCode::BackendError:
        case ErrorCode::InputShapeError: return error(503, "backend_unavailable", e.what());
        default: return error(500, "internal", e.what());
      }
    }
    return std::nullopt;
  }

  void retain(std::span<const std::uint8_t> bytes, const std::string& name) const {
    if (!opts_.retain_images) return;
    const char* ext = sniff_format(bytes) == ImageFormat::Png ? ".png" : ".jpg";
    io::write_atomic(opts_.retain_dir / (name + ext), bytes);
  }

  std::mutex& user_mutex(const std::string& user_id) {
    std::lock_guard lock(users_mutex_);
    auto& m = user_mutexes_[user_id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
  }

  std::shared_ptr<const ScoringPipeline> pipeline_;
  std::string unavailable_reason_;
  std::shared_ptr<AssessmentStore> store_;
  ServiceOptions opts_;
  Clock clock_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::size_t> next_id_;
  std::mutex users_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> user_mutexes_;
};

/// Splits "host:port"; a bare port binds to 0.0.0.0.
inline std::pair<std::string, int> split_listen_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  const std::string host = colon == std::string::npos ? "0.0.0.0" : addr.substr(0, colon);
  const auto port = io::parse_number<int>(colon == std::string::npos ? addr : addr.substr(colon + 1));
  if (!port || *port < 0 || *port > 65535) throw Error(ErrorCode::ConfigError, "bad listen_addr '" + addr + "'");
  return {host, *port};
}

}  // namespace acnescore
