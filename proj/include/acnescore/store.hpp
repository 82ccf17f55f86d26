#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <tuple>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acnescore/core.hpp"
#include "acnescore/io.hpp"
#include "acnescore/scoring.hpp"

namespace acnescore {

struct AssessmentRecord {
  std::string assessment_id;
  std::string user_id;
  std::int64_t timestamp = 0;  // UTC seconds
  ImageScore score;
  std::string pipeline_version;
};

inline nlohmann::json patch_scores_json(const ImageScore& s) {
  auto patches = nlohmann::json::array();
  for (const auto& p : s.patch_scores) {
    patches.push_back({{"kind", to_string(p.kind)},
                       {"score", p.score.value()},
                       {"rect", {{"x", p.rect.x}, {"y", p.rect.y}, {"w", p.rect.w}, {"h", p.rect.h}}}});
  }
  return patches;
}

/// The public scoring response body.
inline nlohmann::json score_response_json(const ImageScore& s, const std::string& pipeline_version) {
  return {{"score", s.final_score.value()},
          {"class", s.severity.value()},
          {"patches", patch_scores_json(s)},
          {"pipeline_version", pipeline_version}};
}

inline nlohmann::json to_json(const AssessmentRecord& r) {
  auto patches = patch_scores_json(r.score);
  for (std::size_t i = 0; i < patches.size(); ++i) patches[i]["raw"] = r.score.patch_scores[i].raw;
  return {{"assessment_id", r.assessment_id},
          {"user_id", r.user_id},
          {"timestamp", r.timestamp},
          {"score", r.score.final_score.value()},
          {"class", r.score.severity.value()},
          {"extraction", to_string(r.score.path)},
          {"patches", patches},
          {"pipeline_version", r.pipeline_version}};
}

inline AssessmentRecord record_from_json(const nlohmann::json& j) {
  try {
    AssessmentRecord r;
    r.assessment_id = j.at("assessment_id").get<std::string>();
    r.user_id = j.at("user_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::int64_t>();
    r.pipeline_version = j.at("pipeline_version").get<std::string>();
    r.score.image_id = r.assessment_id;
    r.score.final_score = clamp_score(j.at("score").get<double>());
    r.score.severity = SeverityLabel(j.at("class").get<int>());
    r.score.path = j.at("extraction").get<std::string>() == "single_eye" ? ExtractionPath::SingleEye
                                                                         : ExtractionPath::Landmarks;
    for (const auto& p : j.at("patches")) {
      PatchScore ps;
      ps.kind = parse_patch_kind(p.at("kind").get<std::string>());
      ps.raw = p.at("raw").get<double>();
      ps.score = clamp_score(p.at("score").get<double>());
      const auto& rect = p.at("rect");
      ps.rect = Rect{rect.at("x").get<int>(), rect.at("y").get<int>(), rect.at("w").get<int>(), rect.at("h").get<int>()};
      r.score.patch_scores.push_back(ps);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::StoreError, std::string("malformed assessment record: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::StoreError, std::string("malformed assessment record: ") + e.what());
  }
}

/// Assessment history keyed by user.
class AssessmentStore {
 public:
  virtual ~AssessmentStore() = default;
  virtual void append(const AssessmentRecord& record) = 0;
  /// Sorted by (timestamp, assessment_id).
  virtual std::vector<AssessmentRecord> list(const std::string& user_id) const = 0;
  virtual bool has_user(const std::string& user_id) const = 0;
  /// Records loaded or appended so far, used to continue id numbering.
  virtual std::size_t size() const = 0;
};

class MemoryStore : public AssessmentStore {
 public:
  void append(const AssessmentRecord& record) override {
    std::lock_guard lock(mutex_);
    by_user_[record.user_id].push_back(record);
    ++size_;
  }

  std::vector<AssessmentRecord> list(const std::string& user_id) const override {
    std::lock_guard lock(mutex_);
    const auto it = by_user_.find(user_id);
    if (it == by_user_.end()) return {};
    auto out = it->second;
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      return std::tie(a.timestamp, a.assessment_id) < std::tie(b.timestamp, b.assessment_id);
    });
    return out;
  }

  bool has_user(const std::string& user_id) const override {
    std::lock_guard lock(mutex_);
    return by_user_.contains(user_id);
  }

  std::size_t size() const override {
    std::lock_guard lock(mutex_);
    return size_;
  }

 protected:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<AssessmentRecord>> by_user_;
  std::size_t size_ = 0;
};

/// Append-only JSON-lines file, replayed into memory on open.
class FileStore final : public MemoryStore {
 public:
  explicit FileStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      std::size_t line_no = 0;
      for (const auto& line : io::read_lines(path_)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          throw Error(ErrorCode::StoreError, path_.string() + ":" + std::to_string(line_no) + ": not JSON");
        }
        MemoryStore::append(record_from_json(j));
      }
    } else if (path_.has_parent_path()) {
      std::filesystem::create_directories(path_.parent_path());
    }
  }

  void append(const AssessmentRecord& record) override {
    {
      std::lock_guard lock(file_mutex_);
      std::ofstream out(path_, std::ios::app);
      out << to_json(record).dump() << '\n';
      out.flush();
      if (!out) throw Error(ErrorCode::StoreError, "cannot append to " + path_.string());
    }
    MemoryStore::append(record);
  }

 private:
  std::filesystem::path path_;
  std::mutex file_mutex_;
};

}  // namespace acnescore
