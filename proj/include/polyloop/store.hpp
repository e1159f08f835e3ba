#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "polyloop/geometry.hpp"

namespace polyloop::data {

inline constexpr const char* kAnnotationFormat = "polyloop-ann-v1";

// One committed annotation. Polygon points are image pixels at the
// upscaled (D') resolution.
struct AnnotationRecord {
  std::string session_id;
  std::string instance_ref;
  std::vector<geometry::Point2> polygon;
  int clicks = 0;
  std::int64_t created_ms = 0;
  std::int64_t committed_ms = 0;

  friend bool operator==(const AnnotationRecord&, const AnnotationRecord&) = default;
};

struct StoreReadResult {
  std::vector<AnnotationRecord> records;
  std::vector<std::size_t> quarantined_lines;  // 1-based
};

// Append-only, line-delimited JSON store. Each append is a single write(2)
// on an O_APPEND descriptor, so concurrent writers never interleave within
// a line. Unparseable lines (including a torn trailing line) are skipped
// and reported rather than failing the read.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path);

  void append(const AnnotationRecord& record);
  StoreReadResult read(const std::function<bool(const AnnotationRecord&)>& filter = {}) const;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
};

std::int64_t now_ms();

}  // namespace polyloop::data
