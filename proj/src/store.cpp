#include "polyloop/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "polyloop/errors.hpp"

namespace polyloop::data {

using json = nlohmann::json;

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

AnnotationStore::AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AnnotationStore::append(const AnnotationRecord& record) {
  json poly = json::array();
  for (const auto& p : record.polygon) poly.push_back({p.x, p.y});
  const json j = {{"format", kAnnotationFormat},
                  {"session_id", record.session_id},
                  {"instance_ref", record.instance_ref},
                  {"polygon", poly},
                  {"clicks", record.clicks},
                  {"created_ms", record.created_ms},
                  {"committed_ms", record.committed_ms}};
  std::string line = j.dump() + "\n";

  std::lock_guard lock(mu_);
  const int fd = ::open(path_.c_str(), O_RDWR | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open store " + path_.string() + ": " + std::strerror(errno));
  // A crash can leave a torn last line; start a fresh line so it stays isolated.
  const off_t end = ::lseek(fd, 0, SEEK_END);
  char last = '\n';
  if (end > 0 && ::pread(fd, &last, 1, end - 1) == 1 && last != '\n') line.insert(0, "\n");
  const ssize_t written = ::write(fd, line.data(), line.size());
  const int saved = errno;
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) {
    throw Error("short write to store " + path_.string() + ": " + std::strerror(saved));
  }
}

StoreReadResult AnnotationStore::read(
    const std::function<bool(const AnnotationRecord&)>& filter) const {
  StoreReadResult out;
  std::string content;
  {
    // Snapshot the file once; later appends are not observed by this read.
    std::lock_guard lock(mu_);
    std::ifstream in(path_, std::ios::binary);
    if (!in) return out;
    content.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    ++lineno;
    if (nl == std::string::npos) {
      // Torn trailing write.
      out.quarantined_lines.push_back(lineno);
      std::cerr << "warning: " << path_.string() << ":" << lineno
                << ": incomplete trailing record quarantined\n";
      break;
    }
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("format").get<std::string>() != kAnnotationFormat) {
        throw Error("unknown record format");
      }
      AnnotationRecord r;
      r.session_id = j.at("session_id").get<std::string>();
      r.instance_ref = j.at("instance_ref").get<std::string>();
      for (const auto& p : j.at("polygon")) r.polygon.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      r.clicks = j.at("clicks").get<int>();
      r.created_ms = j.at("created_ms").get<std::int64_t>();
      r.committed_ms = j.at("committed_ms").get<std::int64_t>();
      if (!filter || filter(r)) out.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      out.quarantined_lines.push_back(lineno);
      std::cerr << "warning: " << path_.string() << ":" << lineno
                << ": corrupt record quarantined (" << e.what() << ")\n";
    }
  }
  return out;
}

}  // namespace polyloop::data
