#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace polyloop {

// Line-delimited JSON metric records, append-only.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  bool enabled() const { return out_.is_open(); }
  void write(const nlohmann::json& record);

 private:
  std::ofstream out_;
  std::mutex mu_;
};

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);

// Tab-separated table with a header row.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;
};

void write_table(const Table& table, const std::filesystem::path& path);
Table read_table(const std::filesystem::path& path);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string render_svg(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label);

// Plots `y_keys` against `x_key` from either a .jsonl metric log or a
// tab-separated table and writes an SVG image.
void plot_file(const std::filesystem::path& input, const std::filesystem::path& output,
               const std::string& x_key, const std::vector<std::string>& y_keys);

}  // namespace polyloop
