#include "polyloop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "polyloop/errors.hpp"

namespace polyloop {

using json = nlohmann::json;

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw Error("cannot open metrics log " + path.string());
}

void MetricsLog::write(const json& record) {
  if (!out_.is_open()) return;
  std::lock_guard lock(mu_);
  out_ << record.dump() << "\n";
  out_.flush();
}

std::vector<json> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw Error("table has no column '" + name + "'");
  return static_cast<std::size_t>(std::distance(columns.begin(), it));
}

void write_table(const Table& table, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write table " + path.string());
  for (std::size_t i = 0; i < table.columns.size(); ++i) {
    out << (i ? "\t" : "") << table.columns[i];
  }
  out << "\n" << std::setprecision(10);
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "\t" : "") << row[i];
    out << "\n";
  }
}

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open table " + path.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    if (t.columns.empty()) {
      while (std::getline(ss, cell, '\t')) t.columns.push_back(cell);
      continue;
    }
    std::vector<double> row;
    while (std::getline(ss, cell, '\t')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(lineno, "non-numeric cell '" + cell + "'");
      }
    }
    if (row.size() != t.columns.size()) throw ParseError(lineno, "wrong number of cells");
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string render_svg(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label) {
  constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (double v : s.x) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    for (double v : s.y) ymin = std::min(ymin, v), ymax = std::max(ymax, v);
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pw = kW - kLeft - kRight;
  const double ph = kH - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double v) { return kTop + ph - (v - ymin) / (ymax - ymin) * ph; };
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#17becf"};

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
  svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 16
        << "\" text-anchor=\"middle\">" << std::setprecision(3) << xv << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv
        << "</text>\n";
    svg << std::setprecision(2);
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\">"
      << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + ph / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kColours[k % std::size(kColours)];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << kW - kRight + 10 << "\" y=\"" << kTop + 16 * (k + 1) << "\" fill=\""
        << colour << "\">" << s.name << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void plot_file(const std::filesystem::path& input, const std::filesystem::path& output,
               const std::string& x_key, const std::vector<std::string>& y_keys) {
  std::vector<Series> series;
  if (input.extension() == ".jsonl") {
    const auto records = read_metrics(input);
    for (const auto& key : y_keys) {
      Series s{key, {}, {}};
      for (const auto& r : records) {
        if (r.contains(x_key) && r.contains(key) && r[key].is_number()) {
          s.x.push_back(r[x_key].get<double>());
          s.y.push_back(r[key].get<double>());
        }
      }
      series.push_back(std::move(s));
    }
  } else {
    const Table t = read_table(input);
    const std::size_t xi = t.column(x_key);
    for (const auto& key : y_keys) {
      const std::size_t yi = t.column(key);
      Series s{key, {}, {}};
      for (const auto& row : t.rows) {
        s.x.push_back(row[xi]);
        s.y.push_back(row[yi]);
      }
      series.push_back(std::move(s));
    }
  }
  std::ofstream out(output);
  if (!out) throw Error("cannot write plot " + output.string());
  out << render_svg(series, input.filename().string(), x_key, "value");
}

}  // namespace polyloop
