#include "attriq/report.hpp"

#include "attriq/data_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

namespace attriq {
namespace {

std::string CellText(const ReportCell& cell) {
  if (const auto* s = std::get_if<std::string>(&cell)) return *s;
  if (const auto* i = std::get_if<std::int64_t>(&cell)) return std::to_string(*i);
  return FormatScalar(std::get<Scalar>(cell));
}

std::string CsvEscape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string JsonCell(const ReportCell& cell) {
  if (const auto* s = std::get_if<std::string>(&cell)) return nlohmann::json(*s).dump();
  if (const auto* d = std::get_if<Scalar>(&cell); d && !std::isfinite(*d)) {
    return "\"" + FormatScalar(*d) + "\"";
  }
  return CellText(cell);
}

std::string RenderCsv(const ReportTable& t) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out += ',';
      out += CsvEscape(cells[i]);
    }
    out += '\n';
  };
  line(t.columns);
  for (const auto& row : t.rows) {
    std::vector<std::string> cells;
    for (const auto& c : row) cells.push_back(CellText(c));
    line(cells);
  }
  return out;
}

std::string RenderJson(const ReportTable& t) {
  std::string out = "{\n  \"columns\": [";
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (i > 0) out += ", ";
    out += nlohmann::json(t.columns[i]).dump();
  }
  out += "],\n  \"rows\": [";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out += r == 0 ? "\n    {" : ",\n    {";
    for (std::size_t i = 0; i < t.columns.size(); ++i) {
      if (i > 0) out += ", ";
      out += nlohmann::json(t.columns[i]).dump() + ": " + JsonCell(t.rows[r][i]);
    }
    out += "}";
  }
  out += t.rows.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

std::string RenderMarkdown(const ReportTable& t) {
  std::vector<std::vector<std::string>> text;
  for (const auto& row : t.rows) {
    std::vector<std::string> cells;
    for (const auto& c : row) {
      std::string s = CellText(c);
      std::replace(s.begin(), s.end(), '|', '/');
      std::replace(s.begin(), s.end(), '\n', ' ');
      cells.push_back(std::move(s));
    }
    text.push_back(std::move(cells));
  }
  std::vector<std::size_t> width;
  for (const auto& c : t.columns) width.push_back(std::max<std::size_t>(3, c.size()));
  for (const auto& row : text)
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());

  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    out += '|';
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out += ' ' + cells[i] + std::string(width[i] - cells[i].size(), ' ') + " |";
    }
    out += '\n';
  };
  line(t.columns);
  out += '|';
  for (std::size_t w : width) out += ' ' + std::string(w, '-') + " |";
  out += '\n';
  for (const auto& row : text) line(row);
  return out;
}

}  // namespace

std::optional<ReportFormat> ParseReportFormat(std::string_view name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  if (name == "markdown" || name == "md") return ReportFormat::kMarkdown;
  return std::nullopt;
}

std::string_view ReportFormatExtension(ReportFormat format) {
  switch (format) {
    case ReportFormat::kCsv:
      return "csv";
    case ReportFormat::kJson:
      return "json";
    case ReportFormat::kMarkdown:
      return "md";
  }
  return "txt";
}

std::string FormatScalar(Scalar v) {
  if (std::isnan(v)) return "undefined";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

std::string RenderReport(const ReportTable& table, ReportFormat format) {
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw Error(ErrorKind::kShapeMismatch, "report row width differs from header");
    }
  }
  switch (format) {
    case ReportFormat::kCsv:
      return RenderCsv(table);
    case ReportFormat::kJson:
      return RenderJson(table);
    case ReportFormat::kMarkdown:
      return RenderMarkdown(table);
  }
  throw Error(ErrorKind::kInvalidArgument, "unknown report format");
}

void EmitReport(const ReportTable& table, ReportFormat format, const std::string& path) {
  WriteFile(path, RenderReport(table, format));
}

ReportTable AttributionTable(const Attribution& attribution, ConstVectorRef x) {
  const Eigen::Index n = attribution.values.size();
  if (x.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "attribution and instance sizes differ");
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(attribution.values(a)) > std::abs(attribution.values(b));
  });
  ReportTable t;
  t.columns = {"idx", "feature", "value", "attribution"};
  for (int i : order) {
    const std::string name = i < static_cast<int>(attribution.feature_names.size())
                                 ? attribution.feature_names[i]
                                 : "x" + std::to_string(i);
    t.rows.push_back({std::int64_t{i}, name, x(i), attribution.values(i)});
  }
  return t;
}

std::vector<TabularMetric> CanonicalOrder(std::vector<TabularMetric> metrics) {
  std::sort(metrics.begin(), metrics.end());
  metrics.erase(std::unique(metrics.begin(), metrics.end()), metrics.end());
  return metrics;
}

std::vector<ImageMetric> CanonicalOrder(std::vector<ImageMetric> metrics) {
  std::sort(metrics.begin(), metrics.end());
  metrics.erase(std::unique(metrics.begin(), metrics.end()), metrics.end());
  return metrics;
}

ReportTable TabularAggregateTable(const MetricRow& row,
                                  const std::vector<TabularMetric>& metrics) {
  ReportTable t;
  std::vector<ReportCell> cells;
  for (TabularMetric m : CanonicalOrder(metrics)) {
    t.columns.emplace_back(TabularMetricName(m));
    cells.emplace_back(row[m]);
  }
  t.rows.push_back(std::move(cells));
  return t;
}

ReportTable TabularInstanceTable(const TabularMetricsResult& result,
                                 const std::vector<int>& instance_ids,
                                 const std::vector<TabularMetric>& metrics) {
  const auto order = CanonicalOrder(metrics);
  ReportTable t;
  t.columns.push_back("instance");
  for (TabularMetric m : order) t.columns.emplace_back(TabularMetricName(m));
  t.columns.push_back("error");
  for (std::size_t i = 0; i < result.instances.size(); ++i) {
    std::vector<ReportCell> cells{std::int64_t{instance_ids.at(i)}};
    for (TabularMetric m : order) cells.emplace_back(result.instances[i].row[m]);
    cells.emplace_back(result.instances[i].error.value_or(""));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

ReportTable ImageAggregateTable(const ImageMetricRow& row,
                                const std::vector<ImageMetric>& metrics) {
  ReportTable t;
  std::vector<ReportCell> cells;
  for (ImageMetric m : CanonicalOrder(metrics)) {
    t.columns.emplace_back(ImageMetricName(m));
    cells.emplace_back(row[m]);
  }
  t.rows.push_back(std::move(cells));
  return t;
}

ReportTable ImageInstanceTable(const ImageMetricsResult& result,
                               const std::vector<int>& instance_ids,
                               const std::vector<ImageMetric>& metrics) {
  const auto order = CanonicalOrder(metrics);
  ReportTable t;
  t.columns.push_back("instance");
  for (ImageMetric m : order) t.columns.emplace_back(ImageMetricName(m));
  t.columns.push_back("error");
  for (std::size_t i = 0; i < result.instances.size(); ++i) {
    std::vector<ReportCell> cells{std::int64_t{instance_ids.at(i)}};
    for (ImageMetric m : order) cells.emplace_back(result.instances[i].row[m]);
    cells.emplace_back(result.instances[i].error.value_or(""));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

std::string EncodePgm(const Matrix& map) {
  const Scalar lo = map.minCoeff(), hi = map.maxCoeff();
  const Scalar span = hi > lo ? hi - lo : 1.0;
  std::string out = "P5\n" + std::to_string(map.cols()) + " " + std::to_string(map.rows()) +
                    "\n255\n";
  for (Eigen::Index y = 0; y < map.rows(); ++y) {
    for (Eigen::Index x = 0; x < map.cols(); ++x) {
      const Scalar v = std::isfinite(map(y, x)) ? (map(y, x) - lo) / span : 0.0;
      out += static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  return out;
}

}  // namespace attriq
