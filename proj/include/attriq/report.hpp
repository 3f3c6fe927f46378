// Tables written by the CLI: attributions, metric rows and benchmark
// matrices, rendered as CSV, JSON or Markdown.
//
// Numbers use the shortest decimal form that round-trips, with ".0" kept on
// integral values; NaN is written as "undefined".

#ifndef ATTRIQ_REPORT_HPP
#define ATTRIQ_REPORT_HPP

#include "attriq/attrib_tabular.hpp"
#include "attriq/core.hpp"
#include "attriq/metrics_image.hpp"
#include "attriq/metrics_tabular.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace attriq {

using ReportCell = std::variant<Scalar, std::int64_t, std::string>;

struct ReportTable {
  std::vector<std::string> columns;
  std::vector<std::vector<ReportCell>> rows;
};

enum class ReportFormat { kCsv, kJson, kMarkdown };

std::optional<ReportFormat> ParseReportFormat(std::string_view name);
std::string_view ReportFormatExtension(ReportFormat format);  // "csv", "json", "md"

std::string FormatScalar(Scalar v);

std::string RenderReport(const ReportTable& table, ReportFormat format);
void EmitReport(const ReportTable& table, ReportFormat format, const std::string& path);

// idx, feature, value, attribution; sorted by |attribution| descending, ties
// by feature index.
ReportTable AttributionTable(const Attribution& attribution, ConstVectorRef x);

// One row with the selected metric columns, in canonical order.
ReportTable TabularAggregateTable(const MetricRow& row,
                                  const std::vector<TabularMetric>& metrics);
// instance, <metrics...>, error
ReportTable TabularInstanceTable(const TabularMetricsResult& result,
                                 const std::vector<int>& instance_ids,
                                 const std::vector<TabularMetric>& metrics);

ReportTable ImageAggregateTable(const ImageMetricRow& row,
                                const std::vector<ImageMetric>& metrics);
ReportTable ImageInstanceTable(const ImageMetricsResult& result,
                               const std::vector<int>& instance_ids,
                               const std::vector<ImageMetric>& metrics);

// Canonical column order with duplicates removed.
std::vector<TabularMetric> CanonicalOrder(std::vector<TabularMetric> metrics);
std::vector<ImageMetric> CanonicalOrder(std::vector<ImageMetric> metrics);

// Binary PGM (P5) of a map scaled to 0..255 by its own min/max.
std::string EncodePgm(const Matrix& map);

}  // namespace attriq

#endif  // ATTRIQ_REPORT_HPP
