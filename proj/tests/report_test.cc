#include "attriq/report.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <limits>

namespace attriq {
namespace {

constexpr Scalar kNaN = std::numeric_limits<Scalar>::quiet_NaN();

TEST(FormatScalarTest, ShortestRoundTrip) {
  EXPECT_EQ(FormatScalar(4.0), "4.0");
  EXPECT_EQ(FormatScalar(0.1), "0.1");
  EXPECT_EQ(FormatScalar(1e-5), "1e-05");
  EXPECT_EQ(FormatScalar(-0.0), "-0.0");
  EXPECT_EQ(FormatScalar(kNaN), "undefined");
  EXPECT_EQ(FormatScalar(std::numeric_limits<Scalar>::infinity()), "inf");
  EXPECT_EQ(FormatScalar(-std::numeric_limits<Scalar>::infinity()), "-inf");
  Rng rng(5);
  std::uniform_real_distribution<Scalar> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const Scalar v = u(rng);
    EXPECT_EQ(std::stod(FormatScalar(v)), v);
  }
}

TEST(ReportFormatTest, Names) {
  EXPECT_EQ(ParseReportFormat("csv"), ReportFormat::kCsv);
  EXPECT_EQ(ParseReportFormat("json"), ReportFormat::kJson);
  EXPECT_EQ(ParseReportFormat("md"), ReportFormat::kMarkdown);
  EXPECT_EQ(ParseReportFormat("markdown"), ReportFormat::kMarkdown);
  EXPECT_FALSE(ParseReportFormat("xlsx").has_value());
  EXPECT_EQ(ReportFormatExtension(ReportFormat::kMarkdown), "md");
}

TEST(ReportTest, AggregateHeaderIsCanonical) {
  MetricRow row;
  for (int i = 0; i < 8; ++i) row.values[i] = i;
  const std::string csv = RenderReport(
      TabularAggregateTable(row, {kAllTabularMetrics.begin(), kAllTabularMetrics.end()}),
      ReportFormat::kCsv);
  EXPECT_EQ(csv,
            "faithfulness,infidelity,sensitivity,comprehensiveness,sufficiency,"
            "monotonicity,complexity,sparseness\n"
            "0.0,1.0,2.0,3.0,4.0,5.0,6.0,7.0\n");
}

TEST(ReportTest, SubsetKeepsCanonicalOrder) {
  MetricRow row;
  row[TabularMetric::kSparseness] = 0.5;
  row[TabularMetric::kFaithfulness] = kNaN;
  const ReportTable t = TabularAggregateTable(
      row, {TabularMetric::kSparseness, TabularMetric::kFaithfulness,
            TabularMetric::kSparseness});
  EXPECT_EQ(RenderReport(t, ReportFormat::kCsv), "faithfulness,sparseness\nundefined,0.5\n");
}

TEST(ReportTest, AttributionTableSortsByMagnitude) {
  Attribution a;
  a.values = Vector{{0.1, -0.5, 0.5, 0.0}};
  a.feature_names = {"a", "b", "c", "d"};
  const Vector x{{1.0, 2.0, 3.0, 4.0}};
  EXPECT_EQ(RenderReport(AttributionTable(a, x), ReportFormat::kCsv),
            "idx,feature,value,attribution\n"
            "1,b,2.0,-0.5\n"
            "2,c,3.0,0.5\n"
            "0,a,1.0,0.1\n"
            "3,d,4.0,0.0\n");
}

TEST(ReportTest, EmptyRowsGiveHeaderOnly) {
  TabularMetricsResult r;
  const ReportTable t =
      TabularInstanceTable(r, {}, {TabularMetric::kComplexity, TabularMetric::kInfidelity});
  EXPECT_EQ(RenderReport(t, ReportFormat::kCsv), "instance,infidelity,complexity,error\n");
  EXPECT_EQ(RenderReport(t, ReportFormat::kJson),
            "{\n  \"columns\": [\"instance\", \"infidelity\", \"complexity\", \"error\"],\n"
            "  \"rows\": []\n}\n");
}

TEST(ReportTest, CsvEscaping) {
  ReportTable t;
  t.columns = {"name", "note"};
  t.rows.push_back({std::string("a,b"), std::string("say \"x\"\nok")});
  EXPECT_EQ(RenderReport(t, ReportFormat::kCsv),
            "name,note\n\"a,b\",\"say \"\"x\"\"\nok\"\n");
}

TEST(ReportTest, JsonParsesBack) {
  ReportTable t;
  t.columns = {"instance", "faithfulness", "error"};
  t.rows.push_back({std::int64_t{0}, 0.25, std::string("")});
  t.rows.push_back({std::int64_t{1}, kNaN, std::string("NotDifferentiable: \"x\"")});
  const auto j = nlohmann::json::parse(RenderReport(t, ReportFormat::kJson));
  EXPECT_EQ(j["columns"].size(), 3u);
  EXPECT_EQ(j["rows"][0]["faithfulness"].get<double>(), 0.25);
  EXPECT_EQ(j["rows"][1]["faithfulness"].get<std::string>(), "undefined");
  EXPECT_EQ(j["rows"][1]["instance"].get<int>(), 1);
  EXPECT_EQ(j["rows"][1]["error"].get<std::string>(), "NotDifferentiable: \"x\"");
}

TEST(ReportTest, MarkdownAligned) {
  ReportTable t;
  t.columns = {"metric", "v"};
  t.rows.push_back({std::string("mprt"), 0.5});
  t.rows.push_back({std::string("a|b"), std::int64_t{12345}});
  EXPECT_EQ(RenderReport(t, ReportFormat::kMarkdown),
            "| metric | v     |\n"
            "| ------ | ----- |\n"
            "| mprt   | 0.5   |\n"
            "| a/b    | 12345 |\n");
}

TEST(ReportTest, RaggedTableRejected) {
  ReportTable t;
  t.columns = {"a", "b"};
  t.rows.push_back({0.0});
  EXPECT_THROW(RenderReport(t, ReportFormat::kCsv), Error);
}

TEST(ReportTest, InstanceTableCarriesErrors) {
  TabularMetricsResult r;
  r.instances.resize(2);
  r.instances[0].row[TabularMetric::kComplexity] = 3;
  r.instances[1].error = "NotDifferentiable: tree";
  const ReportTable t = TabularInstanceTable(r, {7, 9}, {TabularMetric::kComplexity});
  EXPECT_EQ(RenderReport(t, ReportFormat::kCsv),
            "instance,complexity,error\n7,3.0,\n9,undefined,NotDifferentiable: tree\n");
}

TEST(ReportTest, ImageTables) {
  ImageMetricRow row;
  row[ImageMetric::kMprt] = 0.75;
  const ReportTable t =
      ImageAggregateTable(row, {ImageMetric::kAvgSensitivity, ImageMetric::kMprt});
  EXPECT_EQ(RenderReport(t, ReportFormat::kCsv), "mprt,avg_sensitivity\n0.75,undefined\n");
}

TEST(ReportTest, PgmHeaderAndScaling) {
  Matrix m(2, 3);
  m << 0, 1, 2, 3, 4, 5;
  const std::string pgm = EncodePgm(m);
  const std::string header = "P5\n3 2\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 6);
  EXPECT_EQ(pgm.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(pgm.back()), 255);
  EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + 1]), 51);
}

}  // namespace
}  // namespace attriq
