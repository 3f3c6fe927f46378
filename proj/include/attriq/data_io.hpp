// On-disk formats: CSV datasets, NPY tensors and JSON model documents.
// Byte layouts are described in docs/formats.md.

#ifndef ATTRIQ_DATA_IO_HPP
#define ATTRIQ_DATA_IO_HPP

#include "attriq/core.hpp"
#include "attriq/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace attriq {

// Whole-file helpers; failures raise IoError naming the path.
std::string ReadFile(const std::string& path);
void WriteFile(const std::string& path, std::string_view contents);

// ---- CSV ----

struct TabularDataset {
  Matrix features;  // N x n
  std::vector<std::string> feature_names;
  std::optional<std::vector<int>> labels;

  int n_rows() const { return static_cast<int>(features.rows()); }
  int n_features() const { return static_cast<int>(features.cols()); }
};

struct CsvOptions {
  bool has_header = true;
  std::optional<std::string> label_column;  // header name (x<i> without header)
  bool allow_missing = false;  // impute empty / NA cells with the column mean
};

// RFC 4180: comma separated, double-quote quoting with "" escapes, CRLF or
// LF line ends. Errors carry 1-based line and column numbers.
TabularDataset ParseCsv(std::string_view text, const CsvOptions& options = {});
TabularDataset LoadCsv(const std::string& path, const CsvOptions& options = {});

// ---- NPY (version 1.0, little-endian float32/float64, C order) ----

enum class Dtype { kF32, kF64 };

struct TensorFile {
  Dtype dtype = Dtype::kF64;
  std::vector<std::int64_t> shape;
  std::vector<Scalar> data;  // row-major; f32 values widened exactly

  std::int64_t size() const;
};

std::string EncodeNpy(const TensorFile& t);
TensorFile DecodeNpy(std::string_view bytes);
TensorFile LoadTensor(const std::string& path);
void SaveTensor(const TensorFile& t, const std::string& path);

// Views a tensor as rows of length `row_size` (e.g. (N, C, H, W) images as N
// flattened rows). A tensor of exactly row_size elements is one row.
Matrix TensorRows(const TensorFile& t, std::int64_t row_size);

// ---- model documents ----

inline constexpr int kModelSchemaVersion = 1;

// Strict: unknown fields, wrong types and failed model validation all raise
// SchemaViolation with the offending field path.
Model ParseModelDocument(std::string_view json_text);
std::string ModelDocument(const Model& model);
Model LoadModel(const std::string& path);
void SaveModel(const Model& model, const std::string& path);

}  // namespace attriq

#endif  // ATTRIQ_DATA_IO_HPP
