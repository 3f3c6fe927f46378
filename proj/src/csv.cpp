#include "attriq/data_io.hpp"

#include "attriq/attrib_tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace attriq {

std::string ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorKind::kIo, "read failed: " + path);
  return ss.str();
}

void WriteFile(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

namespace {

struct Field {
  std::string text;
  int line = 0;
  int col = 0;
  bool quoted = false;
};

struct Record {
  int line = 0;
  std::vector<Field> fields;
};

std::string Where(int line, int col) {
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

std::vector<Record> Tokenize(std::string_view text) {
  std::vector<Record> records;
  Record rec;
  Field field;
  int line = 1, col = 1;
  bool in_quotes = false, after_quote = false, field_started = false;
  int quote_line = 0, quote_col = 0;

  auto start_field = [&] {
    if (!field_started) {
      field.line = line;
      field.col = col;
      field_started = true;
    }
  };
  auto end_field = [&] {
    start_field();
    if (rec.fields.empty()) rec.line = field.line;
    rec.fields.push_back(std::move(field));
    field = Field{};
    field_started = after_quote = false;
  };
  auto end_record = [&] {
    end_field();
    // a blank line is not a record
    const bool blank = rec.fields.size() == 1 && !rec.fields[0].quoted &&
                       rec.fields[0].text.empty();
    if (!blank) records.push_back(std::move(rec));
    rec = Record{};
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.text += '"';
          ++i;
          col += 2;
          continue;
        }
        in_quotes = false;
        after_quote = true;
      } else {
        field.text += ch;
      }
      if (ch == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      continue;
    }
    if (ch == ',') {
      end_field();
      ++col;
      continue;
    }
    if (ch == '\n' || (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n')) {
      if (ch == '\r') ++i;
      end_record();
      ++line;
      col = 1;
      continue;
    }
    if (after_quote) {
      throw Error(ErrorKind::kParseError,
                  Where(line, col) + ": unexpected character after closing quote");
    }
    if (ch == '"') {
      if (field_started && !field.text.empty()) {
        throw Error(ErrorKind::kParseError,
                    Where(line, col) + ": quote inside unquoted field");
      }
      start_field();
      field.quoted = true;
      in_quotes = true;
      quote_line = line;
      quote_col = col;
      ++col;
      continue;
    }
    start_field();
    field.text += ch;
    ++col;
  }
  if (in_quotes) {
    throw Error(ErrorKind::kParseError,
                Where(quote_line, quote_col) + ": unterminated quoted field");
  }
  if (field_started || !rec.fields.empty()) end_record();
  return records;
}

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool IsMissing(std::string_view s) {
  s = Trim(s);
  return s.empty() || s == "NA" || s == "N/A" || s == "NaN" || s == "nan";
}

std::optional<Scalar> ParseNumber(std::string_view s) {
  s = Trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  Scalar v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

}  // namespace

TabularDataset ParseCsv(std::string_view text, const CsvOptions& options) {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::vector<Record> records = Tokenize(text);
  if (records.empty()) throw Error(ErrorKind::kEmptyDataset, "CSV has no rows");

  std::vector<std::string> names;
  std::size_t first = 0;
  if (options.has_header) {
    for (Field& f : records[0].fields) names.push_back(std::string(Trim(f.text)));
    first = 1;
  } else {
    names = DefaultFeatureNames(static_cast<int>(records[0].fields.size()));
  }
  const std::size_t width = names.size();

  int label_idx = -1;
  if (options.label_column) {
    const auto it = std::find(names.begin(), names.end(), *options.label_column);
    if (it == names.end()) {
      throw Error(ErrorKind::kInvalidArgument,
                  "label column '" + *options.label_column + "' not in header");
    }
    label_idx = static_cast<int>(it - names.begin());
  }

  const int n_rows = static_cast<int>(records.size() - first);
  const int n_feat = static_cast<int>(width) - (label_idx >= 0 ? 1 : 0);
  TabularDataset ds;
  ds.features.resize(n_rows, n_feat);
  std::vector<int> labels;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> missing =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n_rows, n_feat, false);

  for (int r = 0; r < n_rows; ++r) {
    const Record& rec = records[first + r];
    if (rec.fields.size() != width) {
      throw Error(ErrorKind::kRaggedRow,
                  "line " + std::to_string(rec.line) + ": expected " +
                      std::to_string(width) + " fields, found " +
                      std::to_string(rec.fields.size()));
    }
    int j = 0;
    for (std::size_t c = 0; c < width; ++c) {
      const Field& f = rec.fields[c];
      if (static_cast<int>(c) == label_idx) {
        const auto v = ParseNumber(f.text);
        if (!v || *v != std::floor(*v) || std::abs(*v) > 1e9) {
          throw Error(ErrorKind::kNonNumericCell,
                      Where(f.line, f.col) + ": label '" + f.text + "' is not an integer");
        }
        labels.push_back(static_cast<int>(*v));
        continue;
      }
      if (const auto v = ParseNumber(f.text)) {
        ds.features(r, j) = *v;
      } else if (options.allow_missing && IsMissing(f.text)) {
        missing(r, j) = true;
        ds.features(r, j) = 0.0;
      } else {
        throw Error(ErrorKind::kNonNumericCell,
                    Where(f.line, f.col) + ": '" + f.text + "' is not a number");
      }
      ++j;
    }
  }

  if (missing.any()) {
    for (int j = 0; j < n_feat; ++j) {
      Scalar sum = 0.0;
      int count = 0;
      for (int r = 0; r < n_rows; ++r) {
        if (!missing(r, j)) {
          sum += ds.features(r, j);
          ++count;
        }
      }
      if (count == 0 && missing.col(j).any()) {
        throw Error(ErrorKind::kNonNumericCell,
                    "column " + std::to_string(j + 1) + " has no values to impute from");
      }
      for (int r = 0; r < n_rows; ++r) {
        if (missing(r, j)) ds.features(r, j) = sum / count;
      }
    }
  }

  for (int c = 0; c < static_cast<int>(width); ++c) {
    if (c != label_idx) ds.feature_names.push_back(names[c]);
  }
  if (label_idx >= 0) ds.labels = std::move(labels);
  return ds;
}

TabularDataset LoadCsv(const std::string& path, const CsvOptions& options) {
  return ParseCsv(ReadFile(path), options);
}

}  // namespace attriq
