#include "attriq/data_io.hpp"

#include <bit>
#include <cstring>
#include <numeric>

namespace attriq {

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreamble = 10;  // magic + version + u16 header length

std::string ShapeTuple(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

// Value text following `'key':` in the header dict.
std::string_view DictValue(std::string_view header, std::string_view key) {
  const std::string needle = "'" + std::string(key) + "'";
  std::size_t pos = header.find(needle);
  if (pos == std::string_view::npos) {
    throw Error(ErrorKind::kParseError, "npy header has no " + needle + " key");
  }
  pos = header.find(':', pos + needle.size());
  if (pos == std::string_view::npos) {
    throw Error(ErrorKind::kParseError, "npy header: missing ':' after " + needle);
  }
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  return header.substr(pos);
}

std::vector<std::int64_t> ParseShape(std::string_view v) {
  if (v.empty() || v.front() != '(') {
    throw Error(ErrorKind::kParseError, "npy header: shape is not a tuple");
  }
  const std::size_t close = v.find(')');
  if (close == std::string_view::npos) {
    throw Error(ErrorKind::kParseError, "npy header: unterminated shape tuple");
  }
  std::vector<std::int64_t> shape;
  std::int64_t cur = 0;
  bool have = false;
  for (char c : v.substr(1, close - 1)) {
    if (c >= '0' && c <= '9') {
      cur = cur * 10 + (c - '0');
      have = true;
      if (cur > (std::int64_t{1} << 40)) {
        throw Error(ErrorKind::kParseError, "npy header: dimension too large");
      }
    } else if (c == ',') {
      if (!have) throw Error(ErrorKind::kParseError, "npy header: empty dimension");
      shape.push_back(cur);
      cur = 0;
      have = false;
    } else if (c != ' ' && c != 'L') {
      throw Error(ErrorKind::kParseError,
                  std::string("npy header: unexpected '") + c + "' in shape");
    }
  }
  if (have) shape.push_back(cur);
  return shape;
}

}  // namespace

std::int64_t TensorFile::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<std::int64_t>());
}

std::string EncodeNpy(const TensorFile& t) {
  if (t.size() != static_cast<std::int64_t>(t.data.size())) {
    throw Error(ErrorKind::kShapeMismatch,
                "tensor shape " + ShapeTuple(t.shape) + " holds " +
                    std::to_string(t.size()) + " values, data has " +
                    std::to_string(t.data.size()));
  }
  std::string header = std::string("{'descr': '") +
                       (t.dtype == Dtype::kF32 ? "<f4" : "<f8") +
                       "', 'fortran_order': False, 'shape': " + ShapeTuple(t.shape) +
                       ", }";
  const std::size_t total = kPreamble + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';

  std::string out(kMagic, kMagicLen);
  out += '\x01';
  out += '\x00';
  const auto len = static_cast<std::uint16_t>(header.size());
  out += static_cast<char>(len & 0xff);
  out += static_cast<char>(len >> 8);
  out += header;
  const std::size_t item = t.dtype == Dtype::kF32 ? 4 : 8;
  const std::size_t offset = out.size();
  out.resize(offset + item * t.data.size());
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (t.dtype == Dtype::kF32) {
      const float f = static_cast<float>(t.data[i]);
      std::memcpy(&out[offset + 4 * i], &f, 4);
    } else {
      std::memcpy(&out[offset + 8 * i], &t.data[i], 8);
    }
  }
  return out;
}

TensorFile DecodeNpy(std::string_view bytes) {
  if (bytes.size() < kPreamble || bytes.substr(0, kMagicLen) != std::string_view(kMagic, kMagicLen)) {
    throw Error(ErrorKind::kBadMagic, "not an npy file (missing \\x93NUMPY magic)");
  }
  if (bytes[6] != '\x01' || bytes[7] != '\x00') {
    throw Error(ErrorKind::kBadMagic,
                "npy version " + std::to_string(static_cast<unsigned char>(bytes[6])) + "." +
                    std::to_string(static_cast<unsigned char>(bytes[7])) +
                    " unsupported (only 1.0)");
  }
  const std::size_t hlen = static_cast<unsigned char>(bytes[8]) |
                           (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  if (bytes.size() < kPreamble + hlen) {
    throw Error(ErrorKind::kParseError, "npy header truncated");
  }
  const std::string_view header = bytes.substr(kPreamble, hlen);

  TensorFile t;
  const std::string_view descr = DictValue(header, "descr");
  if (descr.substr(0, 5) == "'<f4'") {
    t.dtype = Dtype::kF32;
  } else if (descr.substr(0, 5) == "'<f8'") {
    t.dtype = Dtype::kF64;
  } else {
    const std::size_t end = descr.find(',');
    throw Error(ErrorKind::kUnsupportedDtype,
                "dtype " + std::string(descr.substr(0, end)) + " (need '<f4' or '<f8')");
  }
  const std::string_view order = DictValue(header, "fortran_order");
  if (order.substr(0, 4) == "True") {
    throw Error(ErrorKind::kFortranOrderUnsupported, "fortran_order arrays are not supported");
  }
  if (order.substr(0, 5) != "False") {
    throw Error(ErrorKind::kParseError, "npy header: fortran_order is not a bool");
  }
  t.shape = ParseShape(DictValue(header, "shape"));

  const std::size_t item = t.dtype == Dtype::kF32 ? 4 : 8;
  const std::int64_t count = t.size();
  const std::string_view payload = bytes.substr(kPreamble + hlen);
  if (payload.size() != static_cast<std::size_t>(count) * item) {
    throw Error(ErrorKind::kParseError,
                "npy payload has " + std::to_string(payload.size()) + " bytes, shape " +
                    ShapeTuple(t.shape) + " needs " + std::to_string(count * item));
  }
  t.data.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    if (t.dtype == Dtype::kF32) {
      float f;
      std::memcpy(&f, payload.data() + 4 * i, 4);
      t.data[i] = f;
    } else {
      std::memcpy(&t.data[i], payload.data() + 8 * i, 8);
    }
  }
  return t;
}

TensorFile LoadTensor(const std::string& path) {
  try {
    return DecodeNpy(ReadFile(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kIo) throw;
    throw Error(e.kind(), path + ": " + e.detail());
  }
}

void SaveTensor(const TensorFile& t, const std::string& path) {
  WriteFile(path, EncodeNpy(t));
}

Matrix TensorRows(const TensorFile& t, std::int64_t row_size) {
  if (row_size <= 0 || t.size() % row_size != 0 || t.size() == 0) {
    throw Error(ErrorKind::kShapeMismatch,
                "tensor " + ShapeTuple(t.shape) + " cannot be split into rows of " +
                    std::to_string(row_size));
  }
  const std::int64_t rows = t.size() / row_size;
  Matrix m(rows, row_size);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < row_size; ++c) m(r, c) = t.data[r * row_size + c];
  return m;
}

}  // namespace attriq
