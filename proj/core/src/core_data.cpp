#include "mrhbe/core_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "mrhbe/error.hpp"

namespace mrhbe {

static_assert(std::endian::native == std::endian::little, "binary codec assumes little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'R', 'H', 'B'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4;

template <class T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <class T>
T get(std::span<const unsigned char> in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

UnitPoint UnitPoint::adopt(std::vector<double> coords) {
  if (coords.empty()) fail(ErrorCode::BadParams, "unit point needs d >= 1");
  const double nrm = norm(coords);
  if (std::abs(nrm - 1.0) > 1e-9) fail(ErrorCode::BadParams, "point is not unit norm");
  return UnitPoint(std::move(coords));
}

double norm(std::span<const double> p) noexcept {
  // Scaled accumulation keeps tiny and huge coordinates from under/overflowing.
  double scale = 0.0;
  for (double v : p) scale = std::max(scale, std::abs(v));
  if (scale == 0.0 || !std::isfinite(scale)) return scale;
  double s = 0.0;
  for (double v : p) {
    const double r = v / scale;
    s += r * r;
  }
  return scale * std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::DimensionMismatch, "dot of unequal dimensions");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

UnitPoint normalize(std::span<const double> p) {
  if (p.empty()) fail(ErrorCode::BadParams, "point needs d >= 1");
  for (double v : p)
    if (!std::isfinite(v)) fail(ErrorCode::BadParams, "non-finite coordinate");
  const double nrm = norm(p);
  if (nrm == 0.0) fail(ErrorCode::ZeroNorm, "cannot normalize the zero vector");
  std::vector<double> c(p.begin(), p.end());
  for (double& v : c) v /= nrm;
  return UnitPoint(std::move(c));
}

double inner(std::span<const double> u, std::span<const double> v) {
  return std::clamp(dot(u, v), -1.0, 1.0);
}

Dataset::Dataset(std::size_t d, std::vector<double> rowmajor) : d_(d), data_(std::move(rowmajor)) {
  if (d == 0) fail(ErrorCode::BadParams, "dataset dimension must be positive");
  if (data_.size() % d != 0) fail(ErrorCode::DimensionMismatch, "data length not a multiple of d");
  n_ = data_.size() / d;
}

Dataset Dataset::from_rows(const std::vector<Point>& rows) {
  if (rows.empty()) fail(ErrorCode::EmptyDataset, "no rows");
  Dataset ds;
  ds.d_ = rows.front().size();
  if (ds.d_ == 0) fail(ErrorCode::BadParams, "dataset dimension must be positive");
  ds.data_.reserve(rows.size() * ds.d_);
  for (const auto& r : rows) ds.push_back(r);
  return ds;
}

void Dataset::push_back(std::span<const double> p) {
  if (d_ == 0) d_ = p.size();
  if (p.size() != d_ || d_ == 0) fail(ErrorCode::DimensionMismatch, "row dimension differs from dataset");
  data_.insert(data_.end(), p.begin(), p.end());
  ++n_;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.d_ = d_;
  out.data_.reserve(indices.size() * d_);
  for (std::size_t i : indices) {
    if (i >= n_) fail(ErrorCode::OutOfRange, "subset index past end");
    out.push_back(row(i));
  }
  return out;
}

Dataset Dataset::normalized() const {
  Dataset out;
  out.d_ = d_;
  out.data_.reserve(data_.size());
  for (std::size_t i = 0; i < n_; ++i) {
    const UnitPoint u = normalize(row(i));
    out.push_back(u.coords());
  }
  return out;
}

bool Dataset::is_unit(double tol) const noexcept {
  for (std::size_t i = 0; i < n_; ++i)
    if (std::abs(norm(row(i)) - 1.0) > tol) return false;
  return true;
}

std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + ds.raw().size() * sizeof(double));
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim()));
  for (double v : ds.raw()) put<double>(out, v);
  return out;
}

Dataset decode_dataset(std::span<const unsigned char> in, std::size_t* consumed) {
  if (in.size() < 4) fail(ErrorCode::TruncatedFile, "missing magic");
  if (std::memcmp(in.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "expected MRHB");
  if (in.size() < kHeaderBytes) fail(ErrorCode::TruncatedFile, "short header");
  const auto version = get<std::uint16_t>(in, 4);
  if (version != kVersion) fail(ErrorCode::BadMagic, "unsupported version " + std::to_string(version));
  const auto n = get<std::uint32_t>(in, 6);
  const auto d = get<std::uint32_t>(in, 10);
  if (d == 0) fail(ErrorCode::DimensionMismatch, "zero dimension in header");
  const std::size_t need = kHeaderBytes + static_cast<std::size_t>(n) * d * sizeof(double);
  if (in.size() < need) fail(ErrorCode::TruncatedFile, "header promises more rows than present");
  std::vector<double> data(static_cast<std::size_t>(n) * d);
  if (!data.empty()) std::memcpy(data.data(), in.data() + kHeaderBytes, data.size() * sizeof(double));
  if (consumed) *consumed = need;
  return Dataset(d, std::move(data));
}

Dataset parse_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  Dataset ds;
  Point row;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    row.clear();
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail(ErrorCode::BadParams, "non-numeric CSV cell '" + cell + "'");
      }
    }
    ds.push_back(row);
  }
  if (ds.empty()) fail(ErrorCode::TruncatedFile, "CSV has no rows");
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(ds);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::IoError, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (format == DatasetFormat::Auto) {
    const bool binary = bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0;
    const bool csv_ext = path.extension() == ".csv";
    format = (binary || !csv_ext) ? DatasetFormat::Binary : DatasetFormat::Csv;
  }
  if (format == DatasetFormat::Csv) return parse_csv(std::string(bytes.begin(), bytes.end()));
  return decode_dataset(bytes);
}

}  // namespace mrhbe
