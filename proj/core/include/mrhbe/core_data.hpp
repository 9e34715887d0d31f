#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace mrhbe {

using Point = std::vector<double>;

// A point on the unit sphere. Only constructible through normalize() or the
// checked adopt(), so holders can rely on |‖x‖ − 1| ≤ 1e−9.
class UnitPoint {
 public:
  static UnitPoint adopt(std::vector<double> coords);

  std::span<const double> coords() const noexcept { return coords_; }
  std::size_t dim() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const noexcept { return coords_[i]; }
  bool operator==(const UnitPoint&) const = default;

 private:
  explicit UnitPoint(std::vector<double> c) : coords_(std::move(c)) {}
  friend UnitPoint normalize(std::span<const double> p);
  std::vector<double> coords_;
};

UnitPoint normalize(std::span<const double> p);
inline UnitPoint normalize(const Point& p) { return normalize(std::span<const double>(p)); }

double norm(std::span<const double> p) noexcept;
double dot(std::span<const double> a, std::span<const double> b);

// Dot product clamped into [−1, 1].
double inner(std::span<const double> u, std::span<const double> v);
inline double inner(const UnitPoint& u, const UnitPoint& v) { return inner(u.coords(), v.coords()); }

// Row-major n×d matrix of points.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t d, std::vector<double> rowmajor);
  static Dataset from_rows(const std::vector<Point>& rows);

  std::size_t size() const noexcept { return n_; }
  std::size_t dim() const noexcept { return d_; }
  bool empty() const noexcept { return n_ == 0; }

  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * d_, d_}; }
  const std::vector<double>& raw() const noexcept { return data_; }

  void push_back(std::span<const double> p);
  Dataset subset(const std::vector<std::size_t>& indices) const;

  // Every row divided by its norm; throws ZeroNorm on a zero row.
  Dataset normalized() const;
  bool is_unit(double tol = 1e-9) const noexcept;

  bool operator==(const Dataset&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::vector<double> data_;
};

enum class DatasetFormat { Auto, Binary, Csv };

// Binary layout: "MRHB", u16 version=1, u32 n, u32 d, n·d little-endian f64.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format = DatasetFormat::Auto);

// In-memory codec used by the file functions and by state serialization.
std::vector<unsigned char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const unsigned char> bytes, std::size_t* consumed = nullptr);
Dataset parse_csv(const std::string& text);

}  // namespace mrhbe
