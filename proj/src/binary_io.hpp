// Private little-endian stream helpers shared by the binary file formats.
#ifndef ANCHORFUSE_SRC_BINARY_IO_HPP_
#define ANCHORFUSE_SRC_BINARY_IO_HPP_

#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "anchorfuse/errors.hpp"
#include "anchorfuse/numeric.hpp"

namespace anchorfuse::io {

inline void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename UInt>
void put_uint(std::ostream& out, UInt value) {
  unsigned char buf[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  put_bytes(out, buf, sizeof(UInt));
}

inline void get_bytes(std::istream& in, void* data, std::size_t n, const std::string& what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError("truncated file while reading " + what);
}

template <typename UInt>
UInt get_uint(std::istream& in, const std::string& what) {
  unsigned char buf[sizeof(UInt)];
  get_bytes(in, buf, sizeof(UInt), what);
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    value |= static_cast<UInt>(buf[i]) << (8 * i);
  return value;
}

inline void put_f64(std::ostream& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  put_uint<std::uint64_t>(out, bits);
}

inline double get_f64(std::istream& in, const std::string& what) {
  auto bits = get_uint<std::uint64_t>(in, what);
  double value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

inline std::string get_string(std::istream& in, const std::string& what) {
  auto len = get_uint<std::uint32_t>(in, what);
  std::string s(len, '\0');
  if (len > 0) get_bytes(in, s.data(), len, what);
  return s;
}

inline void put_matrix(std::ostream& out, const Matrix& m) {
  put_uint<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_uint<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
}

inline Matrix get_matrix(std::istream& in, const std::string& what) {
  auto rows = get_uint<std::uint64_t>(in, what);
  auto cols = get_uint<std::uint64_t>(in, what);
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = get_f64(in, what);
  return m;
}

inline void put_vector(std::ostream& out, const Vector& v) {
  put_uint<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

inline Vector get_vector(std::istream& in, const std::string& what) {
  auto n = get_uint<std::uint64_t>(in, what);
  Vector v(static_cast<Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) v[static_cast<Index>(i)] = get_f64(in, what);
  return v;
}

inline void put_scaler(std::ostream& out, const StandardScaler& scaler) {
  put_vector(out, scaler.means);
  put_vector(out, scaler.scales);
}

inline StandardScaler get_scaler(std::istream& in, const std::string& what) {
  StandardScaler scaler;
  scaler.means = get_vector(in, what);
  scaler.scales = get_vector(in, what);
  if (scaler.scales.size() != scaler.means.size())
    throw FormatError("scaler mean/scale length mismatch in " + what);
  return scaler;
}

}  // namespace anchorfuse::io

#endif  // ANCHORFUSE_SRC_BINARY_IO_HPP_
