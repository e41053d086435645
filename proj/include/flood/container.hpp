#pragma once

// Container file ("FLD1"): the single on-disk format for terrain, snapshot
// series, datasets, checkpoints, and forecast cubes.
//
//   magic      4 bytes  "FLD1"
//   hdr_len    u32 LE   byte length of the manifest text
//   manifest   UTF-8    "key: value\n" lines
//   arrays     repeated until EOF:
//                u32 LE name length, name bytes,
//                u8 dtype tag ('f' = f32, 'd' = f64),
//                u32 LE rank, rank × u64 LE dims,
//                row-major little-endian IEEE-754 payload

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace flood::io {

/// Ordered `key: value` list. Keys are unique; insertion order is preserved so
/// encoding is byte-stable.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::size_t value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  bool has(const std::string& key) const;
  /// Throws FormatError when missing or unparsable.
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_text() const;
  static Manifest parse(std::string_view text);

  friend bool operator==(const Manifest&, const Manifest&) = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);
double parse_double(std::string_view s);
/// Comma-separated exact doubles.
std::string format_list(std::span<const double> values);
std::vector<double> parse_list(std::string_view s);

enum class DType : std::uint8_t { F32 = 'f', F64 = 'd' };

struct Array {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t element_count() const;

  static Array from_f32(std::string name, std::vector<std::uint64_t> shape, std::vector<float> data);
  static Array from_f64(std::string name, std::vector<std::uint64_t> shape, std::vector<double> data);
  /// Narrowing copy of double data into an f32 array.
  static Array narrow(std::string name, std::vector<std::uint64_t> shape, std::span<const double> data);

  /// Widened copy regardless of storage dtype.
  std::vector<double> as_double() const;

  friend bool operator==(const Array&, const Array&) = default;
};

struct Container {
  Manifest manifest;
  std::vector<Array> arrays;

  const Array* find(const std::string& name) const;
  /// Throws FormatError when absent.
  const Array& at(const std::string& name) const;

  friend bool operator==(const Container&, const Container&) = default;
};

std::vector<std::uint8_t> encode(const Container& c);
Container decode(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, const Container& c);
Container read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace flood::io
