#include "flood/container.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <system_error>

#include "flood/errors.hpp"

namespace flood::io {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'D', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("container truncated");
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(s[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(s[i]) << (8 * i);
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError("not a number: '" + std::string(s) + "'");
  return v;
}

std::string format_list(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> parse_list(std::string_view s) {
  std::vector<double> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = s.find(',', pos);
    out.push_back(parse_double(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

void Manifest::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find(':') != std::string::npos || key.find('\n') != std::string::npos)
    throw FormatError("invalid manifest key: '" + key + "'");
  if (value.find('\n') != std::string::npos) throw FormatError("manifest value contains newline");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void Manifest::set(const std::string& key, double value) { set(key, format_double(value)); }
void Manifest::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }

bool Manifest::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> Manifest::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& Manifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw FormatError("manifest key missing: " + key);
}

double Manifest::get_double(const std::string& key) const { return parse_double(get(key)); }

std::int64_t Manifest::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw FormatError("manifest key " + key + " is not an integer: '" + s + "'");
  return v;
}

std::string Manifest::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += ": ";
    out += v;
    out += '\n';
  }
  return out;
}

Manifest Manifest::parse(std::string_view text) {
  Manifest m;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos) throw FormatError("manifest line without ':': " + std::string(line));
    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
      return s;
    };
    const std::string key(trim(line.substr(0, colon)));
    if (m.has(key)) throw FormatError("duplicate manifest key: " + key);
    m.set(key, std::string(trim(line.substr(colon + 1))));
  }
  return m;
}

std::size_t Array::element_count() const {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

Array Array::from_f32(std::string name, std::vector<std::uint64_t> shape, std::vector<float> data) {
  Array a{std::move(name), DType::F32, std::move(shape), std::move(data), {}};
  if (a.element_count() != a.f32.size()) throw DimensionError("array '" + a.name + "' shape/data mismatch");
  return a;
}

Array Array::from_f64(std::string name, std::vector<std::uint64_t> shape, std::vector<double> data) {
  Array a{std::move(name), DType::F64, std::move(shape), {}, std::move(data)};
  if (a.element_count() != a.f64.size()) throw DimensionError("array '" + a.name + "' shape/data mismatch");
  return a;
}

Array Array::narrow(std::string name, std::vector<std::uint64_t> shape, std::span<const double> data) {
  std::vector<float> f(data.begin(), data.end());
  return from_f32(std::move(name), std::move(shape), std::move(f));
}

std::vector<double> Array::as_double() const {
  if (dtype == DType::F64) return f64;
  return std::vector<double>(f32.begin(), f32.end());
}

const Array* Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const Array& Container::at(const std::string& name) const {
  if (const Array* a = find(name)) return *a;
  throw FormatError("container has no array '" + name + "'");
}

std::vector<std::uint8_t> encode(const Container& c) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  const std::string text = c.manifest.to_text();
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const Array& a : c.arrays) {
    const std::size_t n = a.element_count();
    if ((a.dtype == DType::F32 ? a.f32.size() : a.f64.size()) != n)
      throw DimensionError("array '" + a.name + "' shape/data mismatch");
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    out.push_back(static_cast<std::uint8_t>(a.dtype));
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put_u64(out, d);
    if (a.dtype == DType::F32) {
      out.reserve(out.size() + 4 * n);
      for (float v : a.f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
      out.reserve(out.size() + 8 * n);
      for (double v : a.f64) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Container decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("bad magic: not an FLD1 container");
  const std::uint32_t hdr = r.u32();
  auto text = r.take(hdr);
  Container c;
  c.manifest = Manifest::parse(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));
  while (!r.done()) {
    Array a;
    const std::uint32_t name_len = r.u32();
    auto name = r.take(name_len);
    a.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    const std::uint8_t tag = r.take(1)[0];
    if (tag != 'f' && tag != 'd') throw FormatError("unknown dtype tag in array '" + a.name + "'");
    a.dtype = static_cast<DType>(tag);
    const std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(r.u64());
    const std::size_t n = a.element_count();
    if (a.dtype == DType::F32) {
      a.f32.resize(n);
      for (auto& v : a.f32) v = std::bit_cast<float>(r.u32());
    } else {
      a.f64.resize(n);
      for (auto& v : a.f64) v = std::bit_cast<double>(r.u64());
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, const Container& c) { write_bytes(path, encode(c)); }

Container read_file(const std::filesystem::path& path) { return decode(read_bytes(path)); }

}  // namespace flood::io
