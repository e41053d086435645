#include "flood/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "flood/errors.hpp"
#include "flood/random.hpp"

namespace flood {

namespace {

// Derivative along a 1D line of samples reached through `at(k)`.
template <typename At>
double line_derivative(At at, std::size_t k, std::size_t n, double spacing) {
  if (n < 2) return 0.0;
  if (k == 0) return (at(1) - at(0)) / spacing;
  if (k == n - 1) return (at(n - 1) - at(n - 2)) / spacing;
  return (at(k + 1) - at(k - 1)) / (2.0 * spacing);
}

}  // namespace

SlopeFields compute_slopes(const RasterD& z, double cell_size) {
  if (z.empty()) throw DimensionError("compute_slopes: empty elevation grid");
  if (!(cell_size > 0.0)) throw DimensionError("compute_slopes: cell_size must be positive");
  const std::size_t rows = z.rows(), cols = z.cols();
  SlopeFields s{RasterD(rows, cols), RasterD(rows, cols), RasterD(rows, cols)};
  const double diag = cell_size * std::sqrt(2.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      s.x(i, j) = line_derivative([&](std::size_t k) { return z(i, k); }, j, cols, cell_size);
      s.y(i, j) = line_derivative([&](std::size_t k) { return z(k, j); }, i, rows, cell_size);
      const bool fwd = i + 1 < rows && j + 1 < cols;
      const bool back = i > 0 && j > 0;
      if (fwd && back)
        s.xy(i, j) = (z(i + 1, j + 1) - z(i - 1, j - 1)) / (2.0 * diag);
      else if (fwd)
        s.xy(i, j) = (z(i + 1, j + 1) - z(i, j)) / diag;
      else if (back)
        s.xy(i, j) = (z(i, j) - z(i - 1, j - 1)) / diag;
      else
        s.xy(i, j) = 0.0;
    }
  }
  return s;
}

TerrainGrid::TerrainGrid(RasterD elevation, RasterD manning_n, double cell_size)
    : elevation_(std::move(elevation)), manning_(std::move(manning_n)), cell_size_(cell_size) {
  if (elevation_.empty()) throw DimensionError("terrain: zero-size grid");
  if (!elevation_.same_shape(manning_))
    throw DimensionError("terrain: elevation " + std::to_string(elevation_.rows()) + "x" +
                         std::to_string(elevation_.cols()) + " vs manning " +
                         std::to_string(manning_.rows()) + "x" + std::to_string(manning_.cols()));
  if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_)) throw DimensionError("terrain: cell_size must be positive");
  for (std::size_t k = 0; k < elevation_.size(); ++k) {
    if (!std::isfinite(elevation_[k])) throw std::invalid_argument("terrain: non-finite elevation at cell " + std::to_string(k));
    if (!(manning_[k] > 0.0) || !std::isfinite(manning_[k]))
      throw std::invalid_argument("terrain: manning_n must be > 0 (cell " + std::to_string(k) + ")");
  }
  slopes_ = compute_slopes(elevation_, cell_size_);
}

TerrainGrid TerrainGrid::mirrored() const {
  RasterD z(rows(), cols()), n(rows(), cols());
  for (std::size_t i = 0; i < rows(); ++i)
    for (std::size_t j = 0; j < cols(); ++j) {
      z(i, j) = elevation_(i, cols() - 1 - j);
      n(i, j) = manning_(i, cols() - 1 - j);
    }
  return TerrainGrid(std::move(z), std::move(n), cell_size_);
}

TerrainGrid generate_synthetic_terrain(const SyntheticTerrainParams& p) {
  if (p.rows == 0 || p.cols == 0) throw DimensionError("generate_synthetic_terrain: zero-size grid");
  if (p.rows < 3 || p.cols < 3) throw DimensionError("generate_synthetic_terrain: grid must be at least 3x3");
  if (!(p.relief_amplitude >= 0.0)) throw std::invalid_argument("relief_amplitude must be >= 0");
  if (p.roughness_classes == 0 || p.roughness_classes > p.class_values.size())
    throw std::invalid_argument("roughness_classes must be in [1, " + std::to_string(p.class_values.size()) + "]");

  std::mt19937_64 rng(p.seed);
  const double rows = static_cast<double>(p.rows), cols = static_cast<double>(p.cols);
  const double span = std::max(rows, cols);

  struct Bump {
    double ci, cj, radius, height;
  };
  const std::size_t bump_count = 6 + static_cast<std::size_t>(span / 8.0);
  std::vector<Bump> bumps(bump_count);
  for (auto& b : bumps) {
    b.ci = uniform01(rng) * rows;
    b.cj = uniform01(rng) * cols;
    b.radius = span * (0.08 + 0.22 * uniform01(rng));
    b.height = 2.0 * uniform01(rng) - 1.0;
  }
  // Gentle regional tilt so water has somewhere to go.
  const double tilt_i = 0.5 * (2.0 * uniform01(rng) - 1.0);
  const double tilt_j = 0.5 * (2.0 * uniform01(rng) - 1.0);

  RasterD raw(p.rows, p.cols);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j) {
      double v = tilt_i * (static_cast<double>(i) / span) + tilt_j * (static_cast<double>(j) / span);
      for (const auto& b : bumps) {
        const double di = static_cast<double>(i) - b.ci, dj = static_cast<double>(j) - b.cj;
        v += b.height * std::exp(-(di * di + dj * dj) / (2.0 * b.radius * b.radius));
      }
      raw(i, j) = v;
    }

  const auto [lo_it, hi_it] = std::minmax_element(raw.values().begin(), raw.values().end());
  const double lo = *lo_it, range = *hi_it - *lo_it;
  RasterD elevation(p.rows, p.cols, 0.0);
  if (p.relief_amplitude > 0.0 && range > 0.0) {
    for (std::size_t k = 0; k < raw.size(); ++k) {
      const double unit = (raw[k] - lo) / range;
      // f32 rounding may not push values past the amplitude.
      float v = static_cast<float>(unit * p.relief_amplitude);
      if (static_cast<double>(v) > p.relief_amplitude) v = std::nextafter(v, 0.0f);
      elevation[k] = static_cast<double>(v);
    }
  }

  // Manning patches: nearest of several seeded centres, classes assigned round robin.
  const std::size_t centre_count = std::max<std::size_t>(3 * p.roughness_classes, 4);
  std::vector<std::pair<double, double>> centres(centre_count);
  for (auto& c : centres) c = {uniform01(rng) * rows, uniform01(rng) * cols};
  RasterD manning(p.rows, p.cols);
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < centre_count; ++c) {
        const double di = static_cast<double>(i) - centres[c].first;
        const double dj = static_cast<double>(j) - centres[c].second;
        const double d = di * di + dj * dj;
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      manning(i, j) = static_cast<double>(static_cast<float>(p.class_values[best % p.roughness_classes]));
    }

  return TerrainGrid(std::move(elevation), std::move(manning), p.cell_size);
}

Neighborhood neighborhood(const TerrainGrid& g, std::size_t i, std::size_t j) {
  if (i >= g.rows() || j >= g.cols())
    throw IndexError("neighborhood: cell (" + std::to_string(i) + ", " + std::to_string(j) +
                     ") outside " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
  Neighborhood nb;
  std::size_t k = 0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj, ++k) {
      const auto ii = static_cast<std::size_t>(
          std::clamp<long long>(static_cast<long long>(i) + di, 0, static_cast<long long>(g.rows()) - 1));
      const auto jj = static_cast<std::size_t>(
          std::clamp<long long>(static_cast<long long>(j) + dj, 0, static_cast<long long>(g.cols()) - 1));
      nb.elevation[k] = g.elevation()(ii, jj);
      nb.manning_n[k] = g.manning_n()(ii, jj);
      nb.slope_x[k] = g.slope_x()(ii, jj);
      nb.slope_y[k] = g.slope_y()(ii, jj);
      nb.slope_xy[k] = g.slope_xy()(ii, jj);
    }
  return nb;
}

io::Container terrain_to_container(const TerrainGrid& g) {
  io::Container c;
  c.manifest.set("kind", "terrain");
  c.manifest.set("rows", g.rows());
  c.manifest.set("cols", g.cols());
  c.manifest.set("cell_size", g.cell_size());
  const std::vector<std::uint64_t> shape{g.rows(), g.cols()};
  c.arrays.push_back(io::Array::narrow("elevation", shape, g.elevation().values()));
  c.arrays.push_back(io::Array::narrow("manning_n", shape, g.manning_n().values()));
  c.arrays.push_back(io::Array::narrow("slope_x", shape, g.slope_x().values()));
  c.arrays.push_back(io::Array::narrow("slope_y", shape, g.slope_y().values()));
  c.arrays.push_back(io::Array::narrow("slope_xy", shape, g.slope_xy().values()));
  return c;
}

TerrainGrid terrain_from_container(const io::Container& c) {
  if (c.manifest.get("kind") != "terrain") throw FormatError("container is not a terrain file");
  const auto rows = static_cast<std::size_t>(c.manifest.get_int("rows"));
  const auto cols = static_cast<std::size_t>(c.manifest.get_int("cols"));
  auto field = [&](const char* name) {
    const io::Array& a = c.at(name);
    if (a.shape.size() != 2 || a.shape[0] != rows || a.shape[1] != cols)
      throw FormatError(std::string("terrain array '") + name + "' has wrong shape");
    RasterD r(rows, cols);
    r.storage() = a.as_double();
    return r;
  };
  // Slopes are re-derived from the stored elevation.
  return TerrainGrid(field("elevation"), field("manning_n"), c.manifest.get_double("cell_size"));
}

void save_terrain(const std::filesystem::path& path, const TerrainGrid& g) {
  io::write_file(path, terrain_to_container(g));
}

TerrainGrid load_terrain(const std::filesystem::path& path) { return terrain_from_container(io::read_file(path)); }

RasterD parse_text_grid(std::string_view text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) row.push_back(io::parse_double(tok));
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size())
      throw DimensionError("text grid: ragged row " + std::to_string(rows.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DimensionError("text grid: no data");
  RasterD r(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) r(i, j) = rows[i][j];
  return r;
}

RasterD load_text_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text_grid(ss.str());
}

}  // namespace flood
