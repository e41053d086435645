#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "flood/container.hpp"
#include "flood/raster.hpp"

namespace flood {

struct SlopeFields {
  RasterD x;   ///< dz/dx along columns (east positive)
  RasterD y;   ///< dz/dy along rows (south positive)
  RasterD xy;  ///< dz/ds along the (+row, +col) diagonal, spacing cell_size·√2

  friend bool operator==(const SlopeFields&, const SlopeFields&) = default;
};

/// Central differences in the interior, one-sided at borders, zero along an
/// axis of length one.
SlopeFields compute_slopes(const RasterD& elevation, double cell_size);

/// Static cell attributes. Immutable once built; slopes always derive from
/// `elevation`.
class TerrainGrid {
 public:
  TerrainGrid() = default;
  /// Validates (finite elevation, manning_n > 0, matching shapes) and derives slopes.
  TerrainGrid(RasterD elevation, RasterD manning_n, double cell_size);

  std::size_t rows() const noexcept { return elevation_.rows(); }
  std::size_t cols() const noexcept { return elevation_.cols(); }
  std::size_t cell_count() const noexcept { return elevation_.size(); }
  double cell_size() const noexcept { return cell_size_; }
  double cell_area() const noexcept { return cell_size_ * cell_size_; }

  const RasterD& elevation() const noexcept { return elevation_; }
  const RasterD& manning_n() const noexcept { return manning_; }
  const RasterD& slope_x() const noexcept { return slopes_.x; }
  const RasterD& slope_y() const noexcept { return slopes_.y; }
  const RasterD& slope_xy() const noexcept { return slopes_.xy; }

  /// Left-right mirror (column j -> cols-1-j).
  TerrainGrid mirrored() const;

  friend bool operator==(const TerrainGrid&, const TerrainGrid&) = default;

 private:
  RasterD elevation_;
  RasterD manning_;
  SlopeFields slopes_;
  double cell_size_ = 1.0;
};

inline constexpr std::array<double, 3> kDefaultManningClasses = {0.015, 0.05, 0.12};

struct SyntheticTerrainParams {
  std::size_t rows = 64;
  std::size_t cols = 64;
  double cell_size = 1.0;
  double relief_amplitude = 1.0;
  std::size_t roughness_classes = 3;
  std::uint64_t seed = 1;
  std::vector<double> class_values{kDefaultManningClasses.begin(), kDefaultManningClasses.end()};
};

/// Sum of seeded Gaussian bumps rescaled to span exactly `relief_amplitude`,
/// plus Voronoi patches of Manning classes. Values are rounded to f32 so the
/// grid survives a container round trip unchanged.
TerrainGrid generate_synthetic_terrain(const SyntheticTerrainParams& params);

/// 3×3 patches in row-major order; out-of-grid neighbors replicate the nearest
/// valid cell.
struct Neighborhood {
  std::array<double, 9> elevation{};
  std::array<double, 9> manning_n{};
  std::array<double, 9> slope_x{};
  std::array<double, 9> slope_y{};
  std::array<double, 9> slope_xy{};
};

Neighborhood neighborhood(const TerrainGrid& grid, std::size_t i, std::size_t j);

io::Container terrain_to_container(const TerrainGrid& grid);
TerrainGrid terrain_from_container(const io::Container& c);
void save_terrain(const std::filesystem::path& path, const TerrainGrid& grid);
TerrainGrid load_terrain(const std::filesystem::path& path);

/// Whitespace-separated rows, one grid row per line.
RasterD parse_text_grid(std::string_view text);
RasterD load_text_grid(const std::filesystem::path& path);

}  // namespace flood
