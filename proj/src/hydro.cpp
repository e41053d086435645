#include "flood/hydro.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include "flood/errors.hpp"
#include "flood/parallel.hpp"

namespace flood {

std::string to_string(Formulation f) {
  return f == Formulation::DiffusionWave ? "de" : "fme";
}

Formulation parse_formulation(const std::string& s) {
  if (s == "de" || s == "diffusion" || s == "DiffusionWave") return Formulation::DiffusionWave;
  if (s == "fme" || s == "full" || s == "FullMomentum") return Formulation::FullMomentum;
  throw std::invalid_argument("unknown formulation '" + s + "' (expected de|fme)");
}

SolverConfig SolverConfig::defaults(Formulation f) {
  SolverConfig c;
  c.formulation = f;
  if (f == Formulation::DiffusionWave) c.min_dt = 0.5;
  return c;
}

void SolverConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SolverConfig: " + m); };
  if (!(gravity > 0.0)) fail("gravity must be positive");
  if (!(wet_threshold > 0.0)) fail("wet_threshold must be positive");
  if (!(courant_target > 0.0 && courant_target <= 1.0)) fail("courant_target must be in (0, 1]");
  if (!(min_dt > 0.0 && min_dt <= max_dt)) fail("need 0 < min_dt <= max_dt");
  if (!(output_interval > 0.0)) fail("output_interval must be positive");
  if (!(rainfall_intensity >= 0.0)) fail("rainfall_intensity must be >= 0");
  if (!(duration > 0.0)) fail("duration must be positive");
  if (!(diffusive_slope_floor > 0.0)) fail("diffusive_slope_floor must be positive");
  if (!(outfall_slope > 0.0)) fail("outfall_slope must be positive");
  if (max_substeps_per_interval == 0) fail("max_substeps_per_interval must be positive");
}

SimState SimState::dry(std::size_t rows, std::size_t cols) {
  SimState s;
  s.depth = s.vel_n = s.vel_s = s.vel_e = s.vel_w = RasterD(rows, cols, 0.0);
  s.discharge_x = s.discharge_y = RasterD(rows, cols, 0.0);
  return s;
}

double domain_mass(const SimState& s, const TerrainGrid& terrain) {
  double sum = 0.0;
  for (double h : s.depth.values()) sum += h;
  return sum * terrain.cell_area();
}

namespace {

void require_shapes(const SimState& s, const TerrainGrid& t) {
  if (s.depth.rows() != t.rows() || s.depth.cols() != t.cols())
    throw DimensionError("state " + std::to_string(s.depth.rows()) + "x" + std::to_string(s.depth.cols()) +
                         " does not match terrain " + std::to_string(t.rows()) + "x" + std::to_string(t.cols()));
  for (const RasterD* r : {&s.vel_n, &s.vel_s, &s.vel_e, &s.vel_w, &s.discharge_x, &s.discharge_y})
    if (!r->same_shape(s.depth)) throw DimensionError("state fields have inconsistent shapes");
}

// Branch-free scan first: an all-ones exponent carries into the sign bit. The
// locating loops below only run on failure.
bool state_is_clean(const SimState& s) {
  constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
  std::uint64_t bad = 0;
  for (const RasterD* r : {&s.depth, &s.vel_n, &s.vel_s, &s.vel_e, &s.vel_w, &s.discharge_x, &s.discharge_y}) {
    const double* v = r->values().data();
    for (std::size_t k = 0; k < r->size(); ++k)
      bad |= ((std::bit_cast<std::uint64_t>(v[k]) & exp_mask) + 0x0010000000000000ULL) >> 63;
  }
  const double* d = s.depth.values().data();
  for (std::size_t k = 0; k < s.depth.size(); ++k) bad |= static_cast<std::uint64_t>(d[k] < 0.0);
  return bad == 0;
}

void require_finite(const SimState& s) {
  if (state_is_clean(s)) return;
  for (const RasterD* r : {&s.depth, &s.vel_n, &s.vel_s, &s.vel_e, &s.vel_w, &s.discharge_x, &s.discharge_y})
    for (std::size_t k = 0; k < r->size(); ++k)
      if (!std::isfinite((*r)[k])) throw NumericalFailure("non-finite value in state", k, s.sim_time);
  for (std::size_t k = 0; k < s.depth.size(); ++k)
    if (s.depth[k] < 0.0) throw NumericalFailure("negative depth in state", k, s.sim_time);
}

inline double pow53(double h) { return h * std::cbrt(h * h); }

// Flow depth over a shared face: upwind water surface above the higher bed.
inline double face_flow_depth(double eta_a, double eta_b, double z_a, double z_b) {
  return std::max(eta_a, eta_b) - std::max(z_a, z_b);
}

// Zeroes face velocities touching a dry cell so the dry-cell and antisymmetry
// invariants hold together.
void zero_dry_faces(SimState& s, double thr) {
  const std::size_t rows = s.rows(), cols = s.cols();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const bool dry = s.depth(i, j) < thr;
      if (dry) s.vel_n(i, j) = s.vel_s(i, j) = s.vel_e(i, j) = s.vel_w(i, j) = 0.0;
      if (j + 1 < cols && (dry || s.depth(i, j + 1) < thr)) s.vel_e(i, j) = s.vel_w(i, j + 1) = 0.0;
      if (i + 1 < rows && (dry || s.depth(i + 1, j) < thr)) s.vel_s(i, j) = s.vel_n(i + 1, j) = 0.0;
    }
}

// Face-indexed scratch: x faces (i, j)|(i, j+1) sit in a rows×(cols+1) grid at
// column j+1, y faces (i, j)|(i+1, j) in a (rows+1)×cols grid at row i+1.
// Column 0 / cols and row 0 / rows hold the domain edges.
struct FaceGrid {
  std::size_t rows, cols;
  std::vector<double> x, y;
  FaceGrid(std::size_t r, std::size_t c) : rows(r), cols(c), x(r * (c + 1), 0.0), y((r + 1) * c, 0.0) {}
  double& xf(std::size_t i, std::size_t jf) { return x[i * (cols + 1) + jf]; }
  double& yf(std::size_t ifc, std::size_t j) { return y[ifc * cols + j]; }
};

// Scales every outgoing volume of a cell so it cannot lose more than it holds.
// `vol` arrays are signed along +x / +y.
void limit_outflow(FaceGrid& vol, const RasterD& depth, double area) {
  const std::size_t rows = depth.rows(), cols = depth.cols();
  RasterD ratio(rows, cols, 1.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double out_w = std::max(0.0, -vol.xf(i, j));
      const double out_e = std::max(0.0, vol.xf(i, j + 1));
      const double out_n = std::max(0.0, -vol.yf(i, j));
      const double out_s = std::max(0.0, vol.yf(i + 1, j));
      const double out = (out_n + out_s) + (out_e + out_w);
      const double avail = depth(i, j) * area;
      if (out > avail) ratio(i, j) = out > 0.0 ? avail / out : 1.0;
    }
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t jf = 0; jf <= cols; ++jf) {
      double& v = vol.xf(i, jf);
      if (v > 0.0 && jf > 0) v *= ratio(i, jf - 1);
      else if (v < 0.0 && jf < cols) v *= ratio(i, jf);
    }
  for (std::size_t ifc = 0; ifc <= rows; ++ifc)
    for (std::size_t j = 0; j < cols; ++j) {
      double& v = vol.yf(ifc, j);
      if (v > 0.0 && ifc > 0) v *= ratio(ifc - 1, j);
      else if (v < 0.0 && ifc < rows) v *= ratio(ifc, j);
    }
}

struct DiffusionFace {
  double q = 0.0;   ///< unit discharge, signed a -> b
  double hf = 0.0;  ///< flow depth
};

inline DiffusionFace diffusion_face(double z_a, double h_a, double n_a, double z_b, double h_b, double n_b,
                                    double dx, double dt, double thr) {
  const double eta_a = z_a + h_a, eta_b = z_b + h_b;
  const double d = eta_a - eta_b;
  if (d == 0.0) return {};
  const double donor = d > 0.0 ? h_a : h_b;
  if (donor < thr) return {};
  const double hf = face_flow_depth(eta_a, eta_b, z_a, z_b);
  if (hf < thr) return {};
  const double ad = std::abs(d);
  const double n = 0.5 * (n_a + n_b);
  double q = pow53(hf) * std::sqrt(ad / dx) / n;
  q = std::min(q, dx * ad / (4.0 * dt));
  return {d > 0.0 ? q : -q, hf};
}

inline DiffusionFace outfall_face(double h, double n, double slope, double dx, double dt, double thr) {
  if (h < thr) return {};
  const double q = std::min(pow53(h) * std::sqrt(slope) / n, dx * h / (4.0 * dt));
  return {q, h};
}

// Local Lax-Friedrichs flux across a face with hydrostatic reconstruction.
// Normal direction points from L to R.
struct NormalFlux {
  double mass, mom_n, mom_t;
  double corr_l, corr_r;  // hydrostatic corrections added to mom_n per side
};

struct FaceSide {
  double h, un, ut, z;
};

inline NormalFlux llf_flux(const FaceSide& l, const FaceSide& r, double g) {
  const double zf = std::max(l.z, r.z);
  const double hl = std::max(0.0, l.h + l.z - zf);
  const double hr = std::max(0.0, r.h + r.z - zf);
  const double a = std::max(std::abs(l.un) + std::sqrt(g * hl), std::abs(r.un) + std::sqrt(g * hr));
  const double ql = hl * l.un, qr = hr * r.un;
  const double fl = ql * l.un + 0.5 * g * hl * hl;
  const double fr = qr * r.un + 0.5 * g * hr * hr;
  NormalFlux f;
  f.mass = 0.5 * (ql + qr) - 0.5 * a * (hr - hl);
  f.mom_n = 0.5 * (fl + fr) - 0.5 * a * (qr - ql);
  f.mom_t = 0.5 * (ql * l.ut + qr * r.ut) - 0.5 * a * (hr * r.ut - hl * l.ut);
  f.corr_l = 0.5 * g * (l.h * l.h - hl * hl);
  f.corr_r = 0.5 * g * (r.h * r.h - hr * hr);
  return f;
}

}  // namespace

SimState step_diffusion(const SimState& state, const TerrainGrid& terrain, const SolverConfig& cfg, double dt) {
  require_shapes(state, terrain);
  require_finite(state);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step_diffusion: dt must be positive");
  const std::size_t rows = state.rows(), cols = state.cols();
  const double dx = terrain.cell_size(), area = terrain.cell_area(), thr = cfg.wet_threshold;
  const RasterD& z = terrain.elevation();
  const RasterD& n = terrain.manning_n();
  const RasterD& h = state.depth;
  const bool open = cfg.boundary == BoundaryMode::FreeOutfall;

  FaceGrid vol(rows, cols), hf(rows, cols);
  parallel_for(0, rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j + 1 < cols; ++j) {
        const auto f = diffusion_face(z(i, j), h(i, j), n(i, j), z(i, j + 1), h(i, j + 1), n(i, j + 1), dx, dt, thr);
        vol.xf(i, j + 1) = f.q * dx * dt;
        hf.xf(i, j + 1) = f.hf;
      }
      if (i + 1 < rows)
        for (std::size_t j = 0; j < cols; ++j) {
          const auto f = diffusion_face(z(i, j), h(i, j), n(i, j), z(i + 1, j), h(i + 1, j), n(i + 1, j), dx, dt, thr);
          vol.yf(i + 1, j) = f.q * dx * dt;
          hf.yf(i + 1, j) = f.hf;
        }
    }
  }, 8);

  if (open) {
    for (std::size_t i = 0; i < rows; ++i) {
      auto w = outfall_face(h(i, 0), n(i, 0), cfg.outfall_slope, dx, dt, thr);
      vol.xf(i, 0) = -w.q * dx * dt;
      hf.xf(i, 0) = w.hf;
      auto e = outfall_face(h(i, cols - 1), n(i, cols - 1), cfg.outfall_slope, dx, dt, thr);
      vol.xf(i, cols) = e.q * dx * dt;
      hf.xf(i, cols) = e.hf;
    }
    for (std::size_t j = 0; j < cols; ++j) {
      auto nn = outfall_face(h(0, j), n(0, j), cfg.outfall_slope, dx, dt, thr);
      vol.yf(0, j) = -nn.q * dx * dt;
      hf.yf(0, j) = nn.hf;
      auto s = outfall_face(h(rows - 1, j), n(rows - 1, j), cfg.outfall_slope, dx, dt, thr);
      vol.yf(rows, j) = s.q * dx * dt;
      hf.yf(rows, j) = s.hf;
    }
  }

  limit_outflow(vol, h, area);

  SimState next = SimState::dry(rows, cols);
  next.sim_time = state.sim_time + dt;
  const double rain_depth = cfg.rainfall_intensity * dt;
  next.rain_volume = state.rain_volume + rain_depth * area * static_cast<double>(rows * cols);
  double outflow = 0.0;
  if (open) {
    // Fixed summation order keeps the audit deterministic.
    for (std::size_t i = 0; i < rows; ++i) outflow += -vol.xf(i, 0) + vol.xf(i, cols);
    for (std::size_t j = 0; j < cols; ++j) outflow += -vol.yf(0, j) + vol.yf(rows, j);
  }
  next.outflow_volume = state.outflow_volume + outflow;

  auto face_velocity = [&](double v, double depth) { return depth >= thr ? v / (dx * dt * depth) : 0.0; };
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double out_w = -vol.xf(i, j), out_e = vol.xf(i, j + 1);
      const double out_n = -vol.yf(i, j), out_s = vol.yf(i + 1, j);
      const double net_out = (out_n + out_s) + (out_e + out_w);
      double d = h(i, j) - net_out / area;
      if (d < 0.0) d = 0.0;  // rounding residue only; the limiter bounds outflow
      next.depth(i, j) = d + rain_depth;
      next.vel_w(i, j) = face_velocity(out_w, hf.xf(i, j));
      next.vel_e(i, j) = face_velocity(out_e, hf.xf(i, j + 1));
      next.vel_n(i, j) = face_velocity(out_n, hf.yf(i, j));
      next.vel_s(i, j) = face_velocity(out_s, hf.yf(i + 1, j));
    }
  zero_dry_faces(next, thr);
  require_finite(next);
  return next;
}

SimState step_full_momentum(const SimState& state, const TerrainGrid& terrain, const SolverConfig& cfg, double dt) {
  require_shapes(state, terrain);
  require_finite(state);
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("step_full_momentum: dt must be positive");
  const std::size_t rows = state.rows(), cols = state.cols();
  const double dx = terrain.cell_size(), area = terrain.cell_area(), thr = cfg.wet_threshold, g = cfg.gravity;
  const RasterD& z = terrain.elevation();
  const RasterD& h = state.depth;
  const bool open = cfg.boundary == BoundaryMode::FreeOutfall;

  RasterD u(rows, cols, 0.0), v(rows, cols, 0.0);
  for (std::size_t k = 0; k < h.size(); ++k)
    if (h[k] >= thr) {
      u[k] = state.discharge_x[k] / h[k];
      v[k] = state.discharge_y[k] / h[k];
    }

  // Fluxes per face. mom_* hold the normal momentum flux seen by the lower
  // index cell (west/north side) and upper index cell separately.
  FaceGrid mass(rows, cols), mom_n_lo(rows, cols), mom_n_hi(rows, cols), mom_t(rows, cols);

  auto x_side = [&](std::size_t i, std::size_t j) { return FaceSide{h(i, j), u(i, j), v(i, j), z(i, j)}; };
  auto y_side = [&](std::size_t i, std::size_t j) { return FaceSide{h(i, j), v(i, j), u(i, j), z(i, j)}; };
  auto store_x = [&](std::size_t i, std::size_t jf, const NormalFlux& f) {
    mass.xf(i, jf) = f.mass;
    mom_n_lo.xf(i, jf) = f.mom_n + f.corr_l;
    mom_n_hi.xf(i, jf) = f.mom_n + f.corr_r;
    mom_t.xf(i, jf) = f.mom_t;
  };
  auto store_y = [&](std::size_t ifc, std::size_t j, const NormalFlux& f) {
    mass.yf(ifc, j) = f.mass;
    mom_n_lo.yf(ifc, j) = f.mom_n + f.corr_l;
    mom_n_hi.yf(ifc, j) = f.mom_n + f.corr_r;
    mom_t.yf(ifc, j) = f.mom_t;
  };
  // Reflective ghost, or a transmissive one when the edge is open and the flow leaves.
  auto ghost = [&](FaceSide s, bool outward_positive) {
    const bool leaving = outward_positive ? s.un > 0.0 : s.un < 0.0;
    if (!(open && leaving && s.h >= thr)) s.un = -s.un;
    return s;
  };

  parallel_for(0, rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t j = 0; j + 1 < cols; ++j) store_x(i, j + 1, llf_flux(x_side(i, j), x_side(i, j + 1), g));
      if (i + 1 < rows)
        for (std::size_t j = 0; j < cols; ++j) store_y(i + 1, j, llf_flux(y_side(i, j), y_side(i + 1, j), g));
    }
  }, 8);
  for (std::size_t i = 0; i < rows; ++i) {
    const FaceSide w = x_side(i, 0), e = x_side(i, cols - 1);
    store_x(i, 0, llf_flux(ghost(w, false), w, g));
    store_x(i, cols, llf_flux(e, ghost(e, true), g));
  }
  for (std::size_t j = 0; j < cols; ++j) {
    const FaceSide nn = y_side(0, j), s = y_side(rows - 1, j);
    store_y(0, j, llf_flux(ghost(nn, false), nn, g));
    store_y(rows, j, llf_flux(s, ghost(s, true), g));
  }

  // Positivity guard on mass volumes, then back to fluxes.
  FaceGrid vol = mass;
  for (auto& x : vol.x) x *= dx * dt;
  for (auto& y : vol.y) y *= dx * dt;
  limit_outflow(vol, h, area);

  SimState next = SimState::dry(rows, cols);
  next.sim_time = state.sim_time + dt;
  const double rain_depth = cfg.rainfall_intensity * dt;
  next.rain_volume = state.rain_volume + rain_depth * area * static_cast<double>(rows * cols);
  double outflow = 0.0;
  for (std::size_t i = 0; i < rows; ++i) outflow += -vol.xf(i, 0) + vol.xf(i, cols);
  for (std::size_t j = 0; j < cols; ++j) outflow += -vol.yf(0, j) + vol.yf(rows, j);
  next.outflow_volume = state.outflow_volume + outflow;

  const double k = dt / dx;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double in_x = vol.xf(i, j) - vol.xf(i, j + 1);
      const double in_y = vol.yf(i, j) - vol.yf(i + 1, j);
      double d = h(i, j) + (in_x + in_y) / area;
      if (d < 0.0) d = 0.0;
      d += rain_depth;
      next.depth(i, j) = d;
      if (d < thr) continue;
      double qx = state.discharge_x(i, j) +
                  k * ((mom_n_hi.xf(i, j) - mom_n_lo.xf(i, j + 1)) + (mom_t.yf(i, j) - mom_t.yf(i + 1, j)));
      double qy = state.discharge_y(i, j) +
                  k * ((mom_n_hi.yf(i, j) - mom_n_lo.yf(i + 1, j)) + (mom_t.xf(i, j) - mom_t.xf(i, j + 1)));
      // Point-implicit Manning friction.
      const double uu = qx / d, vv = qy / d;
      const double speed = std::sqrt(uu * uu + vv * vv);
      const double nm = terrain.manning_n()(i, j);
      const double factor = 1.0 + dt * g * nm * nm * speed / (d * std::cbrt(d));
      qx /= factor;
      qy /= factor;
      next.discharge_x(i, j) = qx;
      next.discharge_y(i, j) = qy;
      const double su = std::abs(qx / d), sv = std::abs(qy / d);
      if (!(su <= cfg.velocity_guard && sv <= cfg.velocity_guard))
        throw NumericalFailure("velocity exceeds guard", i * cols + j, next.sim_time);
    }

  RasterD nu(rows, cols, 0.0), nv(rows, cols, 0.0);
  for (std::size_t c = 0; c < nu.size(); ++c)
    if (next.depth[c] >= thr) {
      nu[c] = next.discharge_x[c] / next.depth[c];
      nv[c] = next.discharge_y[c] / next.depth[c];
    }
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      if (j + 1 < cols) {
        const double ve = 0.5 * (nu(i, j) + nu(i, j + 1));
        next.vel_e(i, j) = ve;
        next.vel_w(i, j + 1) = -ve;
      }
      if (i + 1 < rows) {
        const double vs = 0.5 * (nv(i, j) + nv(i + 1, j));
        next.vel_s(i, j) = vs;
        next.vel_n(i + 1, j) = -vs;
      }
    }
  if (open) {
    for (std::size_t i = 0; i < rows; ++i) {
      if (vol.xf(i, 0) < 0.0) next.vel_w(i, 0) = -nu(i, 0);
      if (vol.xf(i, cols) > 0.0) next.vel_e(i, cols - 1) = nu(i, cols - 1);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      if (vol.yf(0, j) < 0.0) next.vel_n(0, j) = -nv(0, j);
      if (vol.yf(rows, j) > 0.0) next.vel_s(rows - 1, j) = nv(rows - 1, j);
    }
  }
  zero_dry_faces(next, thr);
  require_finite(next);
  return next;
}

SimState step(const SimState& state, const TerrainGrid& terrain, const SolverConfig& config, double dt) {
  return config.formulation == Formulation::DiffusionWave ? step_diffusion(state, terrain, config, dt)
                                                          : step_full_momentum(state, terrain, config, dt);
}

namespace {

// Largest D³ = hf⁵ / (n√S)³ over wet faces, tracked cubed so the per-face cube
// root is avoided. Returns early once it exceeds `stop_above`.
double diffusion_dmax3(const SimState& s, const TerrainGrid& terrain, const SolverConfig& cfg, double stop_above) {
  const double dx = terrain.cell_size(), thr = cfg.wet_threshold;
  const std::size_t rows = s.rows(), cols = s.cols();
  const RasterD& z = terrain.elevation();
  const RasterD& n = terrain.manning_n();
  double dmax3 = 0.0;
  auto consider = [&](double hf, double n_f, double slope) {
    const double h2 = hf * hf;
    const double r = n_f * std::sqrt(slope);
    dmax3 = std::max(dmax3, (h2 * h2 * hf) / (r * r * r));
  };
  auto face = [&](std::size_t a, std::size_t b) {
    const double eta_a = z[a] + s.depth[a], eta_b = z[b] + s.depth[b];
    const double d = eta_a - eta_b;
    if (d == 0.0) return;
    if ((d > 0.0 ? s.depth[a] : s.depth[b]) < thr) return;
    const double hf = face_flow_depth(eta_a, eta_b, z[a], z[b]);
    if (hf < thr) return;
    consider(hf, 0.5 * (n[a] + n[b]), std::max(std::abs(d) / dx, cfg.diffusive_slope_floor));
  };
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t c = i * cols + j;
      if (j + 1 < cols) face(c, c + 1);
      if (i + 1 < rows) face(c, c + cols);
    }
    if (dmax3 > stop_above) return dmax3;
  }
  if (cfg.boundary == BoundaryMode::FreeOutfall) {
    auto edge = [&](std::size_t c) {
      if (s.depth[c] < thr) return;
      consider(s.depth[c], n[c], std::max(cfg.outfall_slope, cfg.diffusive_slope_floor));
    };
    for (std::size_t i = 0; i < rows; ++i) {
      edge(i * cols);
      edge(i * cols + cols - 1);
    }
    for (std::size_t j = 0; j < cols; ++j) {
      edge(j);
      edge((rows - 1) * cols + j);
    }
  }
  return dmax3;
}

double diffusion_bound(double dmax3, double dx, double courant) {
  return dmax3 > 0.0 ? courant * dx * dx / (4.0 * std::cbrt(dmax3)) : std::numeric_limits<double>::infinity();
}

}  // namespace

double stable_dt_bound(const SimState& s, const TerrainGrid& terrain, const SolverConfig& cfg) {
  require_shapes(s, terrain);
  if (cfg.formulation == Formulation::FullMomentum) {
    const double dx = terrain.cell_size(), thr = cfg.wet_threshold;
    double fastest = 0.0;
    for (std::size_t k = 0; k < s.depth.size(); ++k) {
      const double h = s.depth[k];
      if (h < thr) continue;
      const double speed = std::abs(s.discharge_x[k] / h) + std::abs(s.discharge_y[k] / h) + std::sqrt(cfg.gravity * h);
      fastest = std::max(fastest, speed);
    }
    return fastest > 0.0 ? cfg.courant_target * dx / fastest : std::numeric_limits<double>::infinity();
  }
  const double inf = std::numeric_limits<double>::infinity();
  return diffusion_bound(diffusion_dmax3(s, terrain, cfg, inf), terrain.cell_size(), cfg.courant_target);
}

double compute_stable_dt(const SimState& s, const TerrainGrid& terrain, const SolverConfig& cfg) {
  if (cfg.formulation == Formulation::FullMomentum)
    return std::clamp(stable_dt_bound(s, terrain, cfg), cfg.min_dt, cfg.max_dt);
  require_shapes(s, terrain);
  // Any D³ above this puts the bound strictly below min_dt.
  const double dx = terrain.cell_size();
  const double at_floor = cfg.courant_target * dx * dx / (4.0 * cfg.min_dt);
  const double stop = at_floor * at_floor * at_floor * (1.0 + 1e-6);
  const double dmax3 = diffusion_dmax3(s, terrain, cfg, stop);
  if (dmax3 > stop) return cfg.min_dt;
  return std::clamp(diffusion_bound(dmax3, dx, cfg.courant_target), cfg.min_dt, cfg.max_dt);
}

Snapshot Snapshot::from_state(const SimState& s) {
  auto narrow = [](const RasterD& r) {
    Raster<float> out(r.rows(), r.cols());
    for (std::size_t k = 0; k < r.size(); ++k) out[k] = static_cast<float>(r[k]);
    return out;
  };
  return {s.sim_time, narrow(s.depth), narrow(s.vel_n), narrow(s.vel_s), narrow(s.vel_e), narrow(s.vel_w)};
}

double SnapshotSeries::spacing() const {
  if (frames.size() < 2) return 0.0;
  return frames[1].sim_time - frames[0].sim_time;
}

namespace {

MassAuditRow audit_row(const SimState& s, const TerrainGrid& t, const MassAuditRow* prev) {
  MassAuditRow row{s.sim_time, domain_mass(s, t), s.rain_volume, s.outflow_volume, 1.0};
  if (prev) {
    const double dm = row.domain_mass - prev->domain_mass;
    const double expected = (row.rain_input_cumulative - prev->rain_input_cumulative) -
                            (row.boundary_outflow_cumulative - prev->boundary_outflow_cumulative);
    if (expected != 0.0)
      row.imbalance_ratio = dm / expected;
    else
      row.imbalance_ratio = dm == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  }
  return row;
}

}  // namespace

SimulationResult run_simulation(const TerrainGrid& terrain, const SolverConfig& config) {
  return run_simulation(terrain, config, SimState::dry(terrain.rows(), terrain.cols()));
}

SimulationResult run_simulation(const TerrainGrid& terrain, const SolverConfig& cfg, SimState state) {
  cfg.validate();
  require_shapes(state, terrain);
  SimulationResult result;
  result.snapshots.rows = terrain.rows();
  result.snapshots.cols = terrain.cols();
  const auto intervals = static_cast<std::size_t>(std::floor(cfg.duration / cfg.output_interval + 1e-9));
  const double t0 = state.sim_time;
  result.snapshots.frames.reserve(intervals + 1);
  result.snapshots.frames.push_back(Snapshot::from_state(state));
  result.audit.push_back(audit_row(state, terrain, nullptr));

  for (std::size_t k = 1; k <= intervals; ++k) {
    const double target = t0 + static_cast<double>(k) * cfg.output_interval;
    std::size_t sub = 0;
    try {
      while (state.sim_time < target) {
        double dt = compute_stable_dt(state, terrain, cfg);
        const double remaining = target - state.sim_time;
        const bool last = dt >= remaining * (1.0 - 1e-12);
        if (last) dt = remaining;
        state = step(state, terrain, cfg, dt);
        if (last) state.sim_time = target;
        if (++sub > cfg.max_substeps_per_interval)
          throw StagnationError("more than " + std::to_string(cfg.max_substeps_per_interval) +
                                " sub-steps in snapshot interval " + std::to_string(k));
      }
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(std::string(e.what()) + " in snapshot interval " + std::to_string(k), e.cell(),
                             e.sim_time());
    }
    result.substeps += sub;
    result.snapshots.frames.push_back(Snapshot::from_state(state));
    result.audit.push_back(audit_row(state, terrain, &result.audit.back()));
  }
  result.final_state = std::move(state);
  return result;
}

io::Container snapshots_to_container(const SnapshotSeries& series, const io::Manifest& extra) {
  io::Container c;
  c.manifest.set("kind", "snapshots");
  c.manifest.set("rows", series.rows);
  c.manifest.set("cols", series.cols);
  c.manifest.set("frames", series.frames.size());
  for (const auto& [k, v] : extra.entries()) c.manifest.set(k, v);
  const std::vector<std::uint64_t> shape{series.rows, series.cols};
  for (std::size_t f = 0; f < series.frames.size(); ++f) {
    const Snapshot& s = series.frames[f];
    const std::string id = std::to_string(f);
    c.arrays.push_back(io::Array::from_f64("t/" + id, {1}, {s.sim_time}));
    c.arrays.push_back(io::Array::from_f32("h/" + id, shape, s.depth.storage()));
    c.arrays.push_back(io::Array::from_f32("vn/" + id, shape, s.vel_n.storage()));
    c.arrays.push_back(io::Array::from_f32("vs/" + id, shape, s.vel_s.storage()));
    c.arrays.push_back(io::Array::from_f32("ve/" + id, shape, s.vel_e.storage()));
    c.arrays.push_back(io::Array::from_f32("vw/" + id, shape, s.vel_w.storage()));
  }
  return c;
}

SnapshotSeries snapshots_from_container(const io::Container& c) {
  if (c.manifest.get("kind") != "snapshots") throw FormatError("container is not a snapshot series");
  SnapshotSeries s;
  s.rows = static_cast<std::size_t>(c.manifest.get_int("rows"));
  s.cols = static_cast<std::size_t>(c.manifest.get_int("cols"));
  const auto frames = static_cast<std::size_t>(c.manifest.get_int("frames"));
  auto plane = [&](const std::string& name) {
    const io::Array& a = c.at(name);
    if (a.dtype != io::DType::F32 || a.shape.size() != 2 || a.shape[0] != s.rows || a.shape[1] != s.cols)
      throw FormatError("snapshot plane '" + name + "' has wrong shape or dtype");
    Raster<float> r(s.rows, s.cols);
    r.storage() = a.f32;
    return r;
  };
  s.frames.reserve(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::string id = std::to_string(f);
    const io::Array& t = c.at("t/" + id);
    if (t.dtype != io::DType::F64 || t.f64.size() != 1) throw FormatError("bad time entry for frame " + id);
    s.frames.push_back({t.f64[0], plane("h/" + id), plane("vn/" + id), plane("vs/" + id), plane("ve/" + id),
                        plane("vw/" + id)});
  }
  return s;
}

std::string audit_to_csv(const std::vector<MassAuditRow>& rows) {
  std::string out = "sim_time,domain_mass,rain_cumulative,outflow_cumulative,imbalance_ratio\n";
  for (const auto& r : rows) {
    out += io::format_double(r.sim_time) + ',' + io::format_double(r.domain_mass) + ',' +
           io::format_double(r.rain_input_cumulative) + ',' + io::format_double(r.boundary_outflow_cumulative) + ',' +
           io::format_double(r.imbalance_ratio) + '\n';
  }
  return out;
}

std::vector<MassAuditRow> audit_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("sim_time,", 0) != 0) throw FormatError("mass audit CSV: missing header");
  std::vector<MassAuditRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> v;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string tok = line.substr(pos, comma - pos);
      v.push_back(tok == "nan" || tok == "-nan" ? std::numeric_limits<double>::quiet_NaN() : io::parse_double(tok));
      pos = comma + 1;
    }
    if (v.size() != 5) throw FormatError("mass audit CSV: expected 5 columns, got " + std::to_string(v.size()));
    rows.push_back({v[0], v[1], v[2], v[3], v[4]});
  }
  return rows;
}

}  // namespace flood
