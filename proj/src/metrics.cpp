#include "flood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "flood/errors.hpp"
#include "flood/parallel.hpp"

namespace flood {

CellScore score_cell(std::span<const double> ref, std::span<const double> pred, std::size_t cell) {
  if (ref.size() != pred.size())
    throw DimensionError("score_cell length mismatch: " + std::to_string(ref.size()) + " vs " + std::to_string(pred.size()));
  if (ref.size() < 2) throw DimensionError("score_cell needs at least 2 values");
  const double n = static_cast<double>(ref.size());
  double sum = 0.0;
  for (double r : ref) sum += r;
  const double mean = sum / n;
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double e = pred[i] - ref[i];
    sse += e * e;
    sst += (ref[i] - mean) * (ref[i] - mean);
  }
  CellScore s;
  s.cell_index = cell;
  s.mean_true = mean;
  s.rmse = std::sqrt(sse / n);
  if (sst > 0.0) {
    s.nse = 1.0 - sse / sst;
    s.nnse = 1.0 / (2.0 - s.nse);
  } else {
    s.nnse_defined = false;
    s.nse = s.nnse = std::numeric_limits<double>::quiet_NaN();
  }
  if (mean > kDryTolerance) {
    s.cv = s.rmse / mean;
  } else {
    s.cv_defined = false;
    s.cv = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw InsufficientDataError("percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile rank must be in [0, 1]");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  if (frac == 0.0 || lo + 1 >= v.size()) return a;
  const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + frac * (b - a);
}

PercentileSummary summarize(std::vector<double> v) {
  PercentileSummary s;
  s.count = v.size();
  if (v.empty()) {
    s.median = s.p90 = s.p99 = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.median = percentile(v, 0.5);
  s.p90 = percentile(v, 0.9);
  s.p99 = percentile(std::move(v), 0.99);
  return s;
}

std::vector<std::pair<double, double>> cdf_table(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<std::pair<double, double>> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.emplace_back(v[i], static_cast<double>(i + 1) / static_cast<double>(v.size()));
  return out;
}

SnapshotSeries align_frames(const SnapshotSeries& reference, std::span<const double> times) {
  SnapshotSeries out;
  out.rows = reference.rows;
  out.cols = reference.cols;
  std::size_t j = 0;
  for (double t : times) {
    while (j < reference.frames.size() && reference.frames[j].sim_time < t - 1e-6) ++j;
    if (j == reference.frames.size() || std::abs(reference.frames[j].sim_time - t) > 1e-6)
      throw DimensionError("reference has no frame at t=" + std::to_string(t));
    out.frames.push_back(reference.frames[j]);
  }
  return out;
}

namespace {

const Raster<float>& channel_of(const Snapshot& s, StateChannel c) {
  switch (c) {
    case StateChannel::Depth: return s.depth;
    case StateChannel::VelN: return s.vel_n;
    case StateChannel::VelS: return s.vel_s;
    case StateChannel::VelE: return s.vel_e;
    case StateChannel::VelW: return s.vel_w;
  }
  return s.depth;
}

}  // namespace

DomainScores score_domain(const SnapshotSeries& reference, const SnapshotSeries& forecast, StateChannel channel,
                          std::span<const std::size_t> cells) {
  if (reference.rows != forecast.rows || reference.cols != forecast.cols)
    throw DimensionError("score_domain grid mismatch");
  if (reference.frames.size() != forecast.frames.size())
    throw DimensionError("score_domain time axes differ in length: " + std::to_string(reference.frames.size()) +
                         " vs " + std::to_string(forecast.frames.size()));
  for (std::size_t f = 0; f < reference.frames.size(); ++f)
    if (std::abs(reference.frames[f].sim_time - forecast.frames[f].sim_time) > 1e-6)
      throw DimensionError("score_domain time axes differ at frame " + std::to_string(f));

  const std::size_t n_cells = reference.rows * reference.cols;
  std::vector<std::size_t> all;
  if (cells.empty()) {
    all.resize(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) all[c] = c;
    cells = all;
  }
  for (std::size_t c : cells)
    if (c >= n_cells) throw IndexError("cell " + std::to_string(c) + " out of range");
  const std::size_t T = reference.frames.size();
  DomainScores out;
  out.cells.resize(cells.size());
  parallel_for(0, cells.size(), [&](std::size_t lo, std::size_t hi) {
    std::vector<double> r(T), p(T);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::size_t c = cells[i];
      for (std::size_t f = 0; f < T; ++f) {
        r[f] = channel_of(reference.frames[f], channel)[c];
        p[f] = channel_of(forecast.frames[f], channel)[c];
      }
      out.cells[i] = score_cell(r, p, c);
    }
  }, 64);

  std::vector<double> rmse, nnse, cv;
  for (const auto& s : out.cells) {
    rmse.push_back(s.rmse);
    if (s.nnse_defined) nnse.push_back(s.nnse);
    if (s.cv_defined) cv.push_back(s.cv);
  }
  out.rmse = summarize(std::move(rmse));
  out.nnse = summarize(std::move(nnse));
  out.cv = summarize(std::move(cv));
  return out;
}

std::string scores_to_csv(const std::vector<CellScore>& scores) {
  std::ostringstream os;
  auto num = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string("nan"); };
  os << "cell,rmse,nnse,cv,mean_true\n";
  for (const auto& s : scores)
    os << s.cell_index << ',' << num(s.rmse) << ',' << num(s.nnse_defined ? s.nnse : NAN) << ','
       << num(s.cv_defined ? s.cv : NAN) << ',' << num(s.mean_true) << '\n';
  return os.str();
}

std::string summary_report(const DomainScores& d) {
  std::ostringstream os;
  auto line = [&](const char* name, const PercentileSummary& s, double scale, const char* unit) {
    os << name << " (n=" << s.count << "): median " << io::format_double(s.median * scale) << unit << ", p90 "
       << io::format_double(s.p90 * scale) << unit << ", p99 " << io::format_double(s.p99 * scale) << unit << '\n';
  };
  os << "cells scored: " << d.cells.size() << '\n';
  line("rmse", d.rmse, 1.0, "");
  line("nnse", d.nnse, 1.0, "");
  line("cv", d.cv, 100.0, "%");
  return os.str();
}

io::Container score_grids(const DomainScores& scores, std::size_t rows, std::size_t cols) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> rmse(rows * cols, nan), nnse(rows * cols, nan), cv(rows * cols, nan);
  for (const auto& s : scores.cells) {
    if (s.cell_index >= rows * cols) throw IndexError("score cell outside the grid");
    rmse[s.cell_index] = s.rmse;
    if (s.nnse_defined) nnse[s.cell_index] = s.nnse;
    if (s.cv_defined) cv[s.cell_index] = s.cv;
  }
  io::Container c;
  c.manifest.set("kind", "score_grids");
  c.manifest.set("rows", rows);
  c.manifest.set("cols", cols);
  c.arrays.push_back(io::Array::narrow("rmse", {rows, cols}, rmse));
  c.arrays.push_back(io::Array::narrow("nnse", {rows, cols}, nnse));
  c.arrays.push_back(io::Array::narrow("cv", {rows, cols}, cv));
  return c;
}

std::vector<AuditComparisonRow> compare_mass_audits(const std::vector<MassAuditRow>& a,
                                                    const std::vector<MassAuditRow>& b) {
  if (a.size() != b.size())
    throw DimensionError("audit lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  std::vector<AuditComparisonRow> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i].sim_time - b[i].sim_time) > 1e-6)
      throw DimensionError("audit time axes differ at row " + std::to_string(i));
    AuditComparisonRow r;
    r.sim_time = a[i].sim_time;
    r.mass_a = a[i].domain_mass;
    r.mass_b = b[i].domain_mass;
    if (r.mass_a != 0.0) r.mass_ratio = r.mass_b / r.mass_a;
    else r.mass_ratio = r.mass_b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    r.imbalance_a = a[i].imbalance_ratio;
    r.imbalance_b = b[i].imbalance_ratio;
    r.imbalance_delta = r.imbalance_b - r.imbalance_a;
    out.push_back(r);
  }
  return out;
}

std::string audit_comparison_to_csv(const std::vector<AuditComparisonRow>& rows) {
  std::ostringstream os;
  os << "sim_time,mass_a,mass_b,mass_ratio,imbalance_a,imbalance_b,imbalance_delta\n";
  for (const auto& r : rows)
    os << io::format_double(r.sim_time) << ',' << io::format_double(r.mass_a) << ',' << io::format_double(r.mass_b)
       << ',' << io::format_double(r.mass_ratio) << ',' << io::format_double(r.imbalance_a) << ','
       << io::format_double(r.imbalance_b) << ',' << io::format_double(r.imbalance_delta) << '\n';
  return os.str();
}

double mass_closure_error(const std::vector<MassAuditRow>& audit) {
  if (audit.empty()) return 0.0;
  const double m0 = audit.front().domain_mass;
  double worst = 0.0;
  for (const auto& r : audit) {
    const double expected = (r.rain_input_cumulative - audit.front().rain_input_cumulative) -
                            (r.boundary_outflow_cumulative - audit.front().boundary_outflow_cumulative);
    const double scale = std::max({std::abs(r.rain_input_cumulative), std::abs(r.boundary_outflow_cumulative),
                                   std::abs(m0), 1e-300});
    worst = std::max(worst, std::abs((r.domain_mass - m0) - expected) / scale);
  }
  return worst;
}

}  // namespace flood
