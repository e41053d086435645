#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flood/container.hpp"
#include "flood/hydro.hpp"

namespace flood {

/// Reference means at or below this are treated as dry (CV undefined).
inline constexpr double kDryTolerance = 1e-9;

struct CellScore {
  std::size_t cell_index = 0;
  double rmse = 0.0;
  double nse = 0.0;
  double nnse = 0.0;
  double cv = 0.0;
  double mean_true = 0.0;
  bool nnse_defined = true;  ///< false for a zero-variance reference
  bool cv_defined = true;    ///< false when mean_true ≤ kDryTolerance
};

/// rmse, nse = 1 − SSE/SST, nnse = 1/(2 − nse), cv = rmse/mean(ref).
CellScore score_cell(std::span<const double> reference, std::span<const double> predicted, std::size_t cell = 0);

/// Linear interpolation between closest ranks; q in [0, 1].
double percentile(std::vector<double> values, double q);

struct PercentileSummary {
  double median = 0.0, p90 = 0.0, p99 = 0.0;
  std::size_t count = 0;  ///< scores that entered the summary
};

PercentileSummary summarize(std::vector<double> values);

/// (value, cumulative fraction) pairs, ascending.
std::vector<std::pair<double, double>> cdf_table(std::vector<double> values);

enum class StateChannel { Depth = 0, VelN = 1, VelS = 2, VelE = 3, VelW = 4 };

struct DomainScores {
  std::vector<CellScore> cells;
  PercentileSummary rmse;  ///< every scored cell
  PercentileSummary nnse;  ///< cells with a defined nnse
  PercentileSummary cv;    ///< wet cells only (cv defined)
};

/// Frames of `reference` at the times of `times` (tolerance 1e-6 s).
SnapshotSeries align_frames(const SnapshotSeries& reference, std::span<const double> times);

/// Scores every cell (or the listed ones) on one channel. Grids and time axes must match.
DomainScores score_domain(const SnapshotSeries& reference, const SnapshotSeries& forecast,
                          StateChannel channel = StateChannel::Depth, std::span<const std::size_t> cells = {});

/// `cell,rmse,nnse,cv,mean_true`; undefined values written as `nan`.
std::string scores_to_csv(const std::vector<CellScore>& scores);
/// Plain-text summary; CV in percent.
std::string summary_report(const DomainScores& scores);
/// Per-cell rmse / nnse / cv grids (NaN where undefined or unscored).
io::Container score_grids(const DomainScores& scores, std::size_t rows, std::size_t cols);

struct AuditComparisonRow {
  double sim_time = 0.0;
  double mass_a = 0.0, mass_b = 0.0;
  double mass_ratio = 1.0;  ///< mass_b / mass_a (1 when both are zero)
  double imbalance_a = 1.0, imbalance_b = 1.0;
  double imbalance_delta = 0.0;  ///< imbalance_b − imbalance_a
};

std::vector<AuditComparisonRow> compare_mass_audits(const std::vector<MassAuditRow>& a,
                                                    const std::vector<MassAuditRow>& b);
std::string audit_comparison_to_csv(const std::vector<AuditComparisonRow>& rows);

/// max over rows of |Δmass − (rain − outflow)| / max(rain, outflow, tiny).
double mass_closure_error(const std::vector<MassAuditRow>& audit);

}  // namespace flood
