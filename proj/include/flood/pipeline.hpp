#pragma once

// File-to-file pipeline commands shared by the CLI and the acceptance driver.
//
//   simulate       terrain + solver        -> snapshots.fld, audit.csv, terrain.fld
//   build-dataset  snapshots + terrain     -> dataset.fld
//   train          dataset                 -> checkpoint.fld, phase1.fld, train_log.csv
//   forecast       checkpoint + terrain    -> forecast.fld
//   evaluate       reference + forecast    -> scores.csv, summary.txt, cdf_*.csv, score_grids.fld
//   mass-audit     audit CSV(s)            -> audit_summary.txt, audit_comparison.csv
//   benchmark      terrain + checkpoint    -> benchmark.csv, benchmark.txt
//
// Timing goes only into timing.txt, benchmark.*, and the seconds column of
// train_log.csv; every other artifact is a pure function of the config.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "flood/container.hpp"

namespace flood::pipeline {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Resolved `key: value` settings for one command. Unknown keys are rejected.
class RunConfig {
 public:
  explicit RunConfig(std::string command);

  const std::string& command() const { return command_; }
  const std::vector<ConfigKey>& schema() const { return schema_; }

  /// Reads a `key: value` file; throws FormatError on unknown keys.
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text);
  void set(const std::string& key, const std::string& value);

  bool is_set(const std::string& key) const;  ///< non-empty value
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::filesystem::path get_path(const std::string& key) const;

  std::filesystem::path out_dir() const { return get_path("out"); }
  std::uint64_t seed() const;

  io::Manifest to_manifest() const;

 private:
  std::string command_;
  std::vector<ConfigKey> schema_;
  std::vector<std::string> values_;
  std::size_t index_of(const std::string& key) const;
};

const std::vector<std::string>& command_names();
std::vector<ConfigKey> command_schema(const std::string& command);

/// Runs one command; returns the process exit code. Diagnostics go to `log`.
int run_command(const RunConfig& config, std::ostream& log);

int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_build_dataset(const RunConfig& config, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_forecast(const RunConfig& config, std::ostream& log);
int cmd_evaluate(const RunConfig& config, std::ostream& log);
int cmd_mass_audit(const RunConfig& config, std::ostream& log);
int cmd_benchmark(const RunConfig& config, std::ostream& log);

/// `key: value` lines of a text report.
io::Manifest read_report(const std::filesystem::path& path);

}  // namespace flood::pipeline
