#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mergest/model.hpp"
#include "mergest/rho.hpp"
#include "mergest/sampling.hpp"
#include "mergest/simulate.hpp"

namespace mergest {

using json = nlohmann::ordered_json;

// Design file: sources, population size, fractions and optional per-source overrides.
struct SourceSpec {
  std::string name;
  double fraction = 1.0;
  std::optional<std::size_t> N;  // N^(j) override when the roster is incomplete
  std::optional<std::size_t> n;  // checked against the selected_<j> column
  std::optional<Rule> rule;
  std::vector<Rule> strata;
  std::vector<double> stratum_fractions;
  std::vector<std::size_t> stratum_sizes;  // N_k^(j) overrides
};

struct DesignFile {
  SamplingMode mode = SamplingMode::Wor;
  std::optional<double> N;  // nullopt: "unknown"
  std::vector<SourceSpec> sources;

  int count() const { return static_cast<int>(sources.size()); }
  DesignSpec design() const;
  std::vector<double> fractions() const;
  std::optional<SourceLayout> layout() const;  // present when every source declares a rule
};

std::string sampling_mode_name(SamplingMode m);
SamplingMode sampling_mode_from_name(const std::string& name);

json rule_to_json(const Rule& rule);
Rule rule_from_json(const json& j);

json design_to_json(const DesignFile& d);
DesignFile design_from_json(const json& j);
DesignFile read_design(const std::filesystem::path& path);
void write_design(const std::filesystem::path& path, const DesignFile& d);
// Design file describing a sample as it stands (realized counts, no rules).
DesignFile describe_design(const MergedSample& sample, SamplingMode mode);

// Dataset CSV: id, member_<j>, selected_<j>, optional stratum_<j> (1-based), v_* auxiliary
// columns, then analysis columns (x_* or bare names such as time, status, z_*).
// Missing analysis values are empty fields.
MergedSample read_sample(const std::filesystem::path& csv, const DesignFile& design);
void write_sample(const std::filesystem::path& csv, const MergedSample& sample);
std::string column_label(const Schema& schema, int column);

json fit_to_json(const FitResult& fit);
FitResult fit_from_json(const json& j);
void write_fit(const std::filesystem::path& path, const FitResult& fit);
FitResult read_fit(const std::filesystem::path& path);
void write_influence(const std::filesystem::path& path, const FitResult& fit, const MergedSample& sample);

json scheme_to_json(const WeightScheme& scheme, const std::vector<std::string>& source_names);

json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const json& j);
Scenario read_scenario(const std::filesystem::path& path);
std::filesystem::path default_preset_dir();
std::vector<std::string> list_presets(const std::filesystem::path& dir);
Scenario load_preset(const std::string& name, const std::filesystem::path& dir);

void write_summary_csv(const std::filesystem::path& path, const std::vector<MCSummary>& summaries);
void write_rows_csv(const std::filesystem::path& path, const std::vector<MCSummary>& summaries);
void write_qq_csv(const std::filesystem::path& path, const std::vector<QQPoint>& points, std::size_t N);
void write_grid_csv(const std::filesystem::path& path, const ComparisonGrid& grid);

// Shortest round-trip decimal form.
std::string format_double(double x);

}  // namespace mergest
