#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergest/errors.hpp"

namespace mergest {

using SourceMask = std::uint32_t;
inline constexpr int kMaxSources = 32;

constexpr SourceMask source_bit(int j) { return SourceMask{1} << j; }
constexpr bool in_mask(SourceMask m, int j) { return ((m >> j) & 1u) != 0; }
std::vector<int> mask_members(SourceMask m);

// Conditions on auxiliary columns. A Rule holds when all of its conditions do;
// an empty rule holds everywhere.
struct Condition {
  enum class Op { Eq, Ne, Lt, Le, Gt, Ge, In };
  std::string column;
  Op op = Op::Eq;
  std::vector<double> values;

  bool holds(double x) const;
};

struct Rule {
  std::vector<Condition> all_of;

  static Rule always() { return {}; }
  static Rule where(std::string column, Condition::Op op, double value);
  static Rule one_of(std::string column, std::vector<double> values);
};

struct Schema {
  std::vector<std::string> names;
  std::vector<bool> auxiliary;  // v columns are observed for every unit

  std::size_t size() const { return names.size(); }
  int find(std::string_view name) const;
  int index(std::string_view name) const;  // throws ValidationError when absent
  void add(std::string name, bool is_auxiliary);
};

class SourceLayout {
 public:
  // Rules resolved to column indices of one schema.
  class Bound {
   public:
    SourceMask mask(std::span<const double> row) const;
    int stratum(int j, std::span<const double> row) const;  // -1: no rule matched
    int sources() const { return static_cast<int>(membership_.size()); }

   private:
    friend class SourceLayout;
    struct Cond {
      int column;
      Condition cond;
    };
    using Conj = std::vector<Cond>;
    static bool holds(const Conj& c, std::span<const double> row);
    std::vector<Conj> membership_;
    std::vector<std::vector<Conj>> strata_;
  };

  SourceLayout() = default;
  SourceLayout(std::vector<std::string> names, std::vector<Rule> membership,
               std::vector<std::vector<Rule>> strata = {});

  int sources() const { return static_cast<int>(names_.size()); }
  const std::string& name(int j) const { return names_.at(j); }
  const std::vector<std::string>& names() const { return names_; }
  const Rule& membership(int j) const { return membership_.at(j); }
  bool has_strata() const;
  int strata_count(int j) const;
  const std::vector<Rule>& strata(int j) const { return strata_.at(j); }

  Bound bind(const Schema& schema) const;

 private:
  std::vector<std::string> names_;
  std::vector<Rule> membership_;
  std::vector<std::vector<Rule>> strata_;
};

// Everything needed to build a MergedSample. Values are rows x columns; NaN marks
// an unobserved analysis value.
struct SampleData {
  Schema schema;
  Eigen::MatrixXd values;
  std::vector<SourceMask> member;
  std::vector<SourceMask> selected;  // empty: nothing selected yet
  int sources = 0;
  std::vector<std::string> source_names;
  std::vector<std::string> ids;  // empty: 1-based row numbers
  // rows * sources, row-major; -1 for non-members. Empty when no strata.
  std::vector<int> strata;
  std::vector<int> strata_counts;
  std::optional<double> population_size;  // N; nullopt in unknown-N mode
  bool full_roster = true;                // every population unit is a row
  std::vector<std::optional<std::size_t>> source_size_override;
  std::vector<std::vector<std::size_t>> stratum_size_override;
};

class MergedSample {
 public:
  MergedSample() = default;
  explicit MergedSample(SampleData data);

  std::size_t rows() const { return frame_->values.rows(); }
  int sources() const { return frame_->sources; }
  const Schema& schema() const { return frame_->schema; }
  const Eigen::MatrixXd& values() const { return frame_->values; }
  double value(std::size_t row, int column) const { return frame_->values(row, column); }
  const std::string& id(std::size_t row) const { return frame_->ids[row]; }
  const std::string& source_name(int j) const { return frame_->source_names[j]; }

  SourceMask member(std::size_t row) const { return frame_->member[row]; }
  SourceMask selected(std::size_t row) const { return selected_[row]; }
  const std::vector<SourceMask>& members() const { return frame_->member; }
  const std::vector<SourceMask>& selections() const { return selected_; }
  std::vector<std::size_t> selected_rows() const;

  std::optional<double> population_size() const { return frame_->population_size; }
  double known_population_size() const;  // throws when N is unknown
  bool full_roster() const { return frame_->full_roster; }

  std::size_t source_size(int j) const { return source_size_[j]; }
  std::size_t subsample_size(int j) const { return subsample_size_[j]; }
  double sampling_fraction(int j) const;  // realized n/N

  bool has_strata() const { return !frame_->strata.empty(); }
  int strata_count(int j) const { return has_strata() ? frame_->strata_counts[j] : 1; }
  int stratum(std::size_t row, int j) const;
  std::size_t stratum_size(int j, int k) const { return stratum_size_[j][k]; }
  std::size_t stratum_subsample_size(int j, int k) const { return stratum_subsample_[j][k]; }

  // Realized inclusion probability of a member of source j (per stratum when stratified).
  double inclusion(std::size_t row, int j) const;

  MergedSample with_selections(std::vector<SourceMask> selected) const;
  SampleData data() const;

 private:
  struct Frame {
    Schema schema;
    Eigen::MatrixXd values;
    std::vector<SourceMask> member;
    int sources = 0;
    std::vector<std::string> source_names;
    std::vector<std::string> ids;
    std::vector<int> strata;
    std::vector<int> strata_counts;
    std::optional<double> population_size;
    bool full_roster = true;
    std::vector<std::optional<std::size_t>> source_size_override;
    std::vector<std::vector<std::size_t>> stratum_size_override;
  };
  void count();

  std::shared_ptr<const Frame> frame_;
  std::vector<SourceMask> selected_;
  std::vector<std::size_t> source_size_, subsample_size_;
  std::vector<std::vector<std::size_t>> stratum_size_, stratum_subsample_;
};

struct Violation {
  std::optional<std::size_t> row;
  int source = -1;
  std::string message;
};

std::vector<Violation> validate_sample(const MergedSample& sample);
std::vector<Violation> validate_sample(const MergedSample& sample, const SourceLayout& layout);
std::string describe(const Violation& v, const MergedSample& sample);

// rho: constants per membership cell. Missing cells are an error on lookup.
class WeightScheme {
 public:
  WeightScheme() = default;
  WeightScheme(int sources, std::map<SourceMask, std::vector<double>> cells);

  int sources() const { return sources_; }
  bool covers(SourceMask cell) const { return cells_.count(cell) != 0; }
  double rho(SourceMask cell, int j) const;
  const std::vector<double>& constants(SourceMask cell) const;  // length J
  const std::map<SourceMask, std::vector<double>>& cells() const { return cells_; }

 private:
  int sources_ = 0;
  std::map<SourceMask, std::vector<double>> cells_;
};

std::vector<SourceMask> all_cells(int sources);
std::vector<SourceMask> observed_cells(const MergedSample& sample);

struct VarianceDecomposition {
  Eigen::MatrixXd population;
  std::vector<Eigen::MatrixXd> design;
  double normalizer = 0.0;  // N, or N-hat in unknown-N mode

  Eigen::MatrixXd design_total() const;
  Eigen::MatrixXd total() const;
  Eigen::VectorXd se() const;
};

struct FitDiagnostics {
  int iterations = 0;
  bool converged = false;
  double score_norm = 0.0;
  std::vector<std::string> warnings;
};

struct BaselineHazard {
  std::vector<double> times;
  std::vector<double> cumulative;
};

struct FitResult {
  std::string model;
  std::vector<std::string> coefficients;
  Eigen::VectorXd theta;
  Eigen::VectorXd se;
  Eigen::MatrixXd var_population;
  std::vector<Eigen::MatrixXd> var_design;
  std::size_t n_used = 0;
  double N_effective = 0.0;
  bool unknown_n = false;
  std::string calibration = "none";
  FitDiagnostics diagnostics;
  std::vector<std::size_t> influence_rows;
  Eigen::MatrixXd influence;  // one row per entry of influence_rows
  BaselineHazard baseline;    // Cox only
};

}  // namespace mergest
