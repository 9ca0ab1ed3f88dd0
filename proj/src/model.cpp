#include "mergest/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace mergest {

std::vector<int> mask_members(SourceMask m) {
  std::vector<int> out;
  for (int j = 0; j < kMaxSources; ++j)
    if (in_mask(m, j)) out.push_back(j);
  return out;
}

bool Condition::holds(double x) const {
  const double v = values.empty() ? 0.0 : values.front();
  switch (op) {
    case Op::Eq: return x == v;
    case Op::Ne: return x != v;
    case Op::Lt: return x < v;
    case Op::Le: return x <= v;
    case Op::Gt: return x > v;
    case Op::Ge: return x >= v;
    case Op::In: return std::find(values.begin(), values.end(), x) != values.end();
  }
  return false;
}

Rule Rule::where(std::string column, Condition::Op op, double value) {
  return Rule{{Condition{std::move(column), op, {value}}}};
}

Rule Rule::one_of(std::string column, std::vector<double> values) {
  return Rule{{Condition{std::move(column), Condition::Op::In, std::move(values)}}};
}

int Schema::find(std::string_view name) const {
  for (std::size_t c = 0; c < names.size(); ++c)
    if (names[c] == name) return static_cast<int>(c);
  return -1;
}

int Schema::index(std::string_view name) const {
  const int c = find(name);
  if (c < 0) throw ValidationError("unknown column '" + std::string(name) + "'");
  return c;
}

void Schema::add(std::string name, bool is_auxiliary) {
  if (find(name) >= 0) throw ValidationError("duplicate column '" + name + "'");
  names.push_back(std::move(name));
  auxiliary.push_back(is_auxiliary);
}

SourceLayout::SourceLayout(std::vector<std::string> names, std::vector<Rule> membership,
                           std::vector<std::vector<Rule>> strata)
    : names_(std::move(names)), membership_(std::move(membership)), strata_(std::move(strata)) {
  if (names_.empty() || static_cast<int>(names_.size()) > kMaxSources)
    throw ValidationError("a layout needs between 1 and 32 sources");
  if (membership_.size() != names_.size())
    throw ValidationError("one membership rule per source is required");
  if (strata_.empty()) strata_.resize(names_.size());
  if (strata_.size() != names_.size())
    throw ValidationError("strata must be declared per source (possibly empty)");
}

bool SourceLayout::has_strata() const {
  return std::any_of(strata_.begin(), strata_.end(), [](const auto& s) { return !s.empty(); });
}

int SourceLayout::strata_count(int j) const {
  const auto& s = strata_.at(j);
  return s.empty() ? 1 : static_cast<int>(s.size());
}

SourceLayout::Bound SourceLayout::bind(const Schema& schema) const {
  auto conj = [&](const Rule& r) {
    Bound::Conj out;
    for (const auto& c : r.all_of) {
      const int col = schema.index(c.column);
      if (!schema.auxiliary[col])
        throw ValidationError("rule column '" + c.column + "' is not an auxiliary (v) column");
      out.push_back({col, c});
    }
    return out;
  };
  Bound b;
  for (const auto& r : membership_) b.membership_.push_back(conj(r));
  for (const auto& s : strata_) {
    std::vector<Bound::Conj> rules;
    for (const auto& r : s) rules.push_back(conj(r));
    b.strata_.push_back(std::move(rules));
  }
  return b;
}

bool SourceLayout::Bound::holds(const Conj& c, std::span<const double> row) {
  for (const auto& bc : c)
    if (!bc.cond.holds(row[bc.column])) return false;
  return true;
}

SourceMask SourceLayout::Bound::mask(std::span<const double> row) const {
  SourceMask m = 0;
  for (std::size_t j = 0; j < membership_.size(); ++j)
    if (holds(membership_[j], row)) m |= source_bit(static_cast<int>(j));
  return m;
}

int SourceLayout::Bound::stratum(int j, std::span<const double> row) const {
  const auto& rules = strata_[j];
  if (rules.empty()) return 0;
  int found = -1;
  for (std::size_t k = 0; k < rules.size(); ++k) {
    if (!holds(rules[k], row)) continue;
    if (found >= 0) return -2;  // overlapping strata
    found = static_cast<int>(k);
  }
  return found;
}

MergedSample::MergedSample(SampleData d) {
  const auto n = static_cast<std::size_t>(d.values.rows());
  if (d.sources < 1 || d.sources > kMaxSources)
    throw ValidationError("number of sources must be in [1, 32]");
  if (d.schema.size() != static_cast<std::size_t>(d.values.cols()) ||
      d.schema.auxiliary.size() != d.schema.names.size())
    throw ValidationError("schema does not match the value matrix");
  if (d.member.size() != n) throw ValidationError("membership masks must have one entry per row");
  if (d.selected.empty()) d.selected.assign(n, 0);
  if (d.selected.size() != n) throw ValidationError("selection masks must have one entry per row");
  if (d.source_names.empty())
    for (int j = 0; j < d.sources; ++j) d.source_names.push_back("s" + std::to_string(j + 1));
  if (static_cast<int>(d.source_names.size()) != d.sources)
    throw ValidationError("one name per source is required");
  if (d.ids.empty())
    for (std::size_t i = 0; i < n; ++i) d.ids.push_back(std::to_string(i + 1));
  if (d.ids.size() != n) throw ValidationError("ids must have one entry per row");
  if (!d.strata.empty()) {
    if (d.strata.size() != n * d.sources || static_cast<int>(d.strata_counts.size()) != d.sources)
      throw ValidationError("strata table must be rows x sources with a count per source");
  }
  d.source_size_override.resize(d.sources);
  if (d.full_roster && !d.population_size) d.population_size = static_cast<double>(n);

  auto f = std::make_shared<Frame>();
  f->schema = std::move(d.schema);
  f->values = std::move(d.values);
  f->member = std::move(d.member);
  f->sources = d.sources;
  f->source_names = std::move(d.source_names);
  f->ids = std::move(d.ids);
  f->strata = std::move(d.strata);
  f->strata_counts = std::move(d.strata_counts);
  f->population_size = d.population_size;
  f->full_roster = d.full_roster;
  f->source_size_override = std::move(d.source_size_override);
  f->stratum_size_override = std::move(d.stratum_size_override);
  frame_ = std::move(f);
  selected_ = std::move(d.selected);
  count();
}

void MergedSample::count() {
  const int J = frame_->sources;
  source_size_.assign(J, 0);
  subsample_size_.assign(J, 0);
  stratum_size_.assign(J, {});
  stratum_subsample_.assign(J, {});
  for (int j = 0; j < J; ++j) {
    stratum_size_[j].assign(strata_count(j), 0);
    stratum_subsample_[j].assign(strata_count(j), 0);
  }
  for (std::size_t i = 0; i < rows(); ++i) {
    for (int j = 0; j < J; ++j) {
      const bool is_member = in_mask(frame_->member[i], j);
      const bool is_selected = in_mask(selected_[i], j);
      const int k = is_member ? stratum(i, j) : -1;
      if (is_member) {
        ++source_size_[j];
        if (k >= 0) ++stratum_size_[j][k];
      }
      if (is_selected) {
        ++subsample_size_[j];
        if (k >= 0) ++stratum_subsample_[j][k];
      }
    }
  }
  for (int j = 0; j < J; ++j) {
    if (frame_->source_size_override[j]) source_size_[j] = *frame_->source_size_override[j];
    if (j < static_cast<int>(frame_->stratum_size_override.size()) &&
        !frame_->stratum_size_override[j].empty())
      stratum_size_[j] = frame_->stratum_size_override[j];
  }
}

std::vector<std::size_t> MergedSample::selected_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < rows(); ++i)
    if (selected_[i] != 0) out.push_back(i);
  return out;
}

double MergedSample::known_population_size() const {
  if (!frame_->population_size)
    throw ValidationError("population size N is unknown; use the ratio (unknown-N) estimators");
  return *frame_->population_size;
}

double MergedSample::sampling_fraction(int j) const {
  if (source_size_[j] == 0) return 0.0;
  return static_cast<double>(subsample_size_[j]) / static_cast<double>(source_size_[j]);
}

int MergedSample::stratum(std::size_t row, int j) const {
  if (!has_strata()) return in_mask(frame_->member[row], j) ? 0 : -1;
  return frame_->strata[row * frame_->sources + j];
}

double MergedSample::inclusion(std::size_t row, int j) const {
  if (!has_strata()) return sampling_fraction(j);
  const int k = stratum(row, j);
  if (k < 0) return 0.0;
  const auto Nk = stratum_size_[j][k];
  return Nk == 0 ? 0.0 : static_cast<double>(stratum_subsample_[j][k]) / static_cast<double>(Nk);
}

MergedSample MergedSample::with_selections(std::vector<SourceMask> selected) const {
  if (selected.size() != rows()) throw ValidationError("selection masks must have one entry per row");
  MergedSample out;
  out.frame_ = frame_;
  out.selected_ = std::move(selected);
  out.count();
  return out;
}

SampleData MergedSample::data() const {
  SampleData d;
  d.schema = frame_->schema;
  d.values = frame_->values;
  d.member = frame_->member;
  d.selected = selected_;
  d.sources = frame_->sources;
  d.source_names = frame_->source_names;
  d.ids = frame_->ids;
  d.strata = frame_->strata;
  d.strata_counts = frame_->strata_counts;
  d.population_size = frame_->population_size;
  d.full_roster = frame_->full_roster;
  d.source_size_override = frame_->source_size_override;
  d.stratum_size_override = frame_->stratum_size_override;
  return d;
}

std::vector<Violation> validate_sample(const MergedSample& s) {
  std::vector<Violation> out;
  const int J = s.sources();
  for (std::size_t i = 0; i < s.rows(); ++i) {
    const SourceMask m = s.member(i), sel = s.selected(i);
    if (m == 0) out.push_back({i, -1, "unit belongs to no source"});
    if (m >> J != 0) out.push_back({i, -1, "membership mask has bits beyond the declared sources"});
    for (int j = 0; j < J; ++j)
      if (in_mask(sel, j) && !in_mask(m, j))
        out.push_back({i, j, "unit selected in a source it is not a member of"});
    if (sel != 0) {
      for (std::size_t c = 0; c < s.schema().size(); ++c)
        if (std::isnan(s.value(i, static_cast<int>(c))))
          out.push_back({i, -1, "selected unit has no value for column '" + s.schema().names[c] + "'"});
    } else {
      for (std::size_t c = 0; c < s.schema().size(); ++c)
        if (s.schema().auxiliary[c] && std::isnan(s.value(i, static_cast<int>(c))))
          out.push_back({i, -1, "auxiliary column '" + s.schema().names[c] + "' is missing"});
    }
    if (s.has_strata()) {
      for (int j = 0; j < J; ++j) {
        const int k = s.stratum(i, j);
        if (in_mask(m, j) && (k < 0 || k >= s.strata_count(j)))
          out.push_back({i, j, "member has no valid stratum"});
      }
    }
  }
  for (int j = 0; j < J; ++j) {
    if (s.source_size(j) > 0 && s.subsample_size(j) == 0)
      out.push_back({std::nullopt, j, "empty subsample from nonempty source"});
    if (s.subsample_size(j) > s.source_size(j))
      out.push_back({std::nullopt, j, "subsample larger than its source"});
  }
  if (J >= 2 && s.full_roster() && s.rows() > 0) {
    const bool overlap = std::any_of(s.members().begin(), s.members().end(),
                                     [](SourceMask m) { return std::popcount(m) >= 2; });
    if (!overlap) out.push_back({std::nullopt, -1, "sources do not overlap"});
  }
  return out;
}

std::vector<Violation> validate_sample(const MergedSample& s, const SourceLayout& layout) {
  auto out = validate_sample(s);
  if (layout.sources() != s.sources()) {
    out.push_back({std::nullopt, -1, "layout and sample disagree on the number of sources"});
    return out;
  }
  const auto bound = layout.bind(s.schema());
  std::vector<double> row(s.schema().size());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = s.value(i, static_cast<int>(c));
    if (bound.mask(row) != s.member(i))
      out.push_back({i, -1, "membership mask disagrees with the layout rules"});
    if (layout.has_strata()) {
      for (int j = 0; j < s.sources(); ++j) {
        if (!in_mask(s.member(i), j) || layout.strata(j).empty()) continue;
        const int k = bound.stratum(j, row);
        if (k == -2) out.push_back({i, j, "stratum rules overlap"});
        else if (k < 0) out.push_back({i, j, "stratum rules are not exhaustive"});
        else if (s.has_strata() && k != s.stratum(i, j))
          out.push_back({i, j, "stratum disagrees with the layout rules"});
      }
    }
  }
  return out;
}

std::string describe(const Violation& v, const MergedSample& s) {
  std::ostringstream os;
  if (v.row) os << "row " << (*v.row + 1) << " (id " << s.id(*v.row) << ")";
  if (v.source >= 0) os << (v.row ? ", " : "") << "source " << s.source_name(v.source);
  if (v.row || v.source >= 0) os << ": ";
  os << v.message;
  return os.str();
}

WeightScheme::WeightScheme(int sources, std::map<SourceMask, std::vector<double>> cells)
    : sources_(sources), cells_(std::move(cells)) {
  if (sources < 1 || sources > kMaxSources) throw ValidationError("number of sources must be in [1, 32]");
  for (const auto& [mask, c] : cells_) {
    if (mask == 0 || (sources < kMaxSources && (mask >> sources) != 0))
      throw ValidationError("weight scheme cell mask out of range");
    if (static_cast<int>(c.size()) != sources)
      throw ValidationError("weight scheme cell must have one constant per source");
    double sum = 0.0;
    for (int j = 0; j < sources; ++j) {
      if (!std::isfinite(c[j]) || c[j] < 0.0) throw ValidationError("rho constants must be nonnegative");
      if (!in_mask(mask, j) && c[j] != 0.0)
        throw ValidationError("rho must vanish outside the cell's sources");
      sum += c[j];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("rho constants of a cell must sum to 1");
  }
}

double WeightScheme::rho(SourceMask cell, int j) const { return constants(cell)[j]; }

const std::vector<double>& WeightScheme::constants(SourceMask cell) const {
  auto it = cells_.find(cell);
  if (it == cells_.end())
    throw ValidationError("weight scheme has no constants for membership cell " + std::to_string(cell));
  return it->second;
}

std::vector<SourceMask> all_cells(int sources) {
  if (sources < 1 || sources > 20) throw ValidationError("all_cells supports 1 to 20 sources");
  std::vector<SourceMask> out;
  for (SourceMask m = 1; m < (SourceMask{1} << sources); ++m) out.push_back(m);
  return out;
}

std::vector<SourceMask> observed_cells(const MergedSample& s) {
  std::vector<SourceMask> out(s.members().begin(), s.members().end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  out.erase(std::remove(out.begin(), out.end(), SourceMask{0}), out.end());
  return out;
}

Eigen::MatrixXd VarianceDecomposition::design_total() const {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(population.rows(), population.cols());
  for (const auto& d : design) t += d;
  return t;
}

Eigen::MatrixXd VarianceDecomposition::total() const { return population + design_total(); }

Eigen::VectorXd VarianceDecomposition::se() const {
  return (total().diagonal() / normalizer).cwiseMax(0.0).cwiseSqrt();
}

}  // namespace mergest
