#include "pandemon/hazard.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>

namespace pandemon {

std::string to_string(Cause c)
{
  switch (c) {
    case Cause::all:
      return "all";
    case Cause::recovery:
      return "recovery";
    case Cause::death:
      return "death";
  }
  return "all";
}

Cause parse_cause(std::string_view text)
{
  if (text == "all")
    return Cause::all;
  if (text == "recovery" || text == "recoveries")
    return Cause::recovery;
  if (text == "death" || text == "deaths")
    return Cause::death;
  throw ValidationError("unknown cause '" + std::string(text) +
                        "' (expected all, recovery or death)");
}

EventGrid EventGrid::zeros(int days, int max_duration)
{
  EventGrid g;
  g.recoveries = Matrix::Zero(days, max_duration + 1);
  g.deaths = Matrix::Zero(days, max_duration + 1);
  g.exposure = Matrix::Zero(days, max_duration + 1);
  return g;
}

const Matrix& EventGrid::occurrences(Cause c) const
{
  switch (c) {
    case Cause::recovery:
      return recoveries;
    case Cause::death:
      return deaths;
    case Cause::all:
      break;
  }
  throw std::logic_error("EventGrid::occurrences(Cause::all) has no stored matrix");
}

EventGrid build_event_grid_full(std::span<const StayRecord> records,
                                int days,
                                TimeGrid grid)
{
  const int W = grid.max_duration;
  auto g = EventGrid::zeros(days, W);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.count < 0)
      throw ValidationError("negative record count", i);
    if (r.admit < 0 || r.admit >= days)
      throw ValidationError("admission day outside the observation window", i);
    if (r.exit && (*r.exit < r.admit || *r.exit >= days))
      throw ValidationError("exit day before admission or after the window", i);
    if (r.exit && r.cause == Cause::all)
      throw ValidationError("exit cause must be recovery or death", i);
    if (r.count == 0)
      continue;
    const double n = static_cast<double>(r.count);
    const int last = r.exit.value_or(days - 1);
    for (int u = r.admit; u <= last; ++u)
      g.exposure(u, std::min(u - r.admit, W)) += n;
    if (r.exit) {
      const int w = std::min(*r.exit - r.admit, W);
      (r.cause == Cause::death ? g.deaths : g.recoveries)(*r.exit, w) += n;
    }
  }
  return g;
}

HazardSurface HazardSurface::constant(int days, int max_duration, double value, Cause c)
{
  HazardSurface s;
  s.cause = c;
  s.values = Matrix::Constant(days, max_duration + 1, value);
  s.mask = BoolMatrix::Constant(days, max_duration + 1, false);
  for (int t = 0; t < days; ++t)
    for (int w = 0; w <= std::min(t, max_duration); ++w)
      s.mask(t, w) = true;
  s.values = s.mask.select(s.values, 0.0);
  return s;
}

LocalLinearEstimator::LocalLinearEstimator(const Matrix& exposure, Bandwidths b)
  : bandwidths_(b)
  , smoother_(b)
  , centre_weight_(smoother_.centre_weight())
{
  const Matrix z0 = smoother_.along_duration(exposure, 0);
  const Matrix z1 = smoother_.along_duration(exposure, 1);
  const Matrix z2 = smoother_.along_duration(exposure, 2);
  mass_ = smoother_.along_calendar(z0, 0);
  const Matrix m10 = smoother_.along_calendar(z0, 1);
  const Matrix m20 = smoother_.along_calendar(z0, 2);
  const Matrix m01 = smoother_.along_calendar(z1, 0);
  const Matrix m11 = smoother_.along_calendar(z1, 1);
  const Matrix m02 = smoother_.along_calendar(z2, 0);

  const auto rows = exposure.rows(), cols = exposure.cols();
  beta_calendar_ = Matrix::Zero(rows, cols);
  beta_duration_ = Matrix::Zero(rows, cols);
  denominator_ = mass_;
  for (Eigen::Index t = 0; t < rows; ++t) {
    for (Eigen::Index w = 0; w < cols; ++w) {
      if (!(mass_(t, w) > exposure_epsilon))
        continue;
      Eigen::Matrix2d A;
      A << m20(t, w), m11(t, w), m11(t, w), m02(t, w);
      if (is_singular(A))
        continue;
      const Eigen::Vector2d a(m10(t, w), m01(t, w));
      const Eigen::Vector2d beta = A.ldlt().solve(a);
      const double den = mass_(t, w) - beta.dot(a);
      // Exposure concentrated on a line leaves no room for the slope terms.
      if (!(den > 1e-10 * mass_(t, w)))
        continue;
      beta_calendar_(t, w) = beta(0);
      beta_duration_(t, w) = beta(1);
      denominator_(t, w) = den;
    }
  }
}

bool LocalLinearEstimator::defined(int t, int w) const
{
  return w <= t && mass_(t, w) > exposure_epsilon;
}

Matrix LocalLinearEstimator::numerator(const Matrix& occurrences) const
{
  const Matrix z0 = smoother_.along_duration(occurrences, 0);
  const Matrix z1 = smoother_.along_duration(occurrences, 1);
  const Matrix n00 = smoother_.along_calendar(z0, 0);
  const Matrix n10 = smoother_.along_calendar(z0, 1);
  const Matrix n01 = smoother_.along_calendar(z1, 0);
  return n00 - beta_calendar_ * n10 - beta_duration_ * n01;
}

namespace {

HazardSurface surface_from_ratio(const LocalLinearEstimator& est,
                                 const Matrix& numerator,
                                 Cause cause)
{
  HazardSurface s;
  s.cause = cause;
  s.bandwidths = est.bandwidths();
  const auto rows = numerator.rows(), cols = numerator.cols();
  s.values = Matrix::Zero(rows, cols);
  s.mask = BoolMatrix::Constant(rows, cols, false);
  for (int t = 0; t < rows; ++t)
    for (int w = 0; w < cols; ++w)
      if (est.defined(t, w)) {
        s.mask(t, w) = true;
        s.values(t, w) =
          std::clamp(numerator(t, w) / est.denominator()(t, w), 0.0, 1.0);
      }
  return s;
}

} // namespace

HazardSurface estimate_hazard(const EventGrid& grid, Cause cause, Bandwidths b)
{
  const LocalLinearEstimator est(grid.exposure, b);
  const Matrix num = cause == Cause::all ? est.numerator(grid.occurrences())
                                         : est.numerator(grid.occurrences(cause));
  return surface_from_ratio(est, num, cause);
}

std::pair<double, double> reconcile_causes(double total, double raw_recovery, double raw_death)
{
  if (!(total > 0.0))
    return { 0.0, 0.0 };
  if (raw_recovery <= 0.0)
    return { 0.0, total };
  if (raw_death <= 0.0)
    return { total, 0.0 };
  const double share = raw_recovery / (raw_recovery + raw_death);
  const double recovery = total * share;
  return { recovery, total - recovery };
}

CauseSurfaces estimate_cause_hazards(const EventGrid& grid, Bandwidths b)
{
  const LocalLinearEstimator est(grid.exposure, b);
  const Matrix num3 = est.numerator(grid.recoveries);
  const Matrix num4 = est.numerator(grid.deaths);
  CauseSurfaces out{ surface_from_ratio(est, num3 + num4, Cause::all), {}, {} };
  out.recovery = out.all;
  out.recovery.cause = Cause::recovery;
  out.death = out.all;
  out.death.cause = Cause::death;
  for (int t = 0; t < out.all.days(); ++t)
    for (int w = 0; w <= out.all.max_duration(); ++w) {
      if (!out.all.mask(t, w))
        continue;
      const auto [r, d] = reconcile_causes(out.all.values(t, w), num3(t, w), num4(t, w));
      out.recovery.values(t, w) = r;
      out.death.values(t, w) = d;
    }
  return out;
}

std::optional<double> occurrence_exposure_ratio(const EventGrid& grid, int t, int w)
{
  const double e = grid.exposure(t, w);
  if (!(e > 0.0))
    return std::nullopt;
  return (grid.recoveries(t, w) + grid.deaths(t, w)) / e;
}

std::string format_double(double x)
{
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

void write_surface_csv(const HazardSurface& s, std::ostream& out)
{
  out << "t,w,value,defined\n";
  for (int t = 0; t < s.days(); ++t)
    for (int w = 0; w <= s.max_duration(); ++w)
      out << t << ',' << w << ',' << format_double(s.values(t, w)) << ','
          << (s.mask(t, w) ? "true" : "false") << '\n';
}

nlohmann::json surface_to_json(const HazardSurface& s)
{
  nlohmann::json values = nlohmann::json::array();
  nlohmann::json mask = nlohmann::json::array();
  for (int t = 0; t < s.days(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    nlohmann::json mrow = nlohmann::json::array();
    for (int w = 0; w <= s.max_duration(); ++w) {
      row.push_back(s.values(t, w));
      mrow.push_back(static_cast<bool>(s.mask(t, w)));
    }
    values.push_back(std::move(row));
    mask.push_back(std::move(mrow));
  }
  return { { "T", s.days() },
           { "W", s.max_duration() },
           { "cause", to_string(s.cause) },
           { "b1", s.bandwidths.calendar },
           { "b2", s.bandwidths.duration },
           { "values", std::move(values) },
           { "mask", std::move(mask) } };
}

HazardSurface surface_from_json(const nlohmann::json& j)
{
  HazardSurface s;
  const int T = j.at("T").get<int>();
  const int W = j.at("W").get<int>();
  s.cause = parse_cause(j.at("cause").get<std::string>());
  s.bandwidths = { j.at("b1").get<double>(), j.at("b2").get<double>() };
  s.values = Matrix::Zero(T, W + 1);
  s.mask = BoolMatrix::Constant(T, W + 1, false);
  const auto& values = j.at("values");
  const auto& mask = j.at("mask");
  if (static_cast<int>(values.size()) != T || static_cast<int>(mask.size()) != T)
    throw ValidationError("surface JSON row count does not match T");
  for (int t = 0; t < T; ++t) {
    if (static_cast<int>(values[t].size()) != W + 1 ||
        static_cast<int>(mask[t].size()) != W + 1)
      throw ValidationError("surface JSON column count does not match W");
    for (int w = 0; w <= W; ++w) {
      s.values(t, w) = values[t][w].get<double>();
      s.mask(t, w) = mask[t][w].get<bool>();
    }
  }
  return s;
}

} // namespace pandemon
