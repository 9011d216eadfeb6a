#pragma once

#include "pandemon/kernels.hpp"
#include "pandemon/panel.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <span>
#include <string>

namespace pandemon {

enum class Cause
{
  all,
  recovery,
  death
};

std::string to_string(Cause c);
Cause parse_cause(std::string_view text);

//! One group of identical stays: `count` patients admitted on `admit` who
//! left on `exit` for `cause`. No exit means still in hospital at the end
//! of the observation window.
struct StayRecord
{
  int admit = 0;
  std::optional<int> exit;
  Cause cause = Cause::recovery;
  Count count = 1;
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//! Occurrences and exposure over (exit day u, duration w = u - v), w in
//! [0, W]. Stays longer than W are lumped into column W.
struct EventGrid
{
  Matrix recoveries; // O3
  Matrix deaths;     // O4
  Matrix exposure;   // E, person-days at risk (inclusive of the exit day)

  static EventGrid zeros(int days, int max_duration);

  int days() const { return static_cast<int>(exposure.rows()); }
  int max_duration() const { return static_cast<int>(exposure.cols()) - 1; }
  Matrix occurrences() const { return recoveries + deaths; }
  const Matrix& occurrences(Cause c) const;
};

//! Direct counting from linked records. Throws ValidationError for records
//! outside [0, days) or exiting before admission.
EventGrid build_event_grid_full(std::span<const StayRecord> records,
                                int days,
                                TimeGrid grid);

//! Daily hazard on (calendar day t, duration w); cell values lie in [0, 1].
struct HazardSurface
{
  Cause cause = Cause::all;
  Bandwidths bandwidths;
  Matrix values;
  BoolMatrix mask; // true where defined

  int days() const { return static_cast<int>(values.rows()); }
  int max_duration() const { return static_cast<int>(values.cols()) - 1; }
  bool defined(int t, int w) const { return mask(t, std::min(w, max_duration())); }
  //! Value at (t, w) with durations above W read from column W; undefined
  //! cells read as 0.
  double at(int t, int w) const
  {
    const int c = std::min(w, max_duration());
    return mask(t, c) ? values(t, c) : 0.0;
  }
  std::size_t defined_count() const { return static_cast<std::size_t>(mask.count()); }

  static HazardSurface constant(int days, int max_duration, double value, Cause c = Cause::all);
};

//! Precomputed local-linear weights for one exposure grid and bandwidth
//! pair. numerator(O) / denominator() is the occurrence-exposure smoother.
class LocalLinearEstimator
{
public:
  LocalLinearEstimator(const Matrix& exposure, Bandwidths b);

  //! sum over (u, w') of C K1 K2 O(u, w') at every evaluation cell.
  Matrix numerator(const Matrix& occurrences) const;
  const Matrix& denominator() const { return denominator_; }
  //! Zeroth exposure moment; the cell is defined when it exceeds 1e-8.
  const Matrix& mass() const { return mass_; }
  bool defined(int t, int w) const;
  //! Weight C K1(0) K2(0) of a cell in its own estimate (C = 1 there).
  double centre_weight() const { return centre_weight_; }
  Bandwidths bandwidths() const { return bandwidths_; }

private:
  Bandwidths bandwidths_;
  SeparableSmoother smoother_;
  Matrix mass_, beta_calendar_, beta_duration_, denominator_;
  double centre_weight_;
};

inline constexpr double exposure_epsilon = 1e-8;

HazardSurface estimate_hazard(const EventGrid& grid, Cause cause, Bandwidths b);

struct CauseSurfaces
{
  HazardSurface all, recovery, death;
};

//! All-cause and cause-specific surfaces from one exposure smoother. After
//! clipping the cause surfaces are reconciled so that recovery + death
//! equals the all-cause surface in every cell.
CauseSurfaces estimate_cause_hazards(const EventGrid& grid, Bandwidths b);

//! Splits a clipped total between two raw cause estimates so both are
//! nonnegative and sum to the total.
std::pair<double, double> reconcile_causes(double total, double raw_recovery, double raw_death);

//! Unsmoothed O / E at (t, w); nullopt when E is zero.
std::optional<double> occurrence_exposure_ratio(const EventGrid& grid, int t, int w);

void write_surface_csv(const HazardSurface& s, std::ostream& out);
nlohmann::json surface_to_json(const HazardSurface& s);
HazardSurface surface_from_json(const nlohmann::json& j);

//! Shortest decimal form that round-trips a double.
std::string format_double(double x);

} // namespace pandemon
