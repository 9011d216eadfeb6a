#pragma once

#include "pandemon/bandwidth_cv.hpp"
#include "pandemon/hazard.hpp"
#include "pandemon/panel.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace pandemon {

//! Estimated probability that a patient admitted on day s is still in
//! hospital at the start of day t: prod_{w=0}^{t-s-1} (1 - mu(s+w, w)).
//! Undefined hazard cells count as zero hazard.
double survival_from_hazard(const HazardSurface& mu, int s, int t);

//! Imputed occurrence and end-of-day occupancy grids over (u, w), w lumped
//! at W like EventGrid.
struct ImputedGrid
{
  Matrix occurrences; // N_hat: exits on day u attributed to admission day u - w
  Matrix remaining;   // Y_hat: end-of-day occupancy attributed the same way
  int iteration = 0;
  //! Days with exits (or occupancy) but no weighted survivors to carry them;
  //! those rows are left at zero.
  std::vector<int> flagged_rows;

  //! Event grid for the hazard update: exposure N_hat + Y_hat (patients at
  //! risk on day u), occurrences split between causes in proportion to
  //! n3[u] : n4[u].
  EventGrid event_grid(const DailyPanel& panel) const;
};

struct Allocation
{
  Matrix cells;
  std::vector<int> flagged_rows;
};

//! Exits on day u shared among admission cohorts in proportion to
//! S(u, u-v) mu(u, u-v) n2[v].
Allocation impute_occurrences(const DailyPanel& panel, const HazardSurface& mu);

//! Occupancy Y(u) shared among cohorts in proportion to S(u, u-v) n2[v].
Allocation impute_exposure(const DailyPanel& panel, const HazardSurface& mu);

//! Both allocations from one survival table.
ImputedGrid impute(const DailyPanel& panel, const HazardSurface& mu);

enum class Acceleration
{
  none,   //!< plain fixed-point iteration
  squarem //!< squared extrapolation between map evaluations
};

struct FitOptions
{
  //! Fixed bandwidths; when empty they are chosen by cross-validation on the
  //! grid imputed with the constant initial guess, then frozen.
  std::optional<Bandwidths> bandwidths;
  std::vector<Bandwidths> candidates = default_candidate_grid();
  CvOptions cv;
  std::optional<int> max_duration;
  double tolerance = 1e-4;
  double relative_floor = 1e-6;
  //! Budget of fixed-point map evaluations (each one counts as an
  //! iteration, extrapolation steps included).
  int max_iterations = 50;
  Acceleration acceleration = Acceleration::squarem;
  //! Starting surface; defaults to total exits / total person-days at risk.
  std::optional<HazardSurface> initial;
};

struct FitDiagnostics
{
  int iterations = 0;
  std::vector<double> sup_rel_change;
  bool converged = false;
  Bandwidths bandwidths;
  std::vector<int> flagged_rows;
};

nlohmann::json diagnostics_to_json(const FitDiagnostics& d);
FitDiagnostics diagnostics_from_json(const nlohmann::json& j);

struct MissingLinkFit
{
  HazardSurface hazard;
  ImputedGrid grid;
  FitDiagnostics diagnostics;
  std::optional<CvResult> cv;
};

//! Constant hazard total exits / total person-days at risk on the panel's
//! feasible triangle.
HazardSurface initial_guess(const DailyPanel& panel, TimeGrid grid);

//! Alternates imputation and local-linear re-estimation until the sup
//! relative change over defined cells drops below the tolerance or the
//! iteration budget is spent. The change is always measured between the
//! input and output of one map evaluation, so extrapolated steps stop on the
//! same criterion as plain ones. Non-convergence is reported, not thrown.
MissingLinkFit fit_missing_link(const DailyPanel& panel, const FitOptions& opts = {});

//! Cause-specific surfaces from the final imputed grid. Exits of each cause
//! are allocated with the weights of the all-cause imputation and smoothed
//! with the same bandwidths, so recovery + death equals `mu` cellwise.
CauseSurfaces split_causes(const DailyPanel& panel,
                           const HazardSurface& mu,
                           const ImputedGrid& grid);

} // namespace pandemon
