#pragma once

#include "pandemon/hazard.hpp"
#include "pandemon/missing_link.hpp"
#include "pandemon/panel.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace pandemon {

// ---------------------------------------------------------------------------
// Outside/inside death ratio

//! g(t) = smoothed out-of-hospital deaths / smoothed in-hospital deaths.
struct RatioCurve
{
  std::vector<double> g_hat;
  std::vector<double> smoothed_out;
  std::vector<double> smoothed_in;
  //! True where the smoothed denominator was raised to the floor.
  std::vector<bool> floor_applied;
  double bandwidth_out = 14.0;
  double bandwidth_in = 14.0;
};

inline constexpr double ratio_denominator_floor = 0.5;

//! Numerator and denominator are smoothed separately by local-linear
//! regression on the day grid, then divided. Throws ValidationError when
//! the panel has no out-of-hospital deaths.
RatioCurve estimate_ratio(const DailyPanel& panel,
                          double b_num = 14.0,
                          double b_den = 14.0,
                          double floor = ratio_denominator_floor);

//! g_T (1 + (C2 - 1) s / h) for 0 < s <= h.
double extrapolate_ratio(double g_T, double c2, int h, int s);

// ---------------------------------------------------------------------------
// Scenarios and forecasts

struct ForecastScenario
{
  int cutoff = 0; //!< last observed day index
  int horizon = 1;
  double c1 = 1.0;
  double c2 = 1.0;

  void validate() const;
};

//! Default admissions path: the local-linear level of n2 at the cutoff
//! scaled linearly toward C1 times that level at the horizon. A supplied
//! override path (length h) is returned unchanged.
std::vector<double> forecast_admissions(const DailyPanel& panel,
                                        const ForecastScenario& scenario,
                                        std::optional<std::span<const double>> override_path = std::nullopt,
                                        double bandwidth = 14.0);

//! Everything the forecaster needs from a fitted hospital-stay model.
struct HospitalModel
{
  CauseSurfaces surfaces;
  //! Imputed end-of-day occupancy at the cutoff by duration (0..W).
  std::vector<double> remaining;

  static HospitalModel from_fit(const MissingLinkFit& fit, const CauseSurfaces& causes);
  int cutoff() const { return surfaces.all.days() - 1; }
};

//! Frozen-hazard projection: hazards are held at their values on the cutoff
//! day, the standing cohorts and the forecast admissions are run forward,
//! durations above W use the W hazard.
std::vector<double> forecast_in_hospital_deaths(const HospitalModel& model,
                                                const ForecastScenario& scenario,
                                                std::span<const double> admissions);

struct ForecastResult
{
  ForecastScenario scenario;
  Date first_day;
  std::vector<double> admissions, deaths_in, g_tilde, deaths_out, deaths_total;
};

ForecastResult forecast_total_deaths(std::span<const double> deaths_in,
                                     const RatioCurve& ratio,
                                     const ForecastScenario& scenario);

//! Full scenario pipeline on a fitted model whose last day is the cutoff.
ForecastResult run_forecast(const DailyPanel& panel,
                            const HospitalModel& model,
                            const RatioCurve& ratio,
                            ForecastScenario scenario,
                            std::optional<std::span<const double>> admissions_override = std::nullopt);

nlohmann::json forecast_to_json(const ForecastResult& r);
void write_forecast_csv(const ForecastResult& r, std::ostream& out);

// ---------------------------------------------------------------------------
// Backtesting C2

struct C2Search
{
  double c2_star = 1.0;
  std::vector<double> grid;
  std::vector<double> sse;
};

//! 0.25, 0.30, ..., 4.00.
std::vector<double> default_c2_grid();

//! Grid search for the C2 whose total-death path best matches the observed
//! totals over the horizon (daily SSE, or SSE of running sums).
C2Search optimize_c2(std::span<const double> deaths_in,
                     double g_T,
                     std::span<const double> observed_totals,
                     std::span<const double> c2_grid,
                     bool cumulative = false);

struct BacktestResult
{
  C2Search search;
  ForecastResult forecast_at_best;
  std::vector<double> observed_totals;
};

//! Refits the hospital model on days [0, cutoff], forecasts h days ahead and
//! optimises C2 against the observed totals n4 + n_out on (cutoff, cutoff+h].
BacktestResult backtest(const DailyPanel& panel,
                        int cutoff,
                        int horizon,
                        std::span<const double> c2_grid,
                        const FitOptions& fit_options,
                        double c1 = 1.0,
                        bool cumulative = false);

// ---------------------------------------------------------------------------
// Monitoring indicators along an admission cohort. Calendar days past the
// last estimated day reuse the last row of the surface.

//! Smallest d with 1 - prod_{w=0}^{d} (1 - mu(s+w, w)) >= 0.5; nullopt when
//! not reached by W.
std::optional<int> median_stay(const HazardSurface& mu, int s);

struct ExitProbability
{
  double probability = 0.0;
  //! Mass still in hospital after duration W.
  double remainder = 0.0;
};

//! Probability of leaving for `cause` for a patient admitted on day s who
//! has already stayed d days. cause = all gives the total exit probability.
ExitProbability exit_probability(const HazardSurface& recovery,
                                 const HazardSurface& death,
                                 int s,
                                 int d,
                                 Cause cause);

} // namespace pandemon
