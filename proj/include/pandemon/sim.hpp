#pragma once

#include "pandemon/hazard.hpp"
#include "pandemon/missing_link.hpp"
#include "pandemon/panel.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

namespace pandemon {

//! Density of Beta(a, b) at x in (0, 1); 0 outside.
double beta_density(double x, double a, double b);

//! Known-truth hospital model: NHPP admissions with piecewise-constant daily
//! rates and a product hazard calendar(t) * duration_j(w) * hazard_scale per
//! exit cause. Calendar and duration factors take a day index.
struct TrueModel
{
  int days = 120;
  int max_duration = 60;
  std::vector<double> arrival_intensity;
  std::function<double(int)> calendar;
  std::function<double(int)> death_duration;
  std::function<double(int)> recovery_duration;
  double hazard_scale = 1.0;
  //! Out-of-hospital deaths per in-hospital death on day t.
  std::function<double(int)> outside_ratio = [](int) { return 0.5; };
  Date start = Date{ std::chrono::year{ 2020 } / 3 / 18 };

  //! Rejects models whose daily exit probability exceeds 1 somewhere.
  void validate() const;
  //! Daily hazard for exit day t and duration w; 0 outside [0, days).
  double hazard(int t, int w, Cause cause) const;
  double expected_admissions() const;
  //! Copy with the arrival intensity rescaled to sum to n.
  TrueModel with_expected_admissions(double n) const;
  //! Hazard surface of the truth on the estimation grid.
  HazardSurface true_surface(Cause cause) const;
};

//! Beta-shaped design: alpha1 = B(x;2,2)/T, alpha2 = (0.6/T)(B(x;.5,.5) +
//! B(x;2,4) + B(x;4,2)) with x = (day + 0.5)/T, calendar factor alpha1 +
//! alpha2, alpha1 driving deaths and alpha2 recoveries (swapped on request).
//! The hazard scale is set so that the mean all-cause hazard over the
//! estimation grid equals `mean_hazard`.
TrueModel beta_design(int days = 120,
                      int max_duration = 60,
                      double expected_admissions = 1e4,
                      double mean_hazard = 0.08,
                      bool swap_causes = false);

//! Constant arrivals and time-homogeneous constant hazards.
TrueModel stationary_design(int days,
                            int max_duration,
                            double expected_admissions,
                            double recovery_hazard,
                            double death_hazard,
                            double outside_ratio);

//! Daily admission counts taken as piecewise-constant NHPP rates.
std::vector<double> arrival_intensity_from_panel(const DailyPanel& panel);

//! Seed for a reproducible substream (splitmix64 over the master seed and
//! stream coordinates).
std::uint64_t substream_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

std::vector<Count> simulate_arrivals(const TrueModel& model, std::uint64_t seed);

struct SimulatedData
{
  std::vector<StayRecord> records;
  DailyPanel panel;
};

//! Daily competing-risk draws for every admission cohort; records keep the
//! links, the panel is the aggregate view.
SimulatedData simulate_cohorts(const TrueModel& model, std::uint64_t seed);

struct IseResult
{
  double ise = 0.0;
  std::size_t cells = 0;
  std::size_t masked = 0;
};

//! Mean squared deviation from the truth over defined cells of the feasible
//! triangle w <= t.
IseResult ise(const HazardSurface& est, const TrueModel& model, Cause cause);

struct StudyOptions
{
  std::vector<int> sizes{ 10000, 40000 };
  int replicates = 50;
  std::uint64_t seed = 20240101;
  //! Fixed bandwidths for both methods; cross-validated per replicate when
  //! empty.
  std::optional<Bandwidths> bandwidths;
  std::vector<Bandwidths> candidates = default_candidate_grid();
  //! Every replicate draws from the same substream (zero-variance check).
  bool identical_replicates = false;
  unsigned threads = 0;
};

struct StudyCell
{
  std::string method; // "full" | "partial"
  Cause cause = Cause::death;
  int size = 0;
  double mise = 0.0, isb = 0.0, miv = 0.0, median_ise = 0.0;
  std::size_t cells = 0;
  int used = 0;
  int failures = 0;
  bool aborted = false;
};

struct StudyConvergence
{
  int size = 0;
  int replicates = 0;
  int converged = 0;
  double mean_iterations = 0.0;
};

struct StudyReport
{
  std::vector<StudyCell> cells;
  std::vector<StudyConvergence> convergence;
  int replicates = 0;
  std::uint64_t seed = 0;

  const StudyCell& cell(const std::string& method, Cause cause, int size) const;
};

//! Monte-Carlo comparison of the full-information and missing-link
//! estimators. `model` fixes the design; its arrivals are rescaled to each
//! size.
StudyReport run_study(const TrueModel& model, const StudyOptions& opts);

//! Rows N x {MISE, ISB, MIV}, columns full/partial x deaths/recoveries.
void write_study_csv(const StudyReport& r, std::ostream& out);
nlohmann::json study_to_json(const StudyReport& r);

} // namespace pandemon
