#include "pandemon/bandwidth_cv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>

namespace pandemon {

double cv_score(const EventGrid& grid, Bandwidths b, CvOptions opts)
{
  const LocalLinearEstimator est(grid.exposure, b);
  const Matrix occ = grid.occurrences();
  const Matrix num = est.numerator(occ);
  const double centre = est.centre_weight();

  double fit = 0.0, cross = 0.0;
  bool any = false;
  for (int t = 0; t < grid.days(); ++t) {
    for (int w = 0; w <= grid.max_duration(); ++w) {
      if (!est.defined(t, w))
        continue;
      any = true;
      const double e = grid.exposure(t, w);
      if (!(e > 0.0))
        continue;
      const double den = est.denominator()(t, w);
      const double mu = std::clamp(num(t, w) / den, 0.0, 1.0);
      const double o = occ(t, w);
      const double loo =
        o > 0.0 ? std::clamp((num(t, w) - centre * o) / den, 0.0, 1.0) : 0.0;
      if (opts.exposure_weighted) {
        fit += mu * mu * e;
        cross += loo * o;
      } else {
        fit += mu * mu;
        cross += loo * o / e;
      }
    }
  }
  if (!any)
    return std::numeric_limits<double>::infinity();
  return fit - 2.0 * cross;
}

CvResult select_bandwidths(const EventGrid& grid,
                           std::span<const Bandwidths> candidates,
                           CvOptions opts)
{
  if (candidates.empty())
    throw ValidationError("empty bandwidth candidate list");
  CvResult r;
  r.candidates.assign(candidates.begin(), candidates.end());
  r.scores.reserve(candidates.size());
  for (const auto& b : candidates)
    r.scores.push_back(cv_score(grid, b, opts));

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    if (!std::isfinite(r.scores[i]))
      continue;
    if (!best || r.scores[i] < r.scores[*best] ||
        (r.scores[i] == r.scores[*best] &&
         r.candidates[i].calendar * r.candidates[i].duration >
           r.candidates[*best].calendar * r.candidates[*best].duration))
      best = i;
  }
  if (!best)
    throw ValidationError("no usable bandwidth");
  r.chosen = r.candidates[*best];
  return r;
}

std::vector<Bandwidths> default_candidate_grid()
{
  static constexpr double steps[] = { 2, 3, 5, 7, 10, 14, 21 };
  std::vector<Bandwidths> out;
  for (double b1 : steps)
    for (double b2 : steps)
      out.push_back({ b1, b2 });
  return out;
}

void write_cv_trace_csv(const CvResult& r, std::ostream& out)
{
  out << "b1,b2,score\n";
  for (std::size_t i = 0; i < r.candidates.size(); ++i)
    out << format_double(r.candidates[i].calendar) << ','
        << format_double(r.candidates[i].duration) << ','
        << format_double(r.scores[i]) << '\n';
}

} // namespace pandemon
