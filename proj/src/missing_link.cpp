#include "pandemon/missing_link.hpp"

#include <algorithm>
#include <cmath>

namespace pandemon {

double survival_from_hazard(const HazardSurface& mu, int s, int t)
{
  double surv = 1.0;
  for (int w = 0; w < t - s; ++w)
    surv *= 1.0 - mu.at(s + w, w);
  return surv;
}

namespace {

// S(u, v) for v <= u, row-major (u, v).
Matrix survival_table(const HazardSurface& mu, int days)
{
  Matrix S = Matrix::Zero(days, days);
  for (int v = 0; v < days; ++v) {
    double surv = 1.0;
    for (int u = v; u < days; ++u) {
      S(u, v) = surv;
      surv *= 1.0 - mu.at(u, u - v);
    }
  }
  return S;
}

enum class Target
{
  exits,
  occupancy
};

Allocation allocate(const DailyPanel& panel,
                    const HazardSurface& mu,
                    const Matrix& S,
                    Target target)
{
  const int T = panel.days();
  const int W = mu.max_duration();
  const auto& n2 = panel.admissions();
  const CountSeries mass = target == Target::exits ? panel.exits() : occupancy(panel);

  Allocation out{ Matrix::Zero(T, W + 1), {} };
  std::vector<double> weight(T);
  for (int u = 0; u < T; ++u) {
    if (mass[u] == 0)
      continue;
    double total = 0.0;
    for (int v = 0; v <= u; ++v) {
      double x = S(u, v) * static_cast<double>(n2[v]);
      if (target == Target::exits)
        x *= mu.at(u, u - v);
      weight[v] = x;
      total += x;
    }
    if (!(total > 0.0)) {
      out.flagged_rows.push_back(u);
      continue;
    }
    const double scale = static_cast<double>(mass[u]) / total;
    for (int v = 0; v <= u; ++v)
      out.cells(u, std::min(u - v, W)) += weight[v] * scale;
  }
  return out;
}

void check_shape(const DailyPanel& panel, const HazardSurface& mu)
{
  if (mu.days() != panel.days())
    throw ValidationError("hazard surface covers " + std::to_string(mu.days()) +
                          " days, panel has " + std::to_string(panel.days()));
}

} // namespace

Allocation impute_occurrences(const DailyPanel& panel, const HazardSurface& mu)
{
  check_shape(panel, mu);
  return allocate(panel, mu, survival_table(mu, panel.days()), Target::exits);
}

Allocation impute_exposure(const DailyPanel& panel, const HazardSurface& mu)
{
  check_shape(panel, mu);
  return allocate(panel, mu, survival_table(mu, panel.days()), Target::occupancy);
}

ImputedGrid impute(const DailyPanel& panel, const HazardSurface& mu)
{
  check_shape(panel, mu);
  const Matrix S = survival_table(mu, panel.days());
  auto occ = allocate(panel, mu, S, Target::exits);
  auto rem = allocate(panel, mu, S, Target::occupancy);
  ImputedGrid g;
  g.occurrences = std::move(occ.cells);
  g.remaining = std::move(rem.cells);
  std::merge(occ.flagged_rows.begin(),
             occ.flagged_rows.end(),
             rem.flagged_rows.begin(),
             rem.flagged_rows.end(),
             std::back_inserter(g.flagged_rows));
  g.flagged_rows.erase(std::unique(g.flagged_rows.begin(), g.flagged_rows.end()),
                       g.flagged_rows.end());
  return g;
}

EventGrid ImputedGrid::event_grid(const DailyPanel& panel) const
{
  EventGrid g;
  g.exposure = occurrences + remaining;
  g.recoveries = Matrix::Zero(occurrences.rows(), occurrences.cols());
  const auto exits = panel.exits();
  for (int u = 0; u < panel.days(); ++u) {
    if (exits[u] == 0)
      continue;
    const double share = static_cast<double>(panel.discharges()[u]) /
                         static_cast<double>(exits[u]);
    g.recoveries.row(u) = occurrences.row(u) * share;
  }
  g.deaths = occurrences - g.recoveries;
  return g;
}

nlohmann::json diagnostics_to_json(const FitDiagnostics& d)
{
  return { { "iterations", d.iterations },
           { "sup_rel_change", d.sup_rel_change },
           { "converged", d.converged },
           { "flagged_rows", d.flagged_rows },
           { "b1", d.bandwidths.calendar },
           { "b2", d.bandwidths.duration } };
}

FitDiagnostics diagnostics_from_json(const nlohmann::json& j)
{
  FitDiagnostics d;
  d.iterations = j.at("iterations").get<int>();
  d.sup_rel_change = j.at("sup_rel_change").get<std::vector<double>>();
  d.converged = j.at("converged").get<bool>();
  d.flagged_rows = j.at("flagged_rows").get<std::vector<int>>();
  d.bandwidths = { j.at("b1").get<double>(), j.at("b2").get<double>() };
  return d;
}

HazardSurface initial_guess(const DailyPanel& panel, TimeGrid grid)
{
  double exits = 0.0, person_days = 0.0;
  for (auto e : panel.exits())
    exits += static_cast<double>(e);
  for (auto r : at_risk(panel))
    person_days += static_cast<double>(r);
  const double mu0 = person_days > 0.0 ? std::min(1.0, exits / person_days) : 0.0;
  return HazardSurface::constant(panel.days(), grid.max_duration, mu0);
}

namespace {

double sup_relative_change(const HazardSurface& next,
                           const HazardSurface& prev,
                           double floor)
{
  double sup = 0.0;
  for (int t = 0; t < next.days(); ++t)
    for (int w = 0; w <= next.max_duration(); ++w)
      if (next.mask(t, w) && prev.mask(t, w))
        sup = std::max(sup,
                       std::abs(next.values(t, w) - prev.values(t, w)) /
                         (prev.values(t, w) + floor));
  return sup;
}

bool defined_in_all(const HazardSurface& a, const HazardSurface& b, const HazardSurface& c, int t, int w)
{
  return a.mask(t, w) && b.mask(t, w) && c.mask(t, w);
}

// Step length -|r| / |v| with r = F(x) - x, v = F(F(x)) - 2 F(x) + x, kept in
// [-step_max, -1]; -1 reproduces the plain second iterate.
double squarem_alpha(const HazardSurface& x, const HazardSurface& f1, const HazardSurface& f2, double step_max)
{
  double rr = 0.0, vv = 0.0;
  for (int t = 0; t < x.days(); ++t)
    for (int w = 0; w <= x.max_duration(); ++w)
      if (defined_in_all(x, f1, f2, t, w)) {
        const double r = f1.values(t, w) - x.values(t, w);
        const double v = f2.values(t, w) - 2.0 * f1.values(t, w) + x.values(t, w);
        rr += r * r;
        vv += v * v;
      }
  if (!(vv > 0.0))
    return -1.0;
  return std::clamp(-std::sqrt(rr / vv), -step_max, -1.0);
}

HazardSurface extrapolate(const HazardSurface& x, const HazardSurface& f1, const HazardSurface& f2, double alpha)
{
  HazardSurface out = f2;
  for (int t = 0; t < x.days(); ++t)
    for (int w = 0; w <= x.max_duration(); ++w)
      if (defined_in_all(x, f1, f2, t, w)) {
        const double r = f1.values(t, w) - x.values(t, w);
        const double v = f2.values(t, w) - 2.0 * f1.values(t, w) + x.values(t, w);
        out.values(t, w) = std::clamp(x.values(t, w) - 2.0 * alpha * r + alpha * alpha * v, 0.0, 1.0);
      }
  return out;
}

} // namespace

MissingLinkFit fit_missing_link(const DailyPanel& panel, const FitOptions& opts)
{
  const TimeGrid tg = TimeGrid::for_days(panel.days(), opts.max_duration);
  HazardSurface current = opts.initial ? *opts.initial : initial_guess(panel, tg);
  if (current.days() != panel.days() || current.max_duration() != tg.max_duration)
    throw ValidationError("initial hazard surface does not match the panel grid");

  MissingLinkFit fit;
  if (opts.bandwidths) {
    opts.bandwidths->validate();
    fit.diagnostics.bandwidths = *opts.bandwidths;
  } else {
    const auto start = impute(panel, current).event_grid(panel);
    fit.cv = select_bandwidths(start, opts.candidates, opts.cv);
    fit.diagnostics.bandwidths = fit.cv->chosen;
  }
  const Bandwidths b = fit.diagnostics.bandwidths;
  current.bandwidths = b;

  const int budget = std::max(1, opts.max_iterations);
  // One map evaluation F(x); returns true once converged or out of budget.
  auto step = [&](const HazardSurface& x, HazardSurface& fx) {
    ImputedGrid grid = impute(panel, x);
    const int r = ++fit.diagnostics.iterations;
    grid.iteration = r;
    fx = estimate_hazard(grid.event_grid(panel), Cause::all, b);
    const double change = sup_relative_change(fx, x, opts.relative_floor);
    fit.diagnostics.sup_rel_change.push_back(change);
    fit.diagnostics.flagged_rows = grid.flagged_rows;
    fit.grid = std::move(grid);
    if (change < opts.tolerance)
      fit.diagnostics.converged = true;
    return fit.diagnostics.converged || r >= budget;
  };

  if (opts.acceleration == Acceleration::none) {
    HazardSurface next;
    while (!step(current, next))
      current = std::move(next);
    fit.hazard = std::move(next);
    return fit;
  }

  double step_max = 1.0;
  HazardSurface f1, f2, f3;
  for (;;) {
    if (step(current, f1)) {
      fit.hazard = std::move(f1);
      break;
    }
    if (step(f1, f2)) {
      fit.hazard = std::move(f2);
      break;
    }
    const double alpha = squarem_alpha(current, f1, f2, step_max);
    if (alpha <= -step_max)
      step_max *= 4.0;
    HazardSurface x = extrapolate(current, f1, f2, alpha);
    if (step(x, f3)) {
      fit.hazard = std::move(f3);
      break;
    }
    current = std::move(f3);
  }
  return fit;
}

CauseSurfaces split_causes(const DailyPanel& panel,
                           const HazardSurface& mu,
                           const ImputedGrid& grid)
{
  check_shape(panel, mu);
  const EventGrid eg = grid.event_grid(panel);
  const LocalLinearEstimator est(eg.exposure, mu.bandwidths);
  const Matrix num3 = est.numerator(eg.recoveries);
  const Matrix num4 = est.numerator(eg.deaths);

  CauseSurfaces out{ mu, mu, mu };
  out.all.cause = Cause::all;
  out.recovery.cause = Cause::recovery;
  out.death.cause = Cause::death;
  for (int t = 0; t < mu.days(); ++t)
    for (int w = 0; w <= mu.max_duration(); ++w) {
      if (!mu.mask(t, w))
        continue;
      const auto [r, d] = reconcile_causes(mu.values(t, w), num3(t, w), num4(t, w));
      out.recovery.values(t, w) = r;
      out.death.values(t, w) = d;
    }
  return out;
}

} // namespace pandemon
