#include "pandemon/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace pandemon {

namespace {

std::vector<double> day_axis(int n)
{
  std::vector<double> x(n);
  std::iota(x.begin(), x.end(), 0.0);
  return x;
}

std::vector<double> as_doubles(const CountSeries& s)
{
  return { s.begin(), s.end() };
}

} // namespace

RatioCurve estimate_ratio(const DailyPanel& panel, double b_num, double b_den, double floor)
{
  if (!panel.has_deaths_out())
    throw ValidationError("ratio requires out-of-hospital deaths");
  if (panel.days() < 2)
    throw ValidationError("ratio requires at least two days");
  const auto x = day_axis(panel.days());
  const auto out = as_doubles(*panel.deaths_out());
  const auto in = as_doubles(panel.deaths_in());

  RatioCurve r;
  r.bandwidth_out = b_num;
  r.bandwidth_in = b_den;
  r.smoothed_out = local_linear_regress(x, out, b_num, x).values;
  r.smoothed_in = local_linear_regress(x, in, b_den, x).values;
  r.g_hat.resize(x.size());
  r.floor_applied.assign(x.size(), false);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double den = r.smoothed_in[t];
    if (den < floor) {
      den = floor;
      r.floor_applied[t] = true;
    }
    r.g_hat[t] = std::max(0.0, r.smoothed_out[t]) / den;
  }
  return r;
}

double extrapolate_ratio(double g_T, double c2, int h, int s)
{
  return g_T * (1.0 + (c2 - 1.0) * static_cast<double>(s) / static_cast<double>(h));
}

void ForecastScenario::validate() const
{
  if (horizon < 1)
    throw ValidationError("forecast horizon must be >= 1 day");
  if (!(c1 > 0.0) || !(c2 > 0.0))
    throw ValidationError("C1 and C2 must be positive");
  if (cutoff < 0)
    throw ValidationError("cutoff must be a valid day index");
}

std::vector<double> forecast_admissions(const DailyPanel& panel,
                                        const ForecastScenario& scenario,
                                        std::optional<std::span<const double>> override_path,
                                        double bandwidth)
{
  scenario.validate();
  if (override_path) {
    if (static_cast<int>(override_path->size()) != scenario.horizon)
      throw ValidationError("admissions override must have one value per forecast day");
    for (double a : *override_path)
      if (!(a >= 0.0))
        throw ValidationError("admissions override must be nonnegative");
    return { override_path->begin(), override_path->end() };
  }
  if (scenario.cutoff >= panel.days())
    throw ValidationError("cutoff beyond the observed panel");
  const int n = scenario.cutoff + 1;
  const auto x = day_axis(n);
  const auto& n2 = panel.admissions();
  const std::vector<double> y(n2.begin(), n2.begin() + n);
  const double at = static_cast<double>(scenario.cutoff);
  const double level = std::max(
    0.0, n >= 2 ? local_linear_regress(x, y, bandwidth, std::span(&at, 1)).values[0] : y[0]);

  std::vector<double> path(scenario.horizon);
  for (int s = 1; s <= scenario.horizon; ++s)
    path[s - 1] = std::max(0.0, extrapolate_ratio(level, scenario.c1, scenario.horizon, s));
  return path;
}

HospitalModel HospitalModel::from_fit(const MissingLinkFit& fit, const CauseSurfaces& causes)
{
  HospitalModel m;
  m.surfaces = causes;
  const auto& rem = fit.grid.remaining;
  const auto last = rem.rows() - 1;
  m.remaining.assign(rem.row(last).data(), rem.row(last).data() + rem.cols());
  return m;
}

std::vector<double> forecast_in_hospital_deaths(const HospitalModel& model,
                                                const ForecastScenario& scenario,
                                                std::span<const double> admissions)
{
  scenario.validate();
  if (static_cast<int>(admissions.size()) != scenario.horizon)
    throw ValidationError("admissions path length must equal the horizon");
  const auto& all = model.surfaces.all;
  const auto& death = model.surfaces.death;
  const int W = all.max_duration();
  const int T = all.days() - 1;
  if (static_cast<int>(model.remaining.size()) != W + 1)
    throw ValidationError("remaining occupancy does not match the surface width");

  std::vector<double> mu(W + 1), mu_death(W + 1);
  for (int w = 0; w <= W; ++w) {
    mu[w] = all.at(T, w);
    mu_death[w] = death.at(T, w);
  }

  std::vector<double> state = model.remaining;
  std::vector<double> deaths(scenario.horizon);
  for (int s = 0; s < scenario.horizon; ++s) {
    // advance durations by one day; column W keeps the long stays
    state[W] += state[W - 1];
    for (int w = W - 1; w >= 1; --w)
      state[w] = state[w - 1];
    state[0] = admissions[s];

    double d = 0.0;
    for (int w = 0; w <= W; ++w) {
      d += state[w] * mu_death[w];
      state[w] *= 1.0 - mu[w];
    }
    deaths[s] = d;
  }
  return deaths;
}

ForecastResult forecast_total_deaths(std::span<const double> deaths_in,
                                     const RatioCurve& ratio,
                                     const ForecastScenario& scenario)
{
  scenario.validate();
  if (static_cast<int>(deaths_in.size()) != scenario.horizon)
    throw ValidationError("death path length must equal the horizon");
  if (scenario.cutoff >= static_cast<int>(ratio.g_hat.size()))
    throw ValidationError("cutoff beyond the ratio curve");
  const double g_T = ratio.g_hat[scenario.cutoff];
  ForecastResult r;
  r.scenario = scenario;
  r.deaths_in.assign(deaths_in.begin(), deaths_in.end());
  for (int s = 1; s <= scenario.horizon; ++s) {
    const double g = extrapolate_ratio(g_T, scenario.c2, scenario.horizon, s);
    const double inside = deaths_in[s - 1];
    r.g_tilde.push_back(g);
    r.deaths_out.push_back(inside * g);
    r.deaths_total.push_back(inside * (1.0 + g));
  }
  return r;
}

ForecastResult run_forecast(const DailyPanel& panel,
                            const HospitalModel& model,
                            const RatioCurve& ratio,
                            ForecastScenario scenario,
                            std::optional<std::span<const double>> admissions_override)
{
  scenario.cutoff = model.cutoff();
  if (scenario.cutoff != panel.days() - 1)
    throw ValidationError("model and panel end on different days");
  const auto admissions = forecast_admissions(panel, scenario, admissions_override);
  const auto deaths = forecast_in_hospital_deaths(model, scenario, admissions);
  auto r = forecast_total_deaths(deaths, ratio, scenario);
  r.admissions = admissions;
  r.first_day = panel.date_at(scenario.cutoff) + std::chrono::days{ 1 };
  return r;
}

nlohmann::json forecast_to_json(const ForecastResult& r)
{
  nlohmann::json dates = nlohmann::json::array();
  for (int s = 0; s < r.scenario.horizon; ++s)
    dates.push_back(format_iso_date(r.first_day + std::chrono::days{ s }));
  return { { "scenario",
             { { "T", r.scenario.cutoff },
               { "h", r.scenario.horizon },
               { "c1", r.scenario.c1 },
               { "c2", r.scenario.c2 } } },
           { "dates", dates },
           { "series",
             { { "admissions", r.admissions },
               { "deaths_in", r.deaths_in },
               { "g_tilde", r.g_tilde },
               { "deaths_out", r.deaths_out },
               { "deaths_total", r.deaths_total } } } };
}

void write_forecast_csv(const ForecastResult& r, std::ostream& out)
{
  out << "date,admissions,deaths_in,g_tilde,deaths_out,deaths_total\n";
  for (int s = 0; s < r.scenario.horizon; ++s) {
    out << format_iso_date(r.first_day + std::chrono::days{ s });
    for (const auto* series :
         { &r.admissions, &r.deaths_in, &r.g_tilde, &r.deaths_out, &r.deaths_total })
      out << ',' << (s < static_cast<int>(series->size()) ? format_double((*series)[s]) : "");
    out << '\n';
  }
}

std::vector<double> default_c2_grid()
{
  std::vector<double> g;
  for (int i = 0; i <= 75; ++i)
    g.push_back((25.0 + 5.0 * i) / 100.0);
  return g;
}

C2Search optimize_c2(std::span<const double> deaths_in,
                     double g_T,
                     std::span<const double> observed_totals,
                     std::span<const double> c2_grid,
                     bool cumulative)
{
  if (c2_grid.empty())
    throw ValidationError("empty C2 grid");
  if (deaths_in.size() != observed_totals.size() || deaths_in.empty())
    throw ValidationError("forecast and observed totals must cover the same horizon");
  const int h = static_cast<int>(deaths_in.size());
  C2Search out;
  out.grid.assign(c2_grid.begin(), c2_grid.end());
  std::size_t best = 0;
  for (std::size_t i = 0; i < c2_grid.size(); ++i) {
    double sse = 0.0, run_hat = 0.0, run_obs = 0.0;
    for (int s = 1; s <= h; ++s) {
      const double total =
        deaths_in[s - 1] * (1.0 + extrapolate_ratio(g_T, c2_grid[i], h, s));
      run_hat += total;
      run_obs += observed_totals[s - 1];
      const double e = cumulative ? run_hat - run_obs : total - observed_totals[s - 1];
      sse += e * e;
    }
    out.sse.push_back(sse);
    if (sse < out.sse[best])
      best = i;
  }
  out.c2_star = out.grid[best];
  return out;
}

BacktestResult backtest(const DailyPanel& panel,
                        int cutoff,
                        int horizon,
                        std::span<const double> c2_grid,
                        const FitOptions& fit_options,
                        double c1,
                        bool cumulative)
{
  if (!panel.has_deaths_out())
    throw ValidationError("backtest requires out-of-hospital deaths");
  if (cutoff < 1 || horizon < 1 || cutoff + horizon >= panel.days())
    throw ValidationError("cutoff + horizon must fall inside the observed panel");
  const auto observed = panel.truncated(cutoff + 1);
  const auto fit = fit_missing_link(observed, fit_options);
  const auto causes = split_causes(observed, fit.hazard, fit.grid);
  const auto model = HospitalModel::from_fit(fit, causes);
  const auto ratio = estimate_ratio(observed);

  ForecastScenario scenario{ cutoff, horizon, c1, 1.0 };
  const auto base = run_forecast(observed, model, ratio, scenario);

  BacktestResult r;
  for (int s = 1; s <= horizon; ++s)
    r.observed_totals.push_back(static_cast<double>(panel.deaths_in()[cutoff + s] +
                                                    (*panel.deaths_out())[cutoff + s]));
  r.search = optimize_c2(base.deaths_in, ratio.g_hat[cutoff], r.observed_totals, c2_grid, cumulative);
  scenario.c2 = r.search.c2_star;
  r.forecast_at_best = forecast_total_deaths(base.deaths_in, ratio, scenario);
  r.forecast_at_best.admissions = base.admissions;
  r.forecast_at_best.first_day = base.first_day;
  return r;
}

namespace {

int clamp_day(const HazardSurface& mu, int t)
{
  return std::min(t, mu.days() - 1);
}

} // namespace

std::optional<int> median_stay(const HazardSurface& mu, int s)
{
  if (s < 0 || s >= mu.days())
    throw ValidationError("admission day outside the surface");
  double surv = 1.0;
  for (int d = 0; d <= mu.max_duration(); ++d) {
    surv *= 1.0 - mu.at(clamp_day(mu, s + d), d);
    if (1.0 - surv >= 0.5)
      return d;
  }
  return std::nullopt;
}

ExitProbability exit_probability(const HazardSurface& recovery,
                                 const HazardSurface& death,
                                 int s,
                                 int d,
                                 Cause cause)
{
  if (s < 0 || s >= recovery.days() || recovery.days() != death.days() ||
      recovery.max_duration() != death.max_duration())
    throw ValidationError("exit probability needs matching surfaces covering the admission day");
  if (d < 0)
    throw ValidationError("days already in hospital must be nonnegative");
  const int W = recovery.max_duration();
  ExitProbability p;
  double surv = 1.0;
  for (int w = std::min(d, W); w <= W; ++w) {
    const int t = clamp_day(recovery, s + w);
    const double r = recovery.at(t, w);
    const double x = death.at(t, w);
    const double chosen = cause == Cause::recovery ? r : cause == Cause::death ? x : r + x;
    p.probability += surv * chosen;
    surv *= 1.0 - (r + x);
  }
  p.remainder = surv;
  return p;
}

} // namespace pandemon
