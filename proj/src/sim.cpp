#include "pandemon/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

namespace pandemon {

double beta_density(double x, double a, double b)
{
  if (!(x > 0.0) || !(x < 1.0))
    return 0.0;
  const double log_beta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta);
}

void TrueModel::validate() const
{
  if (days < 2 || max_duration < 1 || max_duration > days - 1)
    throw ValidationError("simulation needs days >= 2 and 1 <= W <= days - 1");
  if (static_cast<int>(arrival_intensity.size()) != days)
    throw ValidationError("arrival intensity must have one rate per day");
  for (double r : arrival_intensity)
    if (!(r >= 0.0))
      throw ValidationError("arrival intensity must be nonnegative");
  if (!calendar || !death_duration || !recovery_duration)
    throw ValidationError("hazard factors are not set");
  if (!(hazard_scale >= 0.0))
    throw ValidationError("hazard scale must be nonnegative");
  for (int t = 0; t < days; ++t)
    for (int w = 0; w <= t; ++w)
      if (hazard(t, w, Cause::all) > 1.0)
        throw ValidationError("daily exit probability exceeds 1 at day " + std::to_string(t) +
                              ", duration " + std::to_string(w));
}

double TrueModel::hazard(int t, int w, Cause cause) const
{
  if (t < 0 || t >= days || w < 0 || w >= days)
    return 0.0;
  double duration = 0.0;
  switch (cause) {
    case Cause::death:
      duration = death_duration(w);
      break;
    case Cause::recovery:
      duration = recovery_duration(w);
      break;
    case Cause::all:
      duration = death_duration(w) + recovery_duration(w);
      break;
  }
  return calendar(t) * duration * hazard_scale;
}

double TrueModel::expected_admissions() const
{
  return std::accumulate(arrival_intensity.begin(), arrival_intensity.end(), 0.0);
}

TrueModel TrueModel::with_expected_admissions(double n) const
{
  TrueModel m = *this;
  const double total = expected_admissions();
  if (!(total > 0.0))
    throw ValidationError("cannot rescale an all-zero arrival intensity");
  for (double& r : m.arrival_intensity)
    r *= n / total;
  return m;
}

HazardSurface TrueModel::true_surface(Cause cause) const
{
  HazardSurface s = HazardSurface::constant(days, max_duration, 0.0, cause);
  for (int t = 0; t < days; ++t)
    for (int w = 0; w <= std::min(t, max_duration); ++w)
      s.values(t, w) = hazard(t, w, cause);
  return s;
}

TrueModel beta_design(int days,
                      int max_duration,
                      double expected_admissions,
                      double mean_hazard,
                      bool swap_causes)
{
  const double T = days;
  auto x = [T](int day) { return (day + 0.5) / T; };
  auto alpha1 = [=](int day) { return beta_density(x(day), 2, 2) / T; };
  auto alpha2 = [=](int day) {
    return 0.6 / T *
           (beta_density(x(day), 0.5, 0.5) + beta_density(x(day), 2, 4) + beta_density(x(day), 4, 2));
  };

  TrueModel m;
  m.days = days;
  m.max_duration = max_duration;
  m.calendar = [=](int t) { return alpha1(t) + alpha2(t); };
  m.death_duration = swap_causes ? std::function<double(int)>(alpha2) : alpha1;
  m.recovery_duration = swap_causes ? std::function<double(int)>(alpha1) : alpha2;

  // admissions: one epidemic wave on top of a baseline
  m.arrival_intensity.resize(days);
  for (int t = 0; t < days; ++t)
    m.arrival_intensity[t] = 0.25 + beta_density(x(t), 2, 3);

  double sum = 0.0;
  std::size_t n = 0;
  for (int t = 0; t < days; ++t)
    for (int w = 0; w <= std::min(t, max_duration); ++w, ++n)
      sum += m.calendar(t) * (alpha1(w) + alpha2(w));
  m.hazard_scale = mean_hazard * static_cast<double>(n) / sum;

  m = m.with_expected_admissions(expected_admissions);
  m.validate();
  return m;
}

TrueModel stationary_design(int days,
                            int max_duration,
                            double expected_admissions,
                            double recovery_hazard,
                            double death_hazard,
                            double outside_ratio)
{
  TrueModel m;
  m.days = days;
  m.max_duration = max_duration;
  m.calendar = [](int) { return 1.0; };
  m.death_duration = [death_hazard](int) { return death_hazard; };
  m.recovery_duration = [recovery_hazard](int) { return recovery_hazard; };
  m.outside_ratio = [outside_ratio](int) { return outside_ratio; };
  m.arrival_intensity.assign(days, expected_admissions / days);
  m.validate();
  return m;
}

std::vector<double> arrival_intensity_from_panel(const DailyPanel& panel)
{
  return { panel.admissions().begin(), panel.admissions().end() };
}

std::uint64_t substream_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b)
{
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

namespace {

std::vector<Count> draw_arrivals(const TrueModel& model, std::mt19937_64& rng)
{
  std::vector<Count> n2(model.days);
  for (int t = 0; t < model.days; ++t) {
    const double rate = model.arrival_intensity[t];
    n2[t] = rate > 0.0 ? std::poisson_distribution<Count>(rate)(rng) : 0;
  }
  return n2;
}

} // namespace

std::vector<Count> simulate_arrivals(const TrueModel& model, std::uint64_t seed)
{
  model.validate();
  std::mt19937_64 rng(seed);
  return draw_arrivals(model, rng);
}

SimulatedData simulate_cohorts(const TrueModel& model, std::uint64_t seed)
{
  model.validate();
  std::mt19937_64 rng(seed);
  const int T = model.days;
  const auto n2 = draw_arrivals(model, rng);
  CountSeries n3(T, 0), n4(T, 0), n_out(T, 0);
  std::vector<StayRecord> records;

  for (int v = 0; v < T; ++v) {
    Count present = n2[v];
    for (int u = v; u < T && present > 0; ++u) {
      const int w = u - v;
      const double p = model.hazard(u, w, Cause::all);
      if (!(p > 0.0))
        continue;
      const Count exits = std::binomial_distribution<Count>(present, std::min(1.0, p))(rng);
      if (exits == 0)
        continue;
      const double death_share = model.hazard(u, w, Cause::death) / p;
      const Count deaths = std::binomial_distribution<Count>(exits, std::clamp(death_share, 0.0, 1.0))(rng);
      if (deaths > 0)
        records.push_back({ v, u, Cause::death, deaths });
      if (exits > deaths)
        records.push_back({ v, u, Cause::recovery, exits - deaths });
      n4[u] += deaths;
      n3[u] += exits - deaths;
      present -= exits;
    }
    if (present > 0)
      records.push_back({ v, std::nullopt, Cause::recovery, present });
  }
  for (int u = 0; u < T; ++u) {
    const double rate = model.outside_ratio(u) * static_cast<double>(n4[u]);
    n_out[u] = rate > 0.0 ? std::poisson_distribution<Count>(rate)(rng) : 0;
  }
  DailyPanel panel(model.start, n2, std::move(n3), std::move(n4), std::nullopt, std::move(n_out), "simulated");
  return { std::move(records), std::move(panel) };
}

IseResult ise(const HazardSurface& est, const TrueModel& model, Cause cause)
{
  IseResult r;
  for (int t = 0; t < est.days(); ++t)
    for (int w = 0; w <= std::min(t, est.max_duration()); ++w) {
      if (!est.mask(t, w)) {
        ++r.masked;
        continue;
      }
      const double d = est.values(t, w) - model.hazard(t, w, cause);
      r.ise += d * d;
      ++r.cells;
    }
  if (r.cells > 0)
    r.ise /= static_cast<double>(r.cells);
  return r;
}

const StudyCell& StudyReport::cell(const std::string& method, Cause cause, int size) const
{
  for (const auto& c : cells)
    if (c.method == method && c.cause == cause && c.size == size)
      return c;
  throw std::out_of_range("no study cell " + method + "/" + to_string(cause) + "/" + std::to_string(size));
}

namespace {

struct ReplicateOutcome
{
  bool ok = false;
  // [full death, full recovery, partial death, partial recovery]
  std::array<HazardSurface, 4> surfaces;
  bool converged = false;
  int iterations = 0;
};

ReplicateOutcome run_replicate(const TrueModel& model, const StudyOptions& opts, std::uint64_t seed)
{
  ReplicateOutcome out;
  const auto data = simulate_cohorts(model, seed);
  const TimeGrid tg{ model.max_duration };

  const auto full_grid = build_event_grid_full(data.records, model.days, tg);
  const Bandwidths b_full =
    opts.bandwidths ? *opts.bandwidths : select_bandwidths(full_grid, opts.candidates).chosen;
  const auto full = estimate_cause_hazards(full_grid, b_full);

  FitOptions fo;
  fo.bandwidths = opts.bandwidths;
  fo.candidates = opts.candidates;
  fo.max_duration = model.max_duration;
  const auto fit = fit_missing_link(data.panel, fo);
  const auto partial = split_causes(data.panel, fit.hazard, fit.grid);

  out.surfaces = { full.death, full.recovery, partial.death, partial.recovery };
  out.converged = fit.diagnostics.converged;
  out.iterations = fit.diagnostics.iterations;
  out.ok = true;
  return out;
}

template <class F>
void parallel_for(int n, unsigned threads, F&& body)
{
  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(1, n)));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i)
      body(i);
    return;
  }
  std::atomic<int> next{ 0 };
  std::vector<std::jthread> pool;
  for (unsigned k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++)
        body(i);
    });
}

StudyCell summarise(const std::vector<ReplicateOutcome>& reps,
                    std::size_t slot,
                    const TrueModel& model,
                    Cause cause,
                    int failures)
{
  StudyCell c;
  c.cause = cause;
  c.failures = failures;
  const int total = static_cast<int>(reps.size());
  if (failures * 5 > total) {
    c.aborted = true;
    c.mise = c.isb = c.miv = c.median_ise = std::numeric_limits<double>::quiet_NaN();
    return c;
  }
  std::vector<const HazardSurface*> s;
  for (const auto& r : reps)
    if (r.ok)
      s.push_back(&r.surfaces[slot]);
  c.used = static_cast<int>(s.size());
  if (s.empty()) {
    c.aborted = true;
    return c;
  }

  // cells defined in every replicate, feasible triangle only
  const int T = s.front()->days(), W = s.front()->max_duration();
  std::vector<std::pair<int, int>> common;
  for (int t = 0; t < T; ++t)
    for (int w = 0; w <= std::min(t, W); ++w)
      if (std::all_of(s.begin(), s.end(), [&](const HazardSurface* x) { return x->mask(t, w); }))
        common.emplace_back(t, w);
  c.cells = common.size();
  if (common.empty()) {
    c.aborted = true;
    return c;
  }

  const double R = static_cast<double>(s.size());
  const double n = static_cast<double>(common.size());
  std::vector<double> ise_r(s.size(), 0.0);
  double isb = 0.0, miv = 0.0;
  for (const auto& [t, w] : common) {
    const double truth = model.hazard(t, w, cause);
    double mean = 0.0;
    for (const auto* x : s)
      mean += x->values(t, w);
    mean /= R;
    double var = 0.0;
    for (std::size_t r = 0; r < s.size(); ++r) {
      const double v = s[r]->values(t, w);
      var += (v - mean) * (v - mean);
      ise_r[r] += (v - truth) * (v - truth);
    }
    isb += (mean - truth) * (mean - truth);
    miv += var / R;
  }
  for (double& e : ise_r)
    e /= n;
  c.isb = isb / n;
  c.miv = miv / n;
  c.mise = std::accumulate(ise_r.begin(), ise_r.end(), 0.0) / R;
  std::sort(ise_r.begin(), ise_r.end());
  const auto m = ise_r.size();
  c.median_ise = m % 2 ? ise_r[m / 2] : 0.5 * (ise_r[m / 2 - 1] + ise_r[m / 2]);
  return c;
}

} // namespace

StudyReport run_study(const TrueModel& model, const StudyOptions& opts)
{
  if (opts.replicates < 2)
    throw ValidationError("a study needs at least two replicates");
  if (opts.sizes.empty())
    throw ValidationError("a study needs at least one sample size");
  StudyReport report;
  report.replicates = opts.replicates;
  report.seed = opts.seed;

  for (std::size_t k = 0; k < opts.sizes.size(); ++k) {
    const int size = opts.sizes[k];
    const TrueModel m = model.with_expected_admissions(size);
    std::vector<ReplicateOutcome> reps(opts.replicates);
    parallel_for(opts.replicates, opts.threads, [&](int r) {
      const auto seed = substream_seed(opts.seed, k, opts.identical_replicates ? 0 : r + 1);
      try {
        reps[r] = run_replicate(m, opts, seed);
      } catch (const std::exception&) {
        reps[r].ok = false;
      }
    });
    const int failures = static_cast<int>(std::count_if(reps.begin(), reps.end(), [](const auto& r) { return !r.ok; }));

    StudyConvergence conv{ size, opts.replicates - failures, 0, 0.0 };
    for (const auto& r : reps)
      if (r.ok) {
        conv.converged += r.converged ? 1 : 0;
        conv.mean_iterations += r.iterations;
      }
    if (conv.replicates > 0)
      conv.mean_iterations /= conv.replicates;
    report.convergence.push_back(conv);

    const std::array<std::pair<std::string, Cause>, 4> slots{ { { "full", Cause::death },
                                                                { "full", Cause::recovery },
                                                                { "partial", Cause::death },
                                                                { "partial", Cause::recovery } } };
    for (std::size_t slot = 0; slot < slots.size(); ++slot) {
      auto c = summarise(reps, slot, m, slots[slot].second, failures);
      c.method = slots[slot].first;
      c.size = size;
      report.cells.push_back(c);
    }
  }
  return report;
}

void write_study_csv(const StudyReport& r, std::ostream& out)
{
  out << "N,criterion,full_deaths,full_recoveries,partial_deaths,partial_recoveries\n";
  std::vector<int> sizes;
  for (const auto& c : r.cells)
    if (std::find(sizes.begin(), sizes.end(), c.size) == sizes.end())
      sizes.push_back(c.size);
  for (int n : sizes) {
    for (const std::string crit : { "MISE", "ISB", "MIV" }) {
      out << n << ',' << crit;
      for (const auto& [method, cause] : { std::pair{ "full", Cause::death },
                                           std::pair{ "full", Cause::recovery },
                                           std::pair{ "partial", Cause::death },
                                           std::pair{ "partial", Cause::recovery } }) {
        const auto& c = r.cell(method, cause, n);
        const double v = crit == "MISE" ? c.mise : crit == "ISB" ? c.isb : c.miv;
        out << ',' << format_double(v);
      }
      out << '\n';
    }
  }
}

nlohmann::json study_to_json(const StudyReport& r)
{
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({ { "method", c.method },
                      { "cause", to_string(c.cause) },
                      { "N", c.size },
                      { "MISE", c.mise },
                      { "ISB", c.isb },
                      { "MIV", c.miv },
                      { "median_ISE", c.median_ise },
                      { "cells", c.cells },
                      { "replicates_used", c.used },
                      { "failures", c.failures },
                      { "aborted", c.aborted } });
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : r.convergence)
    conv.push_back({ { "N", c.size },
                     { "replicates", c.replicates },
                     { "converged", c.converged },
                     { "mean_iterations", c.mean_iterations } });
  return { { "replicates", r.replicates }, { "seed", r.seed }, { "cells", cells }, { "convergence", conv } };
}

} // namespace pandemon
