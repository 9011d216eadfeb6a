#include "helpers.hpp"

#include "pandemon/sim.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace pandemon;

namespace {

// Closed forms of the four Beta densities used by the design.
double b22(double x) { return 6.0 * x * (1.0 - x); }
double b55(double x) { return 1.0 / (std::numbers::pi * std::sqrt(x * (1.0 - x))); }
double b24(double x) { return 20.0 * x * std::pow(1.0 - x, 3); }
double b42(double x) { return 20.0 * std::pow(x, 3) * (1.0 - x); }

StudyOptions small_study()
{
  StudyOptions o;
  o.sizes = { 3000 };
  o.replicates = 3;
  o.seed = 77;
  o.bandwidths = Bandwidths{ 5, 5 };
  o.threads = 1;
  return o;
}

} // namespace

TEST_SUITE("sim")
{
  TEST_CASE("beta density")
  {
    CHECK(beta_density(0.5, 2, 2) == doctest::Approx(1.5).epsilon(1e-14));
    CHECK(beta_density(0.0, 2, 2) == 0.0);
    CHECK(beta_density(1.2, 2, 2) == 0.0);
    for (double x : { 0.01, 0.3, 0.77, 0.99 }) {
      CHECK(beta_density(x, 0.5, 0.5) == doctest::Approx(b55(x)).epsilon(1e-12));
      CHECK(beta_density(x, 2, 4) == doctest::Approx(b24(x)).epsilon(1e-12));
      CHECK(beta_density(x, 4, 2) == doctest::Approx(b42(x)).epsilon(1e-12));
    }
  }

  TEST_CASE("true hazard matches the closed-form product")
  {
    const int T = 120;
    const auto m = beta_design(T, 60, 1e4);
    const double scale = m.hazard_scale;
    auto a1 = [&](int d) { return b22((d + 0.5) / T) / T; };
    auto a2 = [&](int d) { return 0.6 / T * (b55((d + 0.5) / T) + b24((d + 0.5) / T) + b42((d + 0.5) / T)); };
    double mean = 0.0;
    int cells = 0;
    for (int t = 0; t < T; ++t)
      for (int w = 0; w <= std::min(t, 60); ++w) {
        const double alpha = a1(t) + a2(t);
        CHECK(m.hazard(t, w, Cause::death) == doctest::Approx(alpha * a1(w) * scale).epsilon(1e-12));
        CHECK(m.hazard(t, w, Cause::recovery) == doctest::Approx(alpha * a2(w) * scale).epsilon(1e-12));
        mean += m.hazard(t, w, Cause::all);
        ++cells;
      }
    CHECK(mean / cells == doctest::Approx(0.08).epsilon(1e-12));
    CHECK(m.hazard(T, 3, Cause::all) == 0.0);
    CHECK(m.hazard(5, -1, Cause::all) == 0.0);
    CHECK(m.expected_admissions() == doctest::Approx(1e4));

    const auto swapped = beta_design(T, 60, 1e4, 0.08, true);
    CHECK(swapped.hazard(50, 10, Cause::death) == doctest::Approx(m.hazard(50, 10, Cause::recovery)));
  }

  TEST_CASE("models with exit probabilities above one are rejected")
  {
    CHECK_THROWS_AS(beta_design(120, 60, 1e4, 0.9), ValidationError);
    CHECK_THROWS_AS(stationary_design(50, 30, 100, 0.7, 0.5, 0.5), ValidationError);
  }

  TEST_CASE("arrivals")
  {
    auto m = stationary_design(200, 30, 0.0, 0.05, 0.01, 0.5);
    for (auto n : simulate_arrivals(m, 1))
      CHECK(n == 0);

    m = stationary_design(4000, 30, 4000 * 12.0, 0.05, 0.01, 0.5);
    const auto a = simulate_arrivals(m, 2);
    double mean = 0.0;
    for (auto n : a)
      mean += static_cast<double>(n);
    mean /= static_cast<double>(a.size());
    CHECK(std::abs(mean - 12.0) < 3.0 * std::sqrt(12.0 / 4000.0));
    CHECK(simulate_arrivals(m, 2) == a);
    CHECK(simulate_arrivals(m, 3) != a);
  }

  TEST_CASE("zero hazard scale keeps everybody in hospital")
  {
    auto m = beta_design(60, 30, 2000);
    m.hazard_scale = 0.0;
    const auto d = simulate_cohorts(m, 4);
    for (int u = 0; u < 60; ++u) {
      CHECK(d.panel.discharges()[u] == 0);
      CHECK(d.panel.deaths_in()[u] == 0);
    }
    for (const auto& r : d.records)
      CHECK_FALSE(r.exit.has_value());
  }

  TEST_CASE("records aggregate to the panel")
  {
    const auto d = simulate_cohorts(beta_design(90, 45, 5000), 8);
    CountSeries n2(90, 0), n3(90, 0), n4(90, 0);
    for (const auto& r : d.records) {
      n2[r.admit] += r.count;
      if (r.exit)
        (r.cause == Cause::death ? n4 : n3)[*r.exit] += r.count;
    }
    CHECK(n2 == d.panel.admissions());
    CHECK(n3 == d.panel.discharges());
    CHECK(n4 == d.panel.deaths_in());
    CHECK(d.panel.has_deaths_out());
  }

  TEST_CASE("empirical exit frequencies match the true hazard")
  {
    const auto m = beta_design(120, 60, 1e5);
    const auto d = simulate_cohorts(m, 10);
    const auto g = build_event_grid_full(d.records, 120, TimeGrid{ 119 });
    double z2 = 0.0;
    int cells = 0, extreme = 0;
    for (int t = 0; t < 120; ++t)
      for (int w = 0; w <= t; ++w) {
        const double e = g.exposure(t, w);
        if (e < 200.0)
          continue;
        for (Cause c : { Cause::death, Cause::recovery }) {
          const double p = m.hazard(t, w, c);
          const double o = g.occurrences(c)(t, w);
          const double z = (o - e * p) / std::sqrt(e * p * (1.0 - p));
          z2 += z * z;
          extreme += std::abs(z) > 4.5;
          ++cells;
        }
      }
    REQUIRE(cells > 1000);
    // sum of z^2 behaves like chi-square with `cells` degrees of freedom
    CHECK(std::abs(z2 / cells - 1.0) < 0.15);
    CHECK(extreme <= 1);
  }

  TEST_CASE("ise")
  {
    const auto m = beta_design(40, 20, 1000);
    const auto truth = m.true_surface(Cause::death);
    CHECK(ise(truth, m, Cause::death).ise == 0.0);
    auto shifted = truth;
    shifted.values = shifted.mask.select(shifted.values + 0.003, 0.0);
    const auto r = ise(shifted, m, Cause::death);
    CHECK(r.ise == doctest::Approx(0.003 * 0.003).epsilon(1e-9));

    // brute-force double loop with a few masked cells
    auto est = truth;
    testing::Lcg rng{ 5 };
    double total = 0.0;
    std::size_t n = 0, masked = 0;
    for (int t = 0; t < 40; ++t)
      for (int w = 0; w <= std::min(t, 20); ++w) {
        est.values(t, w) += 0.01 * (rng.uniform() - 0.5);
        if (rng.uniform() < 0.1) {
          est.mask(t, w) = false;
          ++masked;
          continue;
        }
        const double diff = est.values(t, w) - m.hazard(t, w, Cause::death);
        total += diff * diff;
        ++n;
      }
    const auto e = ise(est, m, Cause::death);
    CHECK(e.cells == n);
    CHECK(e.masked == masked);
    CHECK(std::abs(e.ise - total / static_cast<double>(n)) < 1e-12 * (total / static_cast<double>(n)) + 1e-18);
  }

  TEST_CASE("substreams")
  {
    CHECK(substream_seed(1, 2, 3) == substream_seed(1, 2, 3));
    CHECK(substream_seed(1, 2, 3) != substream_seed(1, 3, 2));
    CHECK(substream_seed(1, 0, 0) != substream_seed(2, 0, 0));
  }

  TEST_CASE("study with identical replicates has no variance")
  {
    auto o = small_study();
    o.replicates = 2;
    o.identical_replicates = true;
    const auto r = run_study(beta_design(60, 30, 1e4), o);
    REQUIRE(r.cells.size() == 4);
    for (const auto& c : r.cells) {
      CHECK(c.miv == 0.0);
      CHECK(c.mise == doctest::Approx(c.isb).epsilon(1e-12));
      CHECK_FALSE(c.aborted);
    }
  }

  TEST_CASE("study decomposition, determinism and export")
  {
    const auto o = small_study();
    const auto model = beta_design(60, 30, 1e4);
    const auto a = run_study(model, o);
    for (const auto& c : a.cells) {
      CHECK(c.used == 3);
      CHECK(c.cells > 0);
      CHECK(std::abs(c.mise - (c.isb + c.miv)) <= 1e-9 * c.mise);
    }
    auto threaded = o;
    threaded.threads = 3;
    const auto b = run_study(model, threaded);
    CHECK(study_to_json(a).dump() == study_to_json(b).dump());

    std::ostringstream csv;
    write_study_csv(a, csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "N,criterion,full_deaths,full_recoveries,partial_deaths,partial_recoveries");
    const auto& pd = a.cell("partial", Cause::death, 3000);
    int rows = 0;
    for (const std::string crit : { "MISE", "ISB", "MIV" }) {
      REQUIRE(std::getline(in, line));
      ++rows;
      CHECK(line.rfind("3000," + crit + ",", 0) == 0);
      // third value column is partial deaths
      std::istringstream fields(line);
      std::string item;
      for (int k = 0; k < 5; ++k)
        std::getline(fields, item, ',');
      const double expect = crit == "MISE" ? pd.mise : crit == "ISB" ? pd.isb : pd.miv;
      CHECK(std::stod(item) == doctest::Approx(expect).epsilon(1e-15));
    }
    while (std::getline(in, line))
      ++rows;
    CHECK(rows == 3);
    CHECK(a.convergence.size() == 1);
  }

  TEST_CASE("study arguments are validated")
  {
    const auto model = beta_design(40, 20, 1e4);
    StudyOptions o;
    o.sizes = { 100 };
    o.replicates = 1;
    CHECK_THROWS_AS(run_study(model, o), ValidationError);
    o.replicates = 2;
    o.sizes.clear();
    CHECK_THROWS_AS(run_study(model, o), ValidationError);
  }
}
