#include "helpers.hpp"

#include <doctest.h>

#include <sstream>

using namespace pandemon;
using testing::fold;

namespace {

struct RandomGrid
{
  oracle::Square O3, O4, E;
};

// Exposure with holes and occurrences no larger than exposure.
RandomGrid random_grid(int n, std::uint64_t seed, double hole = 0.2)
{
  testing::Lcg rng{ seed };
  RandomGrid g{ oracle::square(n), oracle::square(n), oracle::square(n) };
  for (int u = 0; u < n; ++u)
    for (int v = 0; v <= u; ++v) {
      if (rng.uniform() < hole)
        continue;
      g.E[u][v] = 1.0 + 20.0 * rng.uniform();
      g.O3[u][v] = g.E[u][v] * 0.2 * rng.uniform();
      g.O4[u][v] = g.E[u][v] * 0.05 * rng.uniform();
    }
  return g;
}

EventGrid to_event_grid(const RandomGrid& g, int W)
{
  return { fold(g.O3, W), fold(g.O4, W), fold(g.E, W) };
}

oracle::Square sum(const oracle::Square& a, const oracle::Square& b)
{
  auto c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      c[i][j] += b[i][j];
  return c;
}

} // namespace

TEST_SUITE("hazard")
{
  TEST_CASE("single same-day death")
  {
    const std::vector<StayRecord> r{ { 1, 1, Cause::death, 1 } };
    const auto g = build_event_grid_full(r, 4, TimeGrid{ 3 });
    CHECK(g.deaths(1, 0) == 1.0);
    CHECK(g.exposure(1, 0) == 1.0);
    CHECK(g.exposure.sum() == 1.0);
    CHECK(g.recoveries.sum() == 0.0);
  }

  TEST_CASE("two stays from one admission day")
  {
    const std::vector<StayRecord> r{ { 1, 2, Cause::recovery, 1 }, { 1, 3, Cause::death, 1 } };
    const auto g = build_event_grid_full(r, 5, TimeGrid{ 4 });
    CHECK(g.exposure(1, 0) == 2.0);
    CHECK(g.exposure(2, 1) == 2.0);
    CHECK(g.exposure(3, 2) == 1.0);
    CHECK(g.exposure.sum() == 5.0);
    // row sums equal patients present on the day (occupancy plus exits)
    const auto p = testing::panel_of({ 0, 2, 0, 0, 0 }, { 0, 0, 1, 0, 0 }, { 0, 0, 0, 1, 0 });
    const auto risk = at_risk(p);
    for (int u = 0; u < 5; ++u)
      CHECK(g.exposure.row(u).sum() == static_cast<double>(risk[u]));
  }

  TEST_CASE("censored stays and lumping beyond W")
  {
    const std::vector<StayRecord> r{ { 0, std::nullopt, Cause::recovery, 3 }, { 0, 5, Cause::death, 1 } };
    const auto g = build_event_grid_full(r, 6, TimeGrid{ 2 });
    CHECK(g.exposure(5, 2) == 4.0);
    CHECK(g.exposure(3, 2) == 4.0);
    CHECK(g.deaths(5, 2) == 1.0);
    CHECK(g.exposure.sum() == 4.0 * 6);
  }

  TEST_CASE("empty records and bad records")
  {
    const auto g = build_event_grid_full({}, 5, TimeGrid{ 4 });
    CHECK(g.exposure.isZero());
    CHECK(g.occurrences().isZero());
    const std::vector<StayRecord> bad{ { 2, 1, Cause::death, 1 } };
    CHECK_THROWS_AS(build_event_grid_full(bad, 5, TimeGrid{ 4 }), ValidationError);
    const std::vector<StayRecord> no_cause{ { 1, 2, Cause::all, 1 } };
    CHECK_THROWS_AS(build_event_grid_full(no_cause, 5, TimeGrid{ 4 }), ValidationError);
  }

  TEST_CASE("constant hazard is reproduced")
  {
    const auto g = random_grid(40, 5, 0.3);
    const int W = 25;
    EventGrid grid{ Matrix::Zero(40, W + 1), fold(g.E, W) * 0.05, fold(g.E, W) };
    for (Bandwidths b : { Bandwidths{ 2, 2 }, Bandwidths{ 3, 7 }, Bandwidths{ 10, 5 } }) {
      const auto s = estimate_hazard(grid, Cause::death, b);
      REQUIRE(s.defined_count() > 0);
      for (int t = 0; t < 40; ++t)
        for (int w = 0; w <= W; ++w)
          if (s.mask(t, w))
            CHECK(std::abs(s.values(t, w) - 0.05) < 1e-10);
    }
  }

  TEST_CASE("no exposure masks everything")
  {
    const auto s = estimate_hazard(EventGrid::zeros(10, 5), Cause::all, { 3, 3 });
    CHECK(s.defined_count() == 0);
    CHECK(s.at(4, 2) == 0.0);
  }

  TEST_CASE("6x6 toy grid against the brute-force oracle")
  {
    const auto g = random_grid(6, 42, 0.0);
    const auto O = sum(g.O3, g.O4);
    const auto s = estimate_hazard(to_event_grid(g, 5), Cause::all, { 2, 2 });
    for (int t = 0; t < 6; ++t)
      for (int w = 0; w <= t; ++w) {
        const auto ref = oracle::hazard(t, w, O, g.E, 2, 2);
        REQUIRE(s.mask(t, w) == ref.has_value());
        if (ref)
          CHECK(std::abs(s.values(t, w) - *ref) < 1e-10);
      }
  }

  TEST_CASE("random 10x10 grids against the oracle")
  {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      const auto g = random_grid(10, seed);
      const Bandwidths b{ 1.5 + seed % 3, 2.0 + seed % 4 };
      const auto s = estimate_hazard(to_event_grid(g, 9), Cause::death, b);
      for (int t = 0; t < 10; ++t)
        for (int w = 0; w <= t; ++w) {
          const auto ref = oracle::hazard(t, w, g.O4, g.E, b.calendar, b.duration);
          REQUIRE(s.mask(t, w) == ref.has_value());
          if (ref)
            CHECK(std::abs(s.values(t, w) - *ref) < 1e-10);
        }
    }
  }

  TEST_CASE("values lie in [0, 1] and the triangle above the diagonal is masked")
  {
    const auto g = random_grid(30, 9, 0.5);
    const auto s = estimate_hazard(to_event_grid(g, 12), Cause::all, { 2, 2 });
    for (int t = 0; t < 30; ++t)
      for (int w = 0; w <= 12; ++w) {
        CHECK(s.values(t, w) >= 0.0);
        CHECK(s.values(t, w) <= 1.0);
        if (w > t)
          CHECK_FALSE(s.mask(t, w));
      }
  }

  TEST_CASE("adding events at the evaluation cell never lowers the estimate")
  {
    const auto g = random_grid(20, 77, 0.0);
    auto grid = to_event_grid(g, 10);
    const Bandwidths b{ 3, 3 };
    const LocalLinearEstimator est(grid.exposure, b);
    const auto before = estimate_hazard(grid, Cause::death, b);
    grid.deaths(12, 4) += 2.0;
    const auto after = estimate_hazard(grid, Cause::death, b);
    REQUIRE(before.mask(12, 4));
    CHECK(after.values(12, 4) >= before.values(12, 4));
    CHECK(est.centre_weight() > 0.0);
  }

  TEST_CASE("cause surfaces add up to the all-cause surface")
  {
    const auto g = random_grid(25, 13, 0.3);
    const auto c = estimate_cause_hazards(to_event_grid(g, 15), { 3, 5 });
    for (int t = 0; t < 25; ++t)
      for (int w = 0; w <= 15; ++w) {
        CHECK(c.recovery.values(t, w) >= 0.0);
        CHECK(c.death.values(t, w) >= 0.0);
        CHECK(std::abs(c.recovery.values(t, w) + c.death.values(t, w) - c.all.values(t, w)) < 1e-15);
      }
  }

  TEST_CASE("reconcile keeps the clipped total")
  {
    const auto [r, d] = reconcile_causes(0.3, 0.2, 0.1);
    CHECK(r == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(r + d == 0.3);
    CHECK(reconcile_causes(0.3, -0.1, 0.4) == std::pair{ 0.0, 0.3 });
    CHECK(reconcile_causes(0.0, 0.1, 0.1) == std::pair{ 0.0, 0.0 });
  }

  TEST_CASE("raw occurrence/exposure ratio")
  {
    auto g = EventGrid::zeros(3, 2);
    g.deaths(2, 1) = 2.0;
    g.exposure(2, 1) = 10.0;
    g.exposure(1, 0) = 4.0;
    CHECK(*occurrence_exposure_ratio(g, 2, 1) == doctest::Approx(0.2));
    CHECK(*occurrence_exposure_ratio(g, 1, 0) == 0.0);
    CHECK_FALSE(occurrence_exposure_ratio(g, 2, 0));
  }

  TEST_CASE("surface exports")
  {
    const auto g = random_grid(8, 3);
    const auto s = estimate_hazard(to_event_grid(g, 4), Cause::recovery, { 2, 3 });
    const auto back = surface_from_json(nlohmann::json::parse(surface_to_json(s).dump()));
    CHECK(back.cause == Cause::recovery);
    CHECK(back.bandwidths == s.bandwidths);
    CHECK((back.values == s.values).all());
    CHECK((back.mask == s.mask).all());

    std::ostringstream csv;
    write_surface_csv(s, csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,w,value,defined");
    int rows = 0;
    while (std::getline(in, line))
      ++rows;
    CHECK(rows == 8 * 5);
    CHECK(format_double(0.1) == "0.1");
  }

  TEST_CASE("cause names")
  {
    CHECK(parse_cause("death") == Cause::death);
    CHECK(parse_cause("recovery") == Cause::recovery);
    CHECK(parse_cause("all") == Cause::all);
    CHECK_THROWS_AS(parse_cause("zombie"), ValidationError);
  }
}
