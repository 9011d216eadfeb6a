#pragma once

#include "oracles.hpp"

#include "pandemon/hazard.hpp"
#include "pandemon/panel.hpp"

namespace testing {

using namespace pandemon;

inline Date day0()
{
  return parse_iso_date("2020-03-18");
}

// (u, v) square to the library's (u, w) layout, durations above W lumped.
inline Matrix fold(const oracle::Square& x, int W)
{
  const int n = static_cast<int>(x.size());
  Matrix m = Matrix::Zero(n, W + 1);
  for (int u = 0; u < n; ++u)
    for (int v = 0; v <= u; ++v)
      m(u, std::min(u - v, W)) += x[u][v];
  return m;
}

inline DailyPanel panel_of(CountSeries n2,
                           CountSeries n3,
                           CountSeries n4,
                           std::optional<CountSeries> n_out = std::nullopt)
{
  return DailyPanel(day0(), std::move(n2), std::move(n3), std::move(n4), std::nullopt, std::move(n_out));
}

// Small deterministic generator for test fixtures (no dependence on the
// simulator's streams).
struct Lcg
{
  std::uint64_t state;
  double uniform()
  {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return static_cast<double>(state >> 11) * 0x1.0p-53;
  }
};

} // namespace testing
