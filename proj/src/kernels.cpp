#include "pandemon/kernels.hpp"

#include "pandemon/panel.hpp"

#include <cmath>
#include <limits>

namespace pandemon {

double epanechnikov(double x)
{
  return std::abs(x) <= 1.0 ? 0.75 * (1.0 - x * x) : 0.0;
}

void Bandwidths::validate() const
{
  if (!(calendar >= 1.0) || !(duration >= 1.0))
    throw ValidationError("bandwidths must be >= 1 day");
}

bool is_singular(const Eigen::Matrix2d& A)
{
  const Eigen::Matrix2d S = 0.5 * (A + A.transpose());
  const double det = S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0);
  if (!(det > 0.0))
    return true;
  // Eigenvalues of a symmetric 2x2 matrix.
  const double half_trace = 0.5 * (S(0, 0) + S(1, 1));
  const double gap = std::sqrt(std::max(
    0.0, 0.25 * (S(0, 0) - S(1, 1)) * (S(0, 0) - S(1, 1)) + S(0, 1) * S(0, 1)));
  const double hi = std::abs(half_trace) + gap;
  const double lo = std::abs(half_trace) - gap;
  if (!(lo > 0.0))
    return true;
  return hi / lo > 1e12;
}

LocalMoments local_moments(int t, int w, const Matrix& exposure, Bandwidths b)
{
  LocalMoments m;
  const int rows = static_cast<int>(exposure.rows());
  const int cols = static_cast<int>(exposure.cols());
  for (int u = 0; u < rows; ++u) {
    const double du = t - u;
    const double k1 = scaled_kernel(du, b.calendar);
    if (k1 == 0.0)
      continue;
    for (int wp = 0; wp < cols; ++wp) {
      const double dw = w - wp;
      const double k = k1 * scaled_kernel(dw, b.duration) * exposure(u, wp);
      if (k == 0.0)
        continue;
      m.mass += k;
      m.a(0) += k * du;
      m.a(1) += k * dw;
      m.A(0, 0) += k * du * du;
      m.A(0, 1) += k * du * dw;
      m.A(1, 1) += k * dw * dw;
    }
  }
  m.A(1, 0) = m.A(0, 1);
  m.degenerate = is_singular(m.A);
  return m;
}

double correction_weight(double calendar_offset,
                         double duration_offset,
                         const LocalMoments& m)
{
  if (m.degenerate)
    return 1.0;
  const Eigen::Vector2d beta = m.A.ldlt().solve(m.a);
  return 1.0 - (calendar_offset * beta(0) + duration_offset * beta(1));
}

double correction_weight(int s, int t, int u, int v, const LocalMoments& m)
{
  return correction_weight(static_cast<double>(t - u),
                           static_cast<double>((t - s) - (u - v)),
                           m);
}

namespace {

std::vector<std::vector<double>> taps(double b, int radius)
{
  std::vector<std::vector<double>> out(3, std::vector<double>(2 * radius + 1));
  for (int d = -radius; d <= radius; ++d) {
    const double k = scaled_kernel(d, b);
    out[0][d + radius] = k;
    out[1][d + radius] = k * d;
    out[2][d + radius] = k * d * d;
  }
  return out;
}

} // namespace

SeparableSmoother::SeparableSmoother(Bandwidths b)
  : r1_((b.validate(), static_cast<int>(std::floor(b.calendar))))
  , r2_(static_cast<int>(std::floor(b.duration)))
  , k1_(taps(b.calendar, r1_))
  , k2_(taps(b.duration, r2_))
{
}

Matrix SeparableSmoother::along_duration(const Matrix& x, int q) const
{
  const auto& k = k2_.at(q);
  const int rows = static_cast<int>(x.rows());
  const int cols = static_cast<int>(x.cols());
  Matrix z = Matrix::Zero(rows, cols);
  for (int u = 0; u < rows; ++u) {
    const double* in = x.row(u).data();
    double* out = z.row(u).data();
    for (int wp = 0; wp < cols; ++wp) {
      const double v = in[wp];
      if (v == 0.0)
        continue;
      // offset d = w - w'
      const int lo = std::max(0, wp - r2_);
      const int hi = std::min(cols - 1, wp + r2_);
      for (int w = lo; w <= hi; ++w)
        out[w] += k[w - wp + r2_] * v;
    }
  }
  return z;
}

Matrix SeparableSmoother::along_calendar(const Matrix& z, int p) const
{
  const auto& k = k1_.at(p);
  const int rows = static_cast<int>(z.rows());
  const int cols = static_cast<int>(z.cols());
  Matrix m = Matrix::Zero(rows, cols);
  for (int t = 0; t < rows; ++t) {
    const int lo = std::max(0, t - r1_);
    const int hi = std::min(rows - 1, t + r1_);
    for (int u = lo; u <= hi; ++u) {
      const double weight = k[t - u + r1_];
      if (weight == 0.0)
        continue;
      m.row(t) += weight * z.row(u);
    }
  }
  return m;
}

RegressionFit local_linear_regress(std::span<const double> x,
                                   std::span<const double> y,
                                   double b,
                                   std::span<const double> grid)
{
  if (x.size() != y.size() || x.size() < 2)
    throw ValidationError("local-linear regression needs |x| = |y| >= 2");
  if (!(b >= 1.0))
    throw ValidationError("regression bandwidth must be >= 1");
  RegressionFit fit;
  fit.values.resize(grid.size());
  fit.fallback.assign(grid.size(), false);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - grid[g];
      const double k = epanechnikov(d / b);
      if (k == 0.0)
        continue;
      s0 += k;
      s1 += k * d;
      s2 += k * d * d;
      t0 += k * y[i];
      t1 += k * d * y[i];
    }
    const double det = s0 * s2 - s1 * s1;
    if (s0 > 0.0 && det > 1e-12 * s0 * s2) {
      fit.values[g] = (s2 * t0 - s1 * t1) / det;
    } else if (s0 > 0.0) {
      fit.values[g] = t0 / s0;
      fit.fallback[g] = true;
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < x.size(); ++i)
        if (std::abs(x[i] - grid[g]) < std::abs(x[best] - grid[g]))
          best = i;
      fit.values[g] = y[best];
      fit.fallback[g] = true;
    }
  }
  return fit;
}

} // namespace pandemon
