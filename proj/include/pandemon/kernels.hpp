#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace pandemon {

//! Row-major dense array; event grids are indexed (exit day u, duration w).
using Matrix = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//! Epanechnikov kernel 0.75 (1 - x^2) on [-1, 1].
double epanechnikov(double x);

//! K(x / b) / b.
inline double scaled_kernel(double x, double b)
{
  return epanechnikov(x / b) / b;
}

//! Smoothing parameters in days: calendar time (b1) and duration (b2).
struct Bandwidths
{
  double calendar = 7.0;
  double duration = 7.0;

  //! Throws ValidationError unless both are >= 1.
  void validate() const;
  friend bool operator==(const Bandwidths&, const Bandwidths&) = default;
};

//! First and second kernel-weighted moments of the exposure around an
//! evaluation point; `mass` is the zeroth moment.
struct LocalMoments
{
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  double mass = 0.0;
  bool degenerate = true;
};

//! Singular for the local-linear solve: det <= 0 after symmetrisation or
//! 2-norm condition number above 1e12.
bool is_singular(const Eigen::Matrix2d& A);

//! Moments at calendar day t and duration w (admission day s = t - w) of an
//! exposure grid indexed (u, w'). Offsets are (t - u, w - w'), which equals
//! (t - u, t - s - (u - v)) with v = u - w'.
LocalMoments local_moments(int t, int w, const Matrix& exposure, Bandwidths b);

//! Local-linear correction 1 - (t-u, w-w')^T A^{-1} a for the offsets of one
//! grid cell; 1 when the moments are degenerate.
double correction_weight(double calendar_offset,
                         double duration_offset,
                         const LocalMoments& m);

//! Same weight addressed by calendar days (s, t) of the evaluation point and
//! (u, v) of the contributing cell.
double correction_weight(int s, int t, int u, int v, const LocalMoments& m);

//! Applies the separable product kernel to whole grids. Moments of order
//! (p, q) are sum_u sum_w' K1(t-u)(t-u)^p K2(w-w')(w-w')^q X(u, w'), formed
//! by one convolution along durations followed by one along calendar time.
class SeparableSmoother
{
public:
  explicit SeparableSmoother(Bandwidths b);

  //! Z_q(u, w) = sum_w' K2(w - w') (w - w')^q X(u, w').
  Matrix along_duration(const Matrix& x, int q) const;
  //! M_p(t, w) = sum_u K1(t - u) (t - u)^p Z(u, w).
  Matrix along_calendar(const Matrix& z, int p) const;

  double centre_weight() const { return k1_[0][r1_] * k2_[0][r2_]; }

private:
  int r1_, r2_;
  // Kernel taps times offset^p, p = 0..2, offset index shifted by radius.
  std::vector<std::vector<double>> k1_, k2_;
};

struct RegressionFit
{
  std::vector<double> values;
  //! True where the local-linear fit fell back (local constant or nearest
  //! observation).
  std::vector<bool> fallback;
};

//! Epanechnikov-weighted local-linear regression of y on x evaluated at each
//! grid point. Requires |x| = |y| >= 2 and b >= 1.
RegressionFit local_linear_regress(std::span<const double> x,
                                   std::span<const double> y,
                                   double b,
                                   std::span<const double> grid);

} // namespace pandemon
