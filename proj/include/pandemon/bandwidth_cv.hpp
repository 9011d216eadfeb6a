#pragma once

#include "pandemon/hazard.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace pandemon {

struct CvOptions
{
  //! Weight squared hazards by exposure (default). When false every cell
  //! with exposure counts once and events enter as O / E.
  bool exposure_weighted = true;
};

struct CvResult
{
  std::vector<Bandwidths> candidates;
  std::vector<double> scores;
  Bandwidths chosen;
};

//! Least-squares cross-validation score
//!   Q(b) = sum mu_b^2 E - 2 sum mu_b^(-cell) O
//! over defined cells, where mu^(-cell) drops the cell's own occurrences from
//! the numerator. +infinity when no cell is defined.
double cv_score(const EventGrid& grid, Bandwidths b, CvOptions opts = {});

//! Scores every candidate and keeps the minimiser, breaking ties toward the
//! larger b1 * b2. Throws ValidationError on an empty list or when every
//! score is infinite.
CvResult select_bandwidths(const EventGrid& grid,
                           std::span<const Bandwidths> candidates,
                           CvOptions opts = {});

//! {2,3,5,7,10,14,21} x {2,3,5,7,10,14,21} days.
std::vector<Bandwidths> default_candidate_grid();

void write_cv_trace_csv(const CvResult& r, std::ostream& out);

} // namespace pandemon
