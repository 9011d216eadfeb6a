#pragma once

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pandemon {

using Count = std::int64_t;
using CountSeries = std::vector<Count>;
using Date = std::chrono::sys_days;

//! Raised on malformed or inconsistent input. Carries the offending row
//! (0-based data row, i.e. day index) when one can be named.
class ValidationError : public std::runtime_error
{
public:
  explicit ValidationError(const std::string& what,
                           std::optional<std::size_t> row = std::nullopt)
    : std::runtime_error(what)
    , row_(row)
  {
  }
  std::optional<std::size_t> row() const { return row_; }

private:
  std::optional<std::size_t> row_;
};

Date parse_iso_date(std::string_view text);
std::string format_iso_date(Date d);

//! Discretisation of the continuous-time model: one-day cells, durations
//! tracked up to max_duration (W); longer stays are lumped into w = W.
struct TimeGrid
{
  int max_duration = 60;

  static TimeGrid for_days(int days, std::optional<int> max_duration = {});
};

//! Five aggregate daily series over a contiguous observation window.
//!
//! n2 = hospital admissions, n3 = discharges alive, n4 = in-hospital deaths,
//! n1 = positive tests (optional), n_out = out-of-hospital deaths (optional).
//! Construction validates that nobody leaves hospital who never entered.
class DailyPanel
{
public:
  DailyPanel(Date start,
             CountSeries n2,
             CountSeries n3,
             CountSeries n4,
             std::optional<CountSeries> n1 = std::nullopt,
             std::optional<CountSeries> n_out = std::nullopt,
             std::string label = {});

  int days() const { return static_cast<int>(n2_.size()); }
  Date start_date() const { return start_; }
  Date date_at(int day) const { return start_ + std::chrono::days{ day }; }
  //! Day index of a calendar date; throws ValidationError outside the window.
  int day_of(Date d) const;
  const std::string& label() const { return label_; }

  const CountSeries& admissions() const { return n2_; }
  const CountSeries& discharges() const { return n3_; }
  const CountSeries& deaths_in() const { return n4_; }
  const std::optional<CountSeries>& positives() const { return n1_; }
  const std::optional<CountSeries>& deaths_out() const { return n_out_; }

  bool has_positives() const { return n1_.has_value(); }
  bool has_deaths_out() const { return n_out_.has_value(); }

  //! n3 + n4 per day.
  CountSeries exits() const;

  //! First `days` days of the panel.
  DailyPanel truncated(int days) const;

private:
  Date start_;
  CountSeries n2_, n3_, n4_;
  std::optional<CountSeries> n1_, n_out_;
  std::string label_;
};

//! End-of-day occupancy Y(u) = sum_{v<=u} n2[v] - sum_{v<=u} (n3[v]+n4[v]).
CountSeries occupancy(const DailyPanel& panel);

//! Patients present at some point of day u, including those leaving on u:
//! Y(u) + n3[u] + n4[u]. This is the row total of the exposure grid.
CountSeries at_risk(const DailyPanel& panel);

//! Daily raw ratio n_out / n4; nullopt on days with no in-hospital death.
std::vector<std::optional<double>> raw_death_ratio(const DailyPanel& panel);

//! Column names accepted by ingest_csv; defaults match the documented header.
struct CsvSchema
{
  std::string date = "date";
  std::string n1 = "n1";
  std::string n2 = "n2";
  std::string n3 = "n3";
  std::string n4 = "n4";
  std::string n_out = "n_out";
};

DailyPanel ingest_csv(std::istream& in, const CsvSchema& schema = {});
DailyPanel ingest_csv_text(std::string_view text, const CsvSchema& schema = {});
DailyPanel ingest_csv_file(const std::string& path, const CsvSchema& schema = {});

void emit_csv(const DailyPanel& panel, std::ostream& out);
std::string emit_csv_text(const DailyPanel& panel);

} // namespace pandemon
