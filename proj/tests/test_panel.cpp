#include "helpers.hpp"

#include <doctest.h>

#include <sstream>

using namespace pandemon;
using testing::panel_of;

TEST_SUITE("panel")
{
  TEST_CASE("three-row file gives the cumulative occupancy")
  {
    const auto p = ingest_csv_text("date,n1,n2,n3,n4,n_out\n"
                                   "2020-03-18,,5,0,0,0\n"
                                   "2020-03-19,,3,2,1,0\n"
                                   "2020-03-20,,0,1,1,1\n");
    CHECK(p.days() == 3);
    CHECK(occupancy(p) == CountSeries{ 5, 5, 3 });
    CHECK(at_risk(p) == CountSeries{ 5, 8, 5 });
    CHECK_FALSE(p.has_positives());
    REQUIRE(p.has_deaths_out());
    CHECK(*p.deaths_out() == CountSeries{ 0, 0, 1 });
    CHECK(format_iso_date(p.date_at(2)) == "2020-03-20");
  }

  TEST_CASE("exit before any admission is rejected at that day")
  {
    try {
      ingest_csv_text("date,n2,n3,n4\n2020-03-18,0,1,0\n");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()) == "occupancy negative at day 0");
      REQUIRE(e.row());
      CHECK(*e.row() == 0);
    }
  }

  TEST_CASE("empty input")
  {
    CHECK_THROWS_WITH_AS(ingest_csv_text(""), "no rows", ValidationError);
    CHECK_THROWS_WITH_AS(ingest_csv_text("date,n2,n3,n4\n"), "no rows", ValidationError);
  }

  TEST_CASE("non-contiguous dates and negative counts name the row")
  {
    try {
      ingest_csv_text("date,n2,n3,n4\n2020-03-18,1,0,0\n2020-03-20,1,0,0\n");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.row() == std::optional<std::size_t>(1));
    }
    try {
      ingest_csv_text("date,n2,n3,n4\n2020-03-18,1,0,0\n2020-03-19,-2,0,0\n");
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(e.row() == std::optional<std::size_t>(1));
      CHECK(std::string(e.what()).find("negative") != std::string::npos);
    }
  }

  TEST_CASE("column order is free and blank optional columns are absent")
  {
    const auto p = ingest_csv_text("n4,date,n3,n2,n1\n0,2020-01-01,0,4,\n1,2020-01-02,1,0,\n");
    CHECK(p.admissions() == CountSeries{ 4, 0 });
    CHECK_FALSE(p.has_positives());
    CHECK_THROWS_AS(ingest_csv_text("date,n2,n3,n4,n1\n2020-01-01,1,0,0,3\n2020-01-02,1,0,0,\n"),
                    ValidationError);
  }

  TEST_CASE("occupancy examples")
  {
    CHECK(occupancy(panel_of({ 10, 0 }, { 0, 3 }, { 0, 1 })) == CountSeries{ 10, 6 });
    CHECK(occupancy(panel_of({ 0, 0, 0 }, { 0, 0, 0 }, { 0, 0, 0 })) == CountSeries{ 0, 0, 0 });
    CHECK(occupancy(panel_of({ 2, 2, 2 }, { 1, 0, 1 }, { 0, 1, 0 })) == CountSeries{ 1, 2, 3 });
  }

  TEST_CASE("emit then ingest is the identity")
  {
    const DailyPanel p(parse_iso_date("2021-12-30"),
                       { 7, 3, 9, 0 },
                       { 0, 2, 4, 5 },
                       { 1, 1, 0, 2 },
                       CountSeries{ 40, 50, 60, 70 },
                       CountSeries{ 0, 1, 0, 3 });
    const auto text = emit_csv_text(p);
    const auto q = ingest_csv_text(text);
    CHECK(emit_csv_text(q) == text);
    CHECK(q.start_date() == p.start_date());
    CHECK(*q.positives() == *p.positives());
    CHECK(*q.deaths_out() == *p.deaths_out());
    CHECK(q.deaths_in() == p.deaths_in());
  }

  TEST_CASE("truncation and day lookup")
  {
    const auto p = panel_of({ 3, 1, 2 }, { 0, 1, 1 }, { 0, 0, 1 }, CountSeries{ 0, 0, 2 });
    const auto q = p.truncated(2);
    CHECK(q.days() == 2);
    CHECK(q.deaths_out()->size() == 2);
    CHECK(p.day_of(parse_iso_date("2020-03-19")) == 1);
    CHECK_THROWS_AS(p.day_of(parse_iso_date("2020-03-25")), ValidationError);
  }

  TEST_CASE("time grid bounds")
  {
    CHECK(TimeGrid::for_days(100).max_duration == 60);
    CHECK(TimeGrid::for_days(30).max_duration == 29);
    CHECK_THROWS_AS(TimeGrid::for_days(30, 30), ValidationError);
    CHECK_THROWS_AS(TimeGrid::for_days(30, 0), ValidationError);
  }

  TEST_CASE("dates")
  {
    CHECK(format_iso_date(parse_iso_date("2020-02-29")) == "2020-02-29");
    CHECK_THROWS_AS(parse_iso_date("2021-02-29"), ValidationError);
    CHECK_THROWS_AS(parse_iso_date("2021-2-1"), ValidationError);
  }
}
