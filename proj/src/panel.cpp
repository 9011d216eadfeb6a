#include "pandemon/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace pandemon {

namespace {

std::string_view trim(std::string_view s)
{
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_commas(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(trim(line.substr(pos, next - pos)));
    if (next == std::string_view::npos)
      break;
    pos = next + 1;
  }
  return out;
}

void check_series(const CountSeries& s, std::size_t n, const char* name)
{
  if (s.size() != n)
    throw ValidationError(std::string("series ") + name +
                          " has a different length from n2");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] < 0)
      throw ValidationError(std::string("negative count in column ") + name +
                              " at row " + std::to_string(i),
                            i);
}

} // namespace

Date parse_iso_date(std::string_view text)
{
  text = trim(text);
  int y = 0;
  unsigned m = 0, d = 0;
  auto parse_part = [&](std::string_view part, auto& value) {
    auto [ptr, ec] =
      std::from_chars(part.data(), part.data() + part.size(), value);
    return ec == std::errc{} && ptr == part.data() + part.size();
  };
  const auto p1 = text.find('-');
  const auto p2 = p1 == std::string_view::npos ? p1 : text.find('-', p1 + 1);
  if (p1 != 4 || p2 != 7 || text.size() != 10 ||
      !parse_part(text.substr(0, p1), y) ||
      !parse_part(text.substr(p1 + 1, p2 - p1 - 1), m) ||
      !parse_part(text.substr(p2 + 1), d))
    throw ValidationError("invalid ISO-8601 date '" + std::string(text) + "'");
  const std::chrono::year_month_day ymd{ std::chrono::year{ y },
                                         std::chrono::month{ m },
                                         std::chrono::day{ d } };
  if (!ymd.ok())
    throw ValidationError("invalid calendar date '" + std::string(text) + "'");
  return Date{ ymd };
}

std::string format_iso_date(Date d)
{
  const std::chrono::year_month_day ymd{ d };
  char buf[16];
  std::snprintf(buf,
                sizeof buf,
                "%04d-%02u-%02u",
                static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

TimeGrid TimeGrid::for_days(int days, std::optional<int> max_duration)
{
  if (days < 2)
    throw ValidationError("at least two observed days are required");
  const int w = max_duration.value_or(std::min(60, days - 1));
  if (w < 1 || w > days - 1)
    throw ValidationError("max duration W must lie in [1, T-1], got " +
                          std::to_string(w));
  return TimeGrid{ w };
}

DailyPanel::DailyPanel(Date start,
                       CountSeries n2,
                       CountSeries n3,
                       CountSeries n4,
                       std::optional<CountSeries> n1,
                       std::optional<CountSeries> n_out,
                       std::string label)
  : start_(start)
  , n2_(std::move(n2))
  , n3_(std::move(n3))
  , n4_(std::move(n4))
  , n1_(std::move(n1))
  , n_out_(std::move(n_out))
  , label_(std::move(label))
{
  const auto n = n2_.size();
  if (n == 0)
    throw ValidationError("no rows");
  check_series(n2_, n, "n2");
  check_series(n3_, n, "n3");
  check_series(n4_, n, "n4");
  if (n1_)
    check_series(*n1_, n, "n1");
  if (n_out_)
    check_series(*n_out_, n, "n_out");

  Count y = 0;
  for (std::size_t u = 0; u < n; ++u) {
    y += n2_[u] - n3_[u] - n4_[u];
    if (y < 0)
      throw ValidationError("occupancy negative at day " + std::to_string(u),
                            u);
  }
}

int DailyPanel::day_of(Date d) const
{
  const auto offset = (d - start_).count();
  if (offset < 0 || offset >= days())
    throw ValidationError("date " + format_iso_date(d) +
                          " is outside the observation window");
  return static_cast<int>(offset);
}

CountSeries DailyPanel::exits() const
{
  CountSeries out(n2_.size());
  for (std::size_t u = 0; u < out.size(); ++u)
    out[u] = n3_[u] + n4_[u];
  return out;
}

DailyPanel DailyPanel::truncated(int days) const
{
  if (days < 1 || days > this->days())
    throw ValidationError("cannot truncate a " + std::to_string(this->days()) +
                          "-day panel to " + std::to_string(days) + " days");
  auto head = [days](const CountSeries& s) {
    return CountSeries(s.begin(), s.begin() + days);
  };
  std::optional<CountSeries> n1, n_out;
  if (n1_)
    n1 = head(*n1_);
  if (n_out_)
    n_out = head(*n_out_);
  return DailyPanel(
    start_, head(n2_), head(n3_), head(n4_), std::move(n1), std::move(n_out),
    label_);
}

CountSeries occupancy(const DailyPanel& panel)
{
  CountSeries y(panel.days());
  Count running = 0;
  for (int u = 0; u < panel.days(); ++u) {
    running += panel.admissions()[u] - panel.discharges()[u] -
               panel.deaths_in()[u];
    y[u] = running;
  }
  return y;
}

CountSeries at_risk(const DailyPanel& panel)
{
  auto r = occupancy(panel);
  for (int u = 0; u < panel.days(); ++u)
    r[u] += panel.discharges()[u] + panel.deaths_in()[u];
  return r;
}

std::vector<std::optional<double>> raw_death_ratio(const DailyPanel& panel)
{
  if (!panel.has_deaths_out())
    throw ValidationError("ratio requires out-of-hospital deaths");
  std::vector<std::optional<double>> out(panel.days());
  for (int u = 0; u < panel.days(); ++u)
    if (panel.deaths_in()[u] > 0)
      out[u] = static_cast<double>((*panel.deaths_out())[u]) /
               static_cast<double>(panel.deaths_in()[u]);
  return out;
}

DailyPanel ingest_csv(std::istream& in, const CsvSchema& schema)
{
  std::string line;
  std::vector<std::string_view> header;
  std::string header_line;
  while (std::getline(in, header_line)) {
    if (!trim(header_line).empty())
      break;
  }
  if (trim(header_line).empty())
    throw ValidationError("no rows");
  if (header_line.size() >= 3 &&
      header_line.compare(0, 3, "\xEF\xBB\xBF") == 0)
    header_line.erase(0, 3);
  header = split_commas(header_line);

  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t i = 0; i < header.size(); ++i)
    column.emplace(std::string(header[i]), i);
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = column.find(name);
    if (it == column.end())
      return std::nullopt;
    return it->second;
  };
  const auto c_date = find(schema.date);
  const auto c_n2 = find(schema.n2);
  const auto c_n3 = find(schema.n3);
  const auto c_n4 = find(schema.n4);
  if (!c_date || !c_n2 || !c_n3 || !c_n4)
    throw ValidationError("header must contain date, n2, n3 and n4 columns");
  const auto c_n1 = find(schema.n1);
  const auto c_out = find(schema.n_out);

  struct Optional
  {
    std::optional<std::size_t> col;
    std::vector<std::optional<Count>> cells;
  };
  Optional opt_n1{ c_n1, {} }, opt_out{ c_out, {} };
  CountSeries n2, n3, n4;
  std::optional<Date> start, previous;

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty())
      continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size())
      throw ValidationError("row " + std::to_string(row) + " has " +
                              std::to_string(cells.size()) +
                              " cells, header has " +
                              std::to_string(header.size()),
                            row);
    const Date d = [&] {
      try {
        return parse_iso_date(cells[*c_date]);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " at row " +
                                std::to_string(row),
                              row);
      }
    }();
    if (!start)
      start = d;
    else if (d != *previous + std::chrono::days{ 1 })
      throw ValidationError("non-contiguous date at row " +
                              std::to_string(row),
                            row);
    previous = d;

    auto parse_count = [&](std::string_view cell,
                           const std::string& name) -> std::optional<Count> {
      if (cell.empty())
        return std::nullopt;
      Count v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw ValidationError("non-integer value '" + std::string(cell) +
                                "' in column " + name + " at row " +
                                std::to_string(row),
                              row);
      if (v < 0)
        throw ValidationError("negative count in column " + name + " at row " +
                                std::to_string(row),
                              row);
      return v;
    };
    auto required = [&](std::size_t col, const std::string& name) {
      auto v = parse_count(cells[col], name);
      if (!v)
        throw ValidationError("blank cell in required column " + name +
                                " at row " + std::to_string(row),
                              row);
      return *v;
    };
    n2.push_back(required(*c_n2, schema.n2));
    n3.push_back(required(*c_n3, schema.n3));
    n4.push_back(required(*c_n4, schema.n4));
    if (opt_n1.col)
      opt_n1.cells.push_back(parse_count(cells[*opt_n1.col], schema.n1));
    if (opt_out.col)
      opt_out.cells.push_back(parse_count(cells[*opt_out.col], schema.n_out));
    ++row;
  }
  if (n2.empty())
    throw ValidationError("no rows");

  // An optional column is absent when missing from the header or entirely
  // blank; a partially blank column is an error.
  auto collapse = [](const Optional& o,
                     const std::string& name) -> std::optional<CountSeries> {
    if (!o.col)
      return std::nullopt;
    const auto present = std::count_if(
      o.cells.begin(), o.cells.end(), [](const auto& c) { return c.has_value(); });
    if (present == 0)
      return std::nullopt;
    CountSeries out;
    out.reserve(o.cells.size());
    for (std::size_t i = 0; i < o.cells.size(); ++i) {
      if (!o.cells[i])
        throw ValidationError("column " + name + " is blank at row " +
                                std::to_string(i) + " but filled elsewhere",
                              i);
      out.push_back(*o.cells[i]);
    }
    return out;
  };

  return DailyPanel(*start,
                    std::move(n2),
                    std::move(n3),
                    std::move(n4),
                    collapse(opt_n1, schema.n1),
                    collapse(opt_out, schema.n_out));
}

DailyPanel ingest_csv_text(std::string_view text, const CsvSchema& schema)
{
  std::istringstream in{ std::string(text) };
  return ingest_csv(in, schema);
}

DailyPanel ingest_csv_file(const std::string& path, const CsvSchema& schema)
{
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot open " + path);
  return ingest_csv(in, schema);
}

void emit_csv(const DailyPanel& panel, std::ostream& out)
{
  out << "date,n1,n2,n3,n4,n_out\n";
  for (int u = 0; u < panel.days(); ++u) {
    out << format_iso_date(panel.date_at(u)) << ',';
    if (panel.positives())
      out << (*panel.positives())[u];
    out << ',' << panel.admissions()[u] << ',' << panel.discharges()[u] << ','
        << panel.deaths_in()[u] << ',';
    if (panel.deaths_out())
      out << (*panel.deaths_out())[u];
    out << '\n';
  }
}

std::string emit_csv_text(const DailyPanel& panel)
{
  std::ostringstream out;
  emit_csv(panel, out);
  return out.str();
}

} // namespace pandemon
