// pandemon: command-line front end for ingestion, fitting, indicators,
// forecasting, backtesting, simulation and the HTTP service.

#include "pandemon/bandwidth_cv.hpp"
#include "pandemon/forecast.hpp"
#include "pandemon/missing_link.hpp"
#include "pandemon/panel.hpp"
#include "pandemon/service.hpp"
#include "pandemon/sim.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pandemon;

namespace {

std::optional<Bandwidths> parse_bandwidths(const std::string& text)
{
  if (text == "auto")
    return std::nullopt;
  const auto comma = text.find(',');
  try {
    Bandwidths b;
    if (comma == std::string::npos) {
      b.calendar = b.duration = std::stod(text);
    } else {
      b.calendar = std::stod(text.substr(0, comma));
      b.duration = std::stod(text.substr(comma + 1));
    }
    b.validate();
    return b;
  } catch (const std::invalid_argument&) {
    throw ValidationError("--bandwidths expects 'auto', 'b' or 'b1,b2'");
  }
}

// "a:b:step" or a comma list.
std::vector<double> parse_grid(const std::string& text)
{
  std::vector<double> out;
  try {
    if (text.find(':') != std::string::npos) {
      std::stringstream ss(text);
      std::string a, b, s;
      std::getline(ss, a, ':');
      std::getline(ss, b, ':');
      std::getline(ss, s, ':');
      const double lo = std::stod(a), hi = std::stod(b), step = std::stod(s);
      if (!(step > 0.0) || hi < lo)
        throw ValidationError("grid range must be lo:hi:step with step > 0");
      const int n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
      for (int i = 0; i <= n; ++i)
        out.push_back(lo + i * step);
    } else {
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ','))
        out.push_back(std::stod(item));
    }
  } catch (const std::invalid_argument&) {
    throw ValidationError("cannot parse grid '" + text + "'");
  }
  if (out.empty())
    throw ValidationError("empty grid");
  return out;
}

std::vector<double> read_series(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ValidationError("cannot read " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto comma = line.find_last_of(',');
    const std::string cell = comma == std::string::npos ? line : line.substr(comma + 1);
    if (cell.empty())
      continue;
    try {
      out.push_back(std::stod(cell));
    } catch (const std::invalid_argument&) {
      if (!out.empty())
        throw ValidationError("non-numeric value '" + cell + "' in " + path);
    }
  }
  return out;
}

void write_json(const json& j, const std::string& path)
{
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

template <class F>
void write_file(const std::string& path, F body)
{
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path);
  body(out);
}

HttpServer* active_server = nullptr;

void on_signal(int)
{
  if (active_server)
    active_server->stop();
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "Hospital stay hazards, death forecasts and scenario backtests from daily aggregates" };
  app.require_subcommand(1);

  // ingest
  std::string input, out;
  auto* ingest = app.add_subcommand("ingest", "Validate a daily CSV panel and write it in canonical form");
  ingest->add_option("--input", input, "Input CSV (date,n1,n2,n3,n4,n_out)")->required();
  ingest->add_option("--out", out, "Canonical CSV output");

  // fit
  std::string bandwidths = "auto", model_dir, cv_trace;
  std::optional<int> window;
  int max_iterations = 50;
  double tolerance = 1e-4;
  auto* fit = app.add_subcommand("fit", "Fit hazard surfaces from a panel");
  fit->add_option("--input", input, "Input CSV panel")->required();
  fit->add_option("--bandwidths", bandwidths, "'auto' or b1,b2 in days")->capture_default_str();
  fit->add_option("--window", window, "Maximum tracked duration W");
  fit->add_option("--max-iterations", max_iterations)->capture_default_str();
  fit->add_option("--tolerance", tolerance)->capture_default_str();
  fit->add_option("--out", model_dir, "Model directory")->required();
  fit->add_option("--cv-trace", cv_trace, "Write the cross-validation scores here");

  // indicators
  std::string type = "median", cause_text = "all";
  auto* indicators = app.add_subcommand("indicators", "Median stay or exit probabilities per admission day");
  indicators->add_option("--model", model_dir, "Model directory")->required();
  indicators->add_option("--type", type, "median | exitprob")->check(CLI::IsMember({ "median", "exitprob" }));
  indicators->add_option("--cause", cause_text, "all | recovery | death");
  indicators->add_option("--out", out, "JSON output (default stdout)");

  // forecast
  int horizon = 14;
  double c1 = 1.0, c2 = 1.0;
  std::string admissions_path, csv_out;
  auto* forecast = app.add_subcommand("forecast", "Scenario forecast of total deaths");
  forecast->add_option("--model", model_dir, "Model directory")->required();
  forecast->add_option("--horizon", horizon, "Days ahead")->capture_default_str();
  forecast->add_option("--c1", c1, "Admissions multiplier at the horizon")->capture_default_str();
  forecast->add_option("--c2", c2, "Outside/inside ratio multiplier at the horizon")->capture_default_str();
  forecast->add_option("--admissions", admissions_path, "CSV with one admissions value per horizon day");
  forecast->add_option("--out", out, "JSON output (default stdout)");
  forecast->add_option("--csv", csv_out, "CSV mirror of the forecast");

  // backtest
  std::string cutoff_text, grid_text;
  bool cumulative = false;
  auto* bt = app.add_subcommand("backtest", "Choose C2 by refitting up to a cutoff and scoring the holdout");
  auto* bt_model = bt->add_option("--model", model_dir, "Model directory (panel and bandwidths reused)");
  bt->add_option("--input", input, "CSV panel (fitted with --bandwidths)")->excludes(bt_model);
  bt->add_option("--bandwidths", bandwidths, "'auto' or b1,b2 when using --input");
  bt->add_option("--window", window, "Maximum tracked duration W");
  bt->add_option("--cutoff", cutoff_text, "Cutoff day index or ISO date")->required();
  bt->add_option("--horizon", horizon)->capture_default_str();
  bt->add_option("--c1", c1)->capture_default_str();
  bt->add_option("--c2-grid", grid_text, "lo:hi:step or comma list (default 0.25:4:0.05)");
  bt->add_flag("--cumulative", cumulative, "Score running totals instead of daily values");
  bt->add_option("--out", out, "JSON output (default stdout)");

  // simulate
  std::string design = "beta", out_dir;
  int days = 120, sim_window = 60;
  double n = 1e4, rec_hazard = 0.06, death_hazard = 0.01, outside = 0.5;
  std::uint64_t seed = 20240101;
  bool swap = false;
  auto* simulate = app.add_subcommand("simulate", "Draw a synthetic pandemic with known hazards");
  simulate->add_option("--design", design, "beta | stationary")->check(CLI::IsMember({ "beta", "stationary" }));
  simulate->add_option("--days", days)->capture_default_str();
  simulate->add_option("--window", sim_window)->capture_default_str();
  simulate->add_option("--n", n, "Expected admissions")->capture_default_str();
  simulate->add_option("--seed", seed)->capture_default_str();
  simulate->add_option("--recovery-hazard", rec_hazard, "Stationary design only")->capture_default_str();
  simulate->add_option("--death-hazard", death_hazard, "Stationary design only")->capture_default_str();
  simulate->add_option("--outside-ratio", outside, "Stationary design only")->capture_default_str();
  simulate->add_flag("--swap", swap, "Beta design: alpha1 drives recoveries");
  simulate->add_option("--out", out_dir, "Output directory (panel.csv, records.csv)")->required();

  // study
  std::vector<int> sizes{ 10000, 40000 };
  int replicates = 50;
  unsigned threads = 0;
  std::string json_out;
  auto* study = app.add_subcommand("study", "Monte-Carlo comparison of full and missing-link estimators");
  study->add_option("--sizes", sizes, "Expected admissions per replicate")->delimiter(',');
  study->add_option("--replicates", replicates)->capture_default_str();
  study->add_option("--seed", seed)->capture_default_str();
  study->add_option("--days", days)->capture_default_str();
  study->add_option("--window", sim_window)->capture_default_str();
  study->add_option("--bandwidths", bandwidths, "'auto' or b1,b2")->capture_default_str();
  study->add_option("--threads", threads, "0 = hardware concurrency");
  study->add_flag("--swap", swap);
  study->add_option("--out", out, "CSV output (default stdout)");
  study->add_option("--json", json_out, "JSON report");

  // serve
  ServerOptions server_opts;
  server_opts.port = port_from_env(8080);
  std::string static_dir;
  auto* serve = app.add_subcommand("serve", "Run the JSON HTTP API");
  serve->add_option("--host", server_opts.host)->capture_default_str();
  serve->add_option("--port", server_opts.port, "Port (PANDEMON_PORT overrides the default)")->capture_default_str();
  serve->add_option("--static", static_dir, "Directory of dashboard assets served at /");
  serve->add_option("--timeout", server_opts.timeout_seconds, "Request timeout in seconds")->capture_default_str();
  serve->add_option("--model", model_dir, "Preload a model directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      const auto panel = ingest_csv_file(input);
      if (!out.empty())
        write_file(out, [&](std::ostream& os) { emit_csv(panel, os); });
      Count admitted = 0, exits = 0;
      for (auto x : panel.admissions())
        admitted += x;
      for (auto x : panel.exits())
        exits += x;
      write_json({ { "days", panel.days() },
                   { "start", format_iso_date(panel.start_date()) },
                   { "end", format_iso_date(panel.date_at(panel.days() - 1)) },
                   { "admissions", admitted },
                   { "exits", exits },
                   { "has_n1", panel.has_positives() },
                   { "has_n_out", panel.has_deaths_out() } },
                 "");
    } else if (*fit) {
      const auto panel = ingest_csv_file(input);
      FitRequest req{ parse_bandwidths(bandwidths), window, max_iterations, tolerance };
      if (!cv_trace.empty() && !req.bandwidths) {
        // same CV the fit runs internally, exposed for inspection
        const auto tg = TimeGrid::for_days(panel.days(), window);
        const auto grid = impute(panel, initial_guess(panel, tg)).event_grid(panel);
        const auto cands = default_candidate_grid();
        const auto cv = select_bandwidths(grid, cands);
        write_file(cv_trace, [&](std::ostream& os) { write_cv_trace_csv(cv, os); });
      }
      const auto m = fit_model(panel, req, fs::path(model_dir).filename().string());
      save_model(m, model_dir);
      write_json(diagnostics_to_json(m.diagnostics), "");
    } else if (*indicators) {
      const auto m = load_model(model_dir);
      write_json(indicators_json(m, type, parse_cause(cause_text)), out);
    } else if (*forecast) {
      const auto m = load_model(model_dir);
      json body{ { "horizon", horizon }, { "c1", c1 }, { "c2", c2 } };
      if (!admissions_path.empty())
        body["admissions_override"] = read_series(admissions_path);
      const auto j = forecast_request_json(m, body);
      write_json(j, out);
      if (!csv_out.empty()) {
        ForecastResult r;
        r.scenario = { j["scenario"]["T"], j["scenario"]["h"], j["scenario"]["c1"], j["scenario"]["c2"] };
        r.first_day = parse_iso_date(j["dates"][0].get<std::string>());
        const auto& s = j["series"];
        s["admissions"].get_to(r.admissions);
        s["deaths_in"].get_to(r.deaths_in);
        s["g_tilde"].get_to(r.g_tilde);
        s["deaths_out"].get_to(r.deaths_out);
        s["deaths_total"].get_to(r.deaths_total);
        write_file(csv_out, [&](std::ostream& os) { write_forecast_csv(r, os); });
      }
    } else if (*bt) {
      json body{ { "horizon", horizon }, { "c1", c1 }, { "cumulative", cumulative } };
      if (!grid_text.empty())
        body["c2_grid"] = parse_grid(grid_text);
      const bool is_date = cutoff_text.find('-') != std::string::npos;
      if (is_date)
        body["cutoff"] = cutoff_text;
      else
        try {
          body["cutoff"] = std::stoi(cutoff_text);
        } catch (const std::exception&) {
          throw ValidationError("--cutoff must be a day index or an ISO date");
        }
      if (!model_dir.empty()) {
        write_json(backtest_request_json(load_model(model_dir), body), out);
      } else if (!input.empty()) {
        const auto panel = ingest_csv_file(input);
        const int cutoff = is_date ? panel.day_of(parse_iso_date(cutoff_text)) : body["cutoff"].get<int>();
        FitOptions fo;
        fo.bandwidths = parse_bandwidths(bandwidths);
        fo.max_duration = window;
        const auto grid = grid_text.empty() ? default_c2_grid() : parse_grid(grid_text);
        const auto r = backtest(panel, cutoff, horizon, grid, fo, c1, cumulative);
        write_json(backtest_to_json(r, panel, cutoff), out);
      } else {
        throw ValidationError("backtest needs --model or --input");
      }
    } else if (*simulate) {
      const TrueModel model = design == "beta"
                                ? beta_design(days, sim_window, n, 0.08, swap)
                                : stationary_design(days, sim_window, n, rec_hazard, death_hazard, outside);
      const auto data = simulate_cohorts(model, seed);
      fs::create_directories(out_dir);
      write_file((fs::path(out_dir) / "panel.csv").string(), [&](std::ostream& os) { emit_csv(data.panel, os); });
      write_file((fs::path(out_dir) / "records.csv").string(), [&](std::ostream& os) {
        os << "admit,exit,cause,count\n";
        for (const auto& r : data.records)
          os << format_iso_date(data.panel.date_at(r.admit)) << ','
             << (r.exit ? format_iso_date(data.panel.date_at(*r.exit)) : std::string{}) << ','
             << (r.exit ? to_string(r.cause) : std::string("censored")) << ',' << r.count << '\n';
      });
      Count admitted = 0;
      for (auto x : data.panel.admissions())
        admitted += x;
      write_json({ { "design", design }, { "days", days }, { "seed", seed }, { "admissions", admitted } }, "");
    } else if (*study) {
      StudyOptions so;
      so.sizes = sizes;
      so.replicates = replicates;
      so.seed = seed;
      so.bandwidths = parse_bandwidths(bandwidths);
      so.threads = threads;
      const auto report = run_study(beta_design(days, sim_window, 1e4, 0.08, swap), so);
      if (out.empty() || out == "-")
        write_study_csv(report, std::cout);
      else
        write_file(out, [&](std::ostream& os) { write_study_csv(report, os); });
      if (!json_out.empty())
        write_json(study_to_json(report), json_out);
    } else if (*serve) {
      if (!static_dir.empty())
        server_opts.static_dir = static_dir;
      Registry registry;
      if (!model_dir.empty()) {
        const auto m = registry.add_model(load_model(model_dir));
        std::cerr << "[pandemon] preloaded model " << m->id << '\n';
      }
      HttpServer server(registry, server_opts);
      server.bind();
      active_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.listen();
      active_server = nullptr;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
