#include "pandemon/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

namespace pandemon {

namespace fs = std::filesystem;
using nlohmann::json;

const HazardSurface& ModelHandle::surface(Cause c) const
{
  switch (c) {
    case Cause::recovery:
      return surfaces.recovery;
    case Cause::death:
      return surfaces.death;
    case Cause::all:
      break;
  }
  return surfaces.all;
}

// ---------------------------------------------------------------------------
// Request field helpers

namespace {

std::string path_of(const std::string& parent, const std::string& key)
{
  return parent + "/" + key;
}

const json* optional_field(const json& body, const std::string& key)
{
  auto it = body.find(key);
  if (it == body.end() || it->is_null())
    return nullptr;
  return &*it;
}

double number_field(const json& body, const std::string& key, std::optional<double> fallback = {})
{
  const json* v = optional_field(body, key);
  if (!v) {
    if (fallback)
      return *fallback;
    throw RequestError("missing field '" + key + "'", path_of("", key));
  }
  if (!v->is_number())
    throw RequestError("field '" + key + "' must be a number", path_of("", key));
  return v->get<double>();
}

int integer_field(const json& body, const std::string& key, std::optional<int> fallback = {})
{
  const json* v = optional_field(body, key);
  if (!v) {
    if (fallback)
      return *fallback;
    throw RequestError("missing field '" + key + "'", path_of("", key));
  }
  if (!v->is_number_integer())
    throw RequestError("field '" + key + "' must be an integer", path_of("", key));
  return v->get<int>();
}

std::vector<double> number_array(const json& v, const std::string& key)
{
  if (!v.is_array())
    throw RequestError("field '" + key + "' must be an array of numbers", path_of("", key));
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw RequestError("field '" + key + "' must contain numbers only",
                         path_of("", key) + "/" + std::to_string(i));
    out.push_back(v[i].get<double>());
  }
  return out;
}

std::string now_iso()
{
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const auto day = std::chrono::floor<std::chrono::days>(now);
  const std::chrono::hh_mm_ss hms(now - day);
  std::ostringstream os;
  os << format_iso_date(day) << 'T' << std::setfill('0') << std::setw(2) << hms.hours().count() << ':'
     << std::setw(2) << hms.minutes().count() << ':' << std::setw(2) << hms.seconds().count() << 'Z';
  return os.str();
}

json nullable(const std::optional<double>& x)
{
  return x ? json(*x) : json(nullptr);
}

} // namespace

FitOptions FitRequest::options() const
{
  FitOptions o;
  o.bandwidths = bandwidths;
  o.max_duration = window;
  o.max_iterations = max_iterations;
  o.tolerance = tolerance;
  return o;
}

FitRequest FitRequest::from_json(const json& body)
{
  if (!body.is_object())
    throw RequestError("fit request must be a JSON object", "");
  FitRequest r;
  const json* b1 = optional_field(body, "b1");
  const json* b2 = optional_field(body, "b2");
  if (static_cast<bool>(b1) != static_cast<bool>(b2))
    throw RequestError("b1 and b2 must be given together", b1 ? "/b2" : "/b1");
  if (b1) {
    r.bandwidths = Bandwidths{ number_field(body, "b1"), number_field(body, "b2") };
    try {
      r.bandwidths->validate();
    } catch (const ValidationError& e) {
      throw RequestError(e.what(), "/b1");
    }
  }
  if (optional_field(body, "window"))
    r.window = integer_field(body, "window");
  r.max_iterations = integer_field(body, "max_iterations", r.max_iterations);
  r.tolerance = number_field(body, "tolerance", r.tolerance);
  if (r.max_iterations < 1)
    throw RequestError("max_iterations must be at least 1", "/max_iterations");
  if (!(r.tolerance > 0.0))
    throw RequestError("tolerance must be positive", "/tolerance");
  return r;
}

ModelHandle fit_model(const DailyPanel& panel, const FitRequest& request, std::string id, std::string dataset_id)
{
  const auto fit = fit_missing_link(panel, request.options());
  ModelHandle m{ std::move(id), std::move(dataset_id), panel, {}, {}, fit.diagnostics, std::nullopt, now_iso() };
  m.surfaces = split_causes(panel, fit.hazard, fit.grid);
  m.remaining = HospitalModel::from_fit(fit, m.surfaces).remaining;
  if (panel.has_deaths_out())
    m.ratio = estimate_ratio(panel);
  return m;
}

// ---------------------------------------------------------------------------
// Model directory

namespace {

void write_text(const fs::path& p, const std::string& text)
{
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string read_text(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

} // namespace

void save_model(const ModelHandle& m, const fs::path& dir)
{
  fs::create_directories(dir);
  write_text(dir / "panel.csv", emit_csv_text(m.panel));
  for (const auto* s : { &m.surfaces.all, &m.surfaces.recovery, &m.surfaces.death }) {
    const std::string stem = "hazard_" + to_string(s->cause);
    std::ostringstream csv;
    write_surface_csv(*s, csv);
    write_text(dir / (stem + ".csv"), csv.str());
    write_text(dir / (stem + ".json"), surface_to_json(*s).dump() + "\n");
  }
  std::ostringstream rem;
  rem << "w,remaining\n";
  for (std::size_t w = 0; w < m.remaining.size(); ++w)
    rem << w << ',' << format_double(m.remaining[w]) << '\n';
  write_text(dir / "remaining.csv", rem.str());
  write_text(dir / "diagnostics.json", diagnostics_to_json(m.diagnostics).dump(2) + "\n");
  const json meta{ { "format", 1 },
                   { "dataset", m.dataset_id },
                   { "T", m.panel.days() },
                   { "W", m.surfaces.all.max_duration() },
                   { "start", format_iso_date(m.panel.start_date()) },
                   { "b1", m.diagnostics.bandwidths.calendar },
                   { "b2", m.diagnostics.bandwidths.duration } };
  write_text(dir / "model.json", meta.dump(2) + "\n");
}

ModelHandle load_model(const fs::path& dir, std::string id)
{
  if (!fs::is_directory(dir))
    throw ValidationError("model directory " + dir.string() + " does not exist");
  const json meta = json::parse(read_text(dir / "model.json"));
  DailyPanel panel = ingest_csv_file((dir / "panel.csv").string());
  auto surface = [&](const char* cause) {
    return surface_from_json(json::parse(read_text(dir / ("hazard_" + std::string(cause) + ".json"))));
  };
  CauseSurfaces s{ surface("all"), surface("recovery"), surface("death") };
  if (s.all.days() != panel.days())
    throw ValidationError("model surfaces do not match the stored panel");

  std::vector<double> remaining;
  std::istringstream rem(read_text(dir / "remaining.csv"));
  std::string line;
  std::getline(rem, line);
  while (std::getline(rem, line))
    if (auto comma = line.find(','); comma != std::string::npos)
      remaining.push_back(std::stod(line.substr(comma + 1)));
  if (static_cast<int>(remaining.size()) != s.all.max_duration() + 1)
    throw ValidationError("remaining.csv does not match W");

  ModelHandle m{ id.empty() ? dir.filename().string() : std::move(id),
                 meta.value("dataset", std::string{}),
                 std::move(panel),
                 std::move(s),
                 std::move(remaining),
                 diagnostics_from_json(json::parse(read_text(dir / "diagnostics.json"))),
                 std::nullopt,
                 now_iso() };
  if (m.panel.has_deaths_out())
    m.ratio = estimate_ratio(m.panel);
  return m;
}

// ---------------------------------------------------------------------------
// JSON views

json model_summary_json(const ModelHandle& m)
{
  return { { "model_id", m.id },
           { "dataset_id", m.dataset_id },
           { "created_at", m.created_at },
           { "T", m.panel.days() },
           { "W", m.surfaces.all.max_duration() },
           { "start", format_iso_date(m.panel.start_date()) },
           { "end", format_iso_date(m.panel.date_at(m.panel.days() - 1)) },
           { "diagnostics", diagnostics_to_json(m.diagnostics) } };
}

json hazard_slices_json(const ModelHandle& m, Cause cause, const std::vector<Date>& admissions)
{
  const HazardSurface& s = m.surface(cause);
  json slices = json::array();
  for (Date d : admissions) {
    const int v = m.panel.day_of(d);
    json points = json::array();
    for (int w = 0; w <= s.max_duration() && v + w < s.days(); ++w) {
      const bool defined = s.mask(v + w, w);
      points.push_back({ { "w", w },
                         { "date", format_iso_date(m.panel.date_at(v + w)) },
                         { "value", defined ? json(s.values(v + w, w)) : json(nullptr) },
                         { "defined", defined } });
    }
    slices.push_back({ { "admission", format_iso_date(d) }, { "points", std::move(points) } });
  }
  return { { "model_id", m.id }, { "cause", to_string(cause) }, { "slices", std::move(slices) } };
}

json indicators_json(const ModelHandle& m, const std::string& type, Cause cause)
{
  json series = json::array();
  if (type == "median") {
    for (int s = 0; s < m.panel.days(); ++s) {
      const auto d = median_stay(m.surface(cause), s);
      series.push_back({ { "date", format_iso_date(m.panel.date_at(s)) },
                         { "value", d ? json(*d) : json(nullptr) } });
    }
  } else if (type == "exitprob") {
    for (int s = 0; s < m.panel.days(); ++s) {
      const auto p = exit_probability(m.surfaces.recovery, m.surfaces.death, s, 0, cause);
      series.push_back({ { "date", format_iso_date(m.panel.date_at(s)) },
                         { "value", p.probability },
                         { "remainder", p.remainder } });
    }
  } else {
    throw RequestError("type must be 'median' or 'exitprob'", "/type");
  }
  return { { "model_id", m.id }, { "type", type }, { "cause", to_string(cause) }, { "series", std::move(series) } };
}

json ratio_json(const ModelHandle& m)
{
  if (!m.ratio)
    throw ValidationError("ratio requires out-of-hospital deaths");
  const auto& r = *m.ratio;
  const auto raw = raw_death_ratio(m.panel);
  json points = json::array();
  for (int t = 0; t < m.panel.days(); ++t)
    points.push_back({ { "date", format_iso_date(m.panel.date_at(t)) },
                       { "g_hat", r.g_hat[t] },
                       { "floor_applied", static_cast<bool>(r.floor_applied[t]) },
                       { "raw", nullable(raw[t]) } });
  return { { "model_id", m.id },
           { "bandwidth_out", r.bandwidth_out },
           { "bandwidth_in", r.bandwidth_in },
           { "series", std::move(points) } };
}

json forecast_request_json(const ModelHandle& m, const json& body)
{
  if (!body.is_object())
    throw RequestError("forecast request must be a JSON object", "");
  if (!m.ratio)
    throw ValidationError("ratio requires out-of-hospital deaths");
  ForecastScenario sc{ m.panel.days() - 1,
                       integer_field(body, "horizon"),
                       number_field(body, "c1", 1.0),
                       number_field(body, "c2", 1.0) };
  if (sc.horizon < 1)
    throw RequestError("horizon must be at least 1", "/horizon");
  if (!(sc.c1 > 0.0))
    throw RequestError("c1 must be positive", "/c1");
  if (!(sc.c2 > 0.0))
    throw RequestError("c2 must be positive", "/c2");
  std::optional<std::vector<double>> path;
  if (const json* o = optional_field(body, "admissions_override")) {
    path = number_array(*o, "admissions_override");
    if (static_cast<int>(path->size()) != sc.horizon)
      throw RequestError("admissions_override must have one value per horizon day", "/admissions_override");
    for (std::size_t i = 0; i < path->size(); ++i)
      if (!((*path)[i] >= 0.0))
        throw RequestError("admissions must be nonnegative", "/admissions_override/" + std::to_string(i));
  }
  std::optional<std::span<const double>> view;
  if (path)
    view = std::span<const double>(*path);
  const auto r = run_forecast(m.panel, m.hospital(), *m.ratio, sc, view);
  json out = forecast_to_json(r);
  out["model_id"] = m.id;
  return out;
}

json backtest_to_json(const BacktestResult& r, const DailyPanel& panel, int cutoff)
{
  json curve = json::array();
  for (std::size_t i = 0; i < r.search.grid.size(); ++i)
    curve.push_back({ { "c2", r.search.grid[i] }, { "sse", r.search.sse[i] } });
  return { { "cutoff", cutoff },
           { "cutoff_date", format_iso_date(panel.date_at(cutoff)) },
           { "c2_star", r.search.c2_star },
           { "sse_curve", std::move(curve) },
           { "observed_totals", r.observed_totals },
           { "forecast", forecast_to_json(r.forecast_at_best) } };
}

json backtest_request_json(const ModelHandle& m, const json& body)
{
  if (!body.is_object())
    throw RequestError("backtest request must be a JSON object", "");
  const json* c = optional_field(body, "cutoff");
  if (!c)
    throw RequestError("missing field 'cutoff'", "/cutoff");
  int cutoff = 0;
  if (c->is_string()) {
    try {
      cutoff = m.panel.day_of(parse_iso_date(c->get<std::string>()));
    } catch (const ValidationError& e) {
      throw RequestError(e.what(), "/cutoff");
    }
  } else {
    cutoff = integer_field(body, "cutoff");
  }
  const int horizon = integer_field(body, "horizon");
  if (horizon < 1)
    throw RequestError("horizon must be at least 1", "/horizon");
  if (cutoff < 1 || cutoff + horizon >= m.panel.days())
    throw RequestError("cutoff + horizon must fall inside the observed panel", "/cutoff");
  std::vector<double> grid = default_c2_grid();
  if (const json* g = optional_field(body, "c2_grid")) {
    grid = number_array(*g, "c2_grid");
    if (grid.empty())
      throw RequestError("c2_grid must not be empty", "/c2_grid");
  }
  const double c1 = number_field(body, "c1", 1.0);
  bool cumulative = false;
  if (const json* cu = optional_field(body, "cumulative")) {
    if (!cu->is_boolean())
      throw RequestError("field 'cumulative' must be a boolean", "/cumulative");
    cumulative = cu->get<bool>();
  }
  FitOptions fo;
  fo.bandwidths = m.diagnostics.bandwidths;
  fo.max_duration = std::min(m.surfaces.all.max_duration(), cutoff);
  const auto r = backtest(m.panel, cutoff, horizon, grid, fo, c1, cumulative);
  json out = backtest_to_json(r, m.panel, cutoff);
  out["model_id"] = m.id;
  return out;
}

// ---------------------------------------------------------------------------
// Registry

std::string Registry::add_dataset(DailyPanel panel)
{
  auto ptr = std::make_shared<const DailyPanel>(std::move(panel));
  const std::string id = "ds-" + std::to_string(next_id_++);
  std::unique_lock lock(mutex_);
  datasets_.emplace(id, std::move(ptr));
  return id;
}

std::shared_ptr<const DailyPanel> Registry::dataset(const std::string& id) const
{
  std::shared_lock lock(mutex_);
  auto it = datasets_.find(id);
  if (it == datasets_.end())
    throw NotFound("unknown dataset '" + id + "'");
  return it->second;
}

std::shared_ptr<const ModelHandle> Registry::fit(const std::string& dataset_id, const FitRequest& request)
{
  const auto panel = dataset(dataset_id);
  const std::string id = "m-" + std::to_string(next_id_++);
  auto m = std::make_shared<const ModelHandle>(fit_model(*panel, request, id, dataset_id));
  std::unique_lock lock(mutex_);
  models_.emplace(id, m);
  return m;
}

std::shared_ptr<const ModelHandle> Registry::add_model(ModelHandle m)
{
  m.id = "m-" + std::to_string(next_id_++);
  auto ptr = std::make_shared<const ModelHandle>(std::move(m));
  std::unique_lock lock(mutex_);
  models_.emplace(ptr->id, ptr);
  return ptr;
}

std::shared_ptr<const ModelHandle> Registry::model(const std::string& id) const
{
  std::shared_lock lock(mutex_);
  auto it = models_.find(id);
  if (it == models_.end())
    throw NotFound("unknown model '" + id + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// HTTP

struct HttpServer::Impl
{
  Registry& registry;
  ServerOptions opts;
  httplib::Server server;
  std::mutex log_mutex;

  Impl(Registry& r, ServerOptions o)
    : registry(r)
    , opts(std::move(o))
  {
  }

  void log(const std::string& line)
  {
    if (!opts.log)
      return;
    std::lock_guard lock(log_mutex);
    std::cerr << "[pandemon] " << line << std::endl;
  }

  static void reply(httplib::Response& res, int status, const json& body)
  {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static json parse_body(const httplib::Request& req)
  {
    if (req.body.empty())
      return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw RequestError(std::string("malformed JSON: ") + e.what(), "");
    }
  }

  // Shared error mapping for every route.
  template <class F>
  auto guarded(F body)
  {
    return [this, body](const httplib::Request& req, httplib::Response& res) {
      try {
        body(req, res);
      } catch (const NotFound& e) {
        reply(res, 404, { { "error", e.what() } });
      } catch (const RequestError& e) {
        reply(res, 400, { { "error", e.what() }, { "field", e.field() } });
      } catch (const ValidationError& e) {
        json j{ { "error", e.what() } };
        if (e.row())
          j["row"] = *e.row();
        reply(res, 400, j);
      } catch (const std::exception& e) {
        log(std::string("internal error: ") + e.what());
        reply(res, 500, { { "error", e.what() } });
      }
    };
  }

  static Cause cause_param(const httplib::Request& req, Cause fallback)
  {
    if (!req.has_param("cause"))
      return fallback;
    try {
      return parse_cause(req.get_param_value("cause"));
    } catch (const ValidationError& e) {
      throw RequestError(e.what(), "/cause");
    }
  }

  void routes()
  {
    server.Get("/health", [](const httplib::Request&, httplib::Response& res) { reply(res, 200, { { "status", "ok" } }); });

    server.Post("/api/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  auto panel = ingest_csv_text(req.body);
                  const int days = panel.days();
                  const auto start = format_iso_date(panel.start_date());
                  const auto id = registry.add_dataset(std::move(panel));
                  log("dataset " + id + ": " + std::to_string(days) + " days");
                  reply(res, 201, { { "dataset_id", id }, { "days", days }, { "start", start } });
                }));

    server.Post(R"(/api/datasets/([^/]+)/fit)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string id = req.matches[1];
                  const auto request = FitRequest::from_json(parse_body(req));
                  registry.dataset(id);
                  log("fitting " + id);
                  const auto t0 = std::chrono::steady_clock::now();
                  const auto m = registry.fit(id, request);
                  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
                  log("model " + m->id + " fitted in " + std::to_string(dt.count()) + " s, " +
                      std::to_string(m->diagnostics.iterations) + " iterations");
                  reply(res, 201, model_summary_json(*m));
                }));

    server.Get(R"(/api/models/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, model_summary_json(*registry.model(req.matches[1])));
               }));

    server.Get(R"(/api/models/([^/]+)/hazard)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto m = registry.model(req.matches[1]);
                 const Cause cause = cause_param(req, Cause::all);
                 std::vector<Date> dates;
                 if (req.has_param("dates")) {
                   std::stringstream list(req.get_param_value("dates"));
                   std::string item;
                   for (std::size_t i = 0; std::getline(list, item, ','); ++i) {
                     try {
                       const Date d = parse_iso_date(item);
                       m->panel.day_of(d);
                       dates.push_back(d);
                     } catch (const ValidationError& e) {
                       throw RequestError(e.what(), "/dates/" + std::to_string(i));
                     }
                   }
                 }
                 if (dates.empty())
                   throw RequestError("dates must list at least one admission date", "/dates");
                 reply(res, 200, hazard_slices_json(*m, cause, dates));
               }));

    server.Get(R"(/api/models/([^/]+)/indicators)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto m = registry.model(req.matches[1]);
                 const std::string type = req.has_param("type") ? req.get_param_value("type") : "median";
                 const Cause fallback = type == "exitprob" ? Cause::recovery : Cause::all;
                 reply(res, 200, indicators_json(*m, type, cause_param(req, fallback)));
               }));

    server.Get(R"(/api/models/([^/]+)/ratio)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, ratio_json(*registry.model(req.matches[1])));
               }));

    server.Post(R"(/api/models/([^/]+)/forecast)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto m = registry.model(req.matches[1]);
                  reply(res, 200, forecast_request_json(*m, parse_body(req)));
                }));

    server.Post(R"(/api/models/([^/]+)/backtest)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto m = registry.model(req.matches[1]);
                  reply(res, 200, backtest_request_json(*m, parse_body(req)));
                }));

    if (opts.static_dir && !server.set_mount_point("/", opts.static_dir->string()))
      throw ValidationError("static directory " + opts.static_dir->string() + " does not exist");
  }
};

HttpServer::HttpServer(Registry& registry, ServerOptions opts)
  : impl_(std::make_unique<Impl>(registry, std::move(opts)))
{
  impl_->server.set_read_timeout(impl_->opts.timeout_seconds, 0);
  impl_->server.set_write_timeout(impl_->opts.timeout_seconds, 0);
  impl_->routes();
}

HttpServer::~HttpServer()
{
  stop();
}

int HttpServer::bind()
{
  auto& o = impl_->opts;
  if (o.port == 0)
    o.port = impl_->server.bind_to_any_port(o.host);
  else if (!impl_->server.bind_to_port(o.host, o.port))
    o.port = -1;
  if (o.port <= 0)
    throw std::runtime_error("cannot bind " + o.host);
  impl_->log("listening on http://" + o.host + ":" + std::to_string(o.port));
  return o.port;
}

void HttpServer::listen()
{
  impl_->server.listen_after_bind();
}

void HttpServer::stop()
{
  if (impl_->server.is_running())
    impl_->server.stop();
}

bool HttpServer::running() const
{
  return impl_->server.is_running();
}

int port_from_env(int fallback)
{
  const char* env = std::getenv("PANDEMON_PORT");
  if (!env || !*env)
    return fallback;
  char* end = nullptr;
  const long p = std::strtol(env, &end, 10);
  if (*end != '\0' || p < 1 || p > 65535)
    return fallback;
  return static_cast<int>(p);
}

} // namespace pandemon
