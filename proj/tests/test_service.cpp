#include "helpers.hpp"

#include "pandemon/service.hpp"
#include "pandemon/sim.hpp"

#include <doctest.h>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace pandemon;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const DailyPanel& sample_panel()
{
  static const DailyPanel p = simulate_cohorts(beta_design(80, 30, 4000), 31).panel;
  return p;
}

FitRequest quick_fit()
{
  FitRequest r;
  r.bandwidths = Bandwidths{ 7, 7 };
  return r;
}

// Server on a free port, served from a background thread.
struct LiveServer
{
  Registry registry;
  HttpServer server;
  int port;
  std::jthread thread;

  LiveServer()
    : server(registry, ServerOptions{ "127.0.0.1", 0, std::nullopt, 30, false })
    , port(server.bind())
    , thread([this] { server.listen(); })
  {
    for (int i = 0; i < 200 && !server.running(); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ~LiveServer() { server.stop(); }

  httplib::Client client() const
  {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch_dir(const std::string& name)
{
  const auto dir = fs::temp_directory_path() / ("pandemon-test-" + name);
  fs::remove_all(dir);
  return dir;
}

} // namespace

TEST_SUITE("service")
{
  TEST_CASE("fit requests are validated field by field")
  {
    CHECK_FALSE(FitRequest::from_json(json::object()).bandwidths);
    const auto r = FitRequest::from_json({ { "b1", 3 }, { "b2", 4.5 }, { "window", 20 } });
    CHECK(r.bandwidths == Bandwidths{ 3, 4.5 });
    CHECK(r.window == 20);
    auto field_of = [](const json& body) {
      try {
        FitRequest::from_json(body);
      } catch (const RequestError& e) {
        return e.field();
      }
      return std::string("none");
    };
    CHECK(field_of({ { "b1", 3 } }) == "/b2");
    CHECK(field_of({ { "b1", "x" }, { "b2", 3 } }) == "/b1");
    CHECK(field_of({ { "max_iterations", 0 } }) == "/max_iterations");
    CHECK(field_of({ { "window", 2.5 } }) == "/window");
  }

  TEST_CASE("hazard slices mark undefined cells")
  {
    auto m = fit_model(sample_panel(), quick_fit());
    m.surfaces.all.mask(12, 2) = false;
    const auto j = hazard_slices_json(m, Cause::all, { m.panel.date_at(10) });
    const auto& points = j["slices"][0]["points"];
    CHECK(points.size() == 61);
    CHECK(points[2]["defined"] == false);
    CHECK(points[2]["value"].is_null());
    CHECK(points[1]["defined"] == true);
    CHECK(points[1]["value"].get<double>() == m.surfaces.all.values(11, 1));
    CHECK(points[2]["date"] == format_iso_date(m.panel.date_at(12)));

    // near the end of the panel the slice stops at the last day
    const auto late = hazard_slices_json(m, Cause::death, { m.panel.date_at(75) });
    CHECK(late["slices"][0]["points"].size() == 5);
  }

  TEST_CASE("identical fits save identical files and load back")
  {
    const auto a = fit_model(sample_panel(), quick_fit(), "m-a", "ds-1");
    const auto b = fit_model(sample_panel(), quick_fit(), "m-b", "ds-1");
    const auto da = scratch_dir("a"), db = scratch_dir("b");
    save_model(a, da);
    save_model(b, db);
    int files = 0;
    for (const auto& entry : fs::directory_iterator(da)) {
      ++files;
      const auto other = db / entry.path().filename();
      REQUIRE(fs::exists(other));
      CHECK_MESSAGE(slurp(entry.path()) == slurp(other), entry.path().filename().string());
    }
    CHECK(files >= 9);

    const auto back = load_model(da, "m-a");
    CHECK(back.panel.admissions() == a.panel.admissions());
    CHECK((back.surfaces.death.values - a.surfaces.death.values).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((back.surfaces.all.mask == a.surfaces.all.mask).all());
    CHECK(back.remaining.size() == a.remaining.size());
    CHECK(back.diagnostics.bandwidths == a.diagnostics.bandwidths);
    const json body{ { "horizon", 10 }, { "c1", 1.2 }, { "c2", 0.9 } };
    CHECK(forecast_request_json(back, body)["series"] == forecast_request_json(a, body)["series"]);
    fs::remove_all(da);
    fs::remove_all(db);
    CHECK_THROWS(load_model(da));
  }

  TEST_CASE("http round trip")
  {
    LiveServer live;
    REQUIRE(live.server.running());
    auto cli = live.client();

    auto health = cli.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);

    auto bad = cli.Post("/api/datasets", "date,n2,n3,n4\n2020-03-18,0,1,0\n", "text/csv");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body).contains("row"));

    auto ds = cli.Post("/api/datasets", emit_csv_text(sample_panel()), "text/csv");
    REQUIRE(ds);
    REQUIRE(ds->status == 201);
    const auto ds_id = json::parse(ds->body)["dataset_id"].get<std::string>();
    CHECK(json::parse(ds->body)["days"] == 80);

    CHECK(cli.Post("/api/datasets/nope/fit", "{}", "application/json")->status == 404);
    auto bad_fit = cli.Post("/api/datasets/" + ds_id + "/fit", R"({"b1": 3})", "application/json");
    CHECK(bad_fit->status == 400);
    CHECK(json::parse(bad_fit->body)["field"] == "/b2");

    auto fit = cli.Post("/api/datasets/" + ds_id + "/fit", R"({"b1": 7, "b2": 7})", "application/json");
    REQUIRE(fit);
    REQUIRE(fit->status == 201);
    const auto summary = json::parse(fit->body);
    const auto id = summary["model_id"].get<std::string>();
    CHECK(summary["diagnostics"]["converged"] == true);
    CHECK(cli.Get("/api/models/" + id)->status == 200);
    CHECK(cli.Get("/api/models/m-999")->status == 404);
    CHECK(cli.Get("/api/models/m-999/ratio")->status == 404);

    auto no_dates = cli.Get("/api/models/" + id + "/hazard");
    CHECK(no_dates->status == 400);
    CHECK(json::parse(no_dates->body)["field"] == "/dates");
    auto bad_date = cli.Get("/api/models/" + id + "/hazard?dates=2020-03-20,1999-01-01");
    CHECK(json::parse(bad_date->body)["field"] == "/dates/1");
    auto slices = cli.Get("/api/models/" + id + "/hazard?cause=death&dates=2020-03-20,2020-04-01");
    REQUIRE(slices->status == 200);
    CHECK(json::parse(slices->body)["slices"].size() == 2);

    auto ind = cli.Get("/api/models/" + id + "/indicators?type=exitprob");
    REQUIRE(ind->status == 200);
    const auto ij = json::parse(ind->body);
    CHECK(ij["cause"] == "recovery");
    CHECK(ij["series"].size() == 80);
    CHECK(cli.Get("/api/models/" + id + "/indicators?type=mean")->status == 400);
    CHECK(json::parse(cli.Get("/api/models/" + id + "/indicators?cause=zombie")->body)["field"] == "/cause");
    CHECK(cli.Get("/api/models/" + id + "/ratio")->status == 200);

    // persistence scenario: flat admissions and a flat ratio path
    auto flat = cli.Post("/api/models/" + id + "/forecast", R"({"horizon": 14})", "application/json");
    REQUIRE(flat->status == 200);
    const auto fj = json::parse(flat->body);
    const auto adm = fj["series"]["admissions"].get<std::vector<double>>();
    const auto g = fj["series"]["g_tilde"].get<std::vector<double>>();
    REQUIRE(adm.size() == 14);
    for (std::size_t i = 1; i < 14; ++i) {
      CHECK(adm[i] == adm[0]);
      CHECK(g[i] == g[0]);
    }

    auto no_h = cli.Post("/api/models/" + id + "/forecast", R"({"c1": 1.5})", "application/json");
    CHECK(no_h->status == 400);
    CHECK(json::parse(no_h->body)["field"] == "/horizon");
    auto neg = cli.Post("/api/models/" + id + "/forecast", R"({"horizon": 3, "c2": -1})", "application/json");
    CHECK(json::parse(neg->body)["field"] == "/c2");
    auto over = cli.Post("/api/models/" + id + "/forecast",
                         R"({"horizon": 3, "admissions_override": [1, "x", 3]})",
                         "application/json");
    CHECK(json::parse(over->body)["field"] == "/admissions_override/1");
    CHECK(cli.Post("/api/models/" + id + "/forecast", "{oops", "application/json")->status == 400);

    auto bt = cli.Post("/api/models/" + id + "/backtest",
                       R"({"cutoff": "2020-05-07", "horizon": 10, "c2_grid": [0.5, 1.0, 1.5]})",
                       "application/json");
    REQUIRE(bt->status == 200);
    const auto bj = json::parse(bt->body);
    CHECK(bj["cutoff"] == 50);
    CHECK(bj["sse_curve"].size() == 3);
    auto bad_grid = cli.Post("/api/models/" + id + "/backtest",
                             R"({"cutoff": 50, "horizon": 10, "c2_grid": [0.5, null]})",
                             "application/json");
    CHECK(json::parse(bad_grid->body)["field"] == "/c2_grid/1");
    auto late = cli.Post("/api/models/" + id + "/backtest", R"({"cutoff": 75, "horizon": 10})", "application/json");
    CHECK(json::parse(late->body)["field"] == "/cutoff");

    SUBCASE("concurrent forecasts match sequential ones")
    {
      const std::vector<std::string> bodies{ R"({"horizon": 21, "c1": 1.3})",
                                             R"({"horizon": 7, "c2": 1.8})",
                                             R"({"horizon": 30, "c1": 0.7, "c2": 1.2})",
                                             R"({"horizon": 14})" };
      std::vector<std::string> sequential;
      for (const auto& b : bodies)
        sequential.push_back(cli.Post("/api/models/" + id + "/forecast", b, "application/json")->body);
      std::vector<std::string> parallel(bodies.size() * 3);
      {
        std::vector<std::jthread> workers;
        for (std::size_t i = 0; i < parallel.size(); ++i)
          workers.emplace_back([&, i] {
            auto c = live.client();
            auto r = c.Post("/api/models/" + id + "/forecast", bodies[i % bodies.size()], "application/json");
            if (r)
              parallel[i] = r->body;
          });
      }
      for (std::size_t i = 0; i < parallel.size(); ++i)
        CHECK(parallel[i] == sequential[i % bodies.size()]);
    }
  }

  TEST_CASE("port from the environment")
  {
    ::setenv("PANDEMON_PORT", "9123", 1);
    CHECK(port_from_env() == 9123);
    ::setenv("PANDEMON_PORT", "not-a-port", 1);
    CHECK(port_from_env(8080) == 8080);
    ::unsetenv("PANDEMON_PORT");
    CHECK(port_from_env(7000) == 7000);
  }
}
