#pragma once

#include "pandemon/forecast.hpp"
#include "pandemon/hazard.hpp"
#include "pandemon/missing_link.hpp"
#include "pandemon/panel.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace pandemon {

//! Malformed request body or query; `field` is a JSON-pointer style path
//! such as "/c2_grid/3".
class RequestError : public ValidationError
{
public:
  RequestError(const std::string& what, std::string field)
    : ValidationError(what)
    , field_(std::move(field))
  {
  }

  const std::string& field() const { return field_; }

private:
  std::string field_;
};

//! Unknown dataset or model id.
class NotFound : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A fitted model. Never modified once built; shared between requests.
struct ModelHandle
{
  std::string id;
  std::string dataset_id;
  DailyPanel panel;
  CauseSurfaces surfaces;
  //! Imputed end-of-day occupancy on the last day, by duration 0..W.
  std::vector<double> remaining;
  FitDiagnostics diagnostics;
  //! Present when the panel has out-of-hospital deaths.
  std::optional<RatioCurve> ratio;
  std::string created_at;

  HospitalModel hospital() const { return { surfaces, remaining }; }
  const HazardSurface& surface(Cause c) const;
};

//! Fit request fields shared by the CLI and the HTTP API.
struct FitRequest
{
  std::optional<Bandwidths> bandwidths; // empty means cross-validation
  std::optional<int> window;            // W
  int max_iterations = 50;
  double tolerance = 1e-4;

  FitOptions options() const;
  static FitRequest from_json(const nlohmann::json& body);
};

ModelHandle fit_model(const DailyPanel& panel,
                      const FitRequest& request,
                      std::string id = "model",
                      std::string dataset_id = {});

//! Writes panel.csv, hazard_{all,recovery,death}.{csv,json}, remaining.csv,
//! diagnostics.json and model.json. Identical fits give identical files.
void save_model(const ModelHandle& m, const std::filesystem::path& dir);
ModelHandle load_model(const std::filesystem::path& dir, std::string id = {});

// JSON views used by both front ends.

nlohmann::json model_summary_json(const ModelHandle& m);
//! Duration slices along the cohorts admitted on the given dates.
nlohmann::json hazard_slices_json(const ModelHandle& m, Cause cause, const std::vector<Date>& admissions);
//! type "median" (median stay per admission day) or "exitprob" (probability
//! of leaving by `cause` for a fresh admission on each day).
nlohmann::json indicators_json(const ModelHandle& m, const std::string& type, Cause cause);
nlohmann::json ratio_json(const ModelHandle& m);
//! Body {horizon, c1, c2, admissions_override?}.
nlohmann::json forecast_request_json(const ModelHandle& m, const nlohmann::json& body);
//! Body {cutoff, horizon, c2_grid?, c1?, cumulative?}; cutoff is a day index
//! or an ISO date. The refit reuses the model's bandwidths and window.
nlohmann::json backtest_request_json(const ModelHandle& m, const nlohmann::json& body);
nlohmann::json backtest_to_json(const BacktestResult& r, const DailyPanel& panel, int cutoff);

//! Append-only dataset and model stores.
class Registry
{
public:
  std::string add_dataset(DailyPanel panel);
  std::shared_ptr<const DailyPanel> dataset(const std::string& id) const;

  std::shared_ptr<const ModelHandle> fit(const std::string& dataset_id, const FitRequest& request);
  std::shared_ptr<const ModelHandle> add_model(ModelHandle m);
  std::shared_ptr<const ModelHandle> model(const std::string& id) const;

private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const DailyPanel>> datasets_;
  std::map<std::string, std::shared_ptr<const ModelHandle>> models_;
  std::atomic<std::uint64_t> next_id_{ 1 };
};

struct ServerOptions
{
  std::string host = "127.0.0.1";
  int port = 8080;
  //! Directory with built dashboard assets, mounted at "/".
  std::optional<std::filesystem::path> static_dir;
  int timeout_seconds = 300;
  bool log = true;
};

//! JSON HTTP front end over a Registry.
class HttpServer
{
public:
  HttpServer(Registry& registry, ServerOptions opts);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  //! Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind();
  //! Serves until stop(); call bind() first.
  void listen();
  void stop();
  bool running() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

//! Port from PANDEMON_PORT when set and valid, else `fallback`.
int port_from_env(int fallback = 8080);

} // namespace pandemon
