#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cforge/autoencoder.hpp"
#include "cforge/cav.hpp"
#include "cforge/dataset.hpp"
#include "cforge/regressor.hpp"

namespace cforge {

inline constexpr std::string_view kBundleFile = "bundle.json";

// Everything the service needs, loaded once and never mutated.
//
// bundle.json (paths relative to the bundle directory):
//   {"ae": "ae.txt", "regressor": "reg.txt", "data": "data",
//    "cavs": ["cuboid.cav.json", ...], "tcav": "report.csv"}
// "tcav" is optional.
struct SessionBundle {
  LoadedAutoEncoder ae;
  LoadedRegressor regressor;
  LoadedDataset data;
  std::vector<Latent> latents;  // manifest order
  std::vector<Cav> cavs;
  std::optional<TcavReport> tcav;

  const Cav* find_cav(std::string_view name) const;
};

// Throws HashMismatch when an artifact does not belong to the bundle's
// auto-encoder (or the auto-encoder to the dataset), InvalidInput on
// duplicate CAV names.
void validate_bundle(const SessionBundle& bundle);
SessionBundle load_bundle(const std::filesystem::path& dir);

struct BundleLayout {
  std::string ae;
  std::string regressor;
  std::string data;
  std::vector<std::string> cavs;
  std::string tcav;
};
void write_bundle_file(const std::filesystem::path& dir, const BundleLayout& layout);

struct ApiRequest {
  std::string method;  // "GET" / "POST"
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string body;  // JSON
};

// Transport-independent request handling. Every response is a pure function
// of (bundle, request). Errors use {"code": status, "message": text} with
// 400 malformed request, 404 unknown route/id/concept, 422 dimension mismatch.
class ApiHandler {
 public:
  explicit ApiHandler(std::shared_ptr<const SessionBundle> bundle);
  ApiResponse handle(const ApiRequest& request) const;

 private:
  std::shared_ptr<const SessionBundle> bundle_;
};

// cpp-httplib front end over ApiHandler.
class HttpService {
 public:
  explicit HttpService(std::shared_ptr<const SessionBundle> bundle);
  ~HttpService();
  HttpService(const HttpService&) = delete;
  HttpService& operator=(const HttpService&) = delete;

  // Binds without serving; port 0 picks a free port. Returns the bound port
  // or throws IoError.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Parses "host:port".
std::pair<std::string, int> parse_bind_address(std::string_view address);

}  // namespace cforge
