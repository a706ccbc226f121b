#include "cforge/service.hpp"

#include <charconv>
#include <set>

#include <httplib.h>
#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/explore.hpp"
#include "cforge/io.hpp"

namespace cforge {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct ApiError {
  int status;
  std::string message;
};

ApiResponse reply(const ordered_json& j, int status = 200) { return {status, j.dump() + "\n"}; }

ApiResponse error_reply(int status, const std::string& message) {
  ordered_json j;
  j["code"] = status;
  j["message"] = message;
  return reply(j, status);
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw ApiError{400, "request body must be a JSON object"};
    return j;
  } catch (const json::parse_error& ex) {
    throw ApiError{400, std::string("malformed JSON: ") + ex.what()};
  }
}

std::vector<double> number_array(const json& body, const char* field) {
  if (!body.contains(field)) throw ApiError{400, std::string("missing field '") + field + "'"};
  const auto& a = body.at(field);
  if (!a.is_array()) throw ApiError{400, std::string("field '") + field + "' must be an array"};
  std::vector<double> out;
  out.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number()) throw ApiError{400, std::string("field '") + field + "' must hold numbers"};
    out.push_back(v.get<double>());
  }
  return out;
}

ordered_json cloud_json(const PointCloud& pc) {
  ordered_json j;
  j["P"] = pc.size();
  j["points"] = pc.coords();
  return j;
}

ordered_json ranked_json(const std::vector<RankedShape>& list) {
  auto a = ordered_json::array();
  for (const auto& r : list) a.push_back({{"id", r.id}, {"score", r.score}});
  return a;
}

std::size_t parse_k(const std::string& text) {
  std::size_t k = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, k);
  if (text.empty() || ec != std::errc() || ptr != end) throw ApiError{400, "k must be a nonnegative integer"};
  return k;
}

class Router {
 public:
  explicit Router(const SessionBundle& b) : b_(b) {}

  ApiResponse route(const ApiRequest& req) const {
    const std::string& p = req.path;
    if (req.method == "GET") {
      if (p == "/api/health") return health();
      if (p == "/api/designs") return designs();
      if (p.rfind("/api/designs/", 0) == 0) return design(p.substr(std::string("/api/designs/").size()));
      if (p == "/api/concepts") return concepts();
      if (p == "/api/query") return query_concept(req);
      if (p == "/api/tcav") return tcav();
    } else if (req.method == "POST") {
      if (p == "/api/encode") return encode_points(parse_body(req.body));
      if (p == "/api/decode") return decode_latent(parse_body(req.body));
      if (p == "/api/blend") return blend_design(parse_body(req.body));
    }
    throw ApiError{404, "no route for " + req.method + " " + p};
  }

 private:
  const AutoEncoder& ae() const { return b_.ae.model; }

  ApiResponse health() const {
    ordered_json j;
    j["status"] = "ok";
    j["points"] = ae().points();
    j["latent_dim"] = ae().latent_dim();
    j["designs"] = b_.data.manifest.entries.size();
    j["concepts"] = b_.cavs.size();
    j["ae_hash"] = b_.ae.hash;
    return reply(j);
  }

  ApiResponse designs() const {
    auto a = ordered_json::array();
    for (const auto& e : b_.data.manifest.entries) {
      a.push_back({{"id", e.id}, {"labels", e.labels}, {"drag", e.drag}, {"split", split_name(e.split)}});
    }
    ordered_json j;
    j["designs"] = std::move(a);
    return reply(j);
  }

  ApiResponse design(const std::string& id) const {
    const auto idx = b_.data.manifest.find(id);
    if (!idx) throw ApiError{404, "unknown design '" + id + "'"};
    const auto& e = b_.data.manifest.entries[*idx];
    ordered_json j;
    j["id"] = e.id;
    j["labels"] = e.labels;
    j["drag"] = e.drag;
    j["predicted_drag"] = predict(b_.regressor.model, b_.latents[*idx]);
    j["latent"] = b_.latents[*idx];
    j.update(cloud_json(b_.data.clouds[*idx]));
    return reply(j);
  }

  ApiResponse concepts() const {
    auto a = ordered_json::array();
    for (const auto& c : b_.cavs) {
      a.push_back({{"name", c.name},
                   {"concept", c.concept_name},
                   {"counter", c.counter_name},
                   {"train_accuracy", c.train_accuracy}});
    }
    ordered_json j;
    j["concepts"] = std::move(a);
    return reply(j);
  }

  const Cav& cav(const std::string& name) const {
    const Cav* c = b_.find_cav(name);
    if (c == nullptr) throw ApiError{404, "unknown concept '" + name + "'"};
    return *c;
  }

  ApiResponse query_concept(const ApiRequest& req) const {
    const auto it = req.query.find("concept");
    if (it == req.query.end() || it->second.empty()) throw ApiError{400, "missing query parameter 'concept'"};
    const Cav& c = cav(it->second);
    const auto kt = req.query.find("k");
    const std::size_t k = kt == req.query.end() ? 5 : parse_k(kt->second);
    std::vector<std::string> ids;
    for (const auto& e : b_.data.manifest.entries) ids.push_back(e.id);
    const auto q = query(b_.latents, ids, c, k);
    ordered_json j;
    j["concept"] = c.name;
    j["k"] = q.top.size();
    j["clamped"] = q.clamped;
    j["top"] = ranked_json(q.top);
    j["bottom"] = ranked_json(q.bottom);
    return reply(j);
  }

  ApiResponse tcav() const {
    if (!b_.tcav) throw ApiError{404, "bundle has no TCAV report"};
    auto rows = ordered_json::array();
    for (const auto& r : b_.tcav->rows) {
      rows.push_back({{"concept", r.concept_name},
                      {"counter", r.counter_name},
                      {"sign_fraction", r.sign_fraction},
                      {"mean_magnitude", r.mean_magnitude},
                      {"std_error", r.std_error},
                      {"p_value", r.p_value},
                      {"n_runs", r.n_runs},
                      {"mean_abs_magnitude", r.mean_abs_magnitude},
                      {"random_sign_fraction", r.random_sign_fraction},
                      {"random_std_error", r.random_std_error}});
    }
    ordered_json j;
    j["rows"] = std::move(rows);
    j["csv"] = b_.tcav->to_csv();
    return reply(j);
  }

  ApiResponse encode_points(const json& body) const {
    const auto flat = number_array(body, "points");
    const std::size_t p = body.contains("P") ? body.at("P").get<std::size_t>() : flat.size() / 3;
    if (flat.size() != 3 * p) throw ApiError{422, "points holds " + std::to_string(flat.size()) + " values, expected 3P"};
    if (p != ae().points()) {
      throw ApiError{422, "got " + std::to_string(p) + " points, model expects " + std::to_string(ae().points())};
    }
    PointCloud pc = PointCloud::from_flat(flat);
    if (!pc.all_finite()) throw ApiError{400, "points must be finite"};
    if (body.value("normalize", true)) pc = normalize(pc);
    const Latent z = encode(ae(), pc);
    ordered_json j;
    j["latent"] = z;
    j["out_of_box"] = outside_latent_box(z);
    return reply(j);
  }

  ordered_json decoded(const EditedLatent& edit) const {
    ordered_json j;
    j["latent"] = edit.z;
    j["out_of_box"] = edit.out_of_box;
    j["drag"] = predict(b_.regressor.model, edit.z);
    j.update(cloud_json(decode(ae(), edit.z)));
    return j;
  }

  Latent latent_field(const json& body) const {
    auto z = number_array(body, "latent");
    if (z.size() != ae().latent_dim()) {
      throw ApiError{422, "latent has length " + std::to_string(z.size()) + ", model expects " +
                              std::to_string(ae().latent_dim())};
    }
    return z;
  }

  ApiResponse decode_latent(const json& body) const {
    const auto z = latent_field(body);
    return reply(decoded({z, outside_latent_box(z)}));
  }

  ApiResponse blend_design(const json& body) const {
    Latent z;
    if (body.contains("design_id")) {
      if (!body.at("design_id").is_string()) throw ApiError{400, "design_id must be a string"};
      const auto id = body.at("design_id").get<std::string>();
      const auto idx = b_.data.manifest.find(id);
      if (!idx) throw ApiError{404, "unknown design '" + id + "'"};
      z = b_.latents[*idx];
    } else if (body.contains("latent")) {
      z = latent_field(body);
    } else {
      throw ApiError{400, "blend needs design_id or latent"};
    }
    std::vector<BlendTerm> terms;
    if (body.contains("terms")) {
      const auto& a = body.at("terms");
      if (!a.is_array()) throw ApiError{400, "terms must be an array"};
      for (const auto& t : a) {
        if (!t.is_object() || !t.contains("concept") || !t.contains("eps") || !t.at("concept").is_string() ||
            !t.at("eps").is_number()) {
          throw ApiError{400, "each term needs a string 'concept' and a numeric 'eps'"};
        }
        terms.push_back({&cav(t.at("concept").get<std::string>()), t.at("eps").get<double>()});
      }
    }
    for (const auto& t : terms) {
      if (t.cav->dim() != z.size()) throw ApiError{422, "concept '" + t.cav->name + "' dimension mismatch"};
    }
    return reply(decoded(blend(z, terms)));
  }

  const SessionBundle& b_;
};

}  // namespace

const Cav* SessionBundle::find_cav(std::string_view name) const {
  for (const auto& c : cavs) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void validate_bundle(const SessionBundle& b) {
  if (!b.ae.meta.manifest_hash.empty() && b.ae.meta.manifest_hash != b.data.manifest_hash) {
    throw HashMismatch("auto-encoder was trained on manifest " + b.ae.meta.manifest_hash + ", bundle data hashes to " +
                       b.data.manifest_hash);
  }
  if (b.data.manifest.points != b.ae.model.points()) {
    throw HashMismatch("dataset point count differs from the auto-encoder");
  }
  if (b.regressor.meta.ae_hash != b.ae.hash) {
    throw HashMismatch("regressor belongs to auto-encoder " + b.regressor.meta.ae_hash + ", bundle has " + b.ae.hash);
  }
  if (b.regressor.model.latent_dim() != b.ae.model.latent_dim()) {
    throw HashMismatch("regressor latent size differs from the auto-encoder");
  }
  std::set<std::string> names;
  for (const auto& c : b.cavs) {
    if (c.ae_hash != b.ae.hash) {
      throw HashMismatch("CAV '" + c.name + "' belongs to auto-encoder " + c.ae_hash + ", bundle has " + b.ae.hash);
    }
    if (c.dim() != b.ae.model.latent_dim()) throw HashMismatch("CAV '" + c.name + "' has the wrong dimension");
    if (!names.insert(c.name).second) throw InvalidInput("duplicate CAV name '" + c.name + "'");
  }
  if (b.latents.size() != b.data.manifest.entries.size()) {
    throw InvalidInput("bundle latents do not cover the dataset");
  }
}

SessionBundle load_bundle(const std::filesystem::path& dir) {
  const auto file = dir / kBundleFile;
  BundleLayout layout;
  try {
    const auto j = json::parse(read_text_file(file));
    layout.ae = j.at("ae").get<std::string>();
    layout.regressor = j.at("regressor").get<std::string>();
    layout.data = j.at("data").get<std::string>();
    layout.cavs = j.value("cavs", std::vector<std::string>{});
    layout.tcav = j.value("tcav", std::string());
  } catch (const json::exception& ex) {
    throw IoError("malformed " + file.string() + ": " + ex.what());
  }
  auto ae = load_autoencoder(dir / layout.ae);
  auto reg = load_regressor(dir / layout.regressor);
  auto data = load_dataset(dir / layout.data);
  auto latents = encode_all(ae.model, data.clouds);
  SessionBundle b{std::move(ae), std::move(reg), std::move(data), std::move(latents), {}, std::nullopt};
  for (const auto& c : layout.cavs) b.cavs.push_back(load_cav(dir / c));
  if (!layout.tcav.empty()) b.tcav = TcavReport::from_csv(read_text_file(dir / layout.tcav));
  validate_bundle(b);
  return b;
}

void write_bundle_file(const std::filesystem::path& dir, const BundleLayout& layout) {
  ordered_json j;
  j["ae"] = layout.ae;
  j["regressor"] = layout.regressor;
  j["data"] = layout.data;
  j["cavs"] = layout.cavs;
  if (!layout.tcav.empty()) j["tcav"] = layout.tcav;
  write_text_file(dir / kBundleFile, j.dump(2) + "\n");
}

ApiHandler::ApiHandler(std::shared_ptr<const SessionBundle> bundle) : bundle_(std::move(bundle)) {
  if (!bundle_) throw InvalidInput("ApiHandler needs a bundle");
}

ApiResponse ApiHandler::handle(const ApiRequest& request) const {
  try {
    return Router(*bundle_).route(request);
  } catch (const ApiError& e) {
    return error_reply(e.status, e.message);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("bad request: ") + e.what());
  } catch (const InvalidInput& e) {
    return error_reply(422, e.what());
  } catch (const Error& e) {
    return error_reply(400, e.what());
  }
}

struct HttpService::Impl {
  explicit Impl(std::shared_ptr<const SessionBundle> b) : handler(std::move(b)) {}
  ApiHandler handler;
  httplib::Server server;
};

HttpService::HttpService(std::shared_ptr<const SessionBundle> bundle) : impl_(std::make_unique<Impl>(std::move(bundle))) {
  auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r{req.method, req.path, {}, req.body};
    for (const auto& [k, v] : req.params) r.query.emplace(k, v);
    const auto out = impl_->handler.handle(r);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->server.Get(R"(/api/.*)", dispatch);
  impl_->server.Post(R"(/api/.*)", dispatch);
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() {
  if (impl_) impl_->server.stop();
}

std::pair<std::string, int> parse_bind_address(std::string_view address) {
  const auto colon = address.rfind(':');
  if (colon == std::string_view::npos) throw InvalidInput("bind address must be host:port");
  const auto port = parse_int(address.substr(colon + 1));
  if (port < 0 || port > 65535) throw InvalidInput("port out of range");
  return {std::string(address.substr(0, colon)), static_cast<int>(port)};
}

}  // namespace cforge
