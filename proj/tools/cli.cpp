#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cforge/cav.hpp"
#include "cforge/dataset.hpp"
#include "cforge/error.hpp"
#include "cforge/io.hpp"
#include "cforge/regressor.hpp"
#include "cforge/service.hpp"
#include "cforge/stats.hpp"

namespace cforge::cli {

namespace fs = std::filesystem;

namespace {

std::string abs_path(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)).string(); }

// Artifacts reference their upstream by absolute path and hash.
LoadedDataset dataset_for(const LoadedAutoEncoder& ae, const std::string& data_override) {
  const fs::path where = data_override.empty() ? fs::path(ae.meta.manifest_path) : fs::path(data_override);
  if (where.empty()) throw InvalidInput("auto-encoder metadata names no dataset; pass --data");
  auto data = load_dataset(where);
  if (!ae.meta.manifest_hash.empty() && data.manifest_hash != ae.meta.manifest_hash) {
    throw HashMismatch("dataset " + manifest_path(where).string() + " hashes to " + data.manifest_hash +
                       ", auto-encoder was trained on " + ae.meta.manifest_hash);
  }
  return data;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const long long v = parse_int(tok);
    if (v <= 0) throw InvalidInput("layer widths must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw InvalidInput("no layer widths given");
  return out;
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_double(tok));
  return out;
}

// Shapes a random non-concept is drawn from: training-split cars outside
// the concept, widening to every training shape and then every shape when
// that is too small.
std::vector<std::size_t> random_pool(const DatasetManifest& m, const std::set<std::size_t>& exclude,
                                     std::size_t need) {
  auto collect = [&](bool cars_only, bool train_only) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      const auto& e = m.entries[i];
      if (exclude.count(i)) continue;
      if (cars_only && !e.has_label("car")) continue;
      if (train_only && e.split != Split::kTrain) continue;
      out.push_back(i);
    }
    return out;
  };
  auto pool = collect(true, true);
  if (pool.size() < need) pool = collect(false, true);
  if (pool.size() < need) pool = collect(false, false);
  return pool;
}

std::vector<Latent> rows_of(std::span<const Latent> latents, std::span<const std::size_t> idx) {
  std::vector<Latent> out;
  for (std::size_t i : idx) out.push_back(latents[i]);
  return out;
}

struct CounterSet {
  std::string name;
  std::vector<Latent> latents;          // fixed counter; empty for random counters
  std::optional<std::size_t> random_n;  // random counter size
};

CounterSet resolve_counter(const std::string& counter, const fs::path& base_dir, const DatasetManifest& m,
                           const AutoEncoder& ae, std::span<const Latent> latents) {
  CounterSet c;
  const std::string spec = counter.empty() ? "random:50" : counter;
  c.random_n = parse_random_counter(spec);
  if (c.random_n) {
    c.name = "random";
    return c;
  }
  fs::path path = spec;
  if (path.is_relative() && !fs::exists(path)) path = base_dir / path;
  const auto cs = load_concept_spec(path);
  const auto set = resolve_concept(cs, m);
  c.name = set.name;
  c.latents = concept_latents(set, ae, latents);
  return c;
}

std::string cav_registry_name(const std::string& concept_name, const CounterSet& counter) {
  return counter.random_n ? concept_name : concept_name + "-" + counter.name;
}

std::map<std::string, Cav> load_cav_dir(const fs::path& dir, const std::string& ae_hash) {
  std::map<std::string, Cav> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto cav = load_cav(f, ae_hash);
    const auto name = cav.name;
    if (!out.emplace(name, std::move(cav)).second) throw InvalidInput("duplicate CAV name '" + name + "'");
  }
  return out;
}

// --- subcommands -------------------------------------------------------------

struct GenDataOpts {
  std::string out;
  std::size_t cars = 1200, cuboids = 60, ellipsoids = 60, bumps = 0, points = 512;
  std::uint64_t seed = 0;
  double val_fraction = 0.25;
  std::string bump_mode = "random";
};

int gen_data(const GenDataOpts& o, std::ostream& out) {
  DatasetConfig c;
  c.cars = o.cars;
  c.cuboids = o.cuboids;
  c.ellipsoids = o.ellipsoids;
  c.bumps = o.bumps;
  c.points = o.points;
  c.seed = o.seed;
  c.val_fraction = o.val_fraction;
  c.bump_recipe.proportions = o.bump_mode == "fixed" ? BumpRecipe::Proportions::kFixed : BumpRecipe::Proportions::kRandom;
  const auto data = generate_dataset(c);
  write_dataset(o.out, data);
  out << "shapes " << data.clouds.size() << "\n";
  out << "manifest " << manifest_path(o.out).string() << "\n";
  return 0;
}

struct TrainAeOpts {
  std::string data, out, loss_csv, hidden = "512,128,32";
  std::size_t epochs = 1000, latent = 8, batch = 32;
  std::uint64_t seed = 0;
};

int train_ae(const TrainAeOpts& o, std::ostream& out, std::ostream& err) {
  const auto data = load_dataset(o.data);
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.seed = o.seed;
  tc.arch.latent_dim = o.latent;
  tc.arch.hidden = parse_sizes(o.hidden);
  tc.on_epoch = [&](const EpochLoss& e) {
    if (e.epoch % 50 == 0 || e.epoch == o.epochs) {
      err << "epoch " << e.epoch << " train " << format_double(e.train_loss) << " val "
          << format_double(e.val_loss) << "\n";
    }
  };
  const auto result = train_autoencoder(data, tc);
  AeMetadata meta;
  meta.manifest_hash = data.manifest_hash;
  meta.manifest_path = abs_path(manifest_path(o.data));
  const auto hash = save_autoencoder(o.out, result.model, meta);
  const std::string loss_path = o.loss_csv.empty() ? o.out + ".loss.csv" : o.loss_csv;
  write_text_file(loss_path, result.curve.to_csv());
  const auto& first = result.curve.epochs.front();
  const auto& last = result.curve.epochs.back();
  out << "checkpoint " << o.out << " hash " << hash << "\n";
  out << "train_loss " << format_double(first.train_loss) << " -> " << format_double(last.train_loss) << "\n";
  out << "val_loss " << format_double(first.val_loss) << " -> " << format_double(last.val_loss) << "\n";
  return 0;
}

struct TrainRegOpts {
  std::string data, ae, out;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
};

int train_reg(const TrainRegOpts& o, std::ostream& out) {
  const auto ae = load_autoencoder(o.ae);
  const auto data = dataset_for(ae, o.data);
  const auto latents = encode_all(ae.model, data.clouds);
  std::vector<Latent> tz, vz;
  std::vector<double> ty, vy;
  for (std::size_t i = 0; i < latents.size(); ++i) {
    const auto& e = data.manifest.entries[i];
    (e.split == Split::kTrain ? tz : vz).push_back(latents[i]);
    (e.split == Split::kTrain ? ty : vy).push_back(e.drag);
  }
  RegressorConfig rc;
  rc.latent_dim = ae.model.latent_dim();
  rc.epochs = o.epochs;
  rc.seed = o.seed;
  const auto r = train_regressor(tz, ty, vz, vy, rc);
  RegressorMetadata meta;
  meta.ae_hash = ae.hash;
  meta.ae_path = abs_path(o.ae);
  meta.train_mse = r.train_mse;
  meta.val_mse = r.val_mse;
  save_regressor(o.out, r.model, meta);
  out << "train_mse " << format_double(r.train_mse) << "\n";
  out << "val_mse " << format_double(r.val_mse) << "\n";
  if (!vy.empty()) {
    out << "val_target_variance " << format_double(stats::stddev(vy) * stats::stddev(vy)) << "\n";
  }
  return 0;
}

struct TrainCavOpts {
  std::string ae, concept_file, counter = "random:50", out, data;
  std::uint64_t seed = 0;
};

int train_cav_cmd(const TrainCavOpts& o, std::ostream& out) {
  const auto ae = load_autoencoder(o.ae);
  const auto data = dataset_for(ae, o.data);
  const auto latents = encode_all(ae.model, data.clouds);
  const auto spec = load_concept_spec(o.concept_file);
  const auto set = resolve_concept(spec, data.manifest);
  const auto pos = concept_latents(set, ae.model, latents);
  const auto counter = resolve_counter(o.counter, fs::path(o.concept_file).parent_path(), data.manifest, ae.model, latents);

  std::vector<Latent> neg = counter.latents;
  if (counter.random_n) {
    const std::set<std::size_t> exclude(set.indices.begin(), set.indices.end());
    const auto pool = random_pool(data.manifest, exclude, *counter.random_n);
    if (pool.size() < *counter.random_n) throw InvalidInput("not enough shapes for the random counter");
    Rng rng(mix_seed(o.seed, 7));
    const auto pick = rng.sample_without_replacement(pool.size(), *counter.random_n);
    for (std::size_t i : pick) neg.push_back(latents[pool[i]]);
  }
  CavConfig cc;
  cc.seed = o.seed;
  Cav cav = train_cav(pos, neg, cc, set.name, counter.name);
  cav.name = cav_registry_name(set.name, counter);
  cav.ae_hash = ae.hash;
  cav.ae_path = abs_path(o.ae);
  save_cav(o.out, cav);
  out << "cav " << cav.name << " train_accuracy " << format_double(cav.train_accuracy) << "\n";
  return 0;
}

struct TcavOpts {
  std::string ae, reg, concepts, out, data;
  std::size_t runs = 20, sample = 50;
  std::uint64_t seed = 0;
};

int tcav_cmd(const TcavOpts& o, std::ostream& out, std::ostream& err) {
  const auto ae = load_autoencoder(o.ae);
  const auto reg = load_regressor(o.reg, ae.hash);
  const auto data = dataset_for(ae, o.data);
  const auto latents = encode_all(ae.model, data.clouds);
  std::vector<std::vector<double>> grads;
  for (std::size_t i : data.manifest.in_split(Split::kVal)) grads.push_back(grad_wrt_latent(reg.model, latents[i]));
  if (grads.empty()) throw InvalidInput("dataset has no validation shapes to test");

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.concepts)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInput("no concept files in " + o.concepts);

  TcavReport report;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto spec = load_concept_spec(files[f]);
    const auto set = resolve_concept(spec, data.manifest);
    const auto pos = concept_latents(set, ae.model, latents);
    const auto counter = resolve_counter(spec.counter, files[f].parent_path(), data.manifest, ae.model, latents);
    SignificanceConfig sc;
    sc.n_runs = o.runs;
    sc.sample_size = counter.random_n ? *counter.random_n : o.sample;
    sc.seed = mix_seed(o.seed, f);
    const std::set<std::size_t> exclude(set.indices.begin(), set.indices.end());
    const auto pool_idx = random_pool(data.manifest, exclude, 2 * sc.sample_size);
    const auto pool = rows_of(latents, pool_idx);
    err << "tcav " << set.name << " vs " << counter.name << "\n";
    report.rows.push_back(significance_test(set.name, counter.name, pos, counter.latents, pool, grads, sc));
  }
  write_text_file(o.out, report.to_csv());
  out << report.to_csv();
  return 0;
}

struct BlendOpts {
  std::string ae, design, cavs, out, reg, data;
  std::vector<std::string> terms;
};

int blend_cmd(const BlendOpts& o, std::ostream& out) {
  const auto ae = load_autoencoder(o.ae);
  const auto data = dataset_for(ae, o.data);
  const auto registry = load_cav_dir(o.cavs, ae.hash);
  const auto idx = data.manifest.index_of(o.design);
  const auto z = encode(ae.model, data.clouds[idx]);
  std::vector<BlendTerm> terms;
  nlohmann::ordered_json jt = nlohmann::ordered_json::array();
  for (const auto& t : o.terms) {
    const auto colon = t.rfind(':');
    if (colon == std::string::npos) throw InvalidInput("term must be NAME:EPS, got '" + t + "'");
    const auto name = t.substr(0, colon);
    const auto it = registry.find(name);
    if (it == registry.end()) throw InvalidInput("unknown concept '" + name + "'");
    terms.push_back({&it->second, parse_double(t.substr(colon + 1))});
    jt.push_back({{"concept", name}, {"eps", terms.back().eps}});
  }
  const auto edited = blend(z, terms);
  const auto pc = decode(ae.model, edited.z);
  save_xyz(fs::path(o.out) / "blend.xyz", pc);
  nlohmann::ordered_json j;
  j["design"] = o.design;
  j["terms"] = jt;
  j["latent"] = edited.z;
  j["out_of_box"] = edited.out_of_box;
  j["drag_proxy"] = drag_proxy(pc);
  if (!o.reg.empty()) j["drag"] = predict(load_regressor(o.reg, ae.hash).model, edited.z);
  write_text_file(fs::path(o.out) / "blend.json", j.dump(2) + "\n");
  out << "out_of_box " << (edited.out_of_box ? "true" : "false") << "\n";
  return 0;
}

struct GridOpts {
  std::string ae, design, cav_a, cav_b, out, reg, data, eps_a, eps_b;
  std::size_t steps = 5;
  double range = 0.5;
};

int grid_cmd(const GridOpts& o, std::ostream& out) {
  const auto ae = load_autoencoder(o.ae);
  const auto data = dataset_for(ae, o.data);
  const auto a = load_cav(o.cav_a, ae.hash);
  const auto b = load_cav(o.cav_b, ae.hash);
  const auto z = encode(ae.model, data.clouds[data.manifest.index_of(o.design)]);
  const auto ea = o.eps_a.empty() ? linspace(-o.range, o.range, o.steps) : parse_doubles(o.eps_a);
  const auto eb = o.eps_b.empty() ? linspace(-o.range, o.range, o.steps) : parse_doubles(o.eps_b);
  const auto grid = blend_grid(ae.model, z, a, b, ea, eb);
  std::optional<LoadedRegressor> reg;
  if (!o.reg.empty()) reg = load_regressor(o.reg, ae.hash);
  export_grid(o.out, grid, reg ? &reg->model : nullptr);
  out << "cells " << grid.cells.size() << "\n";
  return 0;
}

struct QueryOpts {
  std::string cav, ae, data, out;
  std::size_t k = 5;
};

int query_cmd(const QueryOpts& o, std::ostream& out, std::ostream& err) {
  const auto cav = load_cav(o.cav);
  const std::string ae_path = o.ae.empty() ? cav.ae_path : o.ae;
  if (ae_path.empty()) throw InvalidInput("CAV names no auto-encoder; pass --ae");
  const auto ae = load_autoencoder(ae_path);
  if (cav.ae_hash != ae.hash) throw HashMismatch("CAV was trained on auto-encoder " + cav.ae_hash + ", not " + ae.hash);
  const auto data = dataset_for(ae, o.data);
  const auto latents = encode_all(ae.model, data.clouds);
  std::vector<std::string> ids;
  for (const auto& e : data.manifest.entries) ids.push_back(e.id);
  const auto q = query(latents, ids, cav, o.k);
  if (q.clamped) err << "warning: k clamped to " << q.top.size() << "\n";
  std::string csv = "list,rank,id,score\n";
  for (std::size_t i = 0; i < q.top.size(); ++i) {
    csv += "top," + std::to_string(i + 1) + "," + q.top[i].id + "," + format_double(q.top[i].score) + "\n";
  }
  for (std::size_t i = 0; i < q.bottom.size(); ++i) {
    csv += "bottom," + std::to_string(i + 1) + "," + q.bottom[i].id + "," + format_double(q.bottom[i].score) + "\n";
  }
  if (!o.out.empty()) write_text_file(o.out, csv);
  out << csv;
  return 0;
}

struct BumpOpts {
  std::string mode = "fixed", out;
  BumpStudyConfig config;
  std::string hidden = "512,128,32";
  bool save_ae = false;
};

int bump_cmd(BumpOpts o, std::ostream& out, std::ostream& err) {
  if (o.mode != "fixed" && o.mode != "random") throw InvalidInput("--mode must be fixed or random");
  o.config.mode = o.mode == "fixed" ? BumpRecipe::Proportions::kFixed : BumpRecipe::Proportions::kRandom;
  o.config.hidden = parse_sizes(o.hidden);
  const auto r = run_bump_study(o.config, &err);
  write_text_file(fs::path(o.out) / "sweep.csv", r.sweep_csv());
  nlohmann::ordered_json j;
  j["mode"] = o.mode;
  j["mean_abs_offdiag"] = r.correlation.mean_abs_offdiag;
  j["cav"] = r.cav.name;
  j["latent_height_spearman"] = r.height_spearman;
  j["cav_train_accuracy"] = r.cav.train_accuracy;
  j["base_design"] = r.base_id;
  j["eps_range"] = r.eps_range;
  j["spearman"] = r.spearman;
  j["max_axis_change"] = r.max_axis_change;
  j["initial_train_loss"] = r.initial_train_loss;
  j["final_train_loss"] = r.final_train_loss;
  write_text_file(fs::path(o.out) / "summary.json", j.dump(2) + "\n");
  save_cav(fs::path(o.out) / "highbump.cav.json", r.cav);
  if (o.save_ae) {
    AeMetadata meta;
    meta.points = o.config.points;
    meta.latent_dim = o.config.latent_dim;
    save_autoencoder(fs::path(o.out) / "ae.txt", *r.model, meta);
  }
  out << "mean_abs_offdiag " << format_double(r.correlation.mean_abs_offdiag) << "\n";
  out << "spearman " << format_double(r.spearman) << "\n";
  out << "max_axis_change " << format_double(r.max_axis_change) << "\n";
  return 0;
}

struct MakeBundleOpts {
  std::string out, ae, reg, data, tcav;
  std::vector<std::string> cavs;
};

int make_bundle(const MakeBundleOpts& o, std::ostream& out) {
  fs::create_directories(o.out);
  const auto base = fs::weakly_canonical(fs::absolute(o.out));
  auto rel = [&](const std::string& p) { return fs::relative(fs::weakly_canonical(fs::absolute(p)), base).string(); };
  BundleLayout layout{rel(o.ae), rel(o.reg), rel(o.data), {}, o.tcav.empty() ? std::string() : rel(o.tcav)};
  for (const auto& c : o.cavs) layout.cavs.push_back(rel(c));
  write_bundle_file(o.out, layout);
  const auto bundle = load_bundle(o.out);
  out << "bundle " << (fs::path(o.out) / kBundleFile).string() << " concepts " << bundle.cavs.size() << "\n";
  return 0;
}

int serve_cmd(const std::string& dir, const std::string& bind, std::ostream& out) {
  auto bundle = std::make_shared<const SessionBundle>(load_bundle(dir));
  const auto [host, port] = parse_bind_address(bind);
  HttpService service(bundle);
  const int bound = service.bind(host, port);
  out << "listening on " << host << ":" << bound << std::endl;
  service.listen();
  return 0;
}

}  // namespace

std::string BumpStudyResult::sweep_csv() const {
  std::string csv = "eps,bump,semi_a,semi_b,semi_c,out_of_box\n";
  for (const auto& r : sweep) {
    csv += format_double(r.eps) + "," + format_double(r.bump) + "," + format_double(r.semi_axes[0]) + "," +
           format_double(r.semi_axes[1]) + "," + format_double(r.semi_axes[2]) + "," +
           (r.out_of_box ? "1" : "0") + "\n";
  }
  return csv;
}

BumpStudyResult run_bump_study(const BumpStudyConfig& config, std::ostream* log) {
  DatasetConfig dc;
  dc.cars = dc.cuboids = dc.ellipsoids = 0;
  dc.bumps = config.shapes;
  dc.points = config.points;
  dc.seed = config.seed;
  dc.bump_recipe.proportions = config.mode;
  const auto data = generate_dataset(dc);

  std::vector<PointCloud> train, val;
  for (std::size_t i = 0; i < data.clouds.size(); ++i) {
    (data.manifest.entries[i].split == Split::kTrain ? train : val).push_back(data.clouds[i]);
  }
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.seed = config.seed;
  tc.arch.latent_dim = config.latent_dim;
  tc.arch.hidden = config.hidden;
  tc.arch.dropout = config.dropout;
  tc.on_epoch = [&](const EpochLoss& e) {
    if (log && (e.epoch % 100 == 0)) *log << "epoch " << e.epoch << " train " << format_double(e.train_loss) << "\n";
  };
  const auto trained = train_autoencoder(train, val, tc);
  const auto& ae = trained.model;
  const auto latents = encode_all(ae, data.clouds);

  BumpStudyResult r;
  r.model = ae;
  r.initial_train_loss = trained.curve.epochs.front().train_loss;
  r.final_train_loss = trained.curve.epochs.back().train_loss;
  r.correlation = latent_correlation(latents);
  for (std::size_t k = 0; k < config.latent_dim; ++k) {
    std::vector<double> coord;
    for (const auto& z : latents) coord.push_back(z[k]);
    r.height_spearman.push_back(stats::spearman(coord, data.bump_heights));
  }

  const auto& m = data.manifest;
  std::vector<Latent> pos, neg;
  std::set<std::size_t> high;
  for (std::size_t i : m.with_label("highbump")) {
    pos.push_back(latents[i]);
    high.insert(i);
  }
  if (pos.empty()) throw InvalidInput("bump study: no highbump shapes generated");
  std::string counter;
  if (config.mode == BumpRecipe::Proportions::kFixed) {
    counter = "random";
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
      if (!high.count(i)) pool.push_back(i);
    }
    Rng rng(mix_seed(config.seed, 11));
    for (std::size_t k : rng.sample_without_replacement(pool.size(), config.random_counter)) {
      neg.push_back(latents[pool[k]]);
    }
  } else {
    counter = "lowbump";
    for (std::size_t i : m.with_label("lowbump")) neg.push_back(latents[i]);
  }
  if (neg.empty()) throw InvalidInput("bump study: empty counter set");
  CavConfig cc;
  cc.seed = config.seed;
  r.cav = train_cav(pos, neg, cc, "highbump", counter);
  r.cav.name = config.mode == BumpRecipe::Proportions::kFixed ? "highbump" : "highbump-lowbump";

  // Sweep from the shape whose generated height is closest to the middle
  // of the sampled range.
  const BumpRecipe recipe;
  const double target = 0.5 * (recipe.height_min + recipe.height_max);
  std::size_t base = 0;
  for (std::size_t i = 1; i < data.bump_heights.size(); ++i) {
    if (std::abs(data.bump_heights[i] - target) < std::abs(data.bump_heights[base] - target)) base = i;
  }
  r.base_id = m.entries[base].id;
  std::vector<double> eps_col, bump_col;
  r.eps_range = config.eps_range;
  if (r.eps_range <= 0.0) {
    for (const auto& z : latents) {
      double along = 0.0;
      for (std::size_t k = 0; k < z.size(); ++k) along += r.cav.w_hat[k] * (z[k] - latents[base][k]);
      r.eps_range = std::max(r.eps_range, std::abs(along));
    }
  }
  for (double eps : linspace(-r.eps_range, r.eps_range, config.steps)) {
    const auto edited = translate(latents[base], r.cav, eps);
    const auto meas = measure_bump_detailed(decode(ae, edited.z), recipe);
    r.sweep.push_back({eps, meas.height, meas.base.semi_axes, edited.out_of_box});
    eps_col.push_back(eps);
    bump_col.push_back(meas.height);
  }
  r.spearman = stats::spearman(eps_col, bump_col);
  // Reference row is the eps closest to zero.
  std::size_t ref = 0;
  for (std::size_t i = 1; i < r.sweep.size(); ++i) {
    if (std::abs(r.sweep[i].eps) < std::abs(r.sweep[ref].eps)) ref = i;
  }
  for (const auto& row : r.sweep) {
    for (int k = 0; k < 3; ++k) {
      const double a0 = r.sweep[ref].semi_axes[k];
      r.max_axis_change = std::max(r.max_axis_change, std::abs(row.semi_axes[k] - a0) / a0);
    }
  }
  if (log) {
    *log << "mean_abs_offdiag " << format_double(r.correlation.mean_abs_offdiag) << " spearman "
         << format_double(r.spearman) << "\n";
  }
  return r;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concept-based exploration of shape latent spaces", "cforge"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with the same keys as the flags");

  GenDataOpts gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  c_gen->add_option("--out", gd.out, "Output directory")->required();
  c_gen->add_option("--cars", gd.cars);
  c_gen->add_option("--cuboids", gd.cuboids);
  c_gen->add_option("--ellipsoids", gd.ellipsoids);
  c_gen->add_option("--bumps", gd.bumps);
  c_gen->add_option("--points", gd.points);
  c_gen->add_option("--seed", gd.seed);
  c_gen->add_option("--val-fraction", gd.val_fraction);
  c_gen->add_option("--bump-mode", gd.bump_mode)->check(CLI::IsMember({"fixed", "random"}));

  TrainAeOpts ta;
  auto* c_ae = app.add_subcommand("train-ae", "Train the point-cloud auto-encoder");
  c_ae->add_option("--data", ta.data)->required();
  c_ae->add_option("--out", ta.out)->required();
  c_ae->add_option("--epochs", ta.epochs);
  c_ae->add_option("--latent", ta.latent);
  c_ae->add_option("--batch", ta.batch);
  c_ae->add_option("--hidden", ta.hidden, "Encoder hidden widths, comma separated");
  c_ae->add_option("--loss-csv", ta.loss_csv);
  c_ae->add_option("--seed", ta.seed);

  TrainRegOpts tr;
  auto* c_reg = app.add_subcommand("train-reg", "Train the latent drag regressor");
  c_reg->add_option("--data", tr.data);
  c_reg->add_option("--ae", tr.ae)->required();
  c_reg->add_option("--out", tr.out)->required();
  c_reg->add_option("--epochs", tr.epochs);
  c_reg->add_option("--seed", tr.seed);

  TrainCavOpts tcv;
  auto* c_cav = app.add_subcommand("train-cav", "Train a concept activation vector");
  c_cav->add_option("--ae", tcv.ae)->required();
  c_cav->add_option("--concept", tcv.concept_file)->required();
  c_cav->add_option("--counter", tcv.counter);
  c_cav->add_option("--out", tcv.out)->required();
  c_cav->add_option("--data", tcv.data);
  c_cav->add_option("--seed", tcv.seed);

  TcavOpts tc;
  auto* c_tcav = app.add_subcommand("tcav", "TCAV report with significance tests");
  c_tcav->add_option("--ae", tc.ae)->required();
  c_tcav->add_option("--reg", tc.reg)->required();
  c_tcav->add_option("--concepts", tc.concepts)->required();
  c_tcav->add_option("--runs", tc.runs);
  c_tcav->add_option("--sample", tc.sample, "Per-run sample size for fixed counters");
  c_tcav->add_option("--out", tc.out)->required();
  c_tcav->add_option("--data", tc.data);
  c_tcav->add_option("--seed", tc.seed);

  BlendOpts bl;
  auto* c_blend = app.add_subcommand("blend", "Blend concepts into a design");
  c_blend->add_option("--ae", bl.ae)->required();
  c_blend->add_option("--design", bl.design)->required();
  c_blend->add_option("--cavs", bl.cavs, "Directory of CAV files")->required();
  c_blend->add_option("--term", bl.terms, "NAME:EPS")->required();
  c_blend->add_option("--out", bl.out)->required();
  c_blend->add_option("--reg", bl.reg);
  c_blend->add_option("--data", bl.data);

  GridOpts gr;
  auto* c_grid = app.add_subcommand("grid", "Two-concept blend grid");
  c_grid->add_option("--ae", gr.ae)->required();
  c_grid->add_option("--design", gr.design)->required();
  c_grid->add_option("--cav-a", gr.cav_a)->required();
  c_grid->add_option("--cav-b", gr.cav_b)->required();
  c_grid->add_option("--out", gr.out)->required();
  c_grid->add_option("--steps", gr.steps);
  c_grid->add_option("--range", gr.range);
  c_grid->add_option("--eps-a", gr.eps_a, "Comma separated eps values");
  c_grid->add_option("--eps-b", gr.eps_b);
  c_grid->add_option("--reg", gr.reg);
  c_grid->add_option("--data", gr.data);

  QueryOpts qo;
  auto* c_query = app.add_subcommand("query", "Rank dataset shapes along a CAV");
  c_query->add_option("--cav", qo.cav)->required();
  c_query->add_option("--k", qo.k);
  c_query->add_option("--ae", qo.ae);
  c_query->add_option("--data", qo.data);
  c_query->add_option("--out", qo.out);

  BumpOpts bo;
  auto* c_bump = app.add_subcommand("bump-study", "Parametric bump CAV study");
  c_bump->add_option("--mode", bo.mode)->check(CLI::IsMember({"fixed", "random"}));
  c_bump->add_option("--out", bo.out)->required();
  c_bump->add_option("--shapes", bo.config.shapes);
  c_bump->add_option("--points", bo.config.points);
  c_bump->add_option("--epochs", bo.config.epochs);
  c_bump->add_option("--latent", bo.config.latent_dim);
  c_bump->add_option("--hidden", bo.hidden);
  c_bump->add_option("--steps", bo.config.steps);
  c_bump->add_option("--range", bo.config.eps_range, "Sweep half-width; 0 spans the data along the CAV");
  c_bump->add_option("--dropout", bo.config.dropout);
  c_bump->add_option("--seed", bo.config.seed);
  c_bump->add_flag("--save-ae", bo.save_ae, "Also write the trained auto-encoder to <out>/ae.txt");

  MakeBundleOpts mb;
  auto* c_bundle = app.add_subcommand("make-bundle", "Write bundle.json for the service");
  c_bundle->add_option("--out", mb.out)->required();
  c_bundle->add_option("--ae", mb.ae)->required();
  c_bundle->add_option("--reg", mb.reg)->required();
  c_bundle->add_option("--data", mb.data)->required();
  c_bundle->add_option("--cav", mb.cavs);
  c_bundle->add_option("--tcav", mb.tcav);

  std::string bundle_dir, bind = "127.0.0.1:8080";
  auto* c_serve = app.add_subcommand("serve", "Serve a bundle over HTTP");
  c_serve->add_option("--bundle", bundle_dir)->required();
  c_serve->add_option("--bind", bind);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_gen) return gen_data(gd, out);
    if (*c_ae) return train_ae(ta, out, err);
    if (*c_reg) return train_reg(tr, out);
    if (*c_cav) return train_cav_cmd(tcv, out);
    if (*c_tcav) return tcav_cmd(tc, out, err);
    if (*c_blend) return blend_cmd(bl, out);
    if (*c_grid) return grid_cmd(gr, out);
    if (*c_query) return query_cmd(qo, out, err);
    if (*c_bump) return bump_cmd(bo, out, err);
    if (*c_bundle) return make_bundle(mb, out);
    if (*c_serve) return serve_cmd(bundle_dir, bind, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cforge::cli
