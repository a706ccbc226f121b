#include "cforge/cav.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/io.hpp"
#include "cforge/stats.hpp"

namespace cforge {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::size_t common_dim(std::span<const Latent> a, std::span<const Latent> b) {
  const std::size_t dim = a.front().size();
  for (const auto* set : {&a, &b}) {
    for (const auto& z : *set) {
      if (z.size() != dim) throw InvalidInput("train_cav: latents have mixed lengths");
    }
  }
  return dim;
}

std::vector<double> centroid_of(std::span<const Latent> zs, std::size_t dim) {
  std::vector<double> mu(dim, 0.0);
  for (const auto& z : zs) {
    for (std::size_t i = 0; i < dim; ++i) mu[i] += z[i];
  }
  for (double& v : mu) v /= static_cast<double>(zs.size());
  return mu;
}

bool same_multiset(std::span<const Latent> a, std::span<const Latent> b) {
  if (a.size() != b.size()) return false;
  std::vector<Latent> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return x == y;
}

// Visits the set in a fresh random order every pass.
class Cycler {
 public:
  Cycler(std::size_t n, std::uint64_t seed) : rng_(seed), n_(n) { refill(); }
  std::size_t next() {
    if (pos_ == order_.size()) refill();
    return order_[pos_++];
  }

 private:
  void refill() {
    order_ = rng_.permutation(n_);
    pos_ = 0;
  }
  Rng rng_;
  std::size_t n_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<Latent> pick(std::span<const Latent> from, std::span<const std::size_t> idx) {
  std::vector<Latent> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(from[i]);
  return out;
}

}  // namespace

double Cav::score(std::span<const double> z) const {
  if (z.size() != w.size()) {
    throw InvalidInput("latent has length " + std::to_string(z.size()) + ", CAV has " + std::to_string(w.size()));
  }
  return dot(w, z) + b;
}

Cav negated(const Cav& cav) {
  Cav out = cav;
  for (double& v : out.w) v = -v;
  for (double& v : out.w_hat) v = -v;
  out.b = -cav.b;
  std::swap(out.concept_name, out.counter_name);
  return out;
}

Cav train_cav(std::span<const Latent> positives, std::span<const Latent> negatives, const CavConfig& config,
              std::string concept_name, std::string counter_name) {
  if (positives.empty() || negatives.empty()) throw InvalidInput("train_cav: both sets must be nonempty");
  if (config.epochs == 0) throw InvalidInput("train_cav: epochs must be positive");
  const std::size_t dim = common_dim(positives, negatives);
  if (dim == 0) throw InvalidInput("train_cav: zero-length latents");
  if (same_multiset(positives, negatives)) {
    throw DegenerateError("train_cav: positive and negative sets are identical");
  }

  // Each set's visiting order depends only on (seed, set size), so swapping
  // the sets replays the same pairs and yields the negated solution up to
  // summation order.
  Cycler pos(positives.size(), mix_seed(config.seed, positives.size()));
  Cycler neg(negatives.size(), mix_seed(config.seed, negatives.size()));
  const std::size_t steps_per_epoch = std::max(positives.size(), negatives.size());

  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  std::vector<double> g(dim);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const auto& p = positives[pos.next()];
      const auto& n = negatives[neg.next()];
      for (std::size_t i = 0; i < dim; ++i) g[i] = config.l2 * w[i];
      double gb = 0.0;
      if (dot(w, p) + b < 1.0) {
        for (std::size_t i = 0; i < dim; ++i) g[i] -= p[i];
        gb -= 1.0;
      }
      if (-(dot(w, n) + b) < 1.0) {
        for (std::size_t i = 0; i < dim; ++i) g[i] += n[i];
        gb += 1.0;
      }
      for (std::size_t i = 0; i < dim; ++i) w[i] -= config.learning_rate * g[i];
      b -= config.learning_rate * gb;
    }
  }
  for (double v : w) {
    if (!std::isfinite(v)) throw TrainingError("train_cav: weights diverged");
  }

  const double norm = norm2(w);
  if (norm < 1e-12) throw DegenerateError("train_cav: classifier normal vanished");

  const auto mu_pos = centroid_of(positives, dim);
  const auto mu_neg = centroid_of(negatives, dim);
  if (dot(w, mu_pos) <= dot(w, mu_neg)) {
    for (double& v : w) v = -v;
    b = -b;
  }

  Cav cav;
  cav.concept_name = std::move(concept_name);
  cav.counter_name = std::move(counter_name);
  cav.name = cav.concept_name + "-" + cav.counter_name;
  cav.w = w;
  cav.b = b;
  cav.w_hat.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) cav.w_hat[i] = w[i] / norm;
  cav.train_accuracy = cav_accuracy(cav, positives, negatives);
  return cav;
}

double cav_accuracy(const Cav& cav, std::span<const Latent> positives, std::span<const Latent> negatives) {
  const std::size_t total = positives.size() + negatives.size();
  if (total == 0) throw InvalidInput("cav_accuracy: no samples");
  std::size_t correct = 0;
  for (const auto& z : positives) correct += cav.score(z) > 0.0 ? 1 : 0;
  for (const auto& z : negatives) correct += cav.score(z) <= 0.0 ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

double sensitivity(const Cav& cav, std::span<const double> grad) {
  if (grad.size() != cav.w_hat.size()) {
    throw InvalidInput("gradient has length " + std::to_string(grad.size()) + ", CAV has " +
                       std::to_string(cav.w_hat.size()));
  }
  return dot(cav.w_hat, grad);
}

double sensitivity_of_drag_latent(const Cav& cav, const Regressor& reg, std::span<const double> z) {
  return sensitivity(cav, grad_wrt_latent(reg, z));
}

double sensitivity_of_drag(const Cav& cav, const Regressor& reg, const AutoEncoder& ae, const PointCloud& pc) {
  return sensitivity_of_drag_latent(cav, reg, encode(ae, pc));
}

Matrix sensitivity_field_latent(const Cav& cav, const AutoEncoder& ae, std::span<const double> z) {
  if (z.size() != ae.latent_dim() || cav.w_hat.size() != ae.latent_dim()) {
    throw InvalidInput("sensitivity_field: latent and CAV must match the auto-encoder latent size");
  }
  const auto jv = jacobian_vector_product(ae.decoder(), z, cav.w_hat);
  Matrix field(ae.points(), 3);
  std::copy(jv.begin(), jv.end(), field.values().begin());
  return field;
}

Matrix sensitivity_field(const Cav& cav, const AutoEncoder& ae, const PointCloud& pc) {
  return sensitivity_field_latent(cav, ae, encode(ae, pc));
}

TcavScore tcav_score(std::span<const double> sensitivities) {
  if (sensitivities.empty()) throw InvalidInput("tcav_score: no tested inputs");
  TcavScore s;
  std::size_t positive = 0;
  for (double v : sensitivities) {
    positive += v > 0.0 ? 1 : 0;
    s.mean_magnitude += v;
    s.mean_abs_magnitude += std::abs(v);
  }
  const auto n = static_cast<double>(sensitivities.size());
  s.sign_fraction = static_cast<double>(positive) / n;
  s.mean_magnitude /= n;
  s.mean_abs_magnitude /= n;
  return s;
}

TcavScore tcav_score(const Cav& cav, std::span<const std::vector<double>> gradients) {
  std::vector<double> s;
  s.reserve(gradients.size());
  for (const auto& g : gradients) s.push_back(sensitivity(cav, g));
  return tcav_score(s);
}

TcavRow significance_test(std::string concept_name, std::string counter_name,
                          std::span<const Latent> positives, std::span<const Latent> fixed_counter,
                          std::span<const Latent> pool, std::span<const std::vector<double>> eval_gradients,
                          const SignificanceConfig& config) {
  if (config.n_runs < 10) throw InvalidInput("significance_test: n_runs must be at least 10");
  if (config.sample_size == 0) throw InvalidInput("significance_test: sample size must be positive");
  if (positives.empty()) throw InvalidInput("significance_test: concept has no members");
  if (eval_gradients.empty()) throw InvalidInput("significance_test: no tested inputs");
  if (pool.size() < 2 * config.sample_size) {
    throw InvalidInput("significance_test: random pool has " + std::to_string(pool.size()) +
                       " shapes, need at least " + std::to_string(2 * config.sample_size));
  }

  std::vector<double> concept_sign, concept_mean, concept_abs, random_sign;
  for (std::size_t run = 0; run < config.n_runs; ++run) {
    Rng rng(mix_seed(config.seed, 2 * run));
    CavConfig cc = config.cav;
    cc.seed = mix_seed(config.seed, 2 * run + 1);

    const auto pos_idx = rng.sample_without_replacement(positives.size(), config.sample_size);
    const auto pos = pick(positives, pos_idx);
    std::vector<Latent> neg;
    if (fixed_counter.empty()) {
      // The non-concept never contains this run's concept members.
      const std::set<Latent> taken(pos.begin(), pos.end());
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (!taken.count(pool[i])) free.push_back(i);
      }
      if (free.size() < config.sample_size) {
        throw InvalidInput("significance_test: too few non-concept shapes left in the random pool");
      }
      for (std::size_t k : rng.sample_without_replacement(free.size(), config.sample_size)) neg.push_back(pool[free[k]]);
    } else {
      neg = pick(fixed_counter, rng.sample_without_replacement(fixed_counter.size(), config.sample_size));
    }
    const auto score = tcav_score(train_cav(pos, neg, cc, concept_name, counter_name), eval_gradients);
    concept_sign.push_back(score.sign_fraction);
    concept_mean.push_back(score.mean_magnitude);
    concept_abs.push_back(score.mean_abs_magnitude);

    const auto both = rng.sample_without_replacement(pool.size(), 2 * config.sample_size);
    const std::span<const std::size_t> all(both);
    const auto ra = pick(pool, all.first(config.sample_size));
    const auto rb = pick(pool, all.subspan(config.sample_size));
    random_sign.push_back(tcav_score(train_cav(ra, rb, cc, "random", "random"), eval_gradients).sign_fraction);
  }

  TcavRow row;
  row.concept_name = std::move(concept_name);
  row.counter_name = std::move(counter_name);
  row.sign_fraction = stats::mean(concept_sign);
  row.mean_magnitude = stats::mean(concept_mean);
  row.mean_abs_magnitude = stats::mean(concept_abs);
  row.std_error = stats::std_error(concept_sign);
  row.random_sign_fraction = stats::mean(random_sign);
  row.random_std_error = stats::std_error(random_sign);
  row.p_value = stats::two_sample_t_test(concept_sign, random_sign).p_value;
  row.n_runs = config.n_runs;
  return row;
}

std::string TcavReport::to_csv() const {
  std::string out =
      "concept,counter,sign_fraction,mean_magnitude,std_error,p_value,n_runs,mean_abs_magnitude,"
      "random_sign_fraction,random_std_error\n";
  for (const auto& r : rows) {
    out += r.concept_name + "," + r.counter_name + "," + format_double(r.sign_fraction) + "," +
           format_double(r.mean_magnitude) + "," + format_double(r.std_error) + "," + format_double(r.p_value) +
           "," + std::to_string(r.n_runs) + "," + format_double(r.mean_abs_magnitude) + "," +
           format_double(r.random_sign_fraction) + "," + format_double(r.random_std_error) + "\n";
  }
  return out;
}

TcavReport TcavReport::from_csv(std::string_view text) {
  TcavReport report;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("concept,counter,", 0) != 0) {
    throw IoError("TCAV report: missing header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == ',') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (f.size() != 10) throw IoError("TCAV report: expected 10 columns, got " + std::to_string(f.size()));
    TcavRow r;
    r.concept_name = f[0];
    r.counter_name = f[1];
    r.sign_fraction = parse_double(f[2]);
    r.mean_magnitude = parse_double(f[3]);
    r.std_error = parse_double(f[4]);
    r.p_value = parse_double(f[5]);
    r.n_runs = static_cast<std::size_t>(parse_int(f[6]));
    r.mean_abs_magnitude = parse_double(f[7]);
    r.random_sign_fraction = parse_double(f[8]);
    r.random_std_error = parse_double(f[9]);
    report.rows.push_back(std::move(r));
  }
  return report;
}

// --- concept definitions ---------------------------------------------------

ConceptSpec ConceptSpec::from_json(std::string_view text) {
  ConceptSpec s;
  try {
    const auto j = json::parse(text);
    s.name = j.at("name").get<std::string>();
    if (s.name.empty()) throw InvalidInput("concept name is empty");
    int sources = 0;
    if (j.contains("ids")) {
      s.ids = j.at("ids").get<std::vector<std::string>>();
      ++sources;
    }
    if (j.contains("label")) {
      s.label = j.at("label").get<std::string>();
      if (j.contains("split")) s.split = parse_split(j.at("split").get<std::string>());
      s.limit = j.value("limit", std::size_t{0});
      ++sources;
    }
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      s.generator_kind = g.at("kind").get<std::string>();
      s.generator_count = g.at("count").get<std::size_t>();
      s.generator_seed = g.value("seed", std::uint64_t{0});
      ++sources;
    }
    if (sources != 1) throw InvalidInput("concept '" + s.name + "' needs exactly one of ids, label, generator");
    s.counter = j.value("counter", std::string());
  } catch (const json::exception& ex) {
    throw InvalidInput(std::string("malformed concept file: ") + ex.what());
  }
  return s;
}

std::string ConceptSpec::to_json() const {
  ordered_json j;
  j["name"] = name;
  if (!generator_kind.empty()) {
    j["generator"] = {{"kind", generator_kind}, {"count", generator_count}, {"seed", generator_seed}};
  } else if (!label.empty()) {
    j["label"] = label;
    if (split) j["split"] = std::string(split_name(*split));
    if (limit) j["limit"] = limit;
  } else {
    j["ids"] = ids;
  }
  if (!counter.empty()) j["counter"] = counter;
  return j.dump(2) + "\n";
}

ConceptSpec load_concept_spec(const std::filesystem::path& path) {
  return ConceptSpec::from_json(read_text_file(path));
}

ConceptSet resolve_concept(const ConceptSpec& spec, const DatasetManifest& manifest) {
  ConceptSet set;
  set.name = spec.name;
  if (!spec.generator_kind.empty()) {
    if (spec.generator_count == 0) throw InvalidInput("concept '" + spec.name + "' generates no shapes");
    set.source = ConceptSet::Source::kSynthetic;
    const auto layout = manifest.layout();
    const auto kind = parse_shape_kind(spec.generator_kind);
    const SizeBounds bounds{};
    for (std::size_t i = 0; i < spec.generator_count; ++i) {
      Rng rng(mix_seed(spec.generator_seed, i));
      PointCloud pc;
      switch (kind) {
        case ShapeKind::kCuboid: pc = gen_cuboid(rng, bounds, layout); break;
        case ShapeKind::kEllipsoid: pc = gen_ellipsoid(rng, bounds, layout); break;
        case ShapeKind::kCarLike:
          pc = gen_car_like(rng, i % 2 == 0 ? CarStyle::kSport : CarStyle::kSedan, layout).cloud;
          break;
        case ShapeKind::kBumpedEllipsoid: pc = gen_bumped_ellipsoid(rng, BumpRecipe{}, layout).cloud; break;
      }
      set.ids.push_back(spec.name + "_synthetic_" + std::to_string(i));
      set.clouds.push_back(normalize(pc));
    }
    return set;
  }
  if (!spec.label.empty()) {
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
      const auto& e = manifest.entries[i];
      if (!e.has_label(spec.label)) continue;
      if (spec.split && e.split != *spec.split) continue;
      set.indices.push_back(i);
      set.ids.push_back(e.id);
      if (spec.limit && set.indices.size() == spec.limit) break;
    }
  } else {
    for (const auto& id : spec.ids) {
      set.indices.push_back(manifest.index_of(id));
      set.ids.push_back(id);
    }
  }
  if (set.indices.empty()) throw InvalidInput("concept '" + spec.name + "' matches no shapes");
  return set;
}

std::vector<Latent> concept_latents(const ConceptSet& set, const AutoEncoder& ae,
                                    std::span<const Latent> dataset_latents) {
  if (set.source == ConceptSet::Source::kSynthetic) return encode_all(ae, set.clouds);
  std::vector<Latent> out;
  out.reserve(set.indices.size());
  for (std::size_t i : set.indices) {
    if (i >= dataset_latents.size()) throw InvalidInput("concept member outside the encoded dataset");
    out.push_back(dataset_latents[i]);
  }
  return out;
}

std::optional<std::size_t> parse_random_counter(std::string_view counter) {
  constexpr std::string_view prefix = "random:";
  if (counter.substr(0, prefix.size()) != prefix) return std::nullopt;
  const long long n = parse_int(counter.substr(prefix.size()));
  if (n <= 0) throw InvalidInput("random counter size must be positive");
  return static_cast<std::size_t>(n);
}

// --- persistence -----------------------------------------------------------

std::string cav_to_json(const Cav& cav) {
  ordered_json j;
  j["format"] = "concept-forge-cav/1";
  j["name"] = cav.name;
  j["concept"] = cav.concept_name;
  j["counter"] = cav.counter_name;
  // Doubles are written by nlohmann in round-trip form.
  j["w"] = cav.w;
  j["b"] = cav.b;
  j["w_hat"] = cav.w_hat;
  j["train_accuracy"] = cav.train_accuracy;
  j["ae_hash"] = cav.ae_hash;
  j["ae_path"] = cav.ae_path;
  return j.dump(2) + "\n";
}

Cav cav_from_json(std::string_view text) {
  Cav cav;
  try {
    const auto j = json::parse(text);
    cav.name = j.at("name").get<std::string>();
    cav.concept_name = j.at("concept").get<std::string>();
    cav.counter_name = j.at("counter").get<std::string>();
    cav.w = j.at("w").get<std::vector<double>>();
    cav.b = j.at("b").get<double>();
    cav.w_hat = j.at("w_hat").get<std::vector<double>>();
    cav.train_accuracy = j.value("train_accuracy", 0.0);
    cav.ae_hash = j.value("ae_hash", std::string());
    cav.ae_path = j.value("ae_path", std::string());
  } catch (const json::exception& ex) {
    throw IoError(std::string("malformed CAV file: ") + ex.what());
  }
  if (cav.w.empty() || cav.w.size() != cav.w_hat.size()) throw IoError("CAV file: w and w_hat lengths differ");
  if (std::abs(norm2(cav.w_hat) - 1.0) > 1e-9) throw IoError("CAV file: w_hat is not a unit vector");
  return cav;
}

void save_cav(const std::filesystem::path& path, const Cav& cav) { write_text_file(path, cav_to_json(cav)); }

Cav load_cav(const std::filesystem::path& path, const std::string& expected_ae_hash) {
  Cav cav = cav_from_json(read_text_file(path));
  if (!expected_ae_hash.empty() && cav.ae_hash != expected_ae_hash) {
    throw HashMismatch("CAV " + path.string() + " belongs to auto-encoder " + cav.ae_hash + ", not " +
                       expected_ae_hash);
  }
  return cav;
}

}  // namespace cforge
