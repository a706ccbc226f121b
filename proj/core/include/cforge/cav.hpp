#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cforge/autoencoder.hpp"
#include "cforge/dataset.hpp"
#include "cforge/numerics.hpp"
#include "cforge/regressor.hpp"

namespace cforge {

// Concept activation vector: normal of a linear classifier separating the
// concept's latents (+1) from the counter set (-1).
struct Cav {
  std::string name;
  std::string concept_name;
  std::string counter_name;
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> w_hat;  // w / |w|
  double train_accuracy = 0.0;
  std::string ae_hash;
  std::string ae_path;

  std::size_t dim() const { return w.size(); }
  // Classifier margin w . z + b.
  double score(std::span<const double> z) const;
};

// Same hyperplane with the classes swapped.
Cav negated(const Cav& cav);

struct CavConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.01;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

// Hinge loss + L2 by SGD. Each step draws one positive and one negative, so
// both classes weigh equally regardless of set sizes and the update is
// antisymmetric under swapping the sets. Throws InvalidInput on empty sets
// or mixed lengths, DegenerateError when the sets are identical or |w|
// collapses below 1e-12. The result satisfies w.mean(pos) > w.mean(neg).
Cav train_cav(std::span<const Latent> positives, std::span<const Latent> negatives, const CavConfig& config,
              std::string concept_name = "concept", std::string counter_name = "counter");

// Fraction of samples on the correct side (pos: margin > 0, neg: margin <= 0).
double cav_accuracy(const Cav& cav, std::span<const Latent> positives, std::span<const Latent> negatives);

// Unit-direction derivative w_hat . grad.
double sensitivity(const Cav& cav, std::span<const double> grad);

double sensitivity_of_drag_latent(const Cav& cav, const Regressor& reg, std::span<const double> z);
double sensitivity_of_drag(const Cav& cav, const Regressor& reg, const AutoEncoder& ae, const PointCloud& pc);

// Directional derivative of every decoded coordinate along w_hat at
// encode(pc), as a P x 3 matrix.
Matrix sensitivity_field(const Cav& cav, const AutoEncoder& ae, const PointCloud& pc);
Matrix sensitivity_field_latent(const Cav& cav, const AutoEncoder& ae, std::span<const double> z);

struct TcavScore {
  double sign_fraction = 0.0;       // share of strictly positive sensitivities
  double mean_magnitude = 0.0;      // signed mean
  double mean_abs_magnitude = 0.0;  // mean of |S|
};

TcavScore tcav_score(std::span<const double> sensitivities);
// `gradients` are target gradients w.r.t. the latent, one per tested input.
TcavScore tcav_score(const Cav& cav, std::span<const std::vector<double>> gradients);

struct SignificanceConfig {
  std::size_t n_runs = 20;
  std::size_t sample_size = 50;  // random non-concept size, and cap on concept samples per run
  CavConfig cav{};
  std::uint64_t seed = 0;
};

struct TcavRow {
  std::string concept_name;
  std::string counter_name;
  double sign_fraction = 0.0;   // mean over concept runs
  double mean_magnitude = 0.0;  // mean over runs of the signed mean sensitivity
  double std_error = 0.0;       // standard error of the concept-run sign fractions
  double p_value = 1.0;
  std::size_t n_runs = 0;
  double mean_abs_magnitude = 0.0;
  double random_sign_fraction = 0.0;
  double random_std_error = 0.0;
};

struct TcavReport {
  std::vector<TcavRow> rows;

  std::string to_csv() const;
  static TcavReport from_csv(std::string_view text);
};

// Runs n_runs concept CAVs and n_runs random-vs-random CAVs and compares
// their sign fractions with a two-sided pooled t-test. Concept runs use up to
// sample_size positives; when `fixed_counter` is empty each run draws a fresh
// random counter of sample_size from the `pool` entries that are not among
// that run's positives, otherwise up to sample_size of the fixed counter.
// Passing the pool itself as the concept gives the null case: concept and
// random runs are then identically distributed. Random runs draw two disjoint sets of sample_size from
// `pool`. Throws InvalidInput when n_runs < 10 or the pool is too small.
TcavRow significance_test(std::string concept_name, std::string counter_name,
                          std::span<const Latent> positives, std::span<const Latent> fixed_counter,
                          std::span<const Latent> pool, std::span<const std::vector<double>> eval_gradients,
                          const SignificanceConfig& config);

// --- concept definitions ---------------------------------------------------

// Concept file (JSON), one of:
//   {"name": ..., "ids": [...]}
//   {"name": ..., "label": "cuboid", "split": "train", "limit": 30}
//   {"name": ..., "generator": {"kind": "cuboid", "count": 30, "seed": 1}}
// plus an optional "counter": "random:50" or a path to another concept file
// (relative to this one).
struct ConceptSpec {
  std::string name;
  std::vector<std::string> ids;
  std::string label;
  std::optional<Split> split;
  std::size_t limit = 0;  // 0 = no limit
  std::string generator_kind;
  std::size_t generator_count = 0;
  std::uint64_t generator_seed = 0;
  std::string counter;  // empty = random:50

  static ConceptSpec from_json(std::string_view text);
  std::string to_json() const;
};

ConceptSpec load_concept_spec(const std::filesystem::path& path);

struct ConceptSet {
  enum class Source { kDataset, kSynthetic };
  std::string name;
  Source source = Source::kDataset;
  std::vector<std::string> ids;
  std::vector<std::size_t> indices;  // manifest rows for dataset concepts
  std::vector<PointCloud> clouds;    // synthetic concepts only (normalised)
};

// Throws InvalidInput on unknown ids or an empty result.
ConceptSet resolve_concept(const ConceptSpec& spec, const DatasetManifest& manifest);

// Latents of the concept's members: dataset members are looked up in
// `dataset_latents` (manifest order), synthetic ones are encoded.
std::vector<Latent> concept_latents(const ConceptSet& set, const AutoEncoder& ae,
                                    std::span<const Latent> dataset_latents);

// Parses "random:N"; returns nullopt for anything else.
std::optional<std::size_t> parse_random_counter(std::string_view counter);

// --- persistence -----------------------------------------------------------

std::string cav_to_json(const Cav& cav);
Cav cav_from_json(std::string_view text);
void save_cav(const std::filesystem::path& path, const Cav& cav);
// Throws HashMismatch when `expected_ae_hash` is nonempty and differs.
Cav load_cav(const std::filesystem::path& path, const std::string& expected_ae_hash = {});

}  // namespace cforge
