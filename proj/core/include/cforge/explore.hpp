#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cforge/autoencoder.hpp"
#include "cforge/cav.hpp"
#include "cforge/numerics.hpp"
#include "cforge/regressor.hpp"

namespace cforge {

struct EditedLatent {
  Latent z;
  bool out_of_box = false;  // some coordinate left [-1, 1]; decoded as-is, never clamped
};

// z + eps * w_hat.
EditedLatent translate(std::span<const double> z, const Cav& cav, double eps);

struct BlendTerm {
  const Cav* cav = nullptr;
  double eps = 0.0;
};

// z + sum_i eps_i * w_hat_i.
EditedLatent blend(std::span<const double> z, std::span<const BlendTerm> terms);

struct GridCell {
  std::size_t i = 0;
  std::size_t j = 0;
  double eps_a = 0.0;
  double eps_b = 0.0;
  EditedLatent latent;
  PointCloud cloud;
};

struct BlendGrid {
  std::vector<double> eps_a;
  std::vector<double> eps_b;
  std::vector<GridCell> cells;  // row-major over (i, j)

  const GridCell& at(std::size_t i, std::size_t j) const { return cells.at(i * eps_b.size() + j); }
};

BlendGrid blend_grid(const AutoEncoder& ae, std::span<const double> z, const Cav& cav_a, const Cav& cav_b,
                     std::span<const double> eps_a, std::span<const double> eps_b);

// Writes cell_{i}_{j}.xyz for every cell and index.json with each cell's
// (eps_a, eps_b), out-of-box flag, drag proxy and, when a regressor is
// given, predicted drag.
void export_grid(const std::filesystem::path& dir, const BlendGrid& grid, const Regressor* reg = nullptr);

// `count` evenly spaced values from lo to hi inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t count);

struct RankedShape {
  std::string id;
  double score = 0.0;
};

struct QueryResult {
  std::vector<RankedShape> top;     // highest w.z + b first
  std::vector<RankedShape> bottom;  // lowest first
  bool clamped = false;             // k exceeded the number of shapes
};

// Ranks shapes by classifier margin; ties are broken by ascending id in both
// lists.
QueryResult query(std::span<const Latent> latents, std::span<const std::string> ids, const Cav& cav,
                  std::size_t k);

struct LatentCorrelation {
  Matrix matrix;  // h x h Pearson correlations
  double mean_abs_offdiag = 0.0;
  std::vector<std::size_t> constant_coordinates;  // their rows/columns are 0
};

// Throws InvalidInput for fewer than 2 latents or mixed lengths.
LatentCorrelation latent_correlation(std::span<const Latent> latents);

}  // namespace cforge
