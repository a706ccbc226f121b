#include "cforge/explore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "cforge/error.hpp"
#include "cforge/io.hpp"
#include "cforge/stats.hpp"

namespace cforge {

EditedLatent translate(std::span<const double> z, const Cav& cav, double eps) {
  const BlendTerm term{&cav, eps};
  return blend(z, std::span<const BlendTerm>(&term, 1));
}

EditedLatent blend(std::span<const double> z, std::span<const BlendTerm> terms) {
  EditedLatent out{{z.begin(), z.end()}, false};
  for (const auto& t : terms) {
    if (t.cav == nullptr) throw InvalidInput("blend: term without a CAV");
    if (t.cav->w_hat.size() != z.size()) {
      throw InvalidInput("blend: CAV '" + t.cav->name + "' has " + std::to_string(t.cav->w_hat.size()) +
                         " dimensions, latent has " + std::to_string(z.size()));
    }
    if (!std::isfinite(t.eps)) throw InvalidInput("blend: eps must be finite");
    for (std::size_t i = 0; i < z.size(); ++i) out.z[i] += t.eps * t.cav->w_hat[i];
  }
  out.out_of_box = outside_latent_box(out.z);
  return out;
}

BlendGrid blend_grid(const AutoEncoder& ae, std::span<const double> z, const Cav& cav_a, const Cav& cav_b,
                     std::span<const double> eps_a, std::span<const double> eps_b) {
  BlendGrid grid{{eps_a.begin(), eps_a.end()}, {eps_b.begin(), eps_b.end()}, {}};
  for (std::size_t i = 0; i < eps_a.size(); ++i) {
    for (std::size_t j = 0; j < eps_b.size(); ++j) {
      const BlendTerm terms[] = {{&cav_a, eps_a[i]}, {&cav_b, eps_b[j]}};
      GridCell cell{i, j, eps_a[i], eps_b[j], blend(z, terms), {}};
      cell.cloud = decode(ae, cell.latent.z);
      grid.cells.push_back(std::move(cell));
    }
  }
  return grid;
}

void export_grid(const std::filesystem::path& dir, const BlendGrid& grid, const Regressor* reg) {
  nlohmann::ordered_json index;
  index["rows"] = grid.eps_a.size();
  index["cols"] = grid.eps_b.size();
  index["eps_a"] = grid.eps_a;
  index["eps_b"] = grid.eps_b;
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : grid.cells) {
    const std::string file = "cell_" + std::to_string(c.i) + "_" + std::to_string(c.j) + ".xyz";
    save_xyz(dir / file, c.cloud);
    nlohmann::ordered_json e;
    e["i"] = c.i;
    e["j"] = c.j;
    e["file"] = file;
    e["eps_a"] = c.eps_a;
    e["eps_b"] = c.eps_b;
    e["out_of_box"] = c.latent.out_of_box;
    if (reg != nullptr) e["drag"] = predict(*reg, c.latent.z);
    e["drag_proxy"] = drag_proxy(c.cloud);
    cells.push_back(std::move(e));
  }
  index["cells"] = std::move(cells);
  write_text_file(dir / "index.json", index.dump(2) + "\n");
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) out[0] = lo;
  for (std::size_t i = 0; i < count && count > 1; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  if (count > 1) out.back() = hi;
  return out;
}

QueryResult query(std::span<const Latent> latents, std::span<const std::string> ids, const Cav& cav,
                  std::size_t k) {
  if (latents.size() != ids.size()) throw InvalidInput("query: latents and ids differ in length");
  std::vector<RankedShape> scored;
  scored.reserve(latents.size());
  for (std::size_t i = 0; i < latents.size(); ++i) scored.push_back({ids[i], cav.score(latents[i])});

  QueryResult out;
  if (k > scored.size()) {
    out.clamped = true;
    k = scored.size();
  }
  auto top = scored;
  std::sort(top.begin(), top.end(), [](const RankedShape& a, const RankedShape& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  auto bottom = std::move(scored);
  std::sort(bottom.begin(), bottom.end(), [](const RankedShape& a, const RankedShape& b) {
    return a.score != b.score ? a.score < b.score : a.id < b.id;
  });
  out.top.assign(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(k));
  out.bottom.assign(bottom.begin(), bottom.begin() + static_cast<std::ptrdiff_t>(k));
  return out;
}

LatentCorrelation latent_correlation(std::span<const Latent> latents) {
  if (latents.size() < 2) throw InvalidInput("latent_correlation needs at least two latents");
  const std::size_t h = latents.front().size();
  std::vector<std::vector<double>> cols(h, std::vector<double>(latents.size()));
  for (std::size_t n = 0; n < latents.size(); ++n) {
    if (latents[n].size() != h) throw InvalidInput("latent_correlation: mixed latent lengths");
    for (std::size_t i = 0; i < h; ++i) cols[i][n] = latents[n][i];
  }
  LatentCorrelation out{Matrix(h, h), 0.0, {}};
  std::vector<bool> constant(h);
  for (std::size_t i = 0; i < h; ++i) {
    constant[i] = std::all_of(cols[i].begin(), cols[i].end(), [&](double v) { return v == cols[i][0]; });
    if (constant[i]) out.constant_coordinates.push_back(i);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      double r = 0.0;
      if (!constant[i] && !constant[j]) r = i == j ? 1.0 : stats::pearson(cols[i], cols[j]);
      out.matrix(i, j) = r;
      if (i != j) sum += std::abs(r);
    }
  }
  if (h > 1) out.mean_abs_offdiag = sum / static_cast<double>(h * (h - 1));
  return out;
}

}  // namespace cforge
