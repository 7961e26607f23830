#include "carbongrid/synth.hpp"

#include <algorithm>
#include <cmath>

#include "carbongrid/errors.hpp"
#include "carbongrid/random.hpp"

namespace carbongrid {

void SynthSpec::validate() const {
  std::vector<std::string> problems;
  if (grid_rows == 0 || grid_cols == 0) problems.emplace_back("grid_rows/grid_cols must be > 0");
  if (!(resolution_m > 0.0)) problems.emplace_back("resolution_m must be > 0");
  if (categories == 0) problems.emplace_back("categories must be > 0");
  if (image_height == 0 || image_width == 0) problems.emplace_back("image size must be > 0");
  if (poi_height == 0 || poi_width == 0) problems.emplace_back("poi size must be > 0");
  if (!weights.empty() && weights.size() != categories) {
    problems.emplace_back("weights must have one entry per category");
  }
  for (double w : weights) {
    if (!std::isfinite(w)) problems.emplace_back("weights must be finite");
  }
  if (!(smoothing_width >= 0.0)) problems.emplace_back("smoothing_width must be >= 0");
  if (!(noise_std >= 0.0)) problems.emplace_back("noise_std must be >= 0");
  if (!(latent_smoothing >= 0.0)) problems.emplace_back("latent_smoothing must be >= 0");
  if (!(poi_intensity >= 0.0)) problems.emplace_back("poi_intensity must be >= 0");
  if (!(log_scale > 0.0)) problems.emplace_back("log_scale must be > 0");
  if (region_bands == 0 || region_bands > grid_cols) {
    problems.emplace_back("region_bands must be in [1, grid_cols]");
  }
  if (!problems.empty()) {
    std::string msg = "invalid synth spec:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

std::vector<double> gaussian_smooth(const std::vector<double>& field, std::size_t rows,
                                    std::size_t cols, double sigma) {
  if (field.size() != rows * cols) throw DimensionError("gaussian_smooth: field size mismatch");
  if (sigma <= 0.0) return field;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> out(field.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0, norm = 0.0;
      for (std::ptrdiff_t dr = -radius; dr <= radius; ++dr) {
        for (std::ptrdiff_t dc = -radius; dc <= radius; ++dc) {
          const std::ptrdiff_t rr = static_cast<std::ptrdiff_t>(r) + dr;
          const std::ptrdiff_t cc = static_cast<std::ptrdiff_t>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(rows) ||
              cc >= static_cast<std::ptrdiff_t>(cols)) {
            continue;
          }
          const double k = std::exp(-static_cast<double>(dr * dr + dc * dc) / (2 * sigma * sigma));
          acc += k * field[static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc)];
          norm += k;
        }
      }
      out[r * cols + c] = acc / norm;
    }
  }
  return out;
}

namespace {

// Smoothed white noise, standardized to zero mean and unit variance.
std::vector<double> latent_field(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  std::vector<double> noise(rows * cols);
  for (double& v : noise) v = standard_normal(rng);
  auto field = gaussian_smooth(noise, rows, cols, sigma);
  double mu = 0.0;
  for (double v : field) mu += v;
  mu /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (double& v : field) v = sd > 0.0 ? (v - mu) / sd : 0.0;
  return field;
}

}  // namespace

SynthRegion synth_region(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synth"));
  const std::size_t rows = spec.grid_rows, cols = spec.grid_cols, n = rows * cols;
  const std::size_t cats = spec.categories;

  SynthTruth truth;
  truth.weights = spec.weights;
  if (truth.weights.empty()) {
    for (std::size_t c = 0; c < cats; ++c) truth.weights.push_back(uniform(rng, 0.5, 3.0));
  }
  truth.image_weight = spec.image_weight;
  truth.noise_std = spec.noise_std;
  truth.smoothing_width = spec.smoothing_width;
  truth.log_scale = spec.log_scale;
  truth.log_shift = spec.log_shift;
  truth.seed = spec.seed;

  RegionDataset ds;
  ds.bounds = {0.0, 0.0, static_cast<double>(cols) * spec.resolution_m,
               static_cast<double>(rows) * spec.resolution_m, spec.resolution_m};
  ds.rows = rows;
  ds.cols = cols;
  ds.categories = cats;
  for (std::size_t c = 0; c < cats; ++c) ds.category_names.push_back("category_" + std::to_string(c));
  ds.image_height = spec.image_height;
  ds.image_width = spec.image_width;
  ds.poi_height = spec.poi_height;
  ds.poi_width = spec.poi_width;
  ds.cells = tile_region(ds.bounds);

  const auto density_z = latent_field(rows, cols, spec.latent_smoothing, rng);
  std::vector<std::vector<double>> mix_z;
  for (std::size_t c = 0; c < cats; ++c) {
    mix_z.push_back(latent_field(rows, cols, spec.latent_smoothing, rng));
  }

  std::vector<double> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    GridCell& cell = ds.cells[i];
    const double density = std::exp(spec.density_contrast * density_z[i]);

    std::vector<double> mix(cats);
    double mix_total = 0.0;
    for (std::size_t c = 0; c < cats; ++c) {
      mix[c] = std::exp(mix_z[c][i]);
      mix_total += mix[c];
    }
    const std::uint64_t count = poisson(rng, spec.poi_intensity * density);
    std::vector<POIRecord> cell_pois;
    for (std::uint64_t k = 0; k < count; ++k) {
      POIRecord p;
      p.x = uniform(rng, cell.footprint.min_x, cell.footprint.max_x);
      p.y = uniform(rng, cell.footprint.min_y, cell.footprint.max_y);
      double pick = uniform01(rng) * mix_total;
      p.category = cats - 1;
      for (std::size_t c = 0; c < cats; ++c) {
        if (pick < mix[c]) {
          p.category = c;
          break;
        }
        pick -= mix[c];
      }
      cell_pois.push_back(p);
    }
    cell.poi = rasterize_pois(cell_pois, cell.footprint, spec.poi_height, spec.poi_width, cats);

    // Built-up brightness follows density; POI locations add local texture.
    std::vector<POIRecord> flat = cell_pois;
    for (POIRecord& p : flat) p.category = 0;
    const Tensor activity =
        rasterize_pois(flat, cell.footprint, spec.image_height, spec.image_width, 1);
    const double brightness = density / (1.0 + density);
    std::vector<double> pixels(spec.image_height * spec.image_width * 3);
    for (std::size_t p = 0; p < spec.image_height * spec.image_width; ++p) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v;
        if (spec.image_mode == ImageMode::noise) {
          v = uniform01(rng);
        } else {
          const double tint = 0.05 * static_cast<double>(ch);
          v = 0.1 + 0.6 * brightness + 0.1 * std::min(activity[p], 2.0) + tint +
              0.05 * standard_normal(rng);
        }
        pixels[p * 3 + ch] = std::clamp(v, 0.0, 1.0);
      }
    }
    cell.image = Tensor(Shape{spec.image_height, spec.image_width, 3}, std::move(pixels));

    double mean_pixel = 0.0;
    for (double v : cell.image.data()) mean_pixel += v;
    mean_pixel /= static_cast<double>(cell.image.size());
    std::vector<double> counts(cats, 0.0);
    const auto poi = cell.poi.data();
    for (std::size_t k = 0; k < poi.size(); ++k) counts[k % cats] += poi[k];
    raw[i] = truth.image_weight * mean_pixel;
    for (std::size_t c = 0; c < cats; ++c) raw[i] += truth.weights[c] * counts[c];

    cell.region_tag = "D" + std::to_string(cell.col * spec.region_bands / cols);
    ds.pois.insert(ds.pois.end(), cell_pois.begin(), cell_pois.end());
  }

  truth.raw_field = raw;
  truth.pre_noise_field = gaussian_smooth(raw, rows, cols, spec.smoothing_width);
  Rng noise_rng(derive_seed(spec.seed, "synth.noise"));
  for (std::size_t i = 0; i < n; ++i) {
    double e = truth.pre_noise_field[i];
    if (spec.noise_std > 0.0) e += spec.noise_std * standard_normal(noise_rng);
    e = std::max(e, 0.0);
    if (spec.log_scale != 1.0 || spec.log_shift != 0.0) {
      e = std::max(emission_of(spec.log_scale * log_target_of(e) + spec.log_shift), 0.0);
    }
    ds.cells[i].emission_t = e;
    ds.cells[i].log_target = log_target_of(e);
  }
  ds.reindex();
  split_dataset(ds, spec.split, spec.seed);
  return {std::move(ds), std::move(truth)};
}

}  // namespace carbongrid
