#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "carbongrid/geogrid.hpp"

namespace carbongrid {

enum class ImageMode { density, noise };

/// Generative law for a synthetic region with known ground truth.
///
/// Emission of cell i before smoothing is raw_i = w · poi_counts_i + u · mean_pixel_i.
/// The raw field is Gaussian-smoothed over neighboring cells (spatial
/// agglomeration), perturbed by N(0, noise_std), and clipped at zero. An
/// optional affine map in log space (log_scale, log_shift) produces shifted
/// target regions with the same inputs law.
struct SynthSpec {
  std::size_t grid_rows = 12;
  std::size_t grid_cols = 12;
  double resolution_m = 1000.0;
  std::size_t categories = 6;
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t poi_height = 16;
  std::size_t poi_width = 16;
  std::vector<double> weights;  // w; drawn from the seed when empty
  double image_weight = 40.0;   // u
  double smoothing_width = 1.0; // Gaussian sigma in cells; 0 disables
  double noise_std = 0.5;       // tonnes
  double latent_smoothing = 1.0;
  double density_contrast = 1.0;
  double poi_intensity = 40.0;  // expected POIs per cell at unit density
  ImageMode image_mode = ImageMode::density;
  std::size_t region_bands = 3;
  double log_scale = 1.0;
  double log_shift = 0.0;
  SplitConfig split;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthTruth {
  std::vector<double> weights;
  double image_weight = 0.0;
  double noise_std = 0.0;
  double smoothing_width = 0.0;
  double log_scale = 1.0;
  double log_shift = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> raw_field;        // per cell, before smoothing
  std::vector<double> pre_noise_field;  // per cell, smoothed
};

struct SynthRegion {
  RegionDataset dataset;
  SynthTruth truth;
};

SynthRegion synth_region(const SynthSpec& spec);

/// Gaussian smoothing of a rows×cols field (sigma in cells), truncated at
/// 3 sigma and renormalized over in-bounds cells. sigma <= 0 returns a copy.
std::vector<double> gaussian_smooth(const std::vector<double>& field, std::size_t rows,
                                    std::size_t cols, double sigma);

}  // namespace carbongrid
