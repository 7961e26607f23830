#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "carbongrid/tensor.hpp"

namespace carbongrid {

/// Axis-aligned region in projected meters plus the cell edge length.
struct RegionBounds {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;
  double resolution_m = 1000.0;

  void validate() const;
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

struct Footprint {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  double area() const { return (max_x - min_x) * (max_y - min_y); }
};

enum class Split { train, valid, test, none };

const char* split_name(Split split);
Split parse_split(const std::string& name);

/// One grid. Rows count upward from min_y, columns rightward from min_x.
struct GridCell {
  std::size_t row = 0;
  std::size_t col = 0;
  Footprint footprint;
  double emission_t = 0.0;
  double log_target = 0.0;  // ln(1 + emission_t)
  Tensor image;             // H×W×3, values in [0,1]
  Tensor poi;               // H'×W'×C counts
  std::string region_tag;
  Split split = Split::none;
};

/// Emission (tonnes) to training target.
double log_target_of(double emission_t);
/// Inverse of log_target_of.
double emission_of(double log_target);

struct POIRecord {
  double x = 0.0;
  double y = 0.0;
  std::size_t category = 0;
};

/// All cells of a region, ordered by (row, col).
struct RegionDataset {
  RegionBounds bounds;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t categories = 0;
  std::vector<std::string> category_names;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::size_t poi_height = 0;
  std::size_t poi_width = 0;
  std::vector<GridCell> cells;
  std::vector<POIRecord> pois;

  /// Rebuilds the (row, col) lookup; call after editing `cells`.
  void reindex();
  /// Index of the cell at (row, col), if the region contains one.
  std::optional<std::size_t> find(std::size_t row, std::size_t col) const;
  std::vector<std::size_t> indices_of(Split split) const;
  std::vector<std::string> region_tags() const;
  /// Checks tensor shapes, ordering, and per-cell invariants.
  void validate() const;

 private:
  std::vector<std::ptrdiff_t> lookup_;  // rows*cols, -1 when absent
};

/// Cell skeletons partitioning the bounds; the last row/column is clipped.
std::vector<GridCell> tile_region(const RegionBounds& bounds);
std::size_t grid_rows(const RegionBounds& bounds);
std::size_t grid_cols(const RegionBounds& bounds);

struct RasterReport {
  std::size_t accepted = 0;
  std::size_t outside = 0;
  std::vector<std::string> errors;  // rejected records
};

/// Counts POIs per (pixel, category). Points on the max edge land in the last
/// bin; points outside the footprint are skipped and counted.
Tensor rasterize_pois(const std::vector<POIRecord>& pois, const Footprint& footprint,
                      std::size_t height, std::size_t width, std::size_t categories,
                      RasterReport* report = nullptr);

/// M×M block centered on (row, col). Slots are row-major from the lowest
/// row offset; absent cells are std::nullopt.
struct Neighborhood {
  std::size_t size = 1;
  std::vector<std::optional<std::size_t>> slots;

  bool valid(std::size_t slot) const { return slots[slot].has_value(); }
  std::size_t valid_count() const;
  std::size_t center_slot() const { return slots.size() / 2; }
};

Neighborhood neighborhood(const RegionDataset& dataset, std::size_t row, std::size_t col,
                          std::size_t size);

/// Merges factor×factor blocks into one coarser cell. Partial blocks (edge
/// remainders or missing children) are dropped.
RegionDataset aggregate_resolution(const RegionDataset& dataset, std::size_t factor);

enum class SplitMode { random, regional };

struct SplitConfig {
  SplitMode mode = SplitMode::random;
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  double test_fraction = 0.2;
  std::vector<std::string> valid_tags;
  std::vector<std::string> test_tags;
};

/// Tags every cell with train/valid/test. Throws ConfigError when a split
/// would be empty.
void split_dataset(RegionDataset& dataset, const SplitConfig& config, std::uint64_t seed);

}  // namespace carbongrid
