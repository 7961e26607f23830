#include "carbongrid/geogrid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "carbongrid/errors.hpp"
#include "carbongrid/random.hpp"

namespace carbongrid {

void RegionBounds::validate() const {
  if (!(resolution_m > 0.0)) throw ConfigError("region bounds: resolution_m must be positive");
  if (!(max_x > min_x)) throw ConfigError("region bounds: max_x must exceed min_x");
  if (!(max_y > min_y)) throw ConfigError("region bounds: max_y must exceed min_y");
}

const char* split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
    case Split::none: return "none";
  }
  return "none";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  if (name == "none" || name.empty()) return Split::none;
  throw FormatError("unknown split '" + name + "'");
}

double log_target_of(double emission_t) { return std::log1p(emission_t); }
double emission_of(double log_target) { return std::expm1(log_target); }

void RegionDataset::reindex() {
  std::sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    return std::tie(a.row, a.col) < std::tie(b.row, b.col);
  });
  lookup_.assign(rows * cols, -1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const GridCell& c = cells[i];
    if (c.row >= rows || c.col >= cols) {
      throw FormatError("cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                        ") outside the " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " grid");
    }
    if (lookup_[c.row * cols + c.col] >= 0) {
      throw FormatError("duplicate cell (" + std::to_string(c.row) + "," +
                        std::to_string(c.col) + ")");
    }
    lookup_[c.row * cols + c.col] = static_cast<std::ptrdiff_t>(i);
  }
}

std::optional<std::size_t> RegionDataset::find(std::size_t row, std::size_t col) const {
  if (row >= rows || col >= cols || lookup_.size() != rows * cols) return std::nullopt;
  const std::ptrdiff_t idx = lookup_[row * cols + col];
  if (idx < 0) return std::nullopt;
  return static_cast<std::size_t>(idx);
}

std::vector<std::size_t> RegionDataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].split == split) out.push_back(i);
  }
  return out;
}

std::vector<std::string> RegionDataset::region_tags() const {
  std::set<std::string> tags;
  for (const GridCell& c : cells) tags.insert(c.region_tag);
  return {tags.begin(), tags.end()};
}

void RegionDataset::validate() const {
  bounds.validate();
  if (categories == 0) throw FormatError("dataset: category count must be positive");
  const Shape image_shape{image_height, image_width, 3};
  const Shape poi_shape{poi_height, poi_width, categories};
  for (const GridCell& c : cells) {
    const std::string where = "cell (" + std::to_string(c.row) + "," + std::to_string(c.col) + ")";
    if (c.image.shape() != image_shape) {
      throw FormatError(where + ": image shape " + shape_string(c.image.shape()) +
                        " expected " + shape_string(image_shape));
    }
    if (c.poi.shape() != poi_shape) {
      throw FormatError(where + ": poi shape " + shape_string(c.poi.shape()) + " expected " +
                        shape_string(poi_shape));
    }
    if (!(c.emission_t >= 0.0)) throw FormatError(where + ": negative emission");
    for (double v : c.poi.data()) {
      if (v < 0.0 || v != std::floor(v)) throw FormatError(where + ": poi counts must be whole");
    }
  }
  if (lookup_.size() != rows * cols) throw FormatError("dataset: index not built");
}

std::size_t grid_rows(const RegionBounds& bounds) {
  bounds.validate();
  return static_cast<std::size_t>(std::ceil(bounds.height() / bounds.resolution_m - 1e-9));
}

std::size_t grid_cols(const RegionBounds& bounds) {
  bounds.validate();
  return static_cast<std::size_t>(std::ceil(bounds.width() / bounds.resolution_m - 1e-9));
}

std::vector<GridCell> tile_region(const RegionBounds& bounds) {
  const std::size_t rows = grid_rows(bounds);
  const std::size_t cols = grid_cols(bounds);
  std::vector<GridCell> cells;
  cells.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      GridCell cell;
      cell.row = r;
      cell.col = c;
      cell.footprint.min_x = bounds.min_x + static_cast<double>(c) * bounds.resolution_m;
      cell.footprint.min_y = bounds.min_y + static_cast<double>(r) * bounds.resolution_m;
      cell.footprint.max_x = c + 1 == cols ? bounds.max_x
                                           : bounds.min_x + static_cast<double>(c + 1) *
                                                                bounds.resolution_m;
      cell.footprint.max_y = r + 1 == rows ? bounds.max_y
                                           : bounds.min_y + static_cast<double>(r + 1) *
                                                                bounds.resolution_m;
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

namespace {

// floor-rule bin with the max edge folded into the last bin.
std::size_t bin_of(double coord, double lo, double hi, std::size_t bins) {
  const double pos = (coord - lo) / (hi - lo) * static_cast<double>(bins);
  const auto idx = static_cast<std::size_t>(std::floor(pos));
  return std::min(idx, bins - 1);
}

}  // namespace

Tensor rasterize_pois(const std::vector<POIRecord>& pois, const Footprint& footprint,
                      std::size_t height, std::size_t width, std::size_t categories,
                      RasterReport* report) {
  if (height == 0 || width == 0 || categories == 0) {
    throw DimensionError("rasterize_pois: raster extents must be positive");
  }
  RasterReport local;
  std::vector<double> counts(height * width * categories, 0.0);
  for (std::size_t k = 0; k < pois.size(); ++k) {
    const POIRecord& p = pois[k];
    if (p.category >= categories) {
      local.errors.push_back("poi " + std::to_string(k) + ": category " +
                             std::to_string(p.category) + " >= " + std::to_string(categories));
      continue;
    }
    if (p.x < footprint.min_x || p.x > footprint.max_x || p.y < footprint.min_y ||
        p.y > footprint.max_y) {
      ++local.outside;
      continue;
    }
    const std::size_t i = bin_of(p.y, footprint.min_y, footprint.max_y, height);
    const std::size_t j = bin_of(p.x, footprint.min_x, footprint.max_x, width);
    counts[(i * width + j) * categories + p.category] += 1.0;
    ++local.accepted;
  }
  if (report) *report = std::move(local);
  return Tensor(Shape{height, width, categories}, std::move(counts));
}

std::size_t Neighborhood::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(slots.begin(), slots.end(), [](const auto& s) { return s.has_value(); }));
}

Neighborhood neighborhood(const RegionDataset& dataset, std::size_t row, std::size_t col,
                          std::size_t size) {
  if (size == 0 || size % 2 == 0) {
    throw ContractError("neighborhood size must be odd and positive, got " +
                        std::to_string(size));
  }
  const auto half = static_cast<std::ptrdiff_t>(size / 2);
  Neighborhood block;
  block.size = size;
  block.slots.reserve(size * size);
  for (std::ptrdiff_t dr = -half; dr <= half; ++dr) {
    for (std::ptrdiff_t dc = -half; dc <= half; ++dc) {
      const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(row) + dr;
      const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(col) + dc;
      if (r < 0 || c < 0) {
        block.slots.emplace_back(std::nullopt);
      } else {
        block.slots.push_back(
            dataset.find(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
      }
    }
  }
  return block;
}

RegionDataset aggregate_resolution(const RegionDataset& dataset, std::size_t factor) {
  if (factor < 1) throw ContractError("aggregate_resolution: factor must be >= 1");
  if (factor == 1) return dataset;
  if (dataset.rows < factor || dataset.cols < factor) {
    throw ContractError("aggregate_resolution: region of " + std::to_string(dataset.rows) + "x" +
                        std::to_string(dataset.cols) + " cells is smaller than one " +
                        std::to_string(factor) + "x" + std::to_string(factor) + " block");
  }
  RegionDataset out;
  out.rows = dataset.rows / factor;
  out.cols = dataset.cols / factor;
  out.categories = dataset.categories;
  out.category_names = dataset.category_names;
  out.image_height = dataset.image_height;
  out.image_width = dataset.image_width;
  out.poi_height = dataset.poi_height;
  out.poi_width = dataset.poi_width;
  out.bounds = dataset.bounds;
  out.bounds.resolution_m = dataset.bounds.resolution_m * static_cast<double>(factor);

  const std::size_t ih = dataset.image_height, iw = dataset.image_width;
  const std::size_t ph = dataset.poi_height, pw = dataset.poi_width, pc = dataset.categories;
  bool bounds_set = false;
  for (std::size_t br = 0; br < out.rows; ++br) {
    for (std::size_t bc = 0; bc < out.cols; ++bc) {
      std::vector<const GridCell*> children;
      for (std::size_t dr = 0; dr < factor; ++dr) {
        for (std::size_t dc = 0; dc < factor; ++dc) {
          if (auto idx = dataset.find(br * factor + dr, bc * factor + dc)) {
            children.push_back(&dataset.cells[*idx]);
          }
        }
      }
      if (children.size() != factor * factor) continue;

      GridCell cell;
      cell.row = br;
      cell.col = bc;
      cell.footprint = children.front()->footprint;
      std::map<std::string, std::size_t> tag_votes;
      for (const GridCell* child : children) {
        cell.emission_t += child->emission_t;
        cell.footprint.min_x = std::min(cell.footprint.min_x, child->footprint.min_x);
        cell.footprint.min_y = std::min(cell.footprint.min_y, child->footprint.min_y);
        cell.footprint.max_x = std::max(cell.footprint.max_x, child->footprint.max_x);
        cell.footprint.max_y = std::max(cell.footprint.max_y, child->footprint.max_y);
        ++tag_votes[child->region_tag];
      }
      cell.log_target = log_target_of(cell.emission_t);
      cell.region_tag = std::max_element(tag_votes.begin(), tag_votes.end(),
                                         [](const auto& a, const auto& b) {
                                           return a.second < b.second;
                                         })->first;

      // Children tile a (factor*H)×(factor*W) mosaic; each output pixel is the
      // mean (image) or sum (POI) of one factor×factor block of the mosaic.
      std::vector<double> image(ih * iw * 3, 0.0);
      std::vector<double> poi(ph * pw * pc, 0.0);
      for (std::size_t dr = 0; dr < factor; ++dr) {
        for (std::size_t dc = 0; dc < factor; ++dc) {
          const GridCell& child = *children[dr * factor + dc];
          const auto img = child.image.data();
          for (std::size_t y = 0; y < ih; ++y) {
            for (std::size_t x = 0; x < iw; ++x) {
              const std::size_t oy = (dr * ih + y) / factor, ox = (dc * iw + x) / factor;
              for (std::size_t ch = 0; ch < 3; ++ch) {
                image[(oy * iw + ox) * 3 + ch] += img[(y * iw + x) * 3 + ch];
              }
            }
          }
          const auto counts = child.poi.data();
          for (std::size_t y = 0; y < ph; ++y) {
            for (std::size_t x = 0; x < pw; ++x) {
              const std::size_t oy = (dr * ph + y) / factor, ox = (dc * pw + x) / factor;
              for (std::size_t ch = 0; ch < pc; ++ch) {
                poi[(oy * pw + ox) * pc + ch] += counts[(y * pw + x) * pc + ch];
              }
            }
          }
        }
      }
      const double block = static_cast<double>(factor * factor);
      for (double& v : image) v /= block;
      cell.image = Tensor(Shape{ih, iw, 3}, std::move(image));
      cell.poi = Tensor(Shape{ph, pw, pc}, std::move(poi));

      if (!bounds_set) {
        out.bounds.min_x = cell.footprint.min_x;
        out.bounds.min_y = cell.footprint.min_y;
        out.bounds.max_x = cell.footprint.max_x;
        out.bounds.max_y = cell.footprint.max_y;
        bounds_set = true;
      } else {
        out.bounds.max_x = std::max(out.bounds.max_x, cell.footprint.max_x);
        out.bounds.max_y = std::max(out.bounds.max_y, cell.footprint.max_y);
      }
      out.cells.push_back(std::move(cell));
    }
  }
  if (out.cells.empty()) throw ContractError("aggregate_resolution: no complete block");
  out.reindex();

  for (const POIRecord& p : dataset.pois) {
    for (const GridCell& c : out.cells) {
      const Footprint& f = c.footprint;
      if (p.x >= f.min_x && p.x <= f.max_x && p.y >= f.min_y && p.y <= f.max_y) {
        out.pois.push_back(p);
        break;
      }
    }
  }
  return out;
}

void split_dataset(RegionDataset& dataset, const SplitConfig& config, std::uint64_t seed) {
  const std::size_t n = dataset.cells.size();
  if (config.mode == SplitMode::random) {
    const double fractions[] = {config.train_fraction, config.valid_fraction,
                                config.test_fraction};
    for (double f : fractions) {
      if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    }
    if (std::fabs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
      throw ConfigError("split fractions must sum to 1");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, "split"));
    shuffle(order, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * n));
    const auto n_valid = std::min(
        n - n_train, static_cast<std::size_t>(std::llround(config.valid_fraction * n)));
    const std::size_t n_test = n - n_train - n_valid;
    if (n_train == 0 || n_valid == 0 || n_test == 0) {
      throw ConfigError("random split of " + std::to_string(n) + " cells leaves an empty split (" +
                        std::to_string(n_train) + "/" + std::to_string(n_valid) + "/" +
                        std::to_string(n_test) + ")");
    }
    for (std::size_t k = 0; k < n; ++k) {
      dataset.cells[order[k]].split =
          k < n_train ? Split::train : (k < n_train + n_valid ? Split::valid : Split::test);
    }
    return;
  }

  const std::set<std::string> valid(config.valid_tags.begin(), config.valid_tags.end());
  const std::set<std::string> test(config.test_tags.begin(), config.test_tags.end());
  if (test.empty()) throw ConfigError("regional split requires at least one test tag");
  for (const std::string& tag : valid) {
    if (test.count(tag)) throw ConfigError("region tag '" + tag + "' is both valid and test");
  }
  std::size_t counts[3] = {0, 0, 0};
  for (GridCell& cell : dataset.cells) {
    if (cell.region_tag.empty()) throw ConfigError("regional split requires region tags");
    if (test.count(cell.region_tag)) {
      cell.split = Split::test;
      ++counts[2];
    } else if (valid.count(cell.region_tag)) {
      cell.split = Split::valid;
      ++counts[1];
    } else {
      cell.split = Split::train;
      ++counts[0];
    }
  }
  if (counts[0] == 0 || counts[1] == 0 || counts[2] == 0) {
    throw ConfigError("regional split leaves an empty split (" + std::to_string(counts[0]) + "/" +
                      std::to_string(counts[1]) + "/" + std::to_string(counts[2]) + ")");
  }
}

}  // namespace carbongrid
