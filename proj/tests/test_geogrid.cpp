#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "carbongrid/dataset_io.hpp"
#include "carbongrid/errors.hpp"
#include "carbongrid/geogrid.hpp"
#include "carbongrid/random.hpp"
#include "carbongrid/synth.hpp"

using namespace carbongrid;
namespace fs = std::filesystem;

namespace {

RegionBounds box(double w, double h, double res) { return {0.0, 0.0, w, h, res}; }

// Rook-adjacency Moran's I.
double morans_i(const std::vector<double>& x, std::size_t rows, std::size_t cols) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double num = 0.0, den = 0.0, weight = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double di = x[r * cols + c] - mean;
      den += di * di;
      const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
      for (int k = 0; k < 4; ++k) {
        const long rr = static_cast<long>(r) + dr[k], cc = static_cast<long>(c) + dc[k];
        if (rr < 0 || cc < 0 || rr >= static_cast<long>(rows) || cc >= static_cast<long>(cols))
          continue;
        num += di * (x[rr * cols + cc] - mean);
        weight += 1.0;
      }
    }
  }
  return static_cast<double>(x.size()) / weight * num / den;
}

RegionDataset toy_dataset(std::size_t rows, std::size_t cols, std::size_t h = 4) {
  RegionDataset ds;
  ds.bounds = box(static_cast<double>(cols) * 100.0, static_cast<double>(rows) * 100.0, 100.0);
  ds.rows = rows;
  ds.cols = cols;
  ds.categories = 2;
  ds.image_height = ds.image_width = h;
  ds.poi_height = ds.poi_width = h;
  ds.cells = tile_region(ds.bounds);
  Rng rng(5);
  for (GridCell& c : ds.cells) {
    c.emission_t = static_cast<double>(c.row * cols + c.col + 1);
    c.log_target = log_target_of(c.emission_t);
    std::vector<double> img(h * h * 3), poi(h * h * 2);
    for (double& v : img) v = uniform01(rng);
    for (double& v : poi) v = static_cast<double>(uniform_index(rng, 4));
    c.image = Tensor({h, h, 3}, img);
    c.poi = Tensor({h, h, 2}, poi);
    c.region_tag = c.col < cols / 2 ? "A" : "B";
  }
  ds.reindex();
  return ds;
}

}  // namespace

TEST_SUITE("tile_region") {
  TEST_CASE("cell counts") {
    CHECK(tile_region(box(4000, 4000, 1000)).size() == 16);
    CHECK(tile_region(box(4000, 4000, 2000)).size() == 4);
    CHECK(tile_region(box(3500, 2100, 1000)).size() == 4 * 3);
  }

  TEST_CASE("footprints partition the bounds") {
    for (const RegionBounds& b : {box(4000, 4000, 1000), box(3500, 2100, 1000), box(10, 7, 3)}) {
      const auto cells = tile_region(b);
      double area = 0.0;
      for (const auto& c : cells) area += c.footprint.area();
      CHECK(area == doctest::Approx(b.width() * b.height()));
      for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t j = i + 1; j < cells.size(); ++j) {
          const Footprint& a = cells[i].footprint;
          const Footprint& o = cells[j].footprint;
          const double ix = std::min(a.max_x, o.max_x) - std::max(a.min_x, o.min_x);
          const double iy = std::min(a.max_y, o.max_y) - std::max(a.min_y, o.min_y);
          CHECK_FALSE((ix > 1e-9 && iy > 1e-9));
        }
      }
    }
  }

  TEST_CASE("invalid bounds") {
    CHECK_THROWS_AS(tile_region(box(100, 100, 0)), ConfigError);
    CHECK_THROWS_AS(tile_region(box(100, 100, -5)), ConfigError);
    CHECK_THROWS_AS(tile_region(RegionBounds{10, 0, 5, 10, 1}), ConfigError);
  }
}

TEST_SUITE("rasterize_pois") {
  const Footprint fp{0.0, 0.0, 100.0, 100.0};

  TEST_CASE("empty list gives zeros") {
    const Tensor t = rasterize_pois({}, fp, 4, 4, 3);
    CHECK(t.shape() == Shape{4, 4, 3});
    for (double v : t.data()) CHECK(v == 0.0);
  }

  TEST_CASE("three centered POIs land in (1,1,0)") {
    const std::vector<POIRecord> pois(3, POIRecord{50.0, 50.0, 0});
    const Tensor t = rasterize_pois(pois, fp, 2, 2, 3);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == (i == (1 * 2 + 1) * 3 ? 3.0 : 0.0));
  }

  TEST_CASE("max edge folds into the last bin, outside points are counted") {
    RasterReport report;
    const std::vector<POIRecord> pois{{100.0, 100.0, 1}, {0.0, 0.0, 0}, {100.1, 5.0, 0}};
    const Tensor t = rasterize_pois(pois, fp, 4, 4, 2, &report);
    CHECK(t[(3 * 4 + 3) * 2 + 1] == 1.0);
    CHECK(t[0] == 1.0);
    CHECK(report.accepted == 2);
    CHECK(report.outside == 1);
  }

  TEST_CASE("bad categories are rejected with an error entry") {
    RasterReport report;
    const Tensor t = rasterize_pois({{10.0, 10.0, 7}}, fp, 2, 2, 3, &report);
    CHECK(report.errors.size() == 1);
    CHECK(report.accepted == 0);
    for (double v : t.data()) CHECK(v == 0.0);
  }

  TEST_CASE("matches a point-in-rectangle counting oracle") {
    Rng rng(17);
    const Footprint f{250.0, -80.0, 480.0, 95.0};
    const std::size_t h = 5, w = 7, cats = 3;
    std::vector<POIRecord> pois;
    for (int i = 0; i < 100; ++i) {
      pois.push_back({uniform(rng, f.min_x, f.max_x), uniform(rng, f.min_y, f.max_y),
                      static_cast<std::size_t>(uniform_index(rng, cats))});
    }
    const Tensor t = rasterize_pois(pois, f, h, w, cats);
    const double px = (f.max_x - f.min_x) / static_cast<double>(w);
    const double py = (f.max_y - f.min_y) / static_cast<double>(h);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double x0 = f.min_x + static_cast<double>(j) * px, x1 = x0 + px;
        const double y0 = f.min_y + static_cast<double>(i) * py, y1 = y0 + py;
        for (std::size_t c = 0; c < cats; ++c) {
          int count = 0;
          for (const auto& p : pois) {
            if (p.category == c && p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1) ++count;
          }
          CHECK(t[(i * w + j) * cats + c] == static_cast<double>(count));
        }
      }
    }
  }

  TEST_CASE("accepted POIs are conserved per category") {
    Rng rng(18);
    std::vector<POIRecord> pois;
    std::vector<double> expected(4, 0.0);
    for (int i = 0; i < 500; ++i) {
      POIRecord p{uniform(rng, -10, 110), uniform(rng, -10, 110),
                  static_cast<std::size_t>(uniform_index(rng, 4))};
      if (p.x >= 0 && p.x <= 100 && p.y >= 0 && p.y <= 100) expected[p.category] += 1.0;
      pois.push_back(p);
    }
    const Tensor t = rasterize_pois(pois, fp, 3, 3, 4);
    std::vector<double> got(4, 0.0);
    for (std::size_t k = 0; k < t.size(); ++k) got[k % 4] += t[k];
    CHECK(got == expected);
  }
}

TEST_SUITE("neighborhood") {
  const RegionDataset ds = toy_dataset(5, 5);

  TEST_CASE("interior cell with M=3 has 9 valid slots") {
    const Neighborhood n = neighborhood(ds, 2, 2, 3);
    CHECK(n.valid_count() == 9);
    CHECK(*n.slots[n.center_slot()] == *ds.find(2, 2));
  }

  TEST_CASE("corner cell with M=3 has 4 valid and 5 masked") {
    const Neighborhood n = neighborhood(ds, 0, 0, 3);
    CHECK(n.valid_count() == 4);
    CHECK(n.slots.size() - n.valid_count() == 5);
  }

  TEST_CASE("M=1 is the center cell") {
    const Neighborhood n = neighborhood(ds, 3, 1, 1);
    REQUIRE(n.slots.size() == 1);
    CHECK(*n.slots[0] == *ds.find(3, 1));
  }

  TEST_CASE("even M is rejected") { CHECK_THROWS_AS(neighborhood(ds, 2, 2, 4), ContractError); }

  TEST_CASE("masks mark exactly the out-of-bounds slots") {
    for (std::size_t m : {1u, 3u, 5u, 7u}) {
      for (std::size_t r = 0; r < 5; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
          const Neighborhood n = neighborhood(ds, r, c, m);
          const long half = static_cast<long>(m / 2);
          for (std::size_t s = 0; s < m * m; ++s) {
            const long rr = static_cast<long>(r) + static_cast<long>(s / m) - half;
            const long cc = static_cast<long>(c) + static_cast<long>(s % m) - half;
            const bool inside = rr >= 0 && cc >= 0 && rr < 5 && cc < 5;
            CHECK(n.valid(s) == inside);
            if (inside) CHECK(*n.slots[s] == *ds.find(rr, cc));
          }
        }
      }
    }
  }
}

TEST_SUITE("aggregate_resolution") {
  TEST_CASE("2x2 block sums emissions and recomputes the log target") {
    RegionDataset ds = toy_dataset(2, 2);
    const double e[4] = {1, 2, 3, 4};
    for (std::size_t i = 0; i < 4; ++i) {
      ds.cells[i].emission_t = e[i];
      ds.cells[i].log_target = log_target_of(e[i]);
    }
    const RegionDataset agg = aggregate_resolution(ds, 2);
    REQUIRE(agg.cells.size() == 1);
    CHECK(agg.cells[0].emission_t == 10.0);
    CHECK(agg.cells[0].log_target == std::log1p(10.0));
    double child_sum = 0.0;
    for (const auto& c : ds.cells) child_sum += c.log_target;
    CHECK(agg.cells[0].log_target != doctest::Approx(child_sum));
  }

  TEST_CASE("partial edge blocks are dropped and full blocks conserve totals") {
    const RegionDataset ds = toy_dataset(5, 7);
    for (std::size_t f : {2u, 3u}) {
      const RegionDataset agg = aggregate_resolution(ds, f);
      CHECK(agg.cells.size() == (5 / f) * (7 / f));
      double kept_emission = 0.0;
      std::vector<double> kept_poi(2, 0.0), agg_poi(2, 0.0);
      for (const auto& c : ds.cells) {
        if (c.row < (5 / f) * f && c.col < (7 / f) * f) {
          kept_emission += c.emission_t;
          for (std::size_t k = 0; k < c.poi.size(); ++k) kept_poi[k % 2] += c.poi[k];
        }
      }
      double agg_emission = 0.0;
      for (const auto& c : agg.cells) {
        agg_emission += c.emission_t;
        for (std::size_t k = 0; k < c.poi.size(); ++k) agg_poi[k % 2] += c.poi[k];
        CHECK(c.image.shape() == Shape{4, 4, 3});
        CHECK(c.poi.shape() == Shape{4, 4, 2});
      }
      CHECK(std::abs(agg_emission - kept_emission) <= 1e-9 * kept_emission);
      CHECK(agg_poi == kept_poi);
    }
  }

  TEST_CASE("image pixels are block means of the mosaic") {
    const RegionDataset ds = toy_dataset(2, 2);
    const RegionDataset agg = aggregate_resolution(ds, 2);
    // Output pixel (0,0) covers mosaic rows 0-1, cols 0-1: all from cell (0,0).
    const Tensor& child = ds.cells[*ds.find(0, 0)].image;
    const double expected =
        (child[(0 * 4 + 0) * 3] + child[(0 * 4 + 1) * 3] + child[(1 * 4 + 0) * 3] +
         child[(1 * 4 + 1) * 3]) / 4.0;
    CHECK(agg.cells[0].image[0] == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("factor 1 is a copy and a too-small region is an error") {
    const RegionDataset ds = toy_dataset(3, 3);
    CHECK(aggregate_resolution(ds, 1).cells.size() == 9);
    CHECK_THROWS(aggregate_resolution(ds, 4));
  }
}

TEST_SUITE("split_dataset") {
  TEST_CASE("100 cells split 60/20/20 deterministically") {
    RegionDataset a = toy_dataset(10, 10), b = toy_dataset(10, 10);
    split_dataset(a, SplitConfig{}, 3);
    split_dataset(b, SplitConfig{}, 3);
    CHECK(a.indices_of(Split::train).size() == 60);
    CHECK(a.indices_of(Split::valid).size() == 20);
    CHECK(a.indices_of(Split::test).size() == 20);
    for (std::size_t i = 0; i < 100; ++i) CHECK(a.cells[i].split == b.cells[i].split);
    RegionDataset c = toy_dataset(10, 10);
    split_dataset(c, SplitConfig{}, 4);
    bool differs = false;
    for (std::size_t i = 0; i < 100; ++i) differs |= a.cells[i].split != c.cells[i].split;
    CHECK(differs);
  }

  TEST_CASE("regional split keeps whole tags together") {
    RegionDataset ds = toy_dataset(6, 9);
    for (GridCell& c : ds.cells) c.region_tag = std::string(1, static_cast<char>('A' + c.col / 3));
    SplitConfig cfg;
    cfg.mode = SplitMode::regional;
    cfg.valid_tags = {"B"};
    cfg.test_tags = {"C"};
    split_dataset(ds, cfg, 1);
    for (const GridCell& c : ds.cells) {
      if (c.region_tag == "C") CHECK(c.split == Split::test);
      if (c.split == Split::train || c.split == Split::valid) CHECK(c.region_tag != "C");
      if (c.region_tag == "A") CHECK(c.split == Split::train);
    }
  }

  TEST_CASE("splits are disjoint and exhaustive") {
    RegionDataset ds = toy_dataset(7, 6);
    split_dataset(ds, SplitConfig{}, 8);
    const std::size_t total = ds.indices_of(Split::train).size() +
                              ds.indices_of(Split::valid).size() +
                              ds.indices_of(Split::test).size();
    CHECK(total == ds.cells.size());
    CHECK(ds.indices_of(Split::none).empty());
  }

  TEST_CASE("an empty split is a configuration error") {
    RegionDataset ds = toy_dataset(2, 2);
    SplitConfig cfg;
    cfg.train_fraction = 0.9;
    cfg.valid_fraction = 0.05;
    cfg.test_fraction = 0.05;
    CHECK_THROWS_AS(split_dataset(ds, cfg, 1), ConfigError);
    RegionDataset r = toy_dataset(4, 4);
    SplitConfig reg;
    reg.mode = SplitMode::regional;
    reg.test_tags = {"Z"};
    reg.valid_tags = {"A"};
    CHECK_THROWS_AS(split_dataset(r, reg, 1), ConfigError);
  }

  TEST_CASE("fractions must sum to one") {
    RegionDataset ds = toy_dataset(5, 5);
    SplitConfig cfg;
    cfg.train_fraction = 0.5;
    CHECK_THROWS_AS(split_dataset(ds, cfg, 1), ConfigError);
  }
}

TEST_SUITE("synth_region") {
  TEST_CASE("without noise or smoothing emissions equal the generative formula") {
    SynthSpec spec;
    spec.noise_std = 0.0;
    spec.smoothing_width = 0.0;
    spec.grid_rows = 6;
    spec.grid_cols = 5;
    const SynthRegion r = synth_region(spec);
    REQUIRE(r.truth.weights.size() == spec.categories);
    for (const GridCell& c : r.dataset.cells) {
      double mean_pixel = 0.0;
      for (double v : c.image.data()) mean_pixel += v;
      mean_pixel /= static_cast<double>(c.image.size());
      double expected = r.truth.image_weight * mean_pixel;
      for (std::size_t k = 0; k < c.poi.size(); ++k) {
        expected += r.truth.weights[k % spec.categories] * c.poi[k];
      }
      CHECK(std::abs(c.emission_t - expected) <= 1e-9 * std::max(1.0, expected));
      CHECK(c.log_target == std::log1p(c.emission_t));
    }
  }

  TEST_CASE("zero weights give zero emissions") {
    SynthSpec spec;
    spec.weights.assign(spec.categories, 0.0);
    spec.image_weight = 0.0;
    spec.noise_std = 0.0;
    for (const GridCell& c : synth_region(spec).dataset.cells) {
      CHECK(c.emission_t == 0.0);
      CHECK(c.log_target == 0.0);
    }
  }

  TEST_CASE("smoothing raises spatial autocorrelation") {
    SynthSpec spec;
    const SynthRegion r = synth_region(spec);
    const double raw = morans_i(r.truth.raw_field, spec.grid_rows, spec.grid_cols);
    const double smooth = morans_i(r.truth.pre_noise_field, spec.grid_rows, spec.grid_cols);
    CHECK(smooth > raw);
  }

  TEST_CASE("cell contents respect their domains") {
    const SynthRegion r = synth_region(SynthSpec{});
    CHECK(r.dataset.cells.size() == 144);
    for (const GridCell& c : r.dataset.cells) {
      CHECK(c.emission_t >= 0.0);
      for (double v : c.image.data()) CHECK((v >= 0.0 && v <= 1.0));
      for (double v : c.poi.data()) CHECK((v >= 0.0 && v == std::floor(v)));
    }
    r.dataset.validate();
  }

  TEST_CASE("same seed gives the same region") {
    const SynthRegion a = synth_region(SynthSpec{});
    const SynthRegion b = synth_region(SynthSpec{});
    for (std::size_t i = 0; i < a.dataset.cells.size(); ++i) {
      CHECK(a.dataset.cells[i].emission_t == b.dataset.cells[i].emission_t);
      CHECK(a.dataset.cells[i].split == b.dataset.cells[i].split);
    }
  }

  TEST_CASE("gaussian smoothing preserves a constant field") {
    const std::vector<double> f(20, 3.5);
    for (double v : gaussian_smooth(f, 4, 5, 1.3)) CHECK(v == doctest::Approx(3.5));
  }

  TEST_CASE("invalid spec fields are all reported") {
    SynthSpec spec;
    spec.noise_std = -1.0;
    spec.weights = {1.0};
    try {
      spec.validate();
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("noise_std") != std::string::npos);
      CHECK(msg.find("weights") != std::string::npos);
    }
  }
}

TEST_SUITE("dataset files") {
  TEST_CASE("write then read round-trips every field") {
    const fs::path dir = fs::temp_directory_path() / "carbongrid_geogrid_io";
    fs::remove_all(dir);
    SynthSpec spec;
    spec.grid_rows = 4;
    spec.grid_cols = 3;
    const SynthRegion r = synth_region(spec);
    write_dataset(dir, r.dataset);
    write_truth(dir, r.truth);
    for (const char* f : {"region.json", "cells.csv", "pois.csv", "img_0_0.f64", "poi_3_2.f64",
                          "truth.json"}) {
      CHECK(fs::exists(dir / f));
    }
    const RegionDataset back = read_dataset(dir);
    REQUIRE(back.cells.size() == r.dataset.cells.size());
    CHECK(back.pois.size() == r.dataset.pois.size());
    for (std::size_t i = 0; i < back.cells.size(); ++i) {
      const GridCell& a = r.dataset.cells[i];
      const GridCell& b = back.cells[i];
      CHECK(a.emission_t == b.emission_t);
      CHECK(a.split == b.split);
      CHECK(a.region_tag == b.region_tag);
      CHECK(a.footprint.min_x == b.footprint.min_x);
      for (std::size_t k = 0; k < a.image.size(); ++k) CHECK(a.image[k] == b.image[k]);
      for (std::size_t k = 0; k < a.poi.size(); ++k) CHECK(a.poi[k] == b.poi[k]);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("unknown synth spec keys are rejected") {
    nlohmann::json j = synth_spec_to_json(SynthSpec{});
    j["nosie_std"] = 0.1;
    j["grid_rows"] = "twelve";
    try {
      synth_spec_from_json(j);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("nosie_std") != std::string::npos);
      CHECK(msg.find("grid_rows") != std::string::npos);
    }
  }

  TEST_CASE("synth spec JSON round-trips") {
    SynthSpec spec;
    spec.noise_std = 0.25;
    spec.log_shift = 0.7;
    spec.image_mode = ImageMode::noise;
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(spec));
    CHECK(back.noise_std == 0.25);
    CHECK(back.log_shift == 0.7);
    CHECK(back.image_mode == ImageMode::noise);
  }
}
