#include <doctest.h>

#include <set>
#include <stdexcept>
#include <vector>

#include "hashfield/grid.hpp"
#include "hashfield/rng.hpp"

using namespace hashfield;

namespace {

// floor(4 * b^l) with b = (346/4)^(1/11), evaluated in 60-digit arithmetic.
// The endpoint values are exact integers of the closed form.
constexpr int kDefaultSchedule[12] = {4, 6, 9, 13, 20, 30, 45, 68, 102, 153, 230, 346};

}  // namespace

TEST_CASE("resolution schedule matches the arbitrary-precision closed form") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  REQUIRE(levels.size() == 12);
  for (int l = 0; l < 12; ++l) {
    CHECK(levels[l].level == l);
    CHECK(levels[l].resolution == kDefaultSchedule[l]);
  }
  CHECK(growth_factor(cfg) == doctest::Approx(1.5000038488342140).epsilon(1e-13));
  CHECK(std::abs(growth_factor(cfg) - 1.5002) < 1e-3);
}

TEST_CASE("schedule is strictly increasing under defaults") {
  const auto levels = resolution_schedule(GridConfig{});
  for (std::size_t l = 1; l < levels.size(); ++l)
    CHECK(levels[l].resolution > levels[l - 1].resolution);
}

TEST_CASE("equal endpoints give a flat schedule") {
  GridConfig cfg;
  cfg.levels = 2;
  cfg.n_min = 4;
  cfg.n_max = 4;
  const auto levels = resolution_schedule(cfg);
  REQUIRE(levels.size() == 2);
  CHECK(levels[0].resolution == 4);
  CHECK(levels[1].resolution == 4);
  CHECK(growth_factor(cfg) == doctest::Approx(1.0));
}

TEST_CASE("config validation rejects bad parameters") {
  GridConfig cfg;
  cfg.levels = 1;
  CHECK_THROWS_AS(resolution_schedule(cfg), std::invalid_argument);
  cfg = GridConfig{};
  cfg.table_size = 4095;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GridConfig{};
  cfg.n_max = 2;  // below n_min
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GridConfig{};
  cfg.k = 4;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GridConfig{};
  cfg.features_per_level = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("exactly 7 dense levels under defaults, boundary exact") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  int dense_count = 0;
  int densest = 0;
  for (const auto& g : levels) {
    const std::uint64_t vertices = static_cast<std::uint64_t>(g.resolution + 1) *
                                   static_cast<std::uint64_t>(g.resolution + 1);
    CHECK(g.dense == (vertices <= cfg.table_size));
    if (g.dense) {
      ++dense_count;
      densest = g.resolution;
    }
  }
  CHECK(dense_count == 7);
  CHECK(densest == 45);  // the ~46x46 densest collision-free level
}

TEST_CASE("finest level still collides even at T=2^16") {
  GridConfig cfg;
  cfg.table_size = 1u << 16;
  const auto levels = resolution_schedule(cfg);
  CHECK_FALSE(levels.back().dense);  // 347^2 = 120409 > 65536
}

TEST_CASE("spatial_hash fixed values") {
  CHECK(spatial_hash({0, 0}, 1u << 12) == 0);
  CHECK(spatial_hash({1, 0}, 1u << 12) == 1);
  CHECK(spatial_hash({0, 1}, 1u << 12) == 2654435761u % 4096u);
  CHECK(spatial_hash({0, 1}, 1u << 12) == 2481u);
  // pure function: equal inputs, equal outputs
  for (int i = 0; i < 16; ++i)
    CHECK(spatial_hash({123, 456}, 1u << 12) == spatial_hash({123, 456}, 1u << 12));
}

TEST_CASE("the entry map is injective on every dense level") {
  GridConfig cfg;
  for (const auto& level : resolution_schedule(cfg)) {
    if (!level.dense) continue;
    std::vector<bool> seen(cfg.table_size, false);
    const int side = level.vertices_per_axis();
    for (int j = 0; j < side; ++j)
      for (int i = 0; i < side; ++i) {
        const std::uint32_t h = level_entry_index({i, j}, level, cfg.table_size);
        REQUIRE(h < cfg.table_size);
        REQUIRE_FALSE(seen[h]);
        seen[h] = true;
      }
  }
}

TEST_CASE("the raw spatial hash alone would collide on the densest dense level") {
  // 84 of the 46x46 vertices collide under the raw hash; collision-free dense
  // levels require the linear vertex indexing that level_entry_index applies.
  const LevelGeometry level{6, 45, true};
  std::vector<bool> seen(4096, false);
  int collisions = 0;
  for (int j = 0; j <= 45; ++j)
    for (int i = 0; i <= 45; ++i) {
      const std::uint32_t h = spatial_hash({i, j}, 4096);
      if (seen[h]) ++collisions;
      seen[h] = true;
    }
  CHECK(collisions == 84);
}

TEST_CASE("spatial_hash lattice period per axis is exactly the table size") {
  const std::uint32_t t = 256;
  for (int j = 0; j < 40; ++j)
    for (int i = 0; i < 40; ++i) {
      CHECK(spatial_hash({i + static_cast<int>(t), j}, t) == spatial_hash({i, j}, t));
      CHECK(spatial_hash({i, j + static_cast<int>(t)}, t) == spatial_hash({i, j}, t));
    }
  // no proper divisor of T is a period along either axis
  for (std::uint32_t p = 1; p < t; p *= 2) {
    bool violated_x = false, violated_y = false;
    for (int i = 0; i < static_cast<int>(t) && !(violated_x && violated_y); ++i) {
      if (spatial_hash({i + static_cast<int>(p), 3}, t) != spatial_hash({i, 3}, t))
        violated_x = true;
      if (spatial_hash({3, i + static_cast<int>(p)}, t) != spatial_hash({3, i}, t))
        violated_y = true;
    }
    CHECK(violated_x);
    CHECK(violated_y);
  }
}

TEST_CASE("voxel_vertices at the origin") {
  const LevelGeometry level{0, 4, true};
  const VoxelCorners c = voxel_vertices(0.0, 0.0, level);
  CHECK(c.v00.i == 0);
  CHECK(c.v00.j == 0);
  CHECK(c.v10.i == 1);
  CHECK(c.v01.j == 1);
  CHECK(c.v11.i == 1);
  CHECK(c.v11.j == 1);
  CHECK(c.fx == 0.0);
  CHECK(c.fy == 0.0);
}

TEST_CASE("voxel_vertices clamps at the far boundary") {
  const LevelGeometry level{0, 4, true};
  const VoxelCorners c = voxel_vertices(1.0, 1.0, level);
  CHECK(c.v00.i <= 4);
  CHECK(c.v11.i == 4);
  CHECK(c.v11.j == 4);
  CHECK(c.fx == 0.0);
}

TEST_CASE("voxel_vertices exact midpoint") {
  const LevelGeometry level{0, 4, true};
  const VoxelCorners c = voxel_vertices(0.5, 0.5, level);
  CHECK(c.v00.i == 2);
  CHECK(c.v00.j == 2);
  CHECK(c.fx == 0.0);
  CHECK(c.fy == 0.0);
}

TEST_CASE("voxel_vertices rejects out-of-range coordinates") {
  const LevelGeometry level{0, 4, true};
  CHECK_THROWS_AS(voxel_vertices(-0.01, 0.5, level), std::invalid_argument);
  CHECK_THROWS_AS(voxel_vertices(0.5, 1.01, level), std::invalid_argument);
}

TEST_CASE("every coordinate maps into one clamped voxel per level") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  std::uint64_t state = 99;
  for (int trial = 0; trial < 200; ++trial) {
    state = splitmix64(state);
    const double x = static_cast<double>(state >> 11) * 0x1.0p-53;
    state = splitmix64(state);
    const double y = static_cast<double>(state >> 11) * 0x1.0p-53;
    for (const auto& level : levels) {
      const VoxelCorners c = voxel_vertices(x, y, level);
      CHECK(c.v00.i >= 0);
      CHECK(c.v11.i <= level.resolution);
      CHECK(c.v11.j <= level.resolution);
      CHECK(c.fx >= 0.0);
      CHECK(c.fx < 1.0);
    }
  }
}

TEST_CASE("index_map: dense level has all-distinct entries") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  const auto& dense = levels[6];  // resolution 45
  REQUIRE(dense.dense);
  const auto map = index_map(dense, cfg.table_size);
  std::set<std::uint32_t> unique(map.begin(), map.end());
  CHECK(unique.size() == map.size());
}

TEST_CASE("index_map: first hashed level repeats an entry") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  const auto& hashed = levels[7];  // resolution 68, 69^2 > 4096
  REQUIRE_FALSE(hashed.dense);
  const auto map = index_map(hashed, cfg.table_size);
  std::set<std::uint32_t> unique(map.begin(), map.end());
  CHECK(unique.size() < map.size());  // pigeonhole
}

TEST_CASE("index_map mod-256 visualization tiles at the finest level") {
  GridConfig cfg;
  const auto levels = resolution_schedule(cfg);
  const auto& finest = levels[11];  // resolution 346, side 347 > 256
  const int side = finest.vertices_per_axis();
  REQUIRE(side > 256);
  const auto map = index_map(finest, cfg.table_size);
  for (int j = 0; j < side; ++j)
    for (int i = 0; i + 256 < side; ++i)
      CHECK(map[static_cast<std::size_t>(j) * side + i] % 256 ==
            map[static_cast<std::size_t>(j) * side + i + 256] % 256);
  for (int j = 0; j + 256 < side; ++j)
    for (int i = 0; i < side; ++i)
      CHECK(map[static_cast<std::size_t>(j) * side + i] % 256 ==
            map[static_cast<std::size_t>(j + 256) * side + i] % 256);
}
