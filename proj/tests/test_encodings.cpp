#include <cmath>
#include <random>

#include "doctest.h"
#include "efs/encodings.hpp"

using namespace efs;

namespace {

EventStream make_stream(std::vector<Event> events, int w = 4, int h = 4) {
  EventStream s;
  s.width = w;
  s.height = h;
  s.sweep = FocalSweep{1.0, 10.0, 1.0, 0.0, 16};
  s.events = std::move(events);
  sort_events(s.events);
  return s;
}

EventStream random_stream(int count, uint64_t seed, int w = 4, int h = 4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> t_dist(0.0, 1.0);
  std::uniform_int_distribution<int> x_dist(0, w - 1), y_dist(0, h - 1);
  std::vector<Event> events;
  for (int i = 0; i < count; ++i) {
    events.push_back(Event{t_dist(rng), static_cast<uint16_t>(x_dist(rng)),
                           static_cast<uint16_t>(y_dist(rng)), (rng() & 1) ? int8_t{1} : int8_t{-1}});
  }
  return make_stream(std::move(events), w, h);
}

double grid_total(const NdArray& a) {
  double s = 0.0;
  for (double v : a.data) s += v;
  return s;
}

}  // namespace

TEST_CASE("voxel grid puts an integer-scaled event into a single bin") {
  // Events at t = 0, 0.5, 1 with N = 3 scale to exactly 0, 1, 2.
  const EventStream s = make_stream({{0.0, 1, 1, 1}, {0.5, 2, 2, 1}, {1.0, 3, 3, 1}});
  const VoxelGrid grid = build_voxel_grid(s, EncodingConfig{3, 4, 4});
  CHECK(grid.values.at4(0, 0, 1, 1) == 1.0);
  CHECK(grid.values.at4(1, 0, 2, 2) == 1.0);
  CHECK(grid.values.at4(2, 0, 3, 3) == 1.0);
  CHECK(grid_total(grid.values) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK_FALSE(grid.degenerate_span);
}

TEST_CASE("voxel grid splits a half-integer event between adjacent bins") {
  // Middle event scales to 0.5 with N = 3 over [0, 1].
  const EventStream s = make_stream({{0.0, 0, 0, 1}, {0.25, 2, 2, -1}, {1.0, 3, 3, 1}});
  const VoxelGrid grid = build_voxel_grid(s, EncodingConfig{3, 4, 4});
  CHECK(grid.values.at4(0, 1, 2, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(grid.values.at4(1, 1, 2, 2) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(grid.values.at4(2, 1, 2, 2) == 0.0);
}

TEST_CASE("voxel grid total mass equals the event count") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    const EventStream s = random_stream(300, seed);
    const EncodingConfig cfg{8, 4, 4};
    const VoxelGrid grid = build_voxel_grid(s, cfg);
    CHECK(std::fabs(grid_total(grid.values) - 300.0) < 1e-9 * 300.0);
    for (double v : grid.values.data) CHECK(v >= 0.0);

    // Partition of unity per event, via the direct linear-kernel formula.
    const double t0 = s.events.front().t_s;
    const double t1 = s.events.back().t_s;
    for (const Event& e : s.events) {
      const double scaled = (cfg.num_bins - 1) * (e.t_s - t0) / (t1 - t0);
      double sum = 0.0;
      for (int i = 0; i < cfg.num_bins; ++i) sum += std::max(0.0, 1.0 - std::fabs(scaled - i));
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero-duration multi-event stream collapses to bin 0 with a warning flag") {
  const EventStream s = make_stream({{0.5, 1, 1, 1}, {0.5, 2, 2, 1}, {0.5, 3, 1, -1}});
  const VoxelGrid grid = build_voxel_grid(s, EncodingConfig{4, 4, 4});
  CHECK(grid.degenerate_span);
  CHECK(grid.values.at4(0, 0, 1, 1) == 1.0);
  CHECK(grid.values.at4(0, 0, 2, 2) == 1.0);
  CHECK(grid.values.at4(0, 1, 1, 3) == 1.0);
  CHECK(grid_total(grid.values) == 3.0);
}

TEST_CASE("single event lands in bin 0 with weight 1") {
  const EventStream s = make_stream({{0.7, 2, 1, 1}});
  const VoxelGrid grid = build_voxel_grid(s, EncodingConfig{4, 4, 4});
  CHECK(grid.values.at4(0, 0, 1, 2) == 1.0);
  CHECK(grid_total(grid.values) == 1.0);
  CHECK_FALSE(grid.degenerate_span);
}

TEST_CASE("empty stream encodes to all-zero tensors") {
  const EventStream s = make_stream({});
  const EncodingConfig cfg{4, 4, 4};
  CHECK(grid_total(build_voxel_grid(s, cfg).values) == 0.0);
  CHECK(grid_total(build_depth_surface(s, cfg).values) == 0.0);
  CHECK(grid_total(build_mask(s, cfg).values) == 0.0);
}

TEST_CASE("depth surface stores the focal distance of a midpoint event") {
  const EventStream s = make_stream({{0.5, 2, 3, 1}});
  const DepthSurface surface = build_depth_surface(s, EncodingConfig{4, 4, 4});
  CHECK(surface.values.at4(0, 0, 3, 2) == doctest::Approx(5.5).epsilon(1e-12));
  // Every other cell is the 0 fill.
  double total = grid_total(surface.values);
  CHECK(total == doctest::Approx(5.5).epsilon(1e-12));
}

TEST_CASE("depth surface keeps the most recent event per bin") {
  // Two positive events in the same pixel and bin: the later one wins.
  const EventStream s =
      make_stream({{0.0, 1, 1, 1}, {0.05, 1, 1, 1}, {0.12, 1, 1, 1}, {1.0, 3, 3, -1}});
  const DepthSurface surface = build_depth_surface(s, EncodingConfig{4, 4, 4});
  // Bins over [0, 1]: bin 0 = [0, 0.25). Latest timestamp there is 0.12.
  CHECK(surface.values.at4(0, 0, 1, 1) ==
        doctest::Approx(time_to_focal_distance(s.sweep, 0.12)).epsilon(1e-12));
  CHECK(surface.values.at4(3, 1, 3, 3) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("depth surface matches a brute-force scan on random streams") {
  for (uint64_t seed : {5ULL, 6ULL, 7ULL}) {
    const EventStream s = random_stream(200, seed);
    const EncodingConfig cfg{8, 4, 4};
    const DepthSurface surface = build_depth_surface(s, cfg);

    const double t0 = s.events.front().t_s;
    const double t1 = s.events.back().t_s;
    const double span = t1 - t0;
    for (int bin = 0; bin < cfg.num_bins; ++bin) {
      const double lo = t0 + span * bin / cfg.num_bins;
      const double hi = t0 + span * (bin + 1) / cfg.num_bins;
      for (int ch = 0; ch < 2; ++ch) {
        for (int y = 0; y < 4; ++y) {
          for (int x = 0; x < 4; ++x) {
            double latest = -1.0;
            for (const Event& e : s.events) {
              if (e.x != x || e.y != y) continue;
              if ((ch == 0) != (e.polarity > 0)) continue;
              const bool inside = bin + 1 == cfg.num_bins ? (e.t_s >= lo && e.t_s <= t1)
                                                          : (e.t_s >= lo && e.t_s < hi);
              if (inside) latest = std::max(latest, e.t_s);
            }
            const double expected =
                latest < 0.0 ? 0.0 : time_to_focal_distance(s.sweep, latest);
            CHECK(surface.values.at4(bin, ch, y, x) == doctest::Approx(expected).epsilon(1e-9));
          }
        }
      }
    }
  }
}

TEST_CASE("depth surface nonzero values are nondecreasing along the bin axis") {
  const EventStream s = random_stream(400, 11);
  const DepthSurface surface = build_depth_surface(s, EncodingConfig{8, 4, 4});
  for (int ch = 0; ch < 2; ++ch) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        double prev = 0.0;
        for (int bin = 0; bin < 8; ++bin) {
          const double v = surface.values.at4(bin, ch, y, x);
          if (v != 0.0) {
            CHECK(v >= prev);
            prev = v;
          }
        }
      }
    }
  }
}

TEST_CASE("mask marks exactly the pixels with events") {
  SUBCASE("single event") {
    const EventStream s = make_stream({{0.4, 3, 4, 1}}, 6, 6);
    const BinaryMask mask = build_mask(s, EncodingConfig{4, 6, 6});
    CHECK(mask.values.at2(4, 3) == 1.0);
    CHECK(grid_total(mask.values) == 1.0);
  }

  SUBCASE("mask equals voxel support") {
    const EventStream s = random_stream(60, 13);
    const EncodingConfig cfg{8, 4, 4};
    const BinaryMask mask = build_mask(s, cfg);
    const VoxelGrid grid = build_voxel_grid(s, cfg);
    const DepthSurface surface = build_depth_surface(s, cfg);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 4; ++x) {
        double voxel_sum = 0.0;
        double surface_sum = 0.0;
        for (int bin = 0; bin < 8; ++bin) {
          for (int ch = 0; ch < 2; ++ch) {
            voxel_sum += grid.values.at4(bin, ch, y, x);
            surface_sum += surface.values.at4(bin, ch, y, x);
          }
        }
        CHECK((voxel_sum > 0.0) == (mask.values.at2(y, x) == 1.0));
        if (surface_sum > 0.0) CHECK(mask.values.at2(y, x) == 1.0);
      }
    }
  }
}

TEST_CASE("encodings of time-disjoint halves combine to the whole") {
  const EventStream whole = random_stream(200, 17);
  const double t0 = whole.events.front().t_s;
  const double t1 = whole.events.back().t_s;
  const double cut = 0.5 * (t0 + t1);

  EventStream first = whole, second = whole;
  first.events.clear();
  second.events.clear();
  for (const Event& e : whole.events) (e.t_s < cut ? first : second).events.push_back(e);

  const EncodingConfig cfg{8, 4, 4};
  const VoxelGrid full = build_voxel_grid(whole, cfg);
  const VoxelGrid a = build_voxel_grid_spanned(first, cfg, t0, t1);
  const VoxelGrid b = build_voxel_grid_spanned(second, cfg, t0, t1);
  for (size_t i = 0; i < full.values.data.size(); ++i) {
    CHECK(a.values.data[i] + b.values.data[i] ==
          doctest::Approx(full.values.data[i]).epsilon(1e-12));
  }

  const DepthSurface sf = build_depth_surface(whole, cfg);
  const DepthSurface sa = build_depth_surface_spanned(first, cfg, t0, t1);
  const DepthSurface sb = build_depth_surface_spanned(second, cfg, t0, t1);
  for (size_t i = 0; i < sf.values.data.size(); ++i) {
    CHECK(std::max(sa.values.data[i], sb.values.data[i]) == sf.values.data[i]);
  }
}

TEST_CASE("encoding rejects mismatched dimensions") {
  const EventStream s = random_stream(10, 1, 4, 4);
  CHECK_THROWS_AS(build_voxel_grid(s, EncodingConfig{8, 8, 8}), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(s, EncodingConfig{1, 4, 4}), std::invalid_argument);
}
