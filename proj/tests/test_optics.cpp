#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "proprio/geometry.hpp"
#include "proprio/optics.hpp"

using namespace proprio;
using namespace proprio::optics;
using geometry::DeformationField;

namespace {

// Default layout landmarks used by the characterization tests: the west-edge
// LED level with the center PD (aligned with the bend direction) and a
// south-edge LED whose path to the center runs along the rulings.
constexpr std::size_t kAlignedLed = 26;     // (0, 70)
constexpr std::size_t kTransverseLed = 4;   // (78.75, 0)
constexpr std::size_t kCenterPd = 2;        // (70, 70)

}  // namespace

TEST_CASE("default layout counts and geometry") {
  auto layout = default_layout();
  REQUIRE(layout.led_count() == 30);
  REQUIRE(layout.pd_count() == 5);
  REQUIRE(layout.channel_count() == 150);
  for (const auto& p : layout.pds) {
    REQUIRE(p.x >= 20.0);
    REQUIRE(p.x <= 120.0);
    REQUIRE(p.y >= 20.0);
    REQUIRE(p.y <= 120.0);
  }
  REQUIRE(layout.leds[kAlignedLed].x == 0.0);
  REQUIRE(layout.leds[kAlignedLed].y == 70.0);
  REQUIRE(layout.pds[kCenterPd].x == 70.0);
  REQUIRE(layout.pds[kCenterPd].y == 70.0);
  REQUIRE_NOTHROW(layout.validate());
}

TEST_CASE("baseline droop follows the chain index") {
  auto layout = default_layout();
  const double gamma = 0.985;
  REQUIRE_THAT(layout.led_baseline[0], Catch::Matchers::WithinRel(gamma, 1e-12));
  REQUIRE_THAT(layout.led_baseline[29], Catch::Matchers::WithinRel(std::pow(gamma, 30.0), 1e-12));
  REQUIRE(layout.led_baseline[29] < layout.led_baseline[14]);
  for (std::size_t i = 1; i < 30; ++i)
    REQUIRE(layout.led_baseline[i] <= layout.led_baseline[i - 1]);
}

TEST_CASE("flat-field intensity decreases with planar distance") {
  DeformationField flat(80, 140.0);
  auto layout = default_layout();
  OpticsParams params;
  for (std::size_t i : {0u, 9u, 18u}) {
    auto col = intensity(flat, layout, params, i);
    std::vector<std::pair<double, double>> by_dist;  // (distance, intensity)
    for (std::size_t j = 0; j < layout.pd_count(); ++j) {
      double d = std::hypot(layout.pds[j].x - layout.leds[i].x,
                            layout.pds[j].y - layout.leds[i].y);
      by_dist.emplace_back(d, col[j]);
    }
    std::sort(by_dist.begin(), by_dist.end());
    for (std::size_t k = 1; k < by_dist.size(); ++k)
      REQUIRE(by_dist[k].second < by_dist[k - 1].second);
  }
}

TEST_CASE("bend sweep: aligned pair falls, transverse pair stays flat") {
  auto layout = default_layout();
  OpticsParams params;
  DeformationField flat(80, 140.0);
  auto flat_aligned = intensity(flat, layout, params, kAlignedLed)[kCenterPd];
  auto flat_transverse = intensity(flat, layout, params, kTransverseLed)[kCenterPd];

  std::vector<double> aligned, transverse;
  for (double theta : {0.0, 30.0, 60.0, 90.0, 120.0, 150.0}) {
    auto field = geometry::bend(theta);
    aligned.push_back(intensity(field, layout, params, kAlignedLed)[kCenterPd]);
    transverse.push_back(intensity(field, layout, params, kTransverseLed)[kCenterPd]);
  }
  REQUIRE(aligned.front() == flat_aligned);  // theta = 0 equals the flat baseline exactly
  REQUIRE(transverse.front() == flat_transverse);

  for (std::size_t k = 1; k < aligned.size(); ++k) REQUIRE(aligned[k] < aligned[k - 1]);

  auto variation = [](const std::vector<double>& v) {
    double tv = 0.0;
    for (std::size_t k = 1; k < v.size(); ++k) tv += std::abs(v[k] - v[k - 1]);
    return tv;
  };
  REQUIRE(variation(transverse) < 0.2 * variation(aligned));

  // directional sensitivity: the aligned pair reacts at least 5x more
  // strongly at every step of the sweep
  for (std::size_t k = 1; k < aligned.size(); ++k) {
    double da = std::abs(aligned[k] - aligned[k - 1]);
    double dt = std::abs(transverse[k] - transverse[k - 1]);
    REQUIRE(da >= 5.0 * dt);
  }
}

TEST_CASE("monotone attenuation in integrated curvature") {
  auto layout = default_layout();
  OpticsParams params;
  double prev = intensity(geometry::bend(10.0), layout, params, kAlignedLed)[kCenterPd];
  for (double theta : {40.0, 80.0, 120.0, 150.0}) {
    double cur = intensity(geometry::bend(theta), layout, params, kAlignedLed)[kCenterPd];
    REQUIRE(cur < prev);
    prev = cur;
  }
}

TEST_CASE("scan shape, determinism and column permutation") {
  auto layout = default_layout();
  OpticsParams params;
  auto field = geometry::indent({}, geometry::Indenter::sphere(20.0, 62.0, 80.0, 12.0));

  auto m1 = scan(field, layout, params);
  REQUIRE(m1.rows == 5);
  REQUIRE(m1.cols == 30);
  auto m2 = scan(field, layout, params);
  REQUIRE(m1.data == m2.data);

  // permuting the LED order permutes columns identically; the transport
  // model itself has no chain-order requirement
  SensorLayout permuted = layout;
  std::reverse(permuted.leds.begin(), permuted.leds.end());
  std::reverse(permuted.led_baseline.begin(), permuted.led_baseline.end());
  auto m3 = scan(field, permuted, params);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(m3(j, i) == m1(j, 29 - i));
}

TEST_CASE("mirror symmetry leaves the intensity multiset unchanged") {
  auto layout = default_layout();
  OpticsParams params;
  geometry::FieldConfig fc{81, 140.0};  // odd grid so the mirror lands on nodes
  auto field = geometry::indent(fc, geometry::Indenter::sphere(18.0, 52.5, 87.5, 10.0));

  auto mirrored_field = field;
  for (int r = 0; r < field.g; ++r)
    for (int c = 0; c < field.g; ++c) mirrored_field.at(r, c) = field.at(r, field.g - 1 - c);
  SensorLayout mirrored = layout;
  for (auto& p : mirrored.leds) p.x = layout.extent - p.x;
  for (auto& p : mirrored.pds) p.x = layout.extent - p.x;

  auto a = scan(field, layout, params);
  auto b = scan(mirrored_field, mirrored, params);
  std::vector<double> va(a.data), vb(b.data);
  std::sort(va.begin(), va.end());
  std::sort(vb.begin(), vb.end());
  for (std::size_t k = 0; k < va.size(); ++k)
    REQUIRE_THAT(vb[k], Catch::Matchers::WithinRel(va[k], 1e-9));
}

TEST_CASE("chain droop dominates between geometry-equivalent LEDs") {
  // The distance term varies along a side, so raw flat-field intensity is
  // not monotone in the chain index alone; between LEDs with identical
  // distance profiles (mirror twins), later chain position always means a
  // dimmer channel.
  DeformationField flat(80, 140.0);
  auto layout = default_layout();
  OpticsParams params;
  auto m = scan(flat, layout, params);
  auto mean_intensity = [&](std::size_t led) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += m(j, led);
    return s / 5.0;
  };
  auto check_class = [&](std::vector<std::size_t> cls) {
    std::sort(cls.begin(), cls.end());
    for (std::size_t k = 1; k < cls.size(); ++k)
      REQUIRE(mean_intensity(cls[k]) < mean_intensity(cls[k - 1]));
  };
  for (std::size_t k = 0; k < 4; ++k) check_class({k, 7 - k, 15 + k, 22 - k});
  for (std::size_t k = 0; k < 3; ++k) check_class({8 + k, 14 - k, 23 + k, 29 - k});
}

TEST_CASE("layout and params JSON round trip") {
  auto layout = default_layout();
  auto j = to_json(layout);
  auto back = layout_from_json(j);
  REQUIRE(back.led_count() == layout.led_count());
  REQUIRE(back.pd_count() == layout.pd_count());
  for (std::size_t i = 0; i < layout.led_count(); ++i) {
    REQUIRE(back.leds[i].x == layout.leds[i].x);
    REQUIRE(back.led_baseline[i] == layout.led_baseline[i]);
  }

  OpticsParams params;
  params.alpha = 0.031;
  params.sigma_noise = 0.002;
  auto p2 = params_from_json(to_json(params));
  REQUIRE(p2.alpha == params.alpha);
  REQUIRE(p2.sigma_noise == params.sigma_noise);

  auto bad = to_json(layout);
  bad["version"] = 99;
  REQUIRE_THROWS_AS(layout_from_json(bad), std::invalid_argument);
}

TEST_CASE("parameter and layout validation") {
  OpticsParams params;
  params.gamma = 0.8;
  REQUIRE_THROWS_AS(params.validate(), std::invalid_argument);

  auto layout = default_layout();
  REQUIRE_THROWS_AS(intensity(DeformationField(80, 140.0), layout, OpticsParams{}, 30),
                    std::out_of_range);

  SensorLayout broken = layout;
  broken.pds[0] = {0.0, 50.0};  // on the edge: not interior
  REQUIRE_THROWS_AS(broken.validate(), std::invalid_argument);
}
