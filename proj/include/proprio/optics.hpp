#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proprio/geometry.hpp"
#include "proprio/mat.hpp"

namespace proprio::optics {

using geometry::Vec2;

/// Positions of edge-mounted LEDs and interior photodiodes, with the
/// per-LED baseline brightness of the daisy chain. Coordinates are
/// material-frame mm on the [0,W]^2 membrane.
struct SensorLayout {
  double extent = 140.0;  // W, mm
  std::vector<Vec2> leds;
  std::vector<double> led_baseline;  // B_i in (0,1], non-increasing in chain index
  std::vector<Vec2> pds;

  std::size_t led_count() const { return leds.size(); }
  std::size_t pd_count() const { return pds.size(); }
  std::size_t channel_count() const { return leds.size() * pds.size(); }

  void validate() const {
    if (leds.empty() || pds.empty())
      throw std::invalid_argument("SensorLayout: need at least one LED and one PD");
    if (led_baseline.size() != leds.size())
      throw std::invalid_argument("SensorLayout: baseline size mismatch");
    const double eps = 1e-9;
    for (const auto& p : leds) {
      bool on_edge = std::abs(p.x) < eps || std::abs(p.x - extent) < eps ||
                     std::abs(p.y) < eps || std::abs(p.y - extent) < eps;
      if (!on_edge) throw std::invalid_argument("SensorLayout: LED not on the perimeter");
    }
    for (const auto& p : pds)
      if (p.x <= 0.0 || p.x >= extent || p.y <= 0.0 || p.y >= extent)
        throw std::invalid_argument("SensorLayout: PD not strictly interior");
    for (std::size_t i = 0; i < led_baseline.size(); ++i) {
      if (led_baseline[i] <= 0.0 || led_baseline[i] > 1.0)
        throw std::invalid_argument("SensorLayout: baseline out of (0,1]");
      if (i > 0 && led_baseline[i] > led_baseline[i - 1] + 1e-12)
        throw std::invalid_argument("SensorLayout: baseline must be non-increasing in chain index");
    }
  }
};

/// Phenomenological transport parameters. Attenuation is exponential in
/// geodesic path length (alpha) and in integrated aligned curvature (beta);
/// gamma is the supply droop per chain position. sigma_noise and dark_level
/// are consumed by the readout stage, expressed as fractions of full scale.
struct OpticsParams {
  double alpha = 0.025;       // 1/mm
  double beta = 0.35;         // 1/rad
  double gamma = 0.985;       // chain droop factor per LED
  double i_fullscale = 1.0;   // analog full scale
  double sigma_noise = 0.0012;
  double dark_level = 0.002;

  void validate() const {
    if (alpha <= 0.0 || beta <= 0.0)
      throw std::invalid_argument("OpticsParams: alpha and beta must be positive");
    if (gamma <= 0.9 || gamma > 1.0)
      throw std::invalid_argument("OpticsParams: gamma must lie in (0.9, 1]");
    if (i_fullscale <= 0.0) throw std::invalid_argument("OpticsParams: full scale must be positive");
    if (sigma_noise < 0.0) throw std::invalid_argument("OpticsParams: sigma_noise must be >= 0");
    if (dark_level < 0.0) throw std::invalid_argument("OpticsParams: dark_level must be >= 0");
  }
};

/// 30 LEDs around the perimeter (8,7,8,7 per side, corner-offset, chained
/// counterclockwise from the south-west) and 5 PDs in a quincunx: the
/// center plus four at +-35 mm diagonal offsets. PD 3 (index 2) is the
/// center. Baselines follow the chain droop B_i = gamma^i.
inline SensorLayout default_layout(double extent = 140.0, double gamma = 0.985) {
  SensorLayout layout;
  layout.extent = extent;
  auto side_positions = [extent](int n) {
    std::vector<double> xs(n);
    for (int k = 0; k < n; ++k) xs[k] = (k + 0.5) * extent / n;
    return xs;
  };
  for (double x : side_positions(8)) layout.leds.push_back({x, 0.0});        // south, W->E
  for (double y : side_positions(7)) layout.leds.push_back({extent, y});     // east, S->N
  for (double x : side_positions(8)) layout.leds.push_back({extent - x, extent});  // north, E->W
  for (double y : side_positions(7)) layout.leds.push_back({0.0, extent - y});     // west, N->S

  layout.led_baseline.resize(layout.leds.size());
  for (std::size_t i = 0; i < layout.leds.size(); ++i)
    layout.led_baseline[i] = std::pow(gamma, static_cast<double>(i + 1));

  const double c = 0.5 * extent, d = 35.0;
  layout.pds = {{c - d, c - d}, {c + d, c - d}, {c, c}, {c - d, c + d}, {c + d, c + d}};
  layout.validate();
  return layout;
}

/// Analog intensity at every PD while LED `led_index` is strobed:
/// I = I_fullscale * B_i * exp(-alpha * L_geo) * exp(-beta * K_par).
/// Deterministic; noise and digitization live in the readout stage.
inline std::vector<double> intensity(const geometry::DeformationField& field,
                                     const SensorLayout& layout, const OpticsParams& params,
                                     std::size_t led_index) {
  if (led_index >= layout.led_count())
    throw std::out_of_range("intensity: LED index out of range");
  std::vector<double> out(layout.pd_count());
  const Vec2 led = layout.leds[led_index];
  for (std::size_t j = 0; j < layout.pd_count(); ++j) {
    auto profile = geometry::path_profile(field, led, layout.pds[j]);
    out[j] = params.i_fullscale * layout.led_baseline[led_index] *
             std::exp(-params.alpha * profile.geodesic_length) *
             std::exp(-params.beta * profile.curvature_integral);
  }
  return out;
}

/// Full LED scan: column j holds intensity(..., led j), giving the p x l
/// measurement matrix of one acquisition frame.
inline Mat<double> scan(const geometry::DeformationField& field, const SensorLayout& layout,
                        const OpticsParams& params) {
  Mat<double> m(layout.pd_count(), layout.led_count());
  for (std::size_t i = 0; i < layout.led_count(); ++i) {
    auto column = intensity(field, layout, params, i);
    for (std::size_t j = 0; j < layout.pd_count(); ++j) m(j, i) = column[j];
  }
  return m;
}

// --- versioned JSON serialization -----------------------------------------

inline nlohmann::json to_json(const SensorLayout& layout) {
  nlohmann::json j;
  j["version"] = 1;
  j["W_mm"] = layout.extent;
  j["leds"] = nlohmann::json::array();
  for (std::size_t i = 0; i < layout.leds.size(); ++i)
    j["leds"].push_back({{"x", layout.leds[i].x}, {"y", layout.leds[i].y},
                         {"b", layout.led_baseline[i]}});
  j["pds"] = nlohmann::json::array();
  for (const auto& p : layout.pds) j["pds"].push_back({{"x", p.x}, {"y", p.y}});
  return j;
}

inline SensorLayout layout_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::invalid_argument("layout JSON: unsupported version");
  SensorLayout layout;
  layout.extent = j.at("W_mm").get<double>();
  for (const auto& e : j.at("leds")) {
    layout.leds.push_back({e.at("x").get<double>(), e.at("y").get<double>()});
    layout.led_baseline.push_back(e.at("b").get<double>());
  }
  for (const auto& e : j.at("pds"))
    layout.pds.push_back({e.at("x").get<double>(), e.at("y").get<double>()});
  layout.validate();
  return layout;
}

inline nlohmann::json to_json(const OpticsParams& p) {
  return {{"alpha", p.alpha},           {"beta", p.beta},
          {"gamma", p.gamma},           {"i_fullscale", p.i_fullscale},
          {"sigma_noise", p.sigma_noise}, {"dark_level", p.dark_level}};
}

inline OpticsParams params_from_json(const nlohmann::json& j) {
  OpticsParams p;
  p.alpha = j.at("alpha").get<double>();
  p.beta = j.at("beta").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.i_fullscale = j.at("i_fullscale").get<double>();
  p.sigma_noise = j.at("sigma_noise").get<double>();
  p.dark_level = j.at("dark_level").get<double>();
  p.validate();
  return p;
}

}  // namespace proprio::optics
