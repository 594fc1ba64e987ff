#include "beamsel/channel.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "beamsel/errors.hpp"
#include "beamsel/io.hpp"
#include "beamsel/rng.hpp"

namespace beamsel {

using nlohmann::json;

ArrayGeometry ArrayGeometry::ula(int count, double spacing) {
  if (count <= 0) throw ConfigError("array count must be positive");
  ArrayGeometry g;
  g.positions.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n)
    g.positions.emplace_back(n * spacing, 0.0, 0.0);
  return g;
}

ArrayGeometry ArrayGeometry::upa(int rows, int cols, double spacing) {
  if (rows <= 0 || cols <= 0) throw ConfigError("planar array dims must be positive");
  ArrayGeometry g;
  g.positions.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      g.positions.emplace_back(c * spacing, r * spacing, 0.0);
  return g;
}

void ChannelParams::validate() const {
  if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
  if (n_rays < 1) throw ConfigError("n_rays must be >= 1");
  if (angle_spread_deg < 0.0) throw ConfigError("angle_spread_deg must be >= 0");
  if (az_range_deg.min_deg > az_range_deg.max_deg)
    throw ConfigError("azimuth range: min > max");
  if (el_range_deg.min_deg > el_range_deg.max_deg)
    throw ConfigError("elevation range: min > max");
  if (tx_geometry.positions.empty() || rx_geometry.positions.empty())
    throw ConfigError("tx/rx geometries must be nonempty");
}

CVec steering_vector(const ArrayGeometry& geometry, double azimuth_deg,
                     double elevation_deg) {
  if (geometry.positions.empty()) throw ConfigError("empty array geometry");
  const double az = deg2rad(azimuth_deg);
  const double el = deg2rad(elevation_deg);
  const Eigen::Vector3d r(std::sin(az) * std::cos(el),
                          std::sin(az) * std::sin(el), std::cos(el));
  CVec a(geometry.count());
  for (int n = 0; n < geometry.count(); ++n) {
    const double phase = -2.0 * kPi * geometry.positions[n].dot(r);
    a(n) = Complex(std::cos(phase), std::sin(phase));
  }
  return a;
}

ChannelRealization generate_channel(const ChannelParams& params,
                                    std::uint64_t seed) {
  params.validate();
  Rng rng(seed);

  const int n_r = params.rx_geometry.count();
  const int n_t = params.tx_geometry.count();
  ChannelRealization out;
  out.params = params;
  out.seed = seed;
  out.h = CMat::Zero(n_r, n_t);

  for (int c = 0; c < params.n_clusters; ++c) {
    const double rx_az = rng.uniform(params.az_range_deg.min_deg,
                                     params.az_range_deg.max_deg);
    const double rx_el = rng.uniform(params.el_range_deg.min_deg,
                                     params.el_range_deg.max_deg);
    const double tx_az = rng.uniform(params.az_range_deg.min_deg,
                                     params.az_range_deg.max_deg);
    const double tx_el = rng.uniform(params.el_range_deg.min_deg,
                                     params.el_range_deg.max_deg);
    for (int j = 0; j < params.n_rays; ++j) {
      RayAngles ang;
      ang.rx_az_deg = rx_az + rng.gaussian(0.0, params.angle_spread_deg);
      ang.rx_el_deg = rx_el + rng.gaussian(0.0, params.angle_spread_deg);
      ang.tx_az_deg = tx_az + rng.gaussian(0.0, params.angle_spread_deg);
      ang.tx_el_deg = tx_el + rng.gaussian(0.0, params.angle_spread_deg);
      const Complex alpha = rng.complex_gaussian(1.0);

      const CVec a_r =
          steering_vector(params.rx_geometry, ang.rx_az_deg, ang.rx_el_deg);
      const CVec a_t =
          steering_vector(params.tx_geometry, ang.tx_az_deg, ang.tx_el_deg);
      out.h += alpha * params.element_gain_rx * params.element_gain_tx * a_r *
               a_t.adjoint();
      out.ray_angles.push_back(ang);
      out.gains.push_back(alpha);
    }
  }

  // Exact energy normalization: ||H||_F^2 = n_r * n_t.
  const double fn = out.h.norm();
  if (fn > 0.0)
    out.h *= std::sqrt(static_cast<double>(n_r) * n_t) / fn;
  return out;
}

CMat corrupt_channel(const CMat& h, double snr_db, std::uint64_t seed) {
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
  Rng rng(seed);
  const double noise_factor = std::pow(10.0, -snr_db / 10.0);
  CMat out = h;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.cols(); ++j) {
      const double var = std::norm(h(i, j)) * noise_factor;
      out(i, j) += rng.complex_gaussian(var);
    }
  }
  return out;
}

namespace {

json geometry_to_json(const ArrayGeometry& g) {
  json positions = json::array();
  for (const auto& p : g.positions) positions.push_back({p.x(), p.y(), p.z()});
  return json{{"count", g.count()}, {"positions", positions}};
}

ArrayGeometry geometry_from_json(const json& j) {
  ArrayGeometry g;
  for (const auto& p : j.at("positions"))
    g.positions.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(),
                             p.at(2).get<double>());
  if (j.contains("count") && j.at("count").get<int>() != g.count())
    throw ConfigError("geometry count does not match positions");
  return g;
}

}  // namespace

json params_to_json(const ChannelParams& p) {
  return json{{"n_clusters", p.n_clusters},
              {"n_rays", p.n_rays},
              {"angle_spread_deg", p.angle_spread_deg},
              {"az_range_deg", {p.az_range_deg.min_deg, p.az_range_deg.max_deg}},
              {"el_range_deg", {p.el_range_deg.min_deg, p.el_range_deg.max_deg}},
              {"tx_geometry", geometry_to_json(p.tx_geometry)},
              {"rx_geometry", geometry_to_json(p.rx_geometry)},
              {"element_gain_tx", p.element_gain_tx},
              {"element_gain_rx", p.element_gain_rx}};
}

ChannelParams params_from_json(const json& j) {
  ChannelParams p;
  p.n_clusters = j.at("n_clusters").get<int>();
  p.n_rays = j.at("n_rays").get<int>();
  p.angle_spread_deg = j.at("angle_spread_deg").get<double>();
  p.az_range_deg = {j.at("az_range_deg").at(0).get<double>(),
                    j.at("az_range_deg").at(1).get<double>()};
  p.el_range_deg = {j.at("el_range_deg").at(0).get<double>(),
                    j.at("el_range_deg").at(1).get<double>()};
  p.tx_geometry = geometry_from_json(j.at("tx_geometry"));
  p.rx_geometry = geometry_from_json(j.at("rx_geometry"));
  p.element_gain_tx = j.value("element_gain_tx", 1.0);
  p.element_gain_rx = j.value("element_gain_rx", 1.0);
  return p;
}

void dump_channel(const ChannelRealization& ch,
                  const std::filesystem::path& stem) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::ofstream os(bin, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + bin.string());
  write_f32(os, complex_to_f32(ch.h));

  json sidecar{{"n_r", ch.h.rows()},
               {"n_t", ch.h.cols()},
               {"seed", ch.seed},
               {"params", params_to_json(ch.params)}};
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ofstream js(meta);
  if (!js) throw ConfigError("cannot write " + meta.string());
  js << sidecar.dump(2) << "\n";
}

ChannelRealization load_channel(const std::filesystem::path& stem) {
  std::filesystem::path meta = stem;
  meta += ".json";
  std::ifstream js(meta);
  if (!js) throw ConfigError("cannot open " + meta.string());
  json sidecar = json::parse(js);

  ChannelRealization ch;
  ch.seed = sidecar.at("seed").get<std::uint64_t>();
  ch.params = params_from_json(sidecar.at("params"));
  std::filesystem::path bin = stem;
  bin += ".bin";
  ch.h = f32_to_complex(read_f32(bin), sidecar.at("n_r").get<Eigen::Index>(),
                        sidecar.at("n_t").get<Eigen::Index>());
  return ch;
}

}  // namespace beamsel
