#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "beamsel/linalg.hpp"

namespace beamsel {

// Antenna positions in units of the carrier wavelength.
struct ArrayGeometry {
  std::vector<Eigen::Vector3d> positions;

  int count() const { return static_cast<int>(positions.size()); }

  // Uniform linear array on the x-axis, element n at (n * spacing, 0, 0).
  static ArrayGeometry ula(int count, double spacing = 0.5);
  // Uniform planar array in the x-y plane, row-major element order.
  static ArrayGeometry upa(int rows, int cols, double spacing = 0.5);
};

struct AngleRange {
  double min_deg = 0.0;
  double max_deg = 0.0;
};

struct ChannelParams {
  int n_clusters = 4;
  int n_rays = 5;
  double angle_spread_deg = 5.0;
  AngleRange az_range_deg{-60.0, 60.0};
  AngleRange el_range_deg{-20.0, 20.0};
  ArrayGeometry tx_geometry;
  ArrayGeometry rx_geometry;
  double element_gain_tx = 1.0;
  double element_gain_rx = 1.0;

  void validate() const;
};

// Arrival/departure angles of one ray, degrees.
struct RayAngles {
  double rx_az_deg = 0.0;
  double rx_el_deg = 0.0;
  double tx_az_deg = 0.0;
  double tx_el_deg = 0.0;
};

struct ChannelRealization {
  CMat h;  // n_r x n_t, scaled so that ||H||_F^2 = n_r * n_t
  ChannelParams params;
  std::uint64_t seed = 0;
  std::vector<RayAngles> ray_angles;  // n_clusters * n_rays entries
  std::vector<Complex> gains;
};

// Array response for a plane wave from (azimuth, elevation). Every element
// has unit modulus.
CVec steering_vector(const ArrayGeometry& geometry, double azimuth_deg,
                     double elevation_deg);

// Clustered multipath channel: cluster centers uniform over the configured
// angle ranges, per-ray Gaussian perturbation with the given spread, and
// unit-variance complex Gaussian path gains. Deterministic for a fixed seed.
ChannelRealization generate_channel(const ChannelParams& params,
                                    std::uint64_t seed);

// Adds per-element complex Gaussian noise with variance |H_ij|^2 * 10^(-snr/10).
CMat corrupt_channel(const CMat& h, double snr_db, std::uint64_t seed);

// Writes <stem>.bin (interleaved re/im f32, row-major, little-endian) and a
// <stem>.json sidecar with dimensions, seed and parameters.
void dump_channel(const ChannelRealization& ch,
                  const std::filesystem::path& stem);

ChannelRealization load_channel(const std::filesystem::path& stem);

}  // namespace beamsel

#include <nlohmann/json_fwd.hpp>

namespace beamsel {
nlohmann::json params_to_json(const ChannelParams& p);
ChannelParams params_from_json(const nlohmann::json& j);
}  // namespace beamsel
