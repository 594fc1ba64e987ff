#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "beamsel/channel.hpp"
#include "beamsel/selection.hpp"

namespace beamsel {

// Real rows x cols x 3 tensor, row-major with the channel index fastest.
// Channel 0 holds |H_ij|, channels 1 and 2 the real and imaginary parts.
struct InputTensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double& at(int r, int c, int ch) {
    return data[static_cast<std::size_t>((r * cols + c) * 3 + ch)];
  }
  double at(int r, int c, int ch) const {
    return data[static_cast<std::size_t>((r * cols + c) * 3 + ch)];
  }

  static InputTensor from_channel(const CMat& h);

  // Enforces the magnitude-plane consistency invariant.
  void validate() const;
};

struct DatasetSpec {
  int n_channels = 10;
  std::vector<int> cluster_counts{3, 4, 5, 6};
  int n_noise = 10;
  std::vector<double> snr_train_db{15.0, 20.0, 25.0};
  SystemDims dims;
  ChannelParams channel_params;
  MoSettings mo;
  std::uint64_t seed = 0;
  // When set, selection and beamformer labels are computed on the corrupted
  // channel instead of the clean one.
  bool label_from_noisy = false;

  void validate() const;

  std::uint64_t total_samples() const {
    return static_cast<std::uint64_t>(n_channels) * cluster_counts.size() *
           static_cast<std::uint64_t>(n_noise);
  }
};

struct Dataset {
  DatasetSpec spec;
  std::vector<InputTensor> as_inputs;           // n_r x n_t x 3
  std::vector<std::uint32_t> as_labels;         // class ids
  std::vector<InputTensor> rf_inputs;           // n_rs x n_t x 3
  std::vector<std::vector<double>> rf_labels;   // length G each
  std::vector<SubarrayConfig> class_table;      // first-seen order
  std::vector<double> selection_rates;          // clean-channel rate per sample
};

// Flattens a hybrid design into the regression label
// [vec angle(F_RF) | Re vec F_BB | Im vec F_BB | vec angle(W_RF) |
//  Re vec W_BB | Im vec W_BB], column-major, angles in (-pi, pi].
std::vector<double> build_label_vector(const HybridBeamformers& bf);

// Inverse of build_label_vector up to the F_BB power renormalization.
// Throws ZeroProduct when ||F_RF F_BB||_F vanishes.
HybridBeamformers reconstruct_beamformers(const std::vector<double>& z,
                                          const SystemDims& dims);

using ProgressSink = std::function<void(std::uint64_t done, std::uint64_t total)>;

// Labeled sample generation. For every (channel, cluster count, noise draw)
// triple: synthesize a clean channel, corrupt it at the cycled training SNR,
// search the best subarray, design hybrid beamformers on the selected rows
// and emit one classification pair and one regression pair. Deterministic
// under spec.seed.
Dataset build_dataset(const DatasetSpec& spec, const ProgressSink& progress = {});

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace beamsel

#include <nlohmann/json_fwd.hpp>

namespace beamsel {
nlohmann::json dims_to_json(const SystemDims& d);
SystemDims dims_from_json(const nlohmann::json& j);
nlohmann::json mo_to_json(const MoSettings& m);
MoSettings mo_from_json(const nlohmann::json& j);
nlohmann::json dataset_spec_to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
}  // namespace beamsel
