#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "beamsel/cnn.hpp"

namespace beamsel {

struct ExperimentConfig {
  SystemDims dims;
  ChannelParams channel_params;
  MoSettings mo;
  int trials = 100;
  std::uint64_t seed = 0;

  std::vector<double> snr_db{-10.0, 0.0, 10.0};
  double fixed_snr_db = 10.0;  // operating SNR for the non-SNR sweeps
  std::vector<int> nrs_values{1, 2, 3, 4};
  std::vector<double> corruption_snr_db{0.0, 10.0, 20.0};
  std::vector<int> bits_values{1, 3, 5, 8, 32};
  std::vector<int> nt_values{8, 16};

  void validate() const;
};

// Trained classifier/regressor pair plus the class table they were trained
// against.
struct SweepModels {
  CnnModel cnn_as;
  CnnModel cnn_rf;
  std::vector<SubarrayConfig> class_table;
};

struct ResultRow {
  double sweep_value = 0.0;
  std::string method;
  double mean_rate_bits = 0.0;
  double std_rate = 0.0;
  double mean_gamma_f = 0.0;
  double mean_gamma_w = 0.0;
  double mean_runtime_s = 0.0;
  int failed_trials = 0;
};

struct SweepOutput {
  std::vector<ResultRow> rows;
  std::filesystem::path csv_path;
  std::filesystem::path runtime_csv_path;
};

// Each sweep writes <name>.csv (deterministic result columns), a
// <name>_runtime.csv sidecar with measured wall-clock means, and a
// <name>.journal.json enabling resumption: finished sweep points are reused
// when the config hash matches.
SweepOutput run_snr_sweep(const ExperimentConfig& cfg, const SweepModels* models,
                          const std::filesystem::path& out_dir);
SweepOutput run_nrs_sweep(const ExperimentConfig& cfg, const SweepModels* models,
                          const std::filesystem::path& out_dir);
SweepOutput run_corruption_sweep(const ExperimentConfig& cfg,
                                 const SweepModels& models,
                                 const std::filesystem::path& out_dir);
SweepOutput run_bits_sweep(const ExperimentConfig& cfg, const SweepModels& models,
                           const std::filesystem::path& out_dir);
// Wall-clock comparison of MO design versus CNN pipeline inference; schema
// n_t,method,mean_s,std_s. Not covered by the determinism guarantee.
SweepOutput run_timing_sweep(const ExperimentConfig& cfg,
                             const std::filesystem::path& out_dir);

std::uint64_t fnv1a(const std::string& text);

}  // namespace beamsel

#include <nlohmann/json_fwd.hpp>

namespace beamsel {
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
}  // namespace beamsel
