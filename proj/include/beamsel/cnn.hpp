#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "beamsel/dataset.hpp"
#include "beamsel/linalg.hpp"

namespace beamsel {

enum class LayerKind {
  Input,
  Conv,
  ReLU,
  FullyConnected,
  Dropout,
  Output,
};

enum class Head { Class, Regress };

struct LayerSpec {
  LayerKind kind = LayerKind::Input;
  int rows = 0;      // Input
  int cols = 0;      // Input
  int channels = 0;  // Input
  int filters = 64;  // Conv; kernel fixed at 2x2, stride 1, same padding
  int units = 0;     // FullyConnected / Output
  double drop_p = 0.5;
};

// The 14-layer stack: Input, (Conv 64 2x2, ReLU) x3, FC 512, ReLU,
// Dropout 0.5, FC 512, ReLU, Dropout 0.5, Output.
std::vector<LayerSpec> canonical_stack(int rows, int cols, int out_units);

struct QuantizationSpec {
  int bits = 0;
  std::vector<double> scales;  // one per weighted layer
};

struct CnnModel {
  std::vector<LayerSpec> layers;
  Head head = Head::Class;
  std::vector<RMat> weights;  // per weighted layer; conv filters in im2col rows
  std::vector<RVec> biases;
  std::optional<QuantizationSpec> quant;
  std::uint64_t init_seed = 0;
  // Regression target standardization, applied per output dimension.
  std::vector<double> target_mean;
  std::vector<double> target_std;

  void validate() const;
};

// Fresh model with uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.
CnnModel make_model(const std::vector<LayerSpec>& layers, Head head,
                    std::uint64_t init_seed);

// Raw network output for one input: probability vector for the class head
// (softmax applied), unstandardized regression output otherwise. Dropout is
// identity here; training-mode dropout lives inside train().
RVec forward(const CnnModel& model, const InputTensor& x);

// Class head: probabilities. Regression head: destandardized prediction.
RVec predict(const CnnModel& model, const InputTensor& x);

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  int batch = 500;  // clamped to the training-split size
  int epochs = 50;
  double val_fraction = 0.30;
  std::uint64_t seed = 0;
  // Stop once the epoch train accuracy (class head) reaches this level.
  std::optional<double> early_stop_train_accuracy;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_accuracy = 0.0;  // class head only
  double val_accuracy = 0.0;
};

using MetricsSink = std::function<void(const EpochMetrics&)>;

// SGD with momentum on cross-entropy; stratified 70/30 split under a seed
// derived from cfg.seed. Throws DivergedLoss on non-finite loss.
std::vector<EpochMetrics> train_classifier(CnnModel& model,
                                           const std::vector<InputTensor>& xs,
                                           const std::vector<std::uint32_t>& ys,
                                           const TrainConfig& cfg,
                                           const MetricsSink& sink = {});

// SGD with momentum on mean squared error over standardized targets; the
// standardization parameters are stored on the model.
std::vector<EpochMetrics> train_regressor(
    CnnModel& model, const std::vector<InputTensor>& xs,
    const std::vector<std::vector<double>>& targets, const TrainConfig& cfg,
    const MetricsSink& sink = {});

// Central finite differences at step 1e-4 over n_weights randomly chosen
// weights; returns the max relative error. Weights sitting on a ReLU kink
// (where neither one-sided slope matches the central difference) are
// excluded from the maximum.
double gradient_check_class(const CnnModel& model, const InputTensor& x,
                            std::uint32_t label, int n_weights,
                            std::uint64_t seed);
double gradient_check_regress(const CnnModel& model, const InputTensor& x,
                              const std::vector<double>& target, int n_weights,
                              std::uint64_t seed);

// Post-training symmetric uniform quantization per weighted layer:
// scale = max|w| / (2^(bits-1) - 1) for bits >= 2; bits = 1 maps every
// weight to sign(w) * mean|w|.
CnnModel quantize(const CnnModel& model, int bits);

void save_model(const CnnModel& model, const std::filesystem::path& dir);
CnnModel load_model(const std::filesystem::path& dir);

// Full inference chain: classify the subarray from the corrupted channel,
// gather the selected rows, regress the beamformer label and reconstruct.
std::pair<SubarrayConfig, HybridBeamformers> predict_pipeline(
    const CnnModel& cnn_as, const CnnModel& cnn_rf, const CMat& h_tilde,
    const SystemDims& dims, const std::vector<SubarrayConfig>& class_table);

}  // namespace beamsel
