#pragma once

// Audio-to-latent regression: one bidirectional LSTM layer over each
// look-back window, followed by an affine map to the latent code of the
// window's last tick.
//
// The forward cell reads rows 0..W-1, the backward cell reads W-1..0; the
// final hidden state of each direction is concatenated ([forward, backward])
// before the output affine map.

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "avsynth/audio_features.hpp"

namespace avsynth {

struct BlstmConfig {
  int input_dim = 40;
  int hidden = 256;  // per direction
  int output_dim = 128;

  void validate() const;
  nlohmann::json to_json() const;
  static BlstmConfig from_json(const nlohmann::json& j);
};

// Standard LSTM cell, gate order (input, forget, cell, output).
class LstmCellImpl : public torch::nn::Module {
 public:
  LstmCellImpl(int input_dim, int hidden);

  // x [B, in], h/c [B, hidden] -> (h', c')
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                  const torch::Tensor& c);

  torch::nn::Linear input;      // in -> 4*hidden, with bias
  torch::nn::Linear recurrent;  // hidden -> 4*hidden, no bias
  int hidden_size;
};
TORCH_MODULE(LstmCell);

class BlstmImpl : public torch::nn::Module {
 public:
  // Weights uniform in +-0.08 and biases 0, except the forget-gate bias of
  // both cells which starts at 1.
  explicit BlstmImpl(const BlstmConfig& cfg = {}, std::uint64_t seed = 0);

  // windows [B, W, input_dim] -> [B, 2*hidden]
  torch::Tensor encode_windows(const torch::Tensor& windows);
  // windows [B, W, input_dim] -> [B, output_dim]
  torch::Tensor forward(const torch::Tensor& windows);

  const BlstmConfig& config() const { return cfg_; }

  LstmCell forward_cell{nullptr};
  LstmCell backward_cell{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  BlstmConfig cfg_;
};
TORCH_MODULE(Blstm);

struct TrainingPair {
  torch::Tensor window;  // [W, input_dim]
  torch::Tensor target;  // [output_dim]
};

// Stacks pairs into ([N, W, D], [N, out]). Throws on an empty list or
// differing window shapes.
std::pair<torch::Tensor, torch::Tensor> stack_pairs(const std::vector<TrainingPair>& pairs);

struct BlstmTrainConfig {
  double lr = 1e-6;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  int steps = 1000;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

struct BlstmTrainResult {
  Blstm model{nullptr};
  std::vector<double> loss_history;  // mini-batch MSE before each update
};

// Mean squared error regression with RMSProp.
BlstmTrainResult train_blstm(const torch::Tensor& windows, const torch::Tensor& targets,
                             const BlstmConfig& model_cfg, const BlstmTrainConfig& cfg);
BlstmTrainResult train_blstm(const std::vector<TrainingPair>& pairs, const BlstmConfig& model_cfg,
                             const BlstmTrainConfig& cfg);

double blstm_mse(Blstm& model, const torch::Tensor& windows, const torch::Tensor& targets);

// One code per feature row: make_windows followed by the model, in chunks.
torch::Tensor predict_sequence(const AudioFeatureSequence& features, Blstm& model, int window,
                               std::int64_t chunk = 256);

struct AblationRow {
  int window = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

// Trains one model per window length on the same data, seed and budget. The
// last 10% of ticks (at least one) are held out contiguously for validation.
// features: [T, D] rows, targets: [T, out].
std::vector<AblationRow> window_ablation(const torch::Tensor& features, const torch::Tensor& targets,
                                         const std::vector<int>& windows, const BlstmConfig& model_cfg,
                                         const BlstmTrainConfig& cfg);

struct SmoothTargetData {
  torch::Tensor features;  // [T, input_dim] float32, i.i.d. standard normal rows
  torch::Tensor targets;   // [T, output_dim] float32
};

// target_t = tanh(M * sum_{k < span} x_{t-k} / sqrt(span)) with a fixed random
// M, so each target depends on the last `span` rows (earlier rows repeat row
// 0, as in make_windows) and varies smoothly over time.
SmoothTargetData smooth_target_data(std::uint64_t seed, std::int64_t ticks, int input_dim, int output_dim,
                                    int span = 15);

}  // namespace avsynth
