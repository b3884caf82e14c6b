#include "avsynth/audio2code.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "avsynth/error.hpp"
#include "avsynth/rng.hpp"

namespace avsynth {

void BlstmConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || output_dim < 1) throw ConfigError("blstm: dimensions must be positive");
}

nlohmann::json BlstmConfig::to_json() const {
  return {{"input_dim", input_dim}, {"hidden", hidden}, {"output_dim", output_dim}};
}

BlstmConfig BlstmConfig::from_json(const nlohmann::json& j) {
  BlstmConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.output_dim = j.at("output_dim").get<int>();
  c.validate();
  return c;
}

LstmCellImpl::LstmCellImpl(int input_dim, int hidden)
    : input(register_module("input", torch::nn::Linear(input_dim, 4 * hidden))),
      recurrent(register_module("recurrent", torch::nn::Linear(torch::nn::LinearOptions(hidden, 4 * hidden).bias(false)))),
      hidden_size(hidden) {}

std::pair<torch::Tensor, torch::Tensor> LstmCellImpl::forward(const torch::Tensor& x, const torch::Tensor& h,
                                                              const torch::Tensor& c) {
  auto gates = (input(x) + recurrent(h)).chunk(4, 1);
  auto i = torch::sigmoid(gates[0]);
  auto f = torch::sigmoid(gates[1]);
  auto g = torch::tanh(gates[2]);
  auto o = torch::sigmoid(gates[3]);
  auto c_next = f * c + i * g;
  return {o * torch::tanh(c_next), c_next};
}

BlstmImpl::BlstmImpl(const BlstmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  forward_cell = register_module("forward_cell", LstmCell(cfg_.input_dim, cfg_.hidden));
  backward_cell = register_module("backward_cell", LstmCell(cfg_.input_dim, cfg_.hidden));
  head = register_module("head", torch::nn::Linear(2 * cfg_.hidden, cfg_.output_dim));

  Rng rng(seed);
  for (auto& p : parameters()) {
    if (p.dim() >= 2) {
      fill_uniform(p, -0.08, 0.08, rng);
    } else {
      torch::NoGradGuard no_grad;
      p.zero_();
    }
  }
  torch::NoGradGuard no_grad;
  for (auto* cell : {&forward_cell, &backward_cell}) {
    (*cell)->input->bias.slice(0, cfg_.hidden, 2 * cfg_.hidden).fill_(1.0);
  }
}

torch::Tensor BlstmImpl::encode_windows(const torch::Tensor& windows) {
  if (windows.dim() != 3 || windows.size(2) != cfg_.input_dim || windows.size(1) < 1) {
    throw ShapeError("blstm: expected [B, W, " + std::to_string(cfg_.input_dim) + "] windows");
  }
  const auto batch = windows.size(0);
  const auto steps = windows.size(1);
  auto zeros = torch::zeros({batch, cfg_.hidden}, windows.options());
  auto hf = zeros, cf = zeros, hb = zeros, cb = zeros;
  for (std::int64_t t = 0; t < steps; ++t) {
    std::tie(hf, cf) = forward_cell->forward(windows.select(1, t), hf, cf);
    std::tie(hb, cb) = backward_cell->forward(windows.select(1, steps - 1 - t), hb, cb);
  }
  return torch::cat({hf, hb}, 1);
}

torch::Tensor BlstmImpl::forward(const torch::Tensor& windows) { return head(encode_windows(windows)); }

std::pair<torch::Tensor, torch::Tensor> stack_pairs(const std::vector<TrainingPair>& pairs) {
  if (pairs.empty()) throw ConfigError("blstm: empty training set");
  std::vector<torch::Tensor> w, t;
  for (const auto& p : pairs) {
    if (p.window.sizes() != pairs.front().window.sizes()) throw ShapeError("blstm: window shape differs across pairs");
    if (p.target.sizes() != pairs.front().target.sizes()) throw ShapeError("blstm: target shape differs across pairs");
    w.push_back(p.window);
    t.push_back(p.target);
  }
  return {torch::stack(w), torch::stack(t)};
}

double blstm_mse(Blstm& model, const torch::Tensor& windows, const torch::Tensor& targets) {
  torch::NoGradGuard no_grad;
  const auto dtype = model->parameters().front().scalar_type();
  double sum = 0.0;
  constexpr std::int64_t kChunk = 512;
  for (std::int64_t i = 0; i < windows.size(0); i += kChunk) {
    const auto end = std::min(i + kChunk, windows.size(0));
    auto pred = model->forward(windows.slice(0, i, end).to(dtype));
    sum += (pred - targets.slice(0, i, end).to(dtype)).pow(2).sum().item<double>();
  }
  return sum / static_cast<double>(targets.numel());
}

BlstmTrainResult train_blstm(const torch::Tensor& windows, const torch::Tensor& targets,
                             const BlstmConfig& model_cfg, const BlstmTrainConfig& cfg) {
  if (windows.dim() != 3 || windows.size(0) < 1) throw ConfigError("train_blstm: empty training set");
  if (targets.dim() != 2 || targets.size(0) != windows.size(0) || targets.size(1) != model_cfg.output_dim) {
    throw ShapeError("train_blstm: targets must be [N, output_dim] matching the windows");
  }
  if (cfg.batch_size < 1 || cfg.steps < 0 || cfg.lr < 0.0) throw ConfigError("train_blstm: invalid training config");

  BlstmTrainResult result;
  result.model = Blstm(model_cfg, derive_seed(cfg.seed, 1));
  const auto dtype = result.model->parameters().front().scalar_type();
  const auto x_all = windows.to(dtype);
  const auto y_all = targets.to(dtype);

  torch::optim::RMSprop opt(result.model->parameters(),
                            torch::optim::RMSpropOptions(cfg.lr).alpha(cfg.rmsprop_alpha).eps(cfg.rmsprop_eps));
  Rng rng(derive_seed(cfg.seed, 2));
  const auto n = x_all.size(0);
  const auto batch = std::min<std::int64_t>(cfg.batch_size, n);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::size_t cursor = order.size();

  result.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::int64_t> idx;
    while (static_cast<std::int64_t>(idx.size()) < batch) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng.engine());
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto index = torch::tensor(idx, torch::kInt64);
    opt.zero_grad();
    auto loss = (result.model->forward(x_all.index_select(0, index)) - y_all.index_select(0, index)).pow(2).mean();
    loss.backward();
    opt.step();
    result.loss_history.push_back(loss.item<double>());
  }
  return result;
}

BlstmTrainResult train_blstm(const std::vector<TrainingPair>& pairs, const BlstmConfig& model_cfg,
                             const BlstmTrainConfig& cfg) {
  auto [w, t] = stack_pairs(pairs);
  return train_blstm(w, t, model_cfg, cfg);
}

torch::Tensor predict_sequence(const AudioFeatureSequence& features, Blstm& model, int window, std::int64_t chunk) {
  torch::NoGradGuard no_grad;
  const auto dtype = model->parameters().front().scalar_type();
  const auto rows = features.rows;
  if (rows.dim() != 2 || rows.size(0) < 1) throw ShapeError("predict_sequence: empty feature sequence");
  std::vector<torch::Tensor> parts;
  // Windows are built per chunk.
  for (std::int64_t start = 0; start < rows.size(0); start += chunk) {
    const auto end = std::min(start + chunk, rows.size(0));
    const auto lead = std::max<std::int64_t>(0, start - (window - 1));
    auto windows = make_windows(rows.slice(0, lead, end), window).slice(0, start - lead, end - lead);
    parts.push_back(model->forward(windows.to(dtype)));
  }
  return torch::cat(parts, 0);
}

std::vector<AblationRow> window_ablation(const torch::Tensor& features, const torch::Tensor& targets,
                                         const std::vector<int>& windows, const BlstmConfig& model_cfg,
                                         const BlstmTrainConfig& cfg) {
  if (windows.empty()) throw ConfigError("window_ablation: empty window list");
  if (features.dim() != 2 || targets.dim() != 2 || features.size(0) != targets.size(0) || features.size(0) < 2) {
    throw ShapeError("window_ablation: need aligned [T, D] features and [T, out] targets with T >= 2");
  }
  const auto T = features.size(0);
  const auto held_out = std::max<std::int64_t>(1, T / 10);
  const auto split = T - held_out;

  std::vector<AblationRow> table;
  for (int w : windows) {
    auto all = make_windows(features, w);
    auto train_x = all.slice(0, 0, split);
    auto train_y = targets.slice(0, 0, split);
    auto val_x = all.slice(0, split, T);
    auto val_y = targets.slice(0, split, T);
    auto trained = train_blstm(train_x, train_y, model_cfg, cfg);
    table.push_back({w, blstm_mse(trained.model, train_x, train_y), blstm_mse(trained.model, val_x, val_y)});
  }
  return table;
}

SmoothTargetData smooth_target_data(std::uint64_t seed, std::int64_t ticks, int input_dim, int output_dim,
                                    int span) {
  if (ticks < 1 || input_dim < 1 || output_dim < 1 || span < 1) {
    throw ConfigError("smooth_target_data: sizes must be positive");
  }
  Rng rng(seed);
  auto x = standard_normal({ticks, input_dim}, rng);
  auto m = standard_normal({output_dim, input_dim}, rng) / std::sqrt(static_cast<double>(input_dim));
  auto windows = make_windows(x, span);
  auto summed = windows.sum(1) / std::sqrt(static_cast<double>(span));
  auto y = torch::tanh(torch::matmul(summed, m.t()));
  return {x.to(torch::kFloat32), y.to(torch::kFloat32)};
}

}  // namespace avsynth
