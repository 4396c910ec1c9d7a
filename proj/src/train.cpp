#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "iurkit/error.hpp"
#include "iurkit/scoring.hpp"

namespace iurkit {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw Error("learning_rate must be positive");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw Error("adam beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw Error("adam beta2 must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw Error("adam epsilon must be positive");
  if (!std::isfinite(theta)) throw Error("theta must be finite");
}

AdamState AdamState::for_params(const ModelParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0, 0};
}

nlohmann::json TrainingLog::to_json() const {
  auto items = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json item = {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    if (e.dev_em) item["dev_em"] = *e.dev_em;
    items.push_back(std::move(item));
  }
  return {{"epochs", std::move(items)}};
}

namespace {

double to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

void adam_step(ModelParams& params, AdamState& state, ModelParams& gradient, const TrainConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  auto p = tensors(params);
  auto m = tensors(state.m);
  auto v = tensors(state.v);
  auto g = tensors(gradient);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!p[k].trainable) continue;
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double gi = g[k].data[i];
      const double mi = to_f32(cfg.beta1 * m[k].data[i] + (1.0 - cfg.beta1) * gi);
      const double vi = to_f32(cfg.beta2 * v[k].data[i] + (1.0 - cfg.beta2) * gi * gi);
      m[k].data[i] = mi;
      v[k].data[i] = vi;
      const double update = cfg.learning_rate * (mi / correct1) / (std::sqrt(vi / correct2) + cfg.epsilon);
      p[k].data[i] = to_f32(p[k].data[i] - update);
    }
  }
}

}  // namespace

TrainingLog train(std::span<const TrainingExample> dataset, const TrainConfig& config, ModelParams& params,
                  AdamState& state, const ContextVectors* imported, const DevEvaluator& dev) {
  config.validate();
  TrainingLog log;
  const auto n = dataset.size();
  std::vector<TrainingExample> batch;
  for (auto epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(n, config.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += config.batch_size, ++b) {
      batch.clear();
      for (auto i = start; i < std::min(n, start + config.batch_size); ++i) batch.push_back(dataset[order[i]]);
      Gradient g;
      try {
        g = grad(params, batch, imported, config.workers);
      } catch (const Error& e) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                    ": " + e.what());
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
      adam_step(params, state, g.grad, config);
    }
    state.epochs_done = epoch + 1;
    EpochLog entry{epoch, n ? loss_sum / static_cast<double>(n) : 0.0, std::nullopt};
    if (dev) entry.dev_em = dev(params);
    log.epochs.push_back(entry);
  }
  return log;
}

}  // namespace iurkit
