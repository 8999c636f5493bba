#pragma once

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "prosograph/metrics.hpp"
#include "prosograph/model.hpp"

namespace prosograph {

struct StepLosses {
  double mel = 0.0, f0 = 0.0, dur = 0.0, supervision = 0.0, total = 0.0;
};

struct TrainStats {
  std::vector<int> first_batch;      // window ids of the first batch (seed-lock check)
  std::vector<StepLosses> history;   // one entry per step
};

// One optimizer update over a batch of windows. Loss components are zeroed by
// the corresponding ablation switches inside window_losses.
inline StepLosses train_step(TtsModel& model, const PreparedCorpus& data,
                             const std::vector<int>& batch, AdamOptimizer& opt, Rng step_rng,
                             int step_index) {
  StepLosses out;
  DiffTensor total;
  for (size_t b = 0; b < batch.size(); ++b) {
    const PreparedWindow& window = data.windows[batch[b]];
    WindowForward fwd =
        window_forward(model, data, window, /*training=*/true, step_rng.split(b));
    WindowLosses losses = window_losses(model, data, window, fwd);
    out.mel += losses.mel.value();
    out.f0 += losses.f0.value();
    out.dur += losses.dur.value();
    out.supervision += losses.supervision.value();
    total = b == 0 ? losses.total : add(total, losses.total);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total = scalar_mul(total, inv);
  out.mel *= inv;
  out.f0 *= inv;
  out.dur *= inv;
  out.supervision *= inv;
  out.total = total.value();

  auto check_finite = [&](double v, const char* component) {
    if (!std::isfinite(v))
      throw NumericError("train step " + std::to_string(step_index) + ": non-finite " + component);
  };
  check_finite(out.mel, "mel loss");
  check_finite(out.f0, "f0 loss");
  check_finite(out.dur, "duration loss");
  check_finite(out.supervision, "supervision loss");

  model.store.zero_grad();
  backprop(total);
  opt.step(model.store);
  return out;
}

// Deterministic training loop: data order, dropout, and updates are all fixed
// by cfg.seed. The mel encoder stays outside the optimized store, so it is
// frozen by construction.
inline TrainStats train_model(TtsModel& model, const PreparedCorpus& data,
                              const std::function<void(int, const StepLosses&)>& on_step = {}) {
  const TrainConfig& cfg = model.cfg;
  if (data.train_windows.empty()) throw ValidationError("train_model: no training windows");

  AdamOptimizer opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng root(cfg.seed);
  Rng shuffle_rng = root.split("shuffle");
  Rng dropout_rng = root.split("dropout");

  std::vector<int> order = data.train_windows;
  size_t cursor = order.size();  // force shuffle on first batch

  TrainStats stats;
  stats.history.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        for (size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    if (step == 0) stats.first_batch = batch;
    StepLosses losses =
        train_step(model, data, batch, opt, dropout_rng.split(static_cast<uint64_t>(step)), step);
    stats.history.push_back(losses);
    if (on_step) on_step(step, losses);
  }
  return stats;
}

}  // namespace prosograph
