#pragma once

// Adam with a one-cycle learning-rate/momentum schedule, F1-based early
// stopping and classification metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hyperx/dataset.hpp"
#include "hyperx/errors.hpp"
#include "hyperx/model.hpp"
#include "hyperx/ops.hpp"
#include "json.hpp"

namespace hyperx {

struct TrainConfig {
  double max_lr = 7.96e-6;
  double pct_start = 0.425;
  double div_factor = 10.0;
  double final_div_factor = 10.0;
  double beta1_low = 0.7403;   ///< at the learning-rate peak
  double beta1_high = 0.8314;  ///< at both ends of the cycle
  double beta2 = 0.999;
  double eps = 1e-8;
  int epochs = 50;
  int patience = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Target target = Target::arousal;
  double train_frac = 0.8;
  SplitUnit split_unit = SplitUnit::segment;
  bool augment = true;
  AugmentConfig augmentation;
  /// Evaluate the train split (eval mode) after every epoch.
  bool track_train_metrics = false;
  /// Stop once eval-mode train accuracy reaches this value; implies track_train_metrics.
  std::optional<double> stop_at_train_accuracy;
  /// Workers for evaluation batches; training itself runs on one thread.
  std::size_t threads = 1;

  void validate() const {
    if (!(max_lr > 0.0)) throw ConfigError("max_lr must be positive");
    if (!(pct_start > 0.0 && pct_start < 1.0)) throw ConfigError("pct_start must lie in (0, 1)");
    if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw ConfigError("dividing factors must be positive");
    if (!(beta1_low >= 0.0 && beta1_low < 1.0 && beta1_high >= 0.0 && beta1_high < 1.0))
      throw ConfigError("momentum bounds must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0) || !(eps > 0.0)) throw ConfigError("beta2 must lie in [0, 1) and eps be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (patience < 1 || patience > epochs)
      throw ConfigError("patience must lie in [1, epochs]; got " + std::to_string(patience) + " with " +
                        std::to_string(epochs) + " epochs");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
    if (stop_at_train_accuracy && !(*stop_at_train_accuracy > 0.0 && *stop_at_train_accuracy <= 1.0))
      throw ConfigError("stop_at_train_accuracy must lie in (0, 1]");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"max_lr", c.max_lr},
                   {"pct_start", c.pct_start},
                   {"div_factor", c.div_factor},
                   {"final_div_factor", c.final_div_factor},
                   {"beta1_low", c.beta1_low},
                   {"beta1_high", c.beta1_high},
                   {"beta2", c.beta2},
                   {"eps", c.eps},
                   {"epochs", c.epochs},
                   {"patience", c.patience},
                   {"batch_size", c.batch_size},
                   {"seed", c.seed},
                   {"target", target_name(c.target)},
                   {"train_frac", c.train_frac},
                   {"split_unit", split_unit_name(c.split_unit)},
                   {"augment", c.augment},
                   {"augment_scale", {c.augmentation.scale_low, c.augmentation.scale_high}},
                   {"augment_noise", c.augmentation.noise_fraction},
                   {"track_train_metrics", c.track_train_metrics},
                   {"stop_at_train_accuracy", nullptr}};
  if (c.stop_at_train_accuracy) j["stop_at_train_accuracy"] = *c.stop_at_train_accuracy;
  return j;
}

/// Overlays the keys present in `j`; thread count is a runtime setting and not part of the file.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  detail::reject_unknown(j,
                         {"max_lr", "pct_start", "div_factor", "final_div_factor", "beta1_low", "beta1_high", "beta2",
                          "eps", "epochs", "patience", "batch_size", "seed", "target", "train_frac", "split_unit",
                          "augment", "augment_scale", "augment_noise", "track_train_metrics",
                          "stop_at_train_accuracy"},
                         "train config");
  using detail::read_field;
  read_field(j, "max_lr", base.max_lr);
  read_field(j, "pct_start", base.pct_start);
  read_field(j, "div_factor", base.div_factor);
  read_field(j, "final_div_factor", base.final_div_factor);
  read_field(j, "beta1_low", base.beta1_low);
  read_field(j, "beta1_high", base.beta1_high);
  read_field(j, "beta2", base.beta2);
  read_field(j, "eps", base.eps);
  read_field(j, "epochs", base.epochs);
  read_field(j, "patience", base.patience);
  read_field(j, "batch_size", base.batch_size);
  read_field(j, "seed", base.seed);
  read_field(j, "train_frac", base.train_frac);
  read_field(j, "augment", base.augment);
  read_field(j, "augment_noise", base.augmentation.noise_fraction);
  read_field(j, "track_train_metrics", base.track_train_metrics);
  try {
    if (j.contains("target")) base.target = parse_target(j.at("target").get<std::string>());
    if (j.contains("split_unit")) base.split_unit = parse_split_unit(j.at("split_unit").get<std::string>());
    if (j.contains("augment_scale")) {
      const auto r = j.at("augment_scale").get<std::vector<double>>();
      if (r.size() != 2) throw ConfigError("augment_scale must be [low, high]");
      base.augmentation.scale_low = r[0];
      base.augmentation.scale_high = r[1];
    }
    if (j.contains("stop_at_train_accuracy")) {
      const auto& v = j.at("stop_at_train_accuracy");
      base.stop_at_train_accuracy = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return base;
}

// ---------------------------------------------------------------------------
// Schedule

struct CyclePoint {
  double lr;
  double beta1;
};

inline std::size_t one_cycle_peak(std::size_t total_steps, double pct_start) {
  return static_cast<std::size_t>(std::llround(pct_start * static_cast<double>(total_steps)));
}

/// Linear warm-up from max_lr/div_factor to max_lr at round(pct_start·T),
/// then linear decay to max_lr/div_factor/final_div_factor at step T-1.
/// β₁ mirrors the learning rate between beta1_high and beta1_low.
inline CyclePoint one_cycle(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step >= total_steps)
    throw ConfigError("schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  const double initial = cfg.max_lr / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  const std::size_t last = total_steps - 1;
  const std::size_t peak = std::min(one_cycle_peak(total_steps, cfg.pct_start), last);
  if (step <= peak) {
    const double f = peak == 0 ? 1.0 : static_cast<double>(step) / static_cast<double>(peak);
    return {std::lerp(initial, cfg.max_lr, f), std::lerp(cfg.beta1_high, cfg.beta1_low, f)};
  }
  const double f = static_cast<double>(step - peak) / static_cast<double>(last - peak);
  return {std::lerp(cfg.max_lr, final_lr, f), std::lerp(cfg.beta1_low, cfg.beta1_high, f)};
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

/// One Adam update with bias correction, using the β₁ supplied for this step.
/// Gradients must be finite; parameters without a gradient are skipped.
inline void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double lr, double beta1,
                      double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].tensor.numel())
      throw DimensionError("optimizer state for '" + params[i].name + "' has the wrong size");
    if (!params[i].tensor.has_grad()) continue;
    for (double g : params[i].tensor.grad())
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in '" + params[i].name + "' at optimizer step " +
                           std::to_string(state.step + 1));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (!p.has_grad()) continue;
    auto w = p.data();
    const auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Early stopping and metrics

class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  /// Records one epoch's score; returns true when it strictly improves on the best so far.
  bool update(double score) {
    if (score > best_) {
      best_ = score;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const noexcept { return stale_ >= patience_; }
  double best() const noexcept { return best_; }
  int stale_epochs() const noexcept { return stale_; }

 private:
  int patience_;
  int stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

struct MetricsReport {
  std::size_t classes = 3;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  std::vector<std::size_t> support;
  double macro_f1 = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  double loss = 0.0;

  nlohmann::json to_json() const {
    return {{"accuracy", accuracy},
            {"accuracy_percent", 100.0 * accuracy},
            {"macro_f1", macro_f1},
            {"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"support", support},
            {"confusion", confusion},
            {"total", total},
            {"loss", loss}};
  }
};

inline MetricsReport compute_metrics(const std::vector<int>& predicted, const std::vector<int>& truth,
                                     std::size_t classes = 3) {
  if (predicted.size() != truth.size()) throw DimensionError("prediction and label counts differ");
  if (truth.empty()) throw DimensionError("cannot compute metrics on an empty split");
  MetricsReport r;
  r.classes = classes;
  r.total = truth.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int label : {truth[i], predicted[i]})
      if (label < 0 || static_cast<std::size_t>(label) >= classes)
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    ++r.confusion[truth[i]][predicted[i]];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t tp = r.confusion[c][c];
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < classes; ++k) row += r.confusion[c][k], col += r.confusion[k][c];
    const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double q = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    r.precision.push_back(p);
    r.recall.push_back(q);
    r.f1.push_back(p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0);
    r.support.push_back(row);
    correct += tp;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  r.macro_f1 = std::accumulate(r.f1.begin(), r.f1.end(), 0.0) / static_cast<double>(classes);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Predictions {
  std::vector<int> predicted;
  std::vector<int> labels;
  double loss = 0.0;  ///< mean cross-entropy
};

/// Eval-mode forward over `indices` in fixed batches. Batches are spread over
/// `threads` workers; results do not depend on the worker count.
inline Predictions predict(H2Model& model, const std::vector<Segment>& segments, const std::vector<std::size_t>& indices,
                           Target target, std::size_t batch_size, std::size_t threads = 1) {
  if (indices.empty()) throw DimensionError("cannot evaluate an empty split");
  const bool was_training = model.training();
  model.set_training(false);
  const std::size_t batches = (indices.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<int>> preds(batches);
  std::vector<double> losses(batches);
  std::vector<std::exception_ptr> errors(batches);
  auto work = [&](std::size_t first, std::size_t stride) {
    NoGradGuard guard;
    for (std::size_t b = first; b < batches; b += stride) try {
        const std::size_t lo = b * batch_size, hi = std::min(indices.size(), lo + batch_size);
        const Batch batch = make_batch(segments, std::span(indices).subspan(lo, hi - lo), target);
        const Tensor logits = model.forward(batch);
        preds[b] = argmax_rows(logits);
        losses[b] = softmax_cross_entropy(logits, batch.labels).item() * static_cast<double>(hi - lo);
      } catch (...) {
        errors[b] = std::current_exception();
      }
  };
  threads = std::clamp<std::size_t>(threads, 1, batches);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
  }
  model.set_training(was_training);
  Predictions out;
  for (std::size_t b = 0; b < batches; ++b) {
    if (errors[b]) std::rethrow_exception(errors[b]);
    out.predicted.insert(out.predicted.end(), preds[b].begin(), preds[b].end());
    out.loss += losses[b];
  }
  out.loss /= static_cast<double>(indices.size());
  for (auto i : indices) out.labels.push_back(segments[i].label(target));
  return out;
}

inline MetricsReport evaluate(H2Model& model, const std::vector<Segment>& segments,
                              const std::vector<std::size_t>& indices, Target target, std::size_t batch_size = 32,
                              std::size_t threads = 1) {
  const auto p = predict(model, segments, indices, target, batch_size, threads);
  auto r = compute_metrics(p.predicted, p.labels, model.config().num_classes);
  r.loss = p.loss;
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double train_running_accuracy = 0.0;  ///< over the augmented, train-mode batches
  std::optional<double> train_accuracy;  ///< eval mode, when tracked
  double test_loss = 0.0;
  double test_accuracy = 0.0;
  double test_macro_f1 = 0.0;
  double lr = 0.0;  ///< at the epoch's last step
  bool improved = false;
};

enum class StopReason { completed, early_stopped, target_reached, diverged };

inline std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::early_stopped: return "early_stopped";
    case StopReason::target_reached: return "target_reached";
    case StopReason::diverged: return "diverged";
  }
  return "unknown";
}

struct TrainResult {
  std::vector<EpochRecord> history;
  /// Clone of model.state() at the epoch with the best test macro-F1.
  std::vector<NamedTensor> best_state;
  int best_epoch = 0;
  MetricsReport best;
  StopReason reason = StopReason::completed;
  std::string diagnostics;  ///< set when training diverged
  std::size_t steps = 0;
};

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,train_running_accuracy,train_accuracy,test_loss,test_accuracy,test_macro_f1,lr\n";
  char line[512], train_acc[32] = "";
  for (const auto& e : history) {
    if (e.train_accuracy) std::snprintf(train_acc, sizeof train_acc, "%.17g", *e.train_accuracy);
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%s,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss,
                  e.train_running_accuracy, e.train_accuracy ? train_acc : "", e.test_loss, e.test_accuracy,
                  e.test_macro_f1, e.lr);
    out += line;
  }
  return out;
}

inline std::vector<NamedTensor> snapshot(const std::vector<NamedTensor>& state) {
  std::vector<NamedTensor> out;
  for (const auto& t : state) out.push_back({t.name, t.tensor.clone()});
  return out;
}

/// Batch boundaries over n items; a trailing batch of one is merged into the
/// previous batch because train-mode BatchNorm needs at least two samples.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size) out.emplace_back(lo, std::min(n, lo + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` on segments[split.train] and selects the epoch with the best
/// macro-F1 on segments[split.test]. On return the model holds the best state.
inline TrainResult train(H2Model& model, const std::vector<Segment>& segments, const Split& split,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (split.train.empty() || split.test.empty()) throw DimensionError("train and test splits must both be non-empty");
  if (split.train.size() < 2) throw DegenerateBatchError("training needs at least two samples");
  const auto bounds = batch_bounds(split.train.size(), cfg.batch_size);
  const std::size_t per_epoch = bounds.size();
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);
  const bool track_train = cfg.track_train_metrics || cfg.stop_at_train_accuracy.has_value();

  const auto params = model.parameters();
  AdamState adam;
  EarlyStopper stopper(cfg.patience);
  TrainResult result;
  result.best_state = snapshot(model.state());
  model.reseed_dropout(detail::mix_seed(cfg.seed, 0xD0));
  Rng order_rng(detail::mix_seed(cfg.seed, 0x5F));
  Rng augment_rng(detail::mix_seed(cfg.seed, 0xA6));

  std::vector<std::size_t> order = split.train;
  std::vector<Segment> scratch;
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    model.set_training(true);
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (const auto& [lo, hi] : bounds) {
      Batch batch;
      if (cfg.augment) {
        scratch.clear();
        std::vector<std::size_t> local;
        for (std::size_t i = lo; i < hi; ++i) {
          scratch.push_back(augment(segments[order[i]], augment_rng, cfg.augmentation));
          local.push_back(local.size());
        }
        batch = make_batch(scratch, local, cfg.target);
      } else {
        batch = make_batch(segments, std::span(order).subspan(lo, hi - lo), cfg.target);
      }
      for (auto p : params) p.tensor.zero_grad();
      const Tensor logits = model.forward(batch);
      const Tensor loss = softmax_cross_entropy(logits, batch.labels);
      const double loss_value = loss.item();
      const auto point = one_cycle(step, total_steps, cfg);
      rec.lr = point.lr;
      try {
        if (!std::isfinite(loss_value))
          throw NumericError("non-finite loss " + std::to_string(loss_value) + " at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step));
        backward(loss);
        adam_step(params, adam, point.lr, point.beta1, cfg.beta2, cfg.eps);
      } catch (const NumericError& e) {
        result.reason = StopReason::diverged;
        result.diagnostics = e.what();
        result.steps = step;
        model.load_state(result.best_state);
        return result;
      }
      loss_sum += loss_value * static_cast<double>(hi - lo);
      const auto pred = argmax_rows(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
      seen += hi - lo;
      ++step;
    }
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_running_accuracy = static_cast<double>(correct) / static_cast<double>(seen);

    const auto test = evaluate(model, segments, split.test, cfg.target, cfg.batch_size, cfg.threads);
    rec.test_loss = test.loss;
    rec.test_accuracy = test.accuracy;
    rec.test_macro_f1 = test.macro_f1;
    if (track_train)
      rec.train_accuracy = evaluate(model, segments, split.train, cfg.target, cfg.batch_size, cfg.threads).accuracy;
    rec.improved = stopper.update(test.macro_f1);
    if (rec.improved) {
      result.best_state = snapshot(model.state());
      result.best_epoch = epoch;
      result.best = test;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (cfg.stop_at_train_accuracy && *rec.train_accuracy >= *cfg.stop_at_train_accuracy) {
      result.reason = StopReason::target_reached;
      break;
    }
    if (stopper.should_stop()) {
      result.reason = StopReason::early_stopped;
      break;
    }
  }
  result.steps = step;
  model.load_state(result.best_state);
  return result;
}

}  // namespace hyperx
