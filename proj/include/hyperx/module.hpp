#pragma once

// Layer abstraction and the real-valued building blocks of the model.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyperx/ops.hpp"
#include "hyperx/tensor.hpp"

namespace hyperx {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using Rng = std::mt19937_64;

class Module {
 public:
  virtual ~Module() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual std::string kind() const = 0;

  /// Learnable tensors, in a stable order, with hierarchical names.
  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<NamedTensor>& /*out*/) const {}
  /// Non-learnable state that must survive a checkpoint (running statistics).
  virtual void collect_buffers(const std::string& /*prefix*/, std::vector<NamedTensor>& /*out*/) const {}
  virtual void set_training(bool on) { training_ = on; }
  bool training() const noexcept { return training_; }

  std::vector<NamedTensor> parameters(const std::string& prefix = "") const {
    std::vector<NamedTensor> out;
    collect_parameters(prefix, out);
    return out;
  }

 protected:
  bool training_ = true;
};

/// Number of distinct learnable scalars; shared tensors are counted once.
inline std::size_t count_unique(const std::vector<NamedTensor>& params) {
  std::unordered_set<const void*> seen;
  std::size_t total = 0;
  for (const auto& p : params)
    if (seen.insert(p.tensor.node().get()).second) total += p.tensor.numel();
  return total;
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Uniform He initialization: U(-b, b) with b = gain·sqrt(3 / fan_in), gain √2.
inline Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(2.0) * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  t.set_requires_grad(true);
  return t;
}

inline Tensor learnable_zeros(Shape shape) {
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  return t;
}

class Sequential : public Module {
 public:
  Sequential& add(std::string name, std::unique_ptr<Module> m) {
    layers_.emplace_back(std::move(name), std::move(m));
    return *this;
  }

  Tensor forward(const Tensor& x) override {
    Tensor h = x;
    for (auto& [name, layer] : layers_) h = layer->forward(h);
    return h;
  }

  std::string kind() const override { return "sequential"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    for (const auto& [name, layer] : layers_) layer->collect_parameters(join_name(prefix, name), out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    for (const auto& [name, layer] : layers_) layer->collect_buffers(join_name(prefix, name), out);
  }
  void set_training(bool on) override {
    Module::set_training(on);
    for (auto& [name, layer] : layers_) layer->set_training(on);
  }

  std::size_t size() const noexcept { return layers_.size(); }
  Module& at(std::size_t i) { return *layers_.at(i).second; }
  const Module& at(std::size_t i) const { return *layers_.at(i).second; }
  const std::string& name_at(std::size_t i) const { return layers_.at(i).first; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> layers_;
};

/// Fully connected layer, weight [out, in].
class Dense : public Module {
 public:
  Dense(std::size_t in, std::size_t out, bool bias, Rng& rng)
      : weight_(he_uniform({out, in}, in, rng)), bias_(bias ? learnable_zeros({out}) : Tensor()) {}

  Tensor forward(const Tensor& x) override { return linear(x, weight_, bias_); }
  std::string kind() const override { return "dense"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "weight"), weight_});
    if (bias_.defined()) out.push_back({join_name(prefix, "bias"), bias_});
  }

  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  std::size_t parameter_count() const { return weight_.numel() + (bias_.defined() ? bias_.numel() : 0); }

 private:
  Tensor weight_;
  Tensor bias_;
};

struct ConvGeometry {
  std::size_t kernel = 7;
  std::size_t stride = 2;
  std::size_t padding = 3;
};

/// Standard real-valued 1-D convolution, weight [Cout, Cin, K].
class Conv1d : public Module {
 public:
  Conv1d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, bool bias, Rng& rng)
      : weight_(he_uniform({out_channels, in_channels, geom.kernel}, in_channels * geom.kernel, rng)),
        bias_(bias ? learnable_zeros({out_channels}) : Tensor()),
        geom_(geom) {}

  Tensor forward(const Tensor& x) override { return conv1d(x, weight_, bias_, geom_.stride, geom_.padding); }
  std::string kind() const override { return "conv1d"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "weight"), weight_});
    if (bias_.defined()) out.push_back({join_name(prefix, "bias"), bias_});
  }

  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }
  std::size_t parameter_count() const { return weight_.numel() + (bias_.defined() ? bias_.numel() : 0); }

 private:
  Tensor weight_;
  Tensor bias_;
  ConvGeometry geom_;
};

class BatchNorm : public Module {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_(Tensor::ones({channels})),
        beta_(learnable_zeros({channels})),
        running_mean_(Tensor::zeros({channels})),
        running_var_(Tensor::ones({channels})),
        momentum_(momentum),
        eps_(eps) {
    gamma_.set_requires_grad(true);
  }

  Tensor forward(const Tensor& x) override {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, {training_, momentum_, eps_});
  }
  std::string kind() const override { return "batch_norm"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "gamma"), gamma_});
    out.push_back({join_name(prefix, "beta"), beta_});
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "running_mean"), running_mean_});
    out.push_back({join_name(prefix, "running_var"), running_var_});
  }

 private:
  Tensor gamma_, beta_, running_mean_, running_var_;
  double momentum_, eps_;
};

class ReLU : public Module {
 public:
  Tensor forward(const Tensor& x) override { return relu(x); }
  std::string kind() const override { return "relu"; }
};

class Dropout : public Module {
 public:
  Dropout(double p, std::shared_ptr<Rng> rng) : p_(p), rng_(std::move(rng)) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
  }
  Tensor forward(const Tensor& x) override { return dropout(x, p_, training_, *rng_); }
  std::string kind() const override { return "dropout"; }
  double rate() const noexcept { return p_; }

 private:
  double p_;
  std::shared_ptr<Rng> rng_;
};

class GlobalAvgPool : public Module {
 public:
  Tensor forward(const Tensor& x) override { return global_avg_pool(x); }
  std::string kind() const override { return "global_avg_pool"; }
};

class Flatten : public Module {
 public:
  Tensor forward(const Tensor& x) override { return flatten(x); }
  std::string kind() const override { return "flatten"; }
};

}  // namespace hyperx
