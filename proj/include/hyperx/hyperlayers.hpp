#pragma once

// Parameterized hypercomplex multiplication (PHM) and convolution (PHC).
//
// Both layers learn n algebra matrices Aᵢ (n×n) and n filter blocks Fᵢ, and
// use the effective weight W = Σᵢ Aᵢ ⊗ Fᵢ in an ordinary dense or
// convolutional product. For PHC the Kronecker sum is taken separately for
// each kernel tap. The learnable scalar count is n³ + dense/n (+ bias).

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/module.hpp"
#include "hyperx/ops.hpp"

namespace hyperx {

/// Algebra tensor A [n,n,n] plus filter tensor F [n, out/n, in/n (, K)].
struct HypercomplexWeight {
  std::size_t n = 1;
  Tensor algebra;
  Tensor filters;

  bool convolutional() const { return filters.rank() == 4; }

  /// Shape of Σᵢ Aᵢ ⊗ Fᵢ: [out, in] or [Cout, Cin, K].
  Shape effective_shape() const {
    Shape s = filters.shape();
    s.erase(s.begin());
    s[0] *= n;
    s[1] *= n;
    return s;
  }

  void validate() const {
    if (n == 0) throw ConfigError("hypercomplex dimension n must be positive");
    if (algebra.shape() != Shape{n, n, n})
      throw ConfigError("algebra tensor must be [" + std::to_string(n) + "," + std::to_string(n) + "," +
                        std::to_string(n) + "], got " + shape_str(algebra.shape()));
    if ((filters.rank() != 3 && filters.rank() != 4) || filters.dim(0) != n)
      throw ConfigError("filter tensor must be [n,out/n,in/n] or [n,out/n,in/n,K] with n=" + std::to_string(n) +
                        ", got " + shape_str(filters.shape()));
  }
};

/// Σᵢ Aᵢ ⊗ Fᵢ, differentiable with respect to both A and F.
inline Tensor build_weight(const HypercomplexWeight& hw) {
  hw.validate();
  return kron_sum(hw.algebra, hw.filters);
}

/// Throws unless `dim` splits into n equal blocks.
inline void require_divisible(std::size_t dim, std::size_t n, const std::string& what) {
  if (n == 0) throw ConfigError("hypercomplex dimension n must be positive");
  if (dim % n != 0)
    throw ConfigError(what + " = " + std::to_string(dim) + " is not divisible by n = " + std::to_string(n) +
                      "; pick a multiple of " + std::to_string(n));
}

/// Structure constants of the real (n=1), complex (n=2) and quaternion (n=4)
/// algebras, arranged so that Σᵢ wᵢ Aᵢ is the left-multiplication matrix of
/// the element w.
inline std::optional<Tensor> hamilton_algebra(std::size_t n) {
  if (n == 1) return Tensor({1, 1, 1}, std::vector<double>{1.0});
  if (n == 2)
    return Tensor({2, 2, 2}, std::vector<double>{1, 0,  //
                                                 0, 1,  //
                                                 0, -1, //
                                                 1, 0});
  if (n == 4)
    return Tensor({4, 4, 4}, std::vector<double>{
                                 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1,      // 1
                                 0, -1, 0, 0, 1, 0, 0, 0, 0, 0, 0, -1, 0, 0, 1, 0,    // i
                                 0, 0, -1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, -1, 0, 0,    // j
                                 0, 0, 0, -1, 0, 0, -1, 0, 0, 1, 0, 0, 1, 0, 0, 0});  // k
  return std::nullopt;
}

/// Entries ±1/n with independent fair signs.
inline Tensor random_sign_algebra(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  Tensor a({n, n, n});
  const double mag = 1.0 / static_cast<double>(n);
  for (double& v : a.data()) v = coin(rng) ? mag : -mag;
  return a;
}

/// Hamilton structure when it exists for n, random signs otherwise; learnable.
inline Tensor init_algebra(std::size_t n, Rng& rng) {
  Tensor a = hamilton_algebra(n).value_or(Tensor());
  if (!a.defined()) a = random_sign_algebra(n, rng);
  a.set_requires_grad(true);
  return a;
}

/// n³ + out·in/n + bias.
inline std::size_t phm_parameter_formula(std::size_t n, std::size_t in, std::size_t out, bool bias) {
  return n * n * n + out * in / n + (bias ? out : 0);
}

/// n³ + Cout·Cin·K/n + bias.
inline std::size_t phc_parameter_formula(std::size_t n, std::size_t in_channels, std::size_t out_channels,
                                         std::size_t kernel, bool bias) {
  return n * n * n + out_channels * in_channels * kernel / n + (bias ? out_channels : 0);
}

class PHMLayer : public Module {
 public:
  /// `shared_algebra`, when given, is used instead of a private A.
  PHMLayer(std::size_t n, std::size_t in, std::size_t out, bool bias, Rng& rng,
           std::optional<Tensor> shared_algebra = std::nullopt)
      : in_(in), out_(out) {
    require_divisible(in, n, "PHM input width");
    require_divisible(out, n, "PHM output width");
    weight_.n = n;
    weight_.algebra = shared_algebra ? *shared_algebra : init_algebra(n, rng);
    weight_.filters = he_uniform({n, out / n, in / n}, in, rng);
    weight_.validate();
    if (bias) bias_ = learnable_zeros({out});
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 2 || x.dim(1) != in_)
      throw DimensionError("PHM layer expects [B," + std::to_string(in_) + "], got " + shape_str(x.shape()));
    return linear(x, build_weight(weight_), bias_);
  }
  std::string kind() const override { return "phm"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "A"), weight_.algebra});
    out.push_back({join_name(prefix, "F"), weight_.filters});
    if (bias_.defined()) out.push_back({join_name(prefix, "bias"), bias_});
  }

  const HypercomplexWeight& weight() const noexcept { return weight_; }
  HypercomplexWeight& weight() noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  std::size_t n() const noexcept { return weight_.n; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  /// Learnable scalars owned by this layer, A included.
  std::size_t parameter_count() const {
    return weight_.algebra.numel() + weight_.filters.numel() + (bias_.defined() ? bias_.numel() : 0);
  }

 private:
  std::size_t in_, out_;
  HypercomplexWeight weight_;
  Tensor bias_;
};

class PHCLayer : public Module {
 public:
  PHCLayer(std::size_t n, std::size_t in_channels, std::size_t out_channels, ConvGeometry geom, bool bias, Rng& rng,
           std::optional<Tensor> shared_algebra = std::nullopt)
      : in_(in_channels), out_(out_channels), geom_(geom) {
    require_divisible(in_channels, n, "PHC input channels");
    require_divisible(out_channels, n, "PHC output channels");
    if (geom.kernel == 0 || geom.stride == 0) throw ConfigError("PHC kernel size and stride must be positive");
    weight_.n = n;
    weight_.algebra = shared_algebra ? *shared_algebra : init_algebra(n, rng);
    weight_.filters = he_uniform({n, out_channels / n, in_channels / n, geom.kernel}, in_channels * geom.kernel, rng);
    weight_.validate();
    if (bias) bias_ = learnable_zeros({out_channels});
  }

  Tensor forward(const Tensor& x) override {
    if (x.rank() != 3 || x.dim(1) != in_)
      throw DimensionError("PHC layer expects [B," + std::to_string(in_) + ",L], got " + shape_str(x.shape()));
    return conv1d(x, build_weight(weight_), bias_, geom_.stride, geom_.padding);
  }
  std::string kind() const override { return "phc"; }

  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    out.push_back({join_name(prefix, "A"), weight_.algebra});
    out.push_back({join_name(prefix, "F"), weight_.filters});
    if (bias_.defined()) out.push_back({join_name(prefix, "bias"), bias_});
  }

  const HypercomplexWeight& weight() const noexcept { return weight_; }
  HypercomplexWeight& weight() noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }
  std::size_t n() const noexcept { return weight_.n; }
  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }

  std::size_t parameter_count() const {
    return weight_.algebra.numel() + weight_.filters.numel() + (bias_.defined() ? bias_.numel() : 0);
  }

 private:
  std::size_t in_, out_;
  ConvGeometry geom_;
  HypercomplexWeight weight_;
  Tensor bias_;
};

}  // namespace hyperx
