#pragma once

// The hierarchical hypercomplex (H2) classifier: one encoder per modality,
// concatenated embeddings, a PHM fusion stack and a dense classifier head.
//
// Encoders come in four variants so the ablations can be rebuilt from one
// config: `phc` (default; [PHC -> BN -> ReLU] x 2 -> global average pool),
// `conv` (same stack with real convolutions), `phm` and `linear` (flattened
// segment -> two PHM / dense stages with BN and ReLU). GSR always uses a
// single fully connected stage, PHM with n = gsr_n for the hypercomplex
// variants and a dense layer otherwise.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyperx/errors.hpp"
#include "hyperx/hyperlayers.hpp"
#include "hyperx/modality.hpp"
#include "hyperx/module.hpp"
#include "hyperx/ops.hpp"
#include "json.hpp"

namespace hyperx {

enum class EncoderVariant { linear, phm, conv, phc };

inline constexpr std::array<EncoderVariant, 4> kVariants{EncoderVariant::linear, EncoderVariant::phm,
                                                         EncoderVariant::conv, EncoderVariant::phc};

inline std::string variant_name(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::linear: return "linear";
    case EncoderVariant::phm: return "phm";
    case EncoderVariant::conv: return "conv";
    case EncoderVariant::phc: return "phc";
  }
  return "?";
}

inline EncoderVariant parse_variant(const std::string& s) {
  for (auto v : kVariants)
    if (variant_name(v) == s) return v;
  throw ConfigError("unknown encoder variant '" + s + "' (expected linear, phm, conv or phc)");
}

/// Widths of one multichannel encoder (EEG, ECG, eye).
struct EncoderWidths {
  std::size_t n = 1;
  std::size_t hidden = 0;       ///< channels after the first convolution stage
  std::size_t embed = 0;        ///< embedding width fed to the fusion module
  std::size_t flat_hidden = 0;  ///< hidden width of the flattened (linear/phm) variants
};

struct ModelConfig {
  EncoderVariant variant = EncoderVariant::phc;
  EncoderWidths eeg{10, 40, 160, 20};
  EncoderWidths ecg{3, 36, 144, 18};
  EncoderWidths eye{4, 32, 128, 16};
  std::size_t gsr_n = 1;
  std::size_t gsr_width = 32;
  ConvGeometry conv{7, 2, 3};
  std::size_t fusion_n = 4;
  std::vector<std::size_t> fusion_widths{2048, 2048, 256};
  double dropout = 0.5;
  std::size_t num_classes = 3;
  bool bias = true;
  /// One algebra tensor per encoder (and one for the fusion stack) instead of one per layer.
  bool share_algebra = false;
  double segment_seconds = 10.0;
  std::uint64_t init_seed = 0;

  const EncoderWidths& widths(Modality m) const {
    switch (m) {
      case Modality::eeg: return eeg;
      case Modality::ecg: return ecg;
      case Modality::eye: return eye;
      case Modality::gsr: break;
    }
    throw ConfigError("GSR has no multichannel encoder widths");
  }
  EncoderWidths& widths(Modality m) { return const_cast<EncoderWidths&>(std::as_const(*this).widths(m)); }

  std::size_t input_length(Modality m) const { return segment_samples(m, segment_seconds); }
  std::size_t input_channels(Modality m) const { return processed_geometry(m).channels; }

  std::size_t embed_width(Modality m) const { return m == Modality::gsr ? gsr_width : widths(m).embed; }

  std::size_t fusion_input() const {
    std::size_t total = 0;
    for (Modality m : kModalities) total += embed_width(m);
    return total;
  }

  bool hypercomplex() const { return variant == EncoderVariant::phm || variant == EncoderVariant::phc; }
  bool convolutional() const { return variant == EncoderVariant::conv || variant == EncoderVariant::phc; }

  void validate() const {
    auto positive = [](std::size_t v, const std::string& what) {
      if (v == 0) throw ConfigError(what + " must be positive");
    };
    for (Modality m : {Modality::eeg, Modality::ecg, Modality::eye}) {
      const auto& w = widths(m);
      const std::string name(modality_name(m));
      positive(w.n, name + ".n");
      positive(w.embed, name + ".embed");
      const std::size_t channels = input_channels(m), length = input_length(m);
      if (convolutional()) {
        positive(w.hidden, name + ".hidden");
        if (variant == EncoderVariant::phc) {
          require_divisible(channels, w.n, name + " input channels");
          require_divisible(w.hidden, w.n, name + ".hidden");
          require_divisible(w.embed, w.n, name + ".embed");
        }
        std::size_t len = length;
        for (int stage = 0; stage < 2; ++stage) {
          if (conv.stride == 0 || conv.kernel == 0) throw ConfigError("conv kernel and stride must be positive");
          if (conv.kernel > len + 2 * conv.padding)
            throw ConfigError(name + " encoder: kernel " + std::to_string(conv.kernel) + " exceeds padded length " +
                              std::to_string(len + 2 * conv.padding) + " at stage " + std::to_string(stage + 1));
          len = (len + 2 * conv.padding - conv.kernel) / conv.stride + 1;
        }
      } else {
        positive(w.flat_hidden, name + ".flat_hidden");
        if (variant == EncoderVariant::phm) {
          require_divisible(channels * length, w.n, name + " flattened input width");
          require_divisible(w.flat_hidden, w.n, name + ".flat_hidden");
          require_divisible(w.embed, w.n, name + ".embed");
        }
      }
    }
    positive(gsr_width, "gsr_width");
    positive(gsr_n, "gsr_n");
    if (hypercomplex()) {
      require_divisible(input_length(Modality::gsr), gsr_n, "gsr input width");
      require_divisible(gsr_width, gsr_n, "gsr_width");
    }
    positive(fusion_n, "fusion_n");
    if (fusion_widths.empty()) throw ConfigError("fusion_widths needs at least one PHM layer");
    require_divisible(fusion_input(), fusion_n, "fusion input width (sum of embeddings)");
    for (std::size_t i = 0; i < fusion_widths.size(); ++i)
      require_divisible(fusion_widths[i], fusion_n, "fusion_widths[" + std::to_string(i) + "]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (!(segment_seconds > 0.0)) throw ConfigError("segment_seconds must be positive");
  }
};

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const EncoderWidths& w) {
  return {{"n", w.n}, {"hidden", w.hidden}, {"embed", w.embed}, {"flat_hidden", w.flat_hidden}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", variant_name(c.variant)},
          {"eeg", to_json(c.eeg)},
          {"ecg", to_json(c.ecg)},
          {"eye", to_json(c.eye)},
          {"gsr_n", c.gsr_n},
          {"gsr_width", c.gsr_width},
          {"kernel", c.conv.kernel},
          {"stride", c.conv.stride},
          {"padding", c.conv.padding},
          {"fusion_n", c.fusion_n},
          {"fusion_widths", c.fusion_widths},
          {"dropout", c.dropout},
          {"num_classes", c.num_classes},
          {"bias", c.bias},
          {"share_algebra", c.share_algebra},
          {"segment_seconds", c.segment_seconds},
          {"init_seed", c.init_seed}};
}

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

inline void overlay(const nlohmann::json& j, EncoderWidths& w, const std::string& where) {
  reject_unknown(j, {"n", "hidden", "embed", "flat_hidden"}, where);
  read_field(j, "n", w.n);
  read_field(j, "hidden", w.hidden);
  read_field(j, "embed", w.embed);
  read_field(j, "flat_hidden", w.flat_hidden);
}

}  // namespace detail

/// Applies the keys present in `j` on top of `base`; unknown keys are rejected.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  detail::reject_unknown(j,
                         {"variant", "eeg", "ecg", "eye", "gsr_n", "gsr_width", "kernel", "stride", "padding",
                          "fusion_n", "fusion_widths", "dropout", "num_classes", "bias", "share_algebra",
                          "segment_seconds", "init_seed"},
                         "model config");
  if (j.contains("variant")) base.variant = parse_variant(j.at("variant").get<std::string>());
  for (Modality m : {Modality::eeg, Modality::ecg, Modality::eye}) {
    const std::string name(modality_name(m));
    if (j.contains(name)) detail::overlay(j.at(name), base.widths(m), "model config ." + name);
  }
  detail::read_field(j, "gsr_n", base.gsr_n);
  detail::read_field(j, "gsr_width", base.gsr_width);
  detail::read_field(j, "kernel", base.conv.kernel);
  detail::read_field(j, "stride", base.conv.stride);
  detail::read_field(j, "padding", base.conv.padding);
  detail::read_field(j, "fusion_n", base.fusion_n);
  detail::read_field(j, "fusion_widths", base.fusion_widths);
  detail::read_field(j, "dropout", base.dropout);
  detail::read_field(j, "num_classes", base.num_classes);
  detail::read_field(j, "bias", base.bias);
  detail::read_field(j, "share_algebra", base.share_algebra);
  detail::read_field(j, "segment_seconds", base.segment_seconds);
  detail::read_field(j, "init_seed", base.init_seed);
  return base;
}

// ---------------------------------------------------------------------------
// Model

/// One batch of segments, inputs indexed by Modality: [B, C, L] each.
struct Batch {
  std::array<Tensor, 4> inputs;
  std::vector<int> labels;

  Tensor& operator[](Modality m) { return inputs[index_of(m)]; }
  const Tensor& operator[](Modality m) const { return inputs[index_of(m)]; }
  std::size_t size() const { return inputs[0].defined() ? inputs[0].dim(0) : 0; }
};

struct ParameterBreakdown {
  std::array<std::size_t, 4> encoders{};
  std::size_t fusion = 0;
  std::size_t head = 0;
  std::size_t total = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (Modality m : kModalities) j["encoders"][std::string(modality_name(m))] = encoders[index_of(m)];
    j["fusion"] = fusion;
    j["head"] = head;
    j["total"] = total;
    return j;
  }
};

/// A leaf layer of the model with its hierarchical name.
struct LayerRef {
  std::string name;
  const Module* module;
};

class H2Model {
 public:
  explicit H2Model(ModelConfig cfg) : cfg_(std::move(cfg)), dropout_rng_(std::make_shared<Rng>(cfg_.init_seed)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    for (Modality m : kModalities) encoders_[index_of(m)] = build_encoder(m, rng);
    build_fusion(rng);
    set_training(true);
  }

  H2Model(const H2Model&) = delete;
  H2Model& operator=(const H2Model&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }

  /// Concatenated encoder embeddings [B, fusion_input()], in modality order eeg, ecg, gsr, eye.
  Tensor embed(const Batch& batch) {
    check_batch(batch);
    std::vector<Tensor> parts;
    for (Modality m : kModalities) parts.push_back(encoders_[index_of(m)]->forward(batch[m]));
    return concat(parts);
  }

  /// Class logits [B, num_classes].
  Tensor forward(const Batch& batch) { return head_->forward(fusion_->forward(embed(batch))); }

  void set_training(bool on) {
    training_ = on;
    for (auto& e : encoders_) e->set_training(on);
    fusion_->set_training(on);
    head_->set_training(on);
  }
  bool training() const noexcept { return training_; }

  /// Restarts the dropout mask stream; used at the start of each training run.
  void reseed_dropout(std::uint64_t seed) { *dropout_rng_ = Rng(seed); }

  std::vector<NamedTensor> parameters() const {
    std::vector<NamedTensor> out;
    for (Modality m : kModalities) encoders_[index_of(m)]->collect_parameters(std::string(modality_name(m)), out);
    fusion_->collect_parameters("fusion", out);
    head_->collect_parameters("head", out);
    return dedupe(std::move(out));
  }

  std::vector<NamedTensor> buffers() const {
    std::vector<NamedTensor> out;
    for (Modality m : kModalities) encoders_[index_of(m)]->collect_buffers(std::string(modality_name(m)), out);
    fusion_->collect_buffers("fusion", out);
    return out;
  }

  /// Parameters followed by buffers: everything a checkpoint must hold.
  std::vector<NamedTensor> state() const {
    auto out = parameters();
    for (auto& b : buffers()) out.push_back(std::move(b));
    return out;
  }

  /// Copies values into the model by name; every tensor of state() must be present with the same shape.
  void load_state(const std::vector<NamedTensor>& tensors) {
    auto own = state();
    if (tensors.size() != own.size())
      throw FormatError("state has " + std::to_string(tensors.size()) + " tensors, model expects " +
                        std::to_string(own.size()));
    for (auto& dst : own) {
      const NamedTensor* src = nullptr;
      for (const auto& t : tensors)
        if (t.name == dst.name) src = &t;
      if (!src) throw FormatError("state is missing tensor '" + dst.name + "'");
      if (src->tensor.shape() != dst.tensor.shape())
        throw FormatError("tensor '" + dst.name + "' has shape " + shape_str(src->tensor.shape()) + ", model expects " +
                          shape_str(dst.tensor.shape()));
      std::copy(src->tensor.data().begin(), src->tensor.data().end(), dst.tensor.data().begin());
    }
  }

  ParameterBreakdown count_parameters() const {
    ParameterBreakdown b;
    for (Modality m : kModalities) b.encoders[index_of(m)] = count_unique(encoders_[index_of(m)]->parameters());
    b.fusion = count_unique(fusion_->parameters());
    b.head = count_unique(head_->parameters());
    b.total = count_unique(parameters());
    return b;
  }

  /// Every leaf layer (including parameter-free ones), in forward order.
  std::vector<LayerRef> layers() const {
    std::vector<LayerRef> out;
    for (Modality m : kModalities) collect_leaves(std::string(modality_name(m)), *encoders_[index_of(m)], out);
    collect_leaves("fusion", *fusion_, out);
    out.push_back({"head", head_.get()});
    return out;
  }

  Sequential& encoder(Modality m) { return *encoders_[index_of(m)]; }
  Sequential& fusion() { return *fusion_; }
  Dense& head() { return *head_; }

 private:
  std::unique_ptr<Sequential> build_encoder(Modality m, Rng& rng) {
    auto seq = std::make_unique<Sequential>();
    const bool bias = cfg_.bias;
    if (m == Modality::gsr) {
      const std::size_t in = cfg_.input_length(m);
      seq->add("flatten", std::make_unique<Flatten>());
      if (cfg_.hypercomplex())
        seq->add("fc", std::make_unique<PHMLayer>(cfg_.gsr_n, in, cfg_.gsr_width, bias, rng));
      else
        seq->add("fc", std::make_unique<Dense>(in, cfg_.gsr_width, bias, rng));
      seq->add("bn", std::make_unique<BatchNorm>(cfg_.gsr_width));
      seq->add("relu", std::make_unique<ReLU>());
      return seq;
    }
    const auto& w = cfg_.widths(m);
    const std::size_t channels = cfg_.input_channels(m);
    std::optional<Tensor> shared;
    if (cfg_.share_algebra && cfg_.hypercomplex()) shared = init_algebra(w.n, rng);
    switch (cfg_.variant) {
      case EncoderVariant::phc:
        seq->add("conv1", std::make_unique<PHCLayer>(w.n, channels, w.hidden, cfg_.conv, bias, rng, shared));
        break;
      case EncoderVariant::conv:
        seq->add("conv1", std::make_unique<Conv1d>(channels, w.hidden, cfg_.conv, bias, rng));
        break;
      case EncoderVariant::phm:
        seq->add("flatten", std::make_unique<Flatten>());
        seq->add("fc1", std::make_unique<PHMLayer>(w.n, channels * cfg_.input_length(m), w.flat_hidden, bias, rng,
                                                   shared));
        break;
      case EncoderVariant::linear:
        seq->add("flatten", std::make_unique<Flatten>());
        seq->add("fc1", std::make_unique<Dense>(channels * cfg_.input_length(m), w.flat_hidden, bias, rng));
        break;
    }
    const std::size_t mid = cfg_.convolutional() ? w.hidden : w.flat_hidden;
    seq->add("bn1", std::make_unique<BatchNorm>(mid));
    seq->add("relu1", std::make_unique<ReLU>());
    switch (cfg_.variant) {
      case EncoderVariant::phc:
        seq->add("conv2", std::make_unique<PHCLayer>(w.n, w.hidden, w.embed, cfg_.conv, bias, rng, shared));
        break;
      case EncoderVariant::conv:
        seq->add("conv2", std::make_unique<Conv1d>(w.hidden, w.embed, cfg_.conv, bias, rng));
        break;
      case EncoderVariant::phm:
        seq->add("fc2", std::make_unique<PHMLayer>(w.n, w.flat_hidden, w.embed, bias, rng, shared));
        break;
      case EncoderVariant::linear:
        seq->add("fc2", std::make_unique<Dense>(w.flat_hidden, w.embed, bias, rng));
        break;
    }
    seq->add("bn2", std::make_unique<BatchNorm>(w.embed));
    seq->add("relu2", std::make_unique<ReLU>());
    if (cfg_.convolutional()) seq->add("pool", std::make_unique<GlobalAvgPool>());
    return seq;
  }

  void build_fusion(Rng& rng) {
    fusion_ = std::make_unique<Sequential>();
    std::optional<Tensor> shared;
    if (cfg_.share_algebra) shared = init_algebra(cfg_.fusion_n, rng);
    std::size_t in = cfg_.fusion_input();
    for (std::size_t i = 0; i < cfg_.fusion_widths.size(); ++i) {
      const std::string k = std::to_string(i + 1);
      fusion_->add("drop" + k, std::make_unique<Dropout>(cfg_.dropout, dropout_rng_));
      fusion_->add("phm" + k,
                   std::make_unique<PHMLayer>(cfg_.fusion_n, in, cfg_.fusion_widths[i], cfg_.bias, rng, shared));
      fusion_->add("relu" + k, std::make_unique<ReLU>());
      in = cfg_.fusion_widths[i];
    }
    fusion_->add("drop" + std::to_string(cfg_.fusion_widths.size() + 1),
                 std::make_unique<Dropout>(cfg_.dropout, dropout_rng_));
    head_ = std::make_unique<Dense>(in, cfg_.num_classes, cfg_.bias, rng);
  }

  void check_batch(const Batch& batch) const {
    const std::size_t b = batch.size();
    if (b == 0) throw DimensionError("empty batch");
    for (Modality m : kModalities) {
      const Tensor& x = batch[m];
      const std::string name(modality_name(m));
      const Shape want{b, cfg_.input_channels(m), cfg_.input_length(m)};
      if (!x.defined() || x.shape() != want)
        throw DimensionError(name + " input must be " + shape_str(want) + ", got " +
                             (x.defined() ? shape_str(x.shape()) : std::string("nothing")));
      for (double v : x.data())
        if (!std::isfinite(v)) throw NumericError(name + " input contains a non-finite value");
    }
  }

  static void collect_leaves(const std::string& prefix, const Module& m, std::vector<LayerRef>& out) {
    if (const auto* seq = dynamic_cast<const Sequential*>(&m)) {
      for (std::size_t i = 0; i < seq->size(); ++i) collect_leaves(join_name(prefix, seq->name_at(i)), seq->at(i), out);
      return;
    }
    out.push_back({prefix, &m});
  }

  /// Drops repeated handles (shared algebra) keeping the first name.
  static std::vector<NamedTensor> dedupe(std::vector<NamedTensor> in) {
    std::vector<NamedTensor> out;
    std::unordered_set<const void*> seen;
    for (auto& t : in)
      if (seen.insert(t.tensor.node().get()).second) out.push_back(std::move(t));
    return out;
  }

  ModelConfig cfg_;
  std::shared_ptr<Rng> dropout_rng_;
  std::array<std::unique_ptr<Sequential>, 4> encoders_;
  std::unique_ptr<Sequential> fusion_;
  std::unique_ptr<Dense> head_;
  bool training_ = true;
};

}  // namespace hyperx
