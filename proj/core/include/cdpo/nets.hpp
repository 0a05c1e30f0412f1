#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cdpo/common.hpp"

namespace cdpo {

/// Named slice of a flat parameter vector. Shapes are row-major.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const;
  bool operator==(const Segment&) const = default;
};

/// Flat parameter storage with a stable, ordered layout.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::vector<Segment> layout, Vec values);

  /// Appends a zero-filled segment and returns its offset.
  std::size_t add_segment(std::string name, std::vector<std::size_t> shape);

  std::size_t size() const { return values_.size(); }
  const std::vector<Segment>& layout() const { return layout_; }
  const Segment& segment(const std::string& name) const;

  std::span<double> view(const std::string& name);
  std::span<const double> view(const std::string& name) const;

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<Segment> layout_;
  Vec values_;
};

enum class Activation { silu, tanh };

/// Architecture of the conditioned MLP shared by the denoiser, the raw
/// consistency approximator and the reward net.
struct MlpSpec {
  std::size_t dim = 2;
  std::size_t out_dim = 2;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t time_embed = 16;  ///< sinusoidal features; 0 drops the time input
  std::size_t cond_embed = 8;   ///< learned per-condition embedding; 0 drops it
  std::size_t n_conditions = 1;
  double time_horizon = 64.0;  ///< times are normalised by this before embedding
  Activation activation = Activation::silu;

  bool operator==(const MlpSpec&) const = default;
};

/// Activations recorded by a forward pass, consumed by `Mlp::backward`.
struct MlpCache {
  Vec input;
  std::vector<Vec> pre;   // per layer, before activation
  std::vector<Vec> post;  // per hidden layer, after activation
  Condition condition = 0;
};

/// Fully connected network on [x, time features, condition embedding] with
/// hand-written reverse-mode gradients over a flat parameter vector.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  std::size_t num_layers() const { return spec_.hidden.size() + 1; }
  std::size_t input_width() const;
  std::size_t layer_in(std::size_t layer) const;
  std::size_t layer_out(std::size_t layer) const;
  static std::string weight_name(std::size_t layer);
  static std::string bias_name(std::size_t layer);

  /// Scaled-normal hidden weights, zero biases, zero output layer.
  void init(Rng& rng);

  Vec time_features(double t) const;

  Vec forward(std::span<const double> x, double t, Condition c, MlpCache* cache = nullptr) const;

  /// Accumulates the gradient of <forward(...), dout> into `grad` (sized like
  /// params()); returns the gradient with respect to x.
  Vec backward(const MlpCache& cache, std::span<const double> dout, std::span<double> grad) const;

 private:
  MlpSpec spec_;
  ParamVector params_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::size_t cond_offset_ = 0;
};

/// Anything that predicts the injected noise of a noised sample.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Vec predict_noise(std::span<const double> x_t, double t, Condition c) const = 0;
};

/// Noise-prediction network eps_theta(x_t, t, c).
class DenoiserNet : public NoisePredictor {
 public:
  DenoiserNet() = default;
  explicit DenoiserNet(MlpSpec spec);
  explicit DenoiserNet(Mlp mlp);

  std::size_t dim() const { return mlp_.spec().dim; }
  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }
  ParamVector& params() { return mlp_.params(); }
  const ParamVector& params() const { return mlp_.params(); }

  Vec forward(std::span<const double> x_t, double t, Condition c, MlpCache* cache = nullptr) const;
  Vec predict_noise(std::span<const double> x_t, double t, Condition c) const override;

 private:
  Mlp mlp_;
};

struct LoraSpec {
  std::size_t rank = 8;
  double alpha = 32.0;
};

/// Low-rank update (alpha / rank) * B * A on every hidden linear map of an MLP.
/// The output layer is left untouched.
class LoraAdapter {
 public:
  LoraAdapter() = default;
  LoraAdapter(const MlpSpec& base, LoraSpec spec);

  /// A ~ N(0, 1/in), B = 0, so the adapted network starts equal to the base.
  void init(Rng& rng);

  double scale() const { return spec_.alpha / static_cast<double>(spec_.rank); }
  const LoraSpec& spec() const { return spec_; }
  const std::vector<std::size_t>& targets() const { return targets_; }
  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  static std::string a_name(std::size_t layer);
  static std::string b_name(std::size_t layer);

  /// Writes base + low-rank update into `out` (same layout as base).
  void merge(const Mlp& base, ParamVector& out) const;

  /// Maps a gradient over the merged weights onto the adapter parameters.
  void pullback(const Mlp& base, std::span<const double> merged_grad, std::span<double> adapter_grad) const;

 private:
  MlpSpec base_spec_;
  LoraSpec spec_;
  std::vector<std::size_t> targets_;
  ParamVector params_;
};

/// Copy of `base` whose weights carry the adapter update.
Mlp apply_lora(const Mlp& base, const LoraAdapter& adapter);

}  // namespace cdpo
