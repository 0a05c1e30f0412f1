#include "cdpo/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cdpo {

namespace {

double activate(Activation a, double z) {
  switch (a) {
    case Activation::silu:
      return z * sigmoid(z);
    case Activation::tanh:
      return std::tanh(z);
  }
  return z;
}

double activate_grad(Activation a, double z) {
  switch (a) {
    case Activation::silu: {
      const double s = sigmoid(z);
      return s * (1.0 + z * (1.0 - s));
    }
    case Activation::tanh: {
      const double th = std::tanh(z);
      return 1.0 - th * th;
    }
  }
  return 1.0;
}

constexpr double kMaxTimeFrequency = 100.0;

}  // namespace

std::size_t Segment::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ParamVector::ParamVector(std::vector<Segment> layout, Vec values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  std::size_t expected = 0;
  for (const auto& s : layout_) {
    if (s.offset != expected) throw std::invalid_argument("ParamVector: non-contiguous layout");
    expected += s.size();
  }
  if (expected != values_.size()) {
    throw std::invalid_argument("ParamVector: layout covers " + std::to_string(expected) +
                                " values but " + std::to_string(values_.size()) + " were given");
  }
}

std::size_t ParamVector::add_segment(std::string name, std::vector<std::size_t> shape) {
  Segment s{std::move(name), values_.size(), std::move(shape)};
  values_.resize(values_.size() + s.size(), 0.0);
  layout_.push_back(std::move(s));
  return layout_.back().offset;
}

const Segment& ParamVector::segment(const std::string& name) const {
  for (const auto& s : layout_) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("ParamVector: no segment named '" + name + "'");
}

std::span<double> ParamVector::view(const std::string& name) {
  const auto& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::view(const std::string& name) const {
  const auto& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

// ---------------------------------------------------------------------------

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  require(spec_.dim >= 1 && spec_.out_dim >= 1, "Mlp: dimensions must be positive");
  require(spec_.time_embed % 2 == 0, "Mlp: time_embed must be even");
  require(spec_.n_conditions >= 1, "Mlp: need at least one condition");
  require(spec_.time_horizon > 0.0, "Mlp: time_horizon must be positive");
  if (spec_.cond_embed > 0) {
    cond_offset_ = params_.add_segment("cond_embed", {spec_.n_conditions, spec_.cond_embed});
  }
  for (std::size_t l = 0; l < num_layers(); ++l) {
    weight_offset_.push_back(params_.add_segment(weight_name(l), {layer_out(l), layer_in(l)}));
    bias_offset_.push_back(params_.add_segment(bias_name(l), {layer_out(l)}));
  }
}

std::size_t Mlp::input_width() const { return spec_.dim + spec_.time_embed + spec_.cond_embed; }

std::size_t Mlp::layer_in(std::size_t layer) const {
  return layer == 0 ? input_width() : spec_.hidden[layer - 1];
}

std::size_t Mlp::layer_out(std::size_t layer) const {
  return layer + 1 == num_layers() ? spec_.out_dim : spec_.hidden[layer];
}

std::string Mlp::weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string Mlp::bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

void Mlp::init(Rng& rng) {
  std::fill(params_.values().begin(), params_.values().end(), 0.0);
  if (spec_.cond_embed > 0) {
    for (auto& v : params_.view("cond_embed")) v = rng.normal();
  }
  for (std::size_t l = 0; l + 1 < num_layers(); ++l) {
    const double scale = std::sqrt(2.0 / static_cast<double>(layer_in(l)));
    for (auto& w : params_.view(weight_name(l))) w = scale * rng.normal();
  }
}

Vec Mlp::time_features(double t) const {
  Vec out(spec_.time_embed);
  const std::size_t half = spec_.time_embed / 2;
  const double s = t / spec_.time_horizon;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        half == 1 ? 1.0
                  : std::pow(kMaxTimeFrequency, static_cast<double>(k) / static_cast<double>(half - 1));
    out[k] = std::sin(freq * s);
    out[half + k] = std::cos(freq * s);
  }
  return out;
}

Vec Mlp::forward(std::span<const double> x, double t, Condition c, MlpCache* cache) const {
  if (x.size() != spec_.dim) {
    throw std::invalid_argument("Mlp::forward: expected input of dimension " + std::to_string(spec_.dim) +
                                ", got " + std::to_string(x.size()));
  }
  if (c >= spec_.n_conditions) throw std::invalid_argument("Mlp::forward: condition out of range");

  Vec h(input_width());
  std::copy(x.begin(), x.end(), h.begin());
  if (spec_.time_embed > 0) {
    const Vec tf = time_features(t);
    std::copy(tf.begin(), tf.end(), h.begin() + static_cast<std::ptrdiff_t>(spec_.dim));
  }
  const double* p = params_.values().data();
  if (spec_.cond_embed > 0) {
    const double* row = p + cond_offset_ + c * spec_.cond_embed;
    std::copy(row, row + spec_.cond_embed, h.begin() + static_cast<std::ptrdiff_t>(spec_.dim + spec_.time_embed));
  }
  if (cache) {
    cache->input = h;
    cache->pre.clear();
    cache->post.clear();
    cache->condition = c;
  }

  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double* W = p + weight_offset_[l];
    const double* b = p + bias_offset_[l];
    const std::size_t in = layer_in(l);
    const std::size_t out = layer_out(l);
    Vec z(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double* row = W + o * in;
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * h[i];
      z[o] = acc;
    }
    if (l + 1 == num_layers()) {
      if (cache) cache->pre.push_back(z);
      return z;
    }
    Vec a(out);
    for (std::size_t o = 0; o < out; ++o) a[o] = activate(spec_.activation, z[o]);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
    h = std::move(a);
  }
  return h;  // unreachable: num_layers() >= 1
}

Vec Mlp::backward(const MlpCache& cache, std::span<const double> dout, std::span<double> grad) const {
  require(dout.size() == spec_.out_dim, "Mlp::backward: dout dimension mismatch");
  require(grad.size() == params_.size(), "Mlp::backward: gradient buffer has wrong size");
  require(cache.pre.size() == num_layers(), "Mlp::backward: cache does not match this network");

  Vec delta(dout.begin(), dout.end());
  for (std::size_t l = num_layers(); l-- > 0;) {
    const std::size_t in = layer_in(l);
    const std::size_t out = layer_out(l);
    if (l + 1 != num_layers()) {
      for (std::size_t o = 0; o < out; ++o) delta[o] *= activate_grad(spec_.activation, cache.pre[l][o]);
    }
    const Vec& h = l == 0 ? cache.input : cache.post[l - 1];
    const double* W = params_.values().data() + weight_offset_[l];
    double* gW = grad.data() + weight_offset_[l];
    double* gb = grad.data() + bias_offset_[l];
    Vec next(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      const double* row = W + o * in;
      double* grow = gW + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        grow[i] += d * h[i];
        next[i] += d * row[i];
      }
    }
    delta = std::move(next);
  }

  if (spec_.cond_embed > 0) {
    double* g = grad.data() + cond_offset_ + cache.condition * spec_.cond_embed;
    const std::size_t base = spec_.dim + spec_.time_embed;
    for (std::size_t k = 0; k < spec_.cond_embed; ++k) g[k] += delta[base + k];
  }
  return Vec(delta.begin(), delta.begin() + static_cast<std::ptrdiff_t>(spec_.dim));
}

// ---------------------------------------------------------------------------

DenoiserNet::DenoiserNet(MlpSpec spec) : mlp_(std::move(spec)) {
  require(mlp_.spec().out_dim == mlp_.spec().dim, "DenoiserNet: output dimension must equal input dimension");
}

DenoiserNet::DenoiserNet(Mlp mlp) : mlp_(std::move(mlp)) {
  require(mlp_.spec().out_dim == mlp_.spec().dim, "DenoiserNet: output dimension must equal input dimension");
}

Vec DenoiserNet::forward(std::span<const double> x_t, double t, Condition c, MlpCache* cache) const {
  return mlp_.forward(x_t, t, c, cache);
}

Vec DenoiserNet::predict_noise(std::span<const double> x_t, double t, Condition c) const {
  return mlp_.forward(x_t, t, c);
}

// ---------------------------------------------------------------------------

LoraAdapter::LoraAdapter(const MlpSpec& base, LoraSpec spec) : base_spec_(base), spec_(spec) {
  require(spec_.rank >= 1, "LoraAdapter: rank must be >= 1");
  const Mlp shape(base);
  for (std::size_t l = 0; l + 1 < shape.num_layers(); ++l) {
    targets_.push_back(l);
    params_.add_segment(a_name(l), {spec_.rank, shape.layer_in(l)});
    params_.add_segment(b_name(l), {shape.layer_out(l), spec_.rank});
  }
}

std::string LoraAdapter::a_name(std::size_t layer) { return "lora" + std::to_string(layer) + ".A"; }
std::string LoraAdapter::b_name(std::size_t layer) { return "lora" + std::to_string(layer) + ".B"; }

void LoraAdapter::init(Rng& rng) {
  for (const auto l : targets_) {
    auto A = params_.view(a_name(l));
    const double scale = 1.0 / std::sqrt(static_cast<double>(A.size() / spec_.rank));
    for (auto& a : A) a = scale * rng.normal();
    auto B = params_.view(b_name(l));
    std::fill(B.begin(), B.end(), 0.0);
  }
}

void LoraAdapter::merge(const Mlp& base, ParamVector& out) const {
  if (!(base.spec() == base_spec_)) throw std::invalid_argument("apply_lora: adapter shape does not match network");
  out = base.params();
  const std::size_t r = spec_.rank;
  const double s = scale();
  for (const auto l : targets_) {
    const std::size_t in = base.layer_in(l);
    const std::size_t o_dim = base.layer_out(l);
    const auto A = params_.view(a_name(l));
    const auto B = params_.view(b_name(l));
    auto W = out.view(Mlp::weight_name(l));
    for (std::size_t o = 0; o < o_dim; ++o) {
      for (std::size_t i = 0; i < in; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += B[o * r + k] * A[k * in + i];
        // Skipping exact zeros keeps a zero adapter bit-identical to the base.
        if (acc != 0.0) W[o * in + i] += s * acc;
      }
    }
  }
}

void LoraAdapter::pullback(const Mlp& base, std::span<const double> merged_grad,
                           std::span<double> adapter_grad) const {
  require(merged_grad.size() == base.params().size(), "LoraAdapter::pullback: gradient size mismatch");
  require(adapter_grad.size() == params_.size(), "LoraAdapter::pullback: adapter gradient size mismatch");
  const std::size_t r = spec_.rank;
  const double s = scale();
  for (const auto l : targets_) {
    const std::size_t in = base.layer_in(l);
    const std::size_t o_dim = base.layer_out(l);
    const auto A = params_.view(a_name(l));
    const auto B = params_.view(b_name(l));
    const auto& wseg = base.params().segment(Mlp::weight_name(l));
    const double* gW = merged_grad.data() + wseg.offset;
    double* gA = adapter_grad.data() + params_.segment(a_name(l)).offset;
    double* gB = adapter_grad.data() + params_.segment(b_name(l)).offset;
    // dL/dB = s * gW * A^T ; dL/dA = s * B^T * gW
    for (std::size_t o = 0; o < o_dim; ++o) {
      for (std::size_t i = 0; i < in; ++i) {
        const double g = s * gW[o * in + i];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < r; ++k) {
          gB[o * r + k] += g * A[k * in + i];
          gA[k * in + i] += g * B[o * r + k];
        }
      }
    }
  }
}

Mlp apply_lora(const Mlp& base, const LoraAdapter& adapter) {
  Mlp out = base;
  adapter.merge(base, out.params());
  return out;
}

}  // namespace cdpo
