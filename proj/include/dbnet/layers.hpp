#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dbnet/autograd.hpp"
#include "dbnet/ops.hpp"

namespace dbnet {

/// Named handle to a learnable tensor or a persistent buffer (batch-norm
/// running statistics). Declaration order is the serialization order.
template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Intermediate shapes recorded during a forward pass, keyed by stage name.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

template <typename T>
struct ForwardContext {
  Mode mode = Mode::Infer;
  Tape<T>* tape = nullptr;
  std::mt19937_64* rng = nullptr;  // required for dropout in train mode
  ShapeTrace* trace = nullptr;

  void note(const std::string& stage, const Shape& shape) const {
    if (trace != nullptr) trace->emplace_back(stage, shape);
  }
};

/// Glorot-uniform samples in [-limit, limit], limit = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw, ops::ConvOptions options,
         std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Var<T>& weight() { return weight_; }
  const Var<T>& weight() const { return weight_; }
  const ops::ConvOptions& options() const { return options_; }
  std::size_t parameter_count() const { return weight_.size(); }

 private:
  Var<T> weight_;
  ops::ConvOptions options_;
};

/// Each of `maps` input maps yields `depth` maps from a kernel spanning the
/// whole electrode axis, which collapses to 1.
template <typename T>
class DepthwiseConv {
 public:
  DepthwiseConv() = default;
  DepthwiseConv(std::size_t maps, std::size_t depth, std::size_t electrodes, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const { conv_.collect(out, prefix); }

  Conv2d<T>& conv() { return conv_; }
  std::size_t out_maps() const { return maps_ * depth_; }

 private:
  Conv2d<T> conv_;
  std::size_t maps_ = 0;
  std::size_t depth_ = 0;
  std::size_t electrodes_ = 0;
};

/// Depthwise temporal convolution (same padding) followed by a 1x1 pointwise
/// convolution that mixes maps.
template <typename T>
class SeparableConv {
 public:
  SeparableConv() = default;
  SeparableConv(std::size_t maps, std::size_t out_maps, std::size_t kernel_width, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Conv2d<T>& depthwise() { return depthwise_; }
  Conv2d<T>& pointwise() { return pointwise_; }
  std::size_t parameter_count() const { return depthwise_.parameter_count() + pointwise_.parameter_count(); }

 private:
  Conv2d<T> depthwise_;
  Conv2d<T> pointwise_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, ops::BatchNormOptions options);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Var<T>& gamma() { return gamma_; }
  Var<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_.value(); }
  Tensor<T>& running_var() { return running_var_.value(); }
  const ops::BatchNormOptions& options() const { return options_; }

 private:
  Var<T> gamma_;
  Var<T> beta_;
  Var<T> running_mean_;
  Var<T> running_var_;
  ops::BatchNormOptions options_;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Var<T>& weight() { return weight_; }
  Var<T>& bias() { return bias_; }
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

 private:
  Var<T> weight_;
  Var<T> bias_;
};

template <typename T>
Var<T> apply_dropout(const ForwardContext<T>& ctx, const Var<T>& x, double rate);

/// Mean over `axis` (removed from the shape).
template <typename T>
Var<T> global_avg_pool(const ForwardContext<T>& ctx, const Var<T>& x, std::size_t axis) {
  return ops::mean_axis(ctx.tape, x, axis);
}

}  // namespace dbnet
