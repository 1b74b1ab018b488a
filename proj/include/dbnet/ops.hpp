#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dbnet/autograd.hpp"

// Differentiable tensor operations. Every op takes an optional tape: when the
// tape is null or no input requires a gradient, nothing is recorded.
namespace dbnet::ops {

enum class Padding { Valid, Same, Causal };
enum class PoolMode { Average, Max };

struct ConvOptions {
  Padding padding = Padding::Valid;
  std::size_t dilation_h = 1;
  std::size_t dilation_w = 1;
  std::size_t groups = 1;
};

struct BatchNormOptions {
  double momentum = 0.9;
  double epsilon = 1e-3;
};

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

/// x * w where w has x's rank and every extent equals x's or 1.
template <typename T>
Var<T> broadcast_mul(Tape<T>* tape, const Var<T>& x, const Var<T>& w);

template <typename T>
Var<T> scale(Tape<T>* tape, const Var<T>& x, T factor);

template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& x);

/// Mean over one axis; the axis is removed from the result.
template <typename T>
Var<T> mean_axis(Tape<T>* tape, const Var<T>& x, std::size_t axis);

template <typename T>
Var<T> reshape(Tape<T>* tape, const Var<T>& x, Shape shape);

template <typename T>
Var<T> permute(Tape<T>* tape, const Var<T>& x, const std::vector<std::size_t>& order);

template <typename T>
Var<T> slice(Tape<T>* tape, const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename T>
Var<T> concat(Tape<T>* tape, const std::vector<Var<T>>& parts, std::size_t axis);

/// Cross-correlation over NCHW input with an [out, in/groups, kh, kw] kernel.
/// Same padding puts the smaller half on the leading side for even spans.
template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const Var<T>& kernel, const ConvOptions& options);

/// Non-overlapping windows of width p along the last axis; a trailing
/// partial window is dropped.
template <typename T>
Var<T> pool_last_axis(Tape<T>* tape, const Var<T>& input, std::size_t p, PoolMode mode);

/// Normalizes per channel (axis 1). Train mode uses batch statistics and
/// folds them into the running estimates; infer mode reads the running ones.
template <typename T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& options,
                  Mode mode);

template <typename T>
Var<T> elu(Tape<T>* tape, const Var<T>& x);

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& x);

template <typename T>
Var<T> sigmoid(Tape<T>* tape, const Var<T>& x);

/// Softmax over the last axis.
template <typename T>
Var<T> softmax(Tape<T>* tape, const Var<T>& logits);

/// Inverted dropout; identity in infer mode or when rate is 0.
template <typename T>
Var<T> dropout(Tape<T>* tape, const Var<T>& x, double rate, Mode mode, std::mt19937_64& rng);

/// x [batch, in] times weight [out, in]^T plus optional bias [out].
template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Mean of -log(max(p_true, 1e-12)) over the batch rows of probs.
template <typename T>
Var<T> cross_entropy(Tape<T>* tape, const Var<T>& probs, std::span<const std::size_t> labels);

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace dbnet::ops
