#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dbnet/config.hpp"
#include "dbnet/layers.hpp"

namespace dbnet {

enum class Branch { Temporal, Spectral };

std::string to_string(Branch branch);

/// Splits `seq` along `axis` into n overlapping windows starting at
/// 0, s, 2s, ...; each window has length extent - (n-1)*s.
template <typename T>
std::vector<Var<T>> sliding_window_split(Tape<T>* tape, const Var<T>& seq, std::size_t axis, std::size_t n,
                                         std::size_t stride);

/// Local convolutional block: temporal conv, BN, depthwise spatial conv, BN,
/// ELU, pool, dropout, separable conv, BN, ELU, pool, dropout.
/// [batch, 1, C, T] -> [batch, maps, length].
template <typename T>
class LocalBlock {
 public:
  LocalBlock() = default;
  LocalBlock(const DbNetConfig& config, Branch branch, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& trials);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Conv2d<T>& temporal_conv() { return temporal_; }

 private:
  Branch branch_ = Branch::Temporal;
  Conv2d<T> temporal_;
  BatchNorm<T> bn_temporal_;
  DepthwiseConv<T> depthwise_;
  BatchNorm<T> bn_depthwise_;
  SeparableConv<T> separable_;
  BatchNorm<T> bn_separable_;
  ops::PoolMode pool_mode_ = ops::PoolMode::Average;
  std::size_t pool_width_ = 1;
  double dropout_ = 0.0;
};

/// Squeeze-and-excitation over a [batch, a, b] subsequence: the descriptor is
/// the mean over `pooled_axis` (1 or 2); gates sigmoid(W2 relu(W1 desc)) scale
/// the sequence elementwise, broadcast along the pooled axis.
template <typename T>
class SqueezeExcite {
 public:
  SqueezeExcite() = default;
  SqueezeExcite(std::size_t length, std::size_t hidden, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& sub, std::size_t pooled_axis) const;
  void collect(ParamList<T>& out, const std::string& prefix) const;

  Dense<T>& squeeze() { return squeeze_; }
  Dense<T>& excite() { return excite_; }

 private:
  Dense<T> squeeze_;
  Dense<T> excite_;
};

/// Residual stack of dilated causal convolutions over [batch, channels, L].
/// Layer j (1-based) uses dilation j and is followed by BN and ELU. Layer 1
/// sees the input directly, later layers see ELU(input + previous output);
/// the result is ELU(input + last output).
template <typename T>
class DccStack {
 public:
  DccStack() = default;
  DccStack(std::size_t channels, std::size_t layers, std::size_t kernel, ops::BatchNormOptions bn,
           std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& x);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  std::vector<Conv2d<T>>& convs() { return convs_; }
  std::vector<BatchNorm<T>>& norms() { return norms_; }

 private:
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm<T>> norms_;
};

/// Global convolutional block: sliding-window split, per-window SE and DCC
/// stack (separate weights per window), concatenation along the split axis.
/// Temporal: [batch, F, T] split over T, SE pooled over F, convolved over time.
/// Spectral: [batch, F, T] split over F, SE pooled over T, convolved over the
/// spectral axis with T channels.
template <typename T>
class GlobalBlock {
 public:
  GlobalBlock() = default;
  GlobalBlock(const DbNetConfig& config, const BranchDims& dims, Branch branch, std::mt19937_64& rng);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& seq);
  void collect(ParamList<T>& out, const std::string& prefix) const;

  std::vector<SqueezeExcite<T>>& se() { return se_; }
  std::vector<DccStack<T>>& dcc() { return dcc_; }

 private:
  Branch branch_ = Branch::Temporal;
  std::size_t windows_ = 1;
  std::size_t stride_ = 1;
  bool se_enabled_ = true;
  std::vector<SqueezeExcite<T>> se_;
  std::vector<DccStack<T>> dcc_;
};

/// The dual-branch network. Input [batch, C, T] or [batch, 1, C, T]; output
/// class probabilities [batch, n_classes].
template <typename T>
class DbNet {
 public:
  DbNet(const DbNetConfig& config, std::uint64_t seed);

  Var<T> forward(const ForwardContext<T>& ctx, const Var<T>& trials);

  /// Flattens both branch outputs, concatenates them (temporal first), applies
  /// the dense layer and softmax.
  Var<T> classify(const ForwardContext<T>& ctx, const Var<T>& temporal, const Var<T>& spectral);

  /// Trainable parameters and batch-norm buffers in declaration order.
  ParamList<T> parameters() const;

  const DbNetConfig& config() const { return config_; }
  const BranchDims& dims() const { return dims_; }

  LocalBlock<T>& local(Branch b) { return b == Branch::Temporal ? lc_temporal_ : lc_spectral_; }
  GlobalBlock<T>& global(Branch b) { return b == Branch::Temporal ? gc_temporal_ : gc_spectral_; }
  Dense<T>& classifier() { return classifier_; }

 private:
  DbNetConfig config_;
  BranchDims dims_;
  LocalBlock<T> lc_temporal_;
  LocalBlock<T> lc_spectral_;
  GlobalBlock<T> gc_temporal_;
  GlobalBlock<T> gc_spectral_;
  Dense<T> classifier_;
};

}  // namespace dbnet
