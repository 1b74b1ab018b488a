#include "dbnet/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace dbnet {

template <typename T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>((2.0 * ops::unit_uniform(rng) - 1.0) * limit);
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh, std::size_t kw,
                  ops::ConvOptions options, std::mt19937_64& rng)
    : options_(options) {
  if (options.groups == 0 || in_ch % options.groups != 0 || out_ch % options.groups != 0) {
    throw ShapeError("conv: " + std::to_string(in_ch) + " -> " + std::to_string(out_ch) +
                     " channels not divisible into " + std::to_string(options.groups) + " groups");
  }
  const std::size_t in_per_group = in_ch / options.groups;
  const std::size_t receptive = kh * kw;
  weight_ = Var<T>(glorot_uniform<T>(Shape{out_ch, in_per_group, kh, kw}, in_per_group * receptive,
                                     out_ch / options.groups * receptive, rng),
                   true);
}

template <typename T>
Var<T> Conv2d<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) const {
  return ops::conv2d(ctx.tape, x, weight_, options_);
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
}

template <typename T>
DepthwiseConv<T>::DepthwiseConv(std::size_t maps, std::size_t depth, std::size_t electrodes,
                                std::mt19937_64& rng)
    : conv_(maps, maps * depth, electrodes, 1, ops::ConvOptions{ops::Padding::Valid, 1, 1, maps}, rng),
      maps_(maps),
      depth_(depth),
      electrodes_(electrodes) {}

template <typename T>
Var<T> DepthwiseConv<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != maps_ || x.dim(2) != electrodes_) {
    throw ShapeError("depthwise conv: kernel (" + std::to_string(electrodes_) + ", 1) over " +
                     std::to_string(maps_) + " maps does not span input " + shape_str(x.shape()));
  }
  return conv_.forward(ctx, x);
}

template <typename T>
SeparableConv<T>::SeparableConv(std::size_t maps, std::size_t out_maps, std::size_t kernel_width,
                                std::mt19937_64& rng)
    : depthwise_(maps, maps, 1, kernel_width, ops::ConvOptions{ops::Padding::Same, 1, 1, maps}, rng),
      pointwise_(maps, out_maps, 1, 1, ops::ConvOptions{}, rng) {}

template <typename T>
Var<T> SeparableConv<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) const {
  return pointwise_.forward(ctx, depthwise_.forward(ctx, x));
}

template <typename T>
void SeparableConv<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  depthwise_.collect(out, prefix + ".depthwise");
  pointwise_.collect(out, prefix + ".pointwise");
}

template <typename T>
BatchNorm<T>::BatchNorm(std::size_t channels, ops::BatchNormOptions options)
    : gamma_(Tensor<T>(Shape{channels}, T{1}), true),
      beta_(Tensor<T>(Shape{channels}, T{0}), true),
      running_mean_(Tensor<T>(Shape{channels}, T{0})),
      running_var_(Tensor<T>(Shape{channels}, T{1})),
      options_(options) {
  if (!(options.epsilon > 0)) throw std::invalid_argument("batch norm epsilon must be positive");
  if (!(options.momentum >= 0 && options.momentum <= 1)) {
    throw std::invalid_argument("batch norm momentum must be in [0, 1]");
  }
}

template <typename T>
Var<T> BatchNorm<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) {
  return ops::batch_norm(ctx.tape, x, gamma_, beta_, running_mean_.value(), running_var_.value(), options_,
                         ctx.mode);
}

template <typename T>
void BatchNorm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma_, true});
  out.push_back({prefix + ".beta", beta_, true});
  out.push_back({prefix + ".running_mean", running_mean_, false});
  out.push_back({prefix + ".running_var", running_var_, false});
}

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight_(glorot_uniform<T>(Shape{out, in}, in, out, rng), true),
      bias_(Tensor<T>(Shape{out}, T{0}), true) {}

template <typename T>
Var<T> Dense<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) const {
  return ops::linear(ctx.tape, x, weight_, bias_);
}

template <typename T>
void Dense<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_, true});
  out.push_back({prefix + ".bias", bias_, true});
}

template <typename T>
Var<T> apply_dropout(const ForwardContext<T>& ctx, const Var<T>& x, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (ctx.mode == Mode::Infer || rate == 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout in train mode needs a random engine");
  return ops::dropout(ctx.tape, x, rate, ctx.mode, *ctx.rng);
}

#define DBNET_INSTANTIATE_LAYERS(T)                                                            \
  template Tensor<T> glorot_uniform<T>(Shape, std::size_t, std::size_t, std::mt19937_64&);     \
  template class Conv2d<T>;                                                                    \
  template class DepthwiseConv<T>;                                                             \
  template class SeparableConv<T>;                                                             \
  template class BatchNorm<T>;                                                                 \
  template class Dense<T>;                                                                     \
  template Var<T> apply_dropout(const ForwardContext<T>&, const Var<T>&, double);

DBNET_INSTANTIATE_LAYERS(float)
DBNET_INSTANTIATE_LAYERS(double)

#undef DBNET_INSTANTIATE_LAYERS

}  // namespace dbnet
