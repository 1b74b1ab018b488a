#include "dbnet/model.hpp"

#include <stdexcept>

namespace dbnet {

std::string to_string(Branch branch) { return branch == Branch::Temporal ? "temporal" : "spectral"; }

template <typename T>
std::vector<Var<T>> sliding_window_split(Tape<T>* tape, const Var<T>& seq, std::size_t axis, std::size_t n,
                                         std::size_t stride) {
  if (axis >= seq.shape().size()) throw ShapeError("window split: axis out of range for " + shape_str(seq.shape()));
  if (n == 0 || stride == 0) throw std::invalid_argument("window split: n and stride must be positive");
  const std::size_t extent = seq.dim(axis);
  const std::size_t reach = (n - 1) * stride;
  if (extent <= reach) {
    throw ShapeError("window split: " + std::to_string(n) + " windows at stride " + std::to_string(stride) +
                     " do not fit an axis of extent " + std::to_string(extent));
  }
  const std::size_t length = extent - reach;
  std::vector<Var<T>> windows;
  windows.reserve(n);
  for (std::size_t w = 0; w < n; ++w) windows.push_back(ops::slice(tape, seq, axis, w * stride, length));
  return windows;
}

template <typename T>
LocalBlock<T>::LocalBlock(const DbNetConfig& c, Branch branch, std::mt19937_64& rng) : branch_(branch) {
  const bool temporal = branch == Branch::Temporal;
  const std::size_t filters = temporal ? c.temporal_filters : c.spectral_filters;
  const std::size_t kernel = temporal ? c.temporal_kernel : c.spectral_kernel;
  const std::size_t maps = filters * c.depth;
  const ops::BatchNormOptions bn{c.bn_momentum, c.bn_epsilon};
  temporal_ = Conv2d<T>(1, filters, 1, kernel, ops::ConvOptions{ops::Padding::Same, 1, 1, 1}, rng);
  bn_temporal_ = BatchNorm<T>(filters, bn);
  depthwise_ = DepthwiseConv<T>(filters, c.depth, c.channels, rng);
  bn_depthwise_ = BatchNorm<T>(maps, bn);
  separable_ = SeparableConv<T>(maps, maps, kernel / 4, rng);
  bn_separable_ = BatchNorm<T>(maps, bn);
  pool_mode_ = temporal ? c.temporal_pooling : c.spectral_pooling;
  pool_width_ = kernel / 8;
  dropout_ = c.dropout;
}

template <typename T>
Var<T> LocalBlock<T>::forward(const ForwardContext<T>& ctx, const Var<T>& trials) {
  const std::string stage = to_string(branch_) + ".lc";
  Var<T> x = temporal_.forward(ctx, trials);
  ctx.note(stage + ".conv", x.shape());
  x = bn_temporal_.forward(ctx, x);
  x = depthwise_.forward(ctx, x);
  ctx.note(stage + ".depthwise", x.shape());
  x = ops::elu(ctx.tape, bn_depthwise_.forward(ctx, x));
  x = ops::pool_last_axis(ctx.tape, x, pool_width_, pool_mode_);
  ctx.note(stage + ".pool1", x.shape());
  x = apply_dropout(ctx, x, dropout_);
  x = separable_.forward(ctx, x);
  ctx.note(stage + ".separable", x.shape());
  x = ops::elu(ctx.tape, bn_separable_.forward(ctx, x));
  x = ops::pool_last_axis(ctx.tape, x, pool_width_, pool_mode_);
  ctx.note(stage + ".pool2", x.shape());
  x = apply_dropout(ctx, x, dropout_);
  x = ops::reshape(ctx.tape, x, Shape{x.dim(0), x.dim(1), x.dim(3)});
  ctx.note(stage, x.shape());
  return x;
}

template <typename T>
void LocalBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  temporal_.collect(out, prefix + ".conv");
  bn_temporal_.collect(out, prefix + ".conv_bn");
  depthwise_.collect(out, prefix + ".depthwise");
  bn_depthwise_.collect(out, prefix + ".depthwise_bn");
  separable_.collect(out, prefix + ".separable");
  bn_separable_.collect(out, prefix + ".separable_bn");
}

template <typename T>
SqueezeExcite<T>::SqueezeExcite(std::size_t length, std::size_t hidden, std::mt19937_64& rng)
    : squeeze_(length, hidden, rng), excite_(hidden, length, rng) {}

template <typename T>
Var<T> SqueezeExcite<T>::forward(const ForwardContext<T>& ctx, const Var<T>& sub, std::size_t pooled_axis) const {
  if (sub.shape().size() != 3 || (pooled_axis != 1 && pooled_axis != 2)) {
    throw ShapeError("squeeze-excite: expected [batch, a, b] with pooled axis 1 or 2, got " +
                     shape_str(sub.shape()));
  }
  Var<T> desc = global_avg_pool(ctx, sub, pooled_axis);
  Var<T> gates = ops::sigmoid(ctx.tape, excite_.forward(ctx, ops::relu(ctx.tape, squeeze_.forward(ctx, desc))));
  Shape gate_shape = sub.shape();
  gate_shape[pooled_axis] = 1;
  return ops::broadcast_mul(ctx.tape, sub, ops::reshape(ctx.tape, gates, gate_shape));
}

template <typename T>
void SqueezeExcite<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  squeeze_.collect(out, prefix + ".squeeze");
  excite_.collect(out, prefix + ".excite");
}

template <typename T>
DccStack<T>::DccStack(std::size_t channels, std::size_t layers, std::size_t kernel, ops::BatchNormOptions bn,
                      std::mt19937_64& rng) {
  for (std::size_t j = 1; j <= layers; ++j) {
    convs_.emplace_back(channels, channels, 1, kernel, ops::ConvOptions{ops::Padding::Causal, 1, j, 1}, rng);
    norms_.emplace_back(channels, bn);
  }
}

template <typename T>
Var<T> DccStack<T>::forward(const ForwardContext<T>& ctx, const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("dcc stack: expected [batch, channels, L], got " + shape_str(x.shape()));
  const Shape as_image{x.dim(0), x.dim(1), 1, x.dim(2)};
  const Var<T> source = ops::reshape(ctx.tape, x, as_image);
  Var<T> out;
  for (std::size_t j = 0; j < convs_.size(); ++j) {
    const Var<T> in = j == 0 ? source : ops::elu(ctx.tape, ops::add(ctx.tape, source, out));
    out = ops::elu(ctx.tape, norms_[j].forward(ctx, convs_[j].forward(ctx, in)));
  }
  const Var<T> result = ops::elu(ctx.tape, ops::add(ctx.tape, source, out));
  return ops::reshape(ctx.tape, result, x.shape());
}

template <typename T>
void DccStack<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t j = 0; j < convs_.size(); ++j) {
    const std::string p = prefix + ".layer" + std::to_string(j + 1);
    convs_[j].collect(out, p + ".conv");
    norms_[j].collect(out, p + ".bn");
  }
}

template <typename T>
GlobalBlock<T>::GlobalBlock(const DbNetConfig& c, const BranchDims& d, Branch branch, std::mt19937_64& rng)
    : branch_(branch), windows_(d.windows), stride_(c.window_stride), se_enabled_(c.se_enabled) {
  const bool temporal = branch == Branch::Temporal;
  const std::size_t length = temporal ? d.l_hat : d.l_tilde;
  const std::size_t hidden = temporal ? d.se_hat_hidden : d.se_tilde_hidden;
  const std::size_t channels = temporal ? d.f_hat : d.t_tilde;
  const ops::BatchNormOptions bn{c.bn_momentum, c.bn_epsilon};
  for (std::size_t w = 0; w < windows_; ++w) {
    if (se_enabled_) se_.emplace_back(length, hidden, rng);
    dcc_.emplace_back(channels, c.dcc_layers, c.dcc_kernel, bn, rng);
  }
}

template <typename T>
Var<T> GlobalBlock<T>::forward(const ForwardContext<T>& ctx, const Var<T>& seq) {
  const bool temporal = branch_ == Branch::Temporal;
  const std::size_t split_axis = temporal ? 2 : 1;
  const std::size_t pooled_axis = temporal ? 1 : 2;
  const std::string stage = to_string(branch_) + ".gc";
  auto windows = sliding_window_split(ctx.tape, seq, split_axis, windows_, stride_);
  std::vector<Var<T>> processed;
  processed.reserve(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    ctx.note(stage + ".window", windows[w].shape());
    Var<T> sub = se_enabled_ ? se_[w].forward(ctx, windows[w], pooled_axis) : windows[w];
    if (temporal) {
      sub = dcc_[w].forward(ctx, sub);
    } else {
      sub = ops::permute(ctx.tape, sub, {0, 2, 1});
      sub = ops::permute(ctx.tape, dcc_[w].forward(ctx, sub), {0, 2, 1});
    }
    processed.push_back(sub);
  }
  Var<T> out = ops::concat(ctx.tape, processed, split_axis);
  ctx.note(stage, out.shape());
  return out;
}

template <typename T>
void GlobalBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t w = 0; w < windows_; ++w) {
    const std::string p = prefix + ".window" + std::to_string(w + 1);
    if (se_enabled_) se_[w].collect(out, p + ".se");
    dcc_[w].collect(out, p + ".dcc");
  }
}

template <typename T>
DbNet<T>::DbNet(const DbNetConfig& config, std::uint64_t seed) : config_(config), dims_(check_config(config)) {
  std::mt19937_64 rng(seed);
  lc_temporal_ = LocalBlock<T>(config_, Branch::Temporal, rng);
  lc_spectral_ = LocalBlock<T>(config_, Branch::Spectral, rng);
  if (config_.gc_enabled) {
    gc_temporal_ = GlobalBlock<T>(config_, dims_, Branch::Temporal, rng);
    gc_spectral_ = GlobalBlock<T>(config_, dims_, Branch::Spectral, rng);
  }
  classifier_ = Dense<T>(dims_.concat_len, config_.n_classes, rng);
}

template <typename T>
Var<T> DbNet<T>::forward(const ForwardContext<T>& ctx, const Var<T>& trials) {
  Var<T> x = trials;
  if (x.shape().size() == 3) x = ops::reshape(ctx.tape, x, Shape{x.dim(0), 1, x.dim(1), x.dim(2)});
  if (x.shape().size() != 4 || x.dim(1) != 1 || x.dim(2) != config_.channels || x.dim(3) != config_.samples) {
    throw ShapeError("model expects trials [batch, " + std::to_string(config_.channels) + ", " +
                     std::to_string(config_.samples) + "], got " + shape_str(trials.shape()));
  }
  ctx.note("input", x.shape());
  Var<T> temporal = lc_temporal_.forward(ctx, x);
  Var<T> spectral = lc_spectral_.forward(ctx, x);
  if (config_.gc_enabled) {
    temporal = gc_temporal_.forward(ctx, temporal);
    spectral = gc_spectral_.forward(ctx, spectral);
  }
  return classify(ctx, temporal, spectral);
}

template <typename T>
Var<T> DbNet<T>::classify(const ForwardContext<T>& ctx, const Var<T>& temporal, const Var<T>& spectral) {
  const std::size_t batch = temporal.dim(0);
  if (spectral.dim(0) != batch) throw ShapeError("classify: batch mismatch between branches");
  const std::size_t width = temporal.size() / batch + spectral.size() / batch;
  if (width != dims_.concat_len) {
    throw ShapeError("classify: concatenated width " + std::to_string(width) + " != expected " +
                     std::to_string(dims_.concat_len));
  }
  Var<T> flat_t = ops::reshape(ctx.tape, temporal, Shape{batch, temporal.size() / batch});
  Var<T> flat_s = ops::reshape(ctx.tape, spectral, Shape{batch, spectral.size() / batch});
  Var<T> joined = ops::concat(ctx.tape, {flat_t, flat_s}, 1);
  ctx.note("concat", joined.shape());
  Var<T> probs = ops::softmax(ctx.tape, classifier_.forward(ctx, joined));
  ctx.note("probs", probs.shape());
  return probs;
}

template <typename T>
ParamList<T> DbNet<T>::parameters() const {
  ParamList<T> out;
  lc_temporal_.collect(out, "temporal.lc");
  lc_spectral_.collect(out, "spectral.lc");
  if (config_.gc_enabled) {
    gc_temporal_.collect(out, "temporal.gc");
    gc_spectral_.collect(out, "spectral.gc");
  }
  classifier_.collect(out, "classifier");
  return out;
}

#define DBNET_INSTANTIATE_MODEL(T)                                                                          \
  template std::vector<Var<T>> sliding_window_split(Tape<T>*, const Var<T>&, std::size_t, std::size_t,     \
                                                    std::size_t);                                           \
  template class LocalBlock<T>;                                                                             \
  template class SqueezeExcite<T>;                                                                          \
  template class DccStack<T>;                                                                               \
  template class GlobalBlock<T>;                                                                            \
  template class DbNet<T>;

DBNET_INSTANTIATE_MODEL(float)
DBNET_INSTANTIATE_MODEL(double)

#undef DBNET_INSTANTIATE_MODEL

}  // namespace dbnet
