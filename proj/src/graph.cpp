#include "dictnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace dictnet {

const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::kDense: return "dense";
    case ParamRole::kDictionary: return "dictionary";
    case ParamRole::kCoefficient: return "coefficient";
    case ParamRole::kBias: return "bias";
  }
  return "dense";
}

ParamRole role_from_name(const std::string& name) {
  if (name == "dense") return ParamRole::kDense;
  if (name == "dictionary") return ParamRole::kDictionary;
  if (name == "coefficient") return ParamRole::kCoefficient;
  if (name == "bias") return ParamRole::kBias;
  throw ArgumentError("unknown parameter role '" + name + "'");
}

std::string Shape3::str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

namespace {

DenseMatrix flatten_batch(const Tensor4& x) {
  return tensor_to_matrix(x, x.dim(0), x.dim(1) * x.dim(2) * x.dim(3));
}

Tensor4 unflatten_batch(const DenseMatrix& m, const std::array<std::size_t, 4>& dims) {
  return matrix_to_tensor(m, dims);
}

Tensor4 logits_to_tensor(const DenseMatrix& m) {
  return matrix_to_tensor(m, {m.rows(), m.cols(), 1, 1});
}

ParamRef make_ref(const std::string& layer, const char* param, ParamRole role,
                  std::vector<std::size_t> shape, std::vector<double>& value,
                  std::vector<double>& grad, bool* trainable,
                  std::vector<std::uint8_t>* row_mask) {
  ParamRef r;
  r.name = layer + "." + param;
  r.role = role;
  r.shape = std::move(shape);
  r.value = value.data();
  r.grad = grad.data();
  r.size = value.size();
  r.trainable = trainable;
  r.row_mask = row_mask;
  return r;
}

void require_cache(bool has, const char* kind) {
  if (!has) {
    throw StructureError(std::string(kind) + ": backward called without a cached forward");
  }
}

}  // namespace

// ---- DenseFcLayer ----------------------------------------------------------

DenseFcLayer::DenseFcLayer(std::string name, std::size_t in, std::size_t out, bool with_bias)
    : weight_(out, in, 0.0), weight_grad_(out, in, 0.0) {
  set_name(std::move(name));
  if (with_bias) {
    bias_.assign(out, 0.0);
    bias_grad_.assign(out, 0.0);
  }
}

Shape3 DenseFcLayer::output_shape(Shape3 in) const {
  if (in.numel() != weight_.cols()) {
    throw ShapeError("fc '" + name_ + "': input " + in.str() + " does not flatten to " +
                     std::to_string(weight_.cols()));
  }
  return {weight_.rows(), 1, 1};
}

Tensor4 DenseFcLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_dims_ = x.dims();
  x_flat_ = flatten_batch(x);
  has_cache_ = true;
  DenseMatrix y = matmul(x_flat_, transpose(weight_));
  if (!bias_.empty()) {
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double* row = y.row(r);
      for (std::size_t c = 0; c < y.cols(); ++c) row[c] += bias_[c];
    }
  }
  return logits_to_tensor(y);
}

Tensor4 DenseFcLayer::backward(const Tensor4& dy4) {
  require_cache(has_cache_, "fc");
  const DenseMatrix dy = flatten_batch(dy4);
  DenseMatrix dw = matmul(transpose(dy), x_flat_);
  for (std::size_t i = 0; i < dw.size(); ++i) weight_grad_.values()[i] += dw.values()[i];
  if (!bias_.empty()) {
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      const double* row = dy.row(r);
      for (std::size_t c = 0; c < dy.cols(); ++c) bias_grad_[c] += row[c];
    }
  }
  return unflatten_batch(matmul(dy, weight_), x_dims_);
}

std::vector<ParamRef> DenseFcLayer::params() {
  std::vector<ParamRef> out;
  out.push_back(make_ref(name_, "weight", ParamRole::kDense, {weight_.rows(), weight_.cols()},
                         weight_.values(), weight_grad_.values(), &weight_trainable_,
                         &weight_row_mask_));
  if (!bias_.empty()) {
    out.push_back(make_ref(name_, "bias", ParamRole::kBias, {bias_.size()}, bias_, bias_grad_,
                           &bias_trainable_, &bias_row_mask_));
  }
  return out;
}

Json DenseFcLayer::describe() const {
  return Json{{"type", "fc"},
              {"name", name_},
              {"in", weight_.cols()},
              {"units", weight_.rows()},
              {"bias", !bias_.empty()}};
}

// ---- DenseConvLayer --------------------------------------------------------

DenseConvLayer::DenseConvLayer(std::string name, std::size_t in_channels, std::size_t filters,
                               std::size_t kh, std::size_t kw, ConvSpec spec, bool with_bias)
    : weight_(filters, in_channels, kh, kw, 0.0),
      weight_grad_(filters, in_channels, kh, kw, 0.0),
      spec_(spec) {
  set_name(std::move(name));
  if (with_bias) {
    bias_.assign(filters, 0.0);
    bias_grad_.assign(filters, 0.0);
  }
}

Shape3 DenseConvLayer::output_shape(Shape3 in) const {
  if (in.c != weight_.dim(1)) {
    throw ShapeError("conv '" + name_ + "': input channels " + std::to_string(in.c) + " != " +
                     std::to_string(weight_.dim(1)));
  }
  return {weight_.dim(0), conv_out_dim(in.h, weight_.dim(2), spec_.stride, spec_.padding),
          conv_out_dim(in.w, weight_.dim(3), spec_.stride, spec_.padding)};
}

Tensor4 DenseConvLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_cache_ = x;
  has_cache_ = true;
  return conv2d_forward(x, weight_, bias_, spec_);
}

Tensor4 DenseConvLayer::backward(const Tensor4& dy) {
  require_cache(has_cache_, "conv");
  Conv2dGrads g = conv2d_backward(x_cache_, weight_, dy, spec_);
  for (std::size_t i = 0; i < g.dw.size(); ++i) weight_grad_.values()[i] += g.dw.values()[i];
  if (!bias_.empty()) {
    for (std::size_t i = 0; i < bias_.size(); ++i) bias_grad_[i] += g.dbias[i];
  }
  return std::move(g.dx);
}

std::vector<ParamRef> DenseConvLayer::params() {
  std::vector<ParamRef> out;
  out.push_back(make_ref(name_, "weight", ParamRole::kDense,
                         {weight_.dim(0), weight_.dim(1), weight_.dim(2), weight_.dim(3)},
                         weight_.values(), weight_grad_.values(), &weight_trainable_,
                         &weight_row_mask_));
  if (!bias_.empty()) {
    out.push_back(make_ref(name_, "bias", ParamRole::kBias, {bias_.size()}, bias_, bias_grad_,
                           &bias_trainable_, &bias_row_mask_));
  }
  return out;
}

Json DenseConvLayer::describe() const {
  return Json{{"type", "conv"},
              {"name", name_},
              {"in_channels", weight_.dim(1)},
              {"filters", weight_.dim(0)},
              {"kernel", {weight_.dim(2), weight_.dim(3)}},
              {"stride", spec_.stride},
              {"padding", spec_.padding},
              {"bias", !bias_.empty()}};
}

// ---- DecomposedFcLayer -----------------------------------------------------

DecomposedFcLayer::DecomposedFcLayer(std::string name, DecomposedFc parts)
    : dict_(parts.dec.dictionary),
      coeff_(parts.dec.coefficients),
      dict_grad_(dict_.rows(), dict_.cols(), 0.0),
      coeff_grad_(coeff_.rows(), coeff_.cols(), 0.0),
      bias_(parts.bias) {
  set_name(std::move(name));
  bias_grad_.assign(bias_.size(), 0.0);
  prov_.beta = parts.dec.beta;
  prov_.achieved_rel_error = parts.dec.achieved_rel_error;
  prov_.rank_exhausted = parts.dec.rank_exhausted;
  prov_.policy = policy_name(parts.dec.policy.rule);
  prov_.selected = parts.dec.selected;
}

DecomposedFcLayer::DecomposedFcLayer(std::string name, std::size_t in, std::size_t out,
                                     std::size_t l, bool with_bias)
    : dict_(out, l, 0.0),
      coeff_(l, in, 0.0),
      dict_grad_(out, l, 0.0),
      coeff_grad_(l, in, 0.0) {
  set_name(std::move(name));
  if (with_bias) {
    bias_.assign(out, 0.0);
    bias_grad_.assign(out, 0.0);
  }
}

Shape3 DecomposedFcLayer::output_shape(Shape3 in) const {
  if (in.numel() != coeff_.cols()) {
    throw ShapeError("decomposed_fc '" + name_ + "': input " + in.str() +
                     " does not flatten to " + std::to_string(coeff_.cols()));
  }
  return {dict_.rows(), 1, 1};
}

Tensor4 DecomposedFcLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_dims_ = x.dims();
  x_flat_ = flatten_batch(x);
  FcForward f = decomposed_fc_forward(dict_, coeff_, bias_, x_flat_);
  t_cache_ = std::move(f.t);
  has_cache_ = true;
  return logits_to_tensor(f.y);
}

Tensor4 DecomposedFcLayer::backward(const Tensor4& dy4) {
  require_cache(has_cache_, "decomposed_fc");
  const DenseMatrix dy = flatten_batch(dy4);
  FcGrads g = decomposed_fc_backward(dict_, coeff_, x_flat_, t_cache_, dy);
  for (std::size_t i = 0; i < g.ddict.size(); ++i) dict_grad_.values()[i] += g.ddict.values()[i];
  for (std::size_t i = 0; i < g.dcoeff.size(); ++i) {
    coeff_grad_.values()[i] += g.dcoeff.values()[i];
  }
  if (!bias_.empty()) {
    for (std::size_t i = 0; i < bias_.size(); ++i) bias_grad_[i] += g.dbias[i];
  }
  return unflatten_batch(g.dx, x_dims_);
}

std::vector<ParamRef> DecomposedFcLayer::params() {
  std::vector<ParamRef> out;
  out.push_back(make_ref(name_, "dictionary", ParamRole::kDictionary,
                         {dict_.rows(), dict_.cols()}, dict_.values(), dict_grad_.values(),
                         &dict_trainable_, &dict_row_mask_));
  out.push_back(make_ref(name_, "coefficients", ParamRole::kCoefficient,
                         {coeff_.rows(), coeff_.cols()}, coeff_.values(), coeff_grad_.values(),
                         &coeff_trainable_, nullptr));
  if (!bias_.empty()) {
    out.push_back(make_ref(name_, "bias", ParamRole::kBias, {bias_.size()}, bias_, bias_grad_,
                           &bias_trainable_, &bias_row_mask_));
  }
  return out;
}

Json DecomposedFcLayer::describe() const {
  Json j{{"type", "decomposed_fc"},
         {"name", name_},
         {"in", coeff_.cols()},
         {"units", dict_.rows()},
         {"l", dict_.cols()},
         {"bias", !bias_.empty()},
         {"extended_by", extended_by_}};
  j["provenance"] = Json{{"beta", prov_.beta},
                         {"achieved_rel_error", prov_.achieved_rel_error},
                         {"rank_exhausted", prov_.rank_exhausted},
                         {"policy", prov_.policy},
                         {"selected", prov_.selected}};
  return j;
}

void DecomposedFcLayer::extend_rows(const DenseMatrix& new_rows) {
  if (new_rows.cols() != dict_.cols()) {
    throw_shape_mismatch("extend_rows", dict_.shape_str(), new_rows.shape_str());
  }
  const std::size_t m = dict_.rows();
  const std::size_t add = new_rows.rows();
  DenseMatrix grown(m + add, dict_.cols());
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < dict_.cols(); ++c) grown(r, c) = dict_(r, c);
  }
  for (std::size_t r = 0; r < add; ++r) {
    for (std::size_t c = 0; c < dict_.cols(); ++c) grown(m + r, c) = new_rows(r, c);
  }
  dict_ = std::move(grown);
  dict_grad_ = DenseMatrix(m + add, dict_.cols(), 0.0);
  if (!bias_.empty()) {
    bias_.resize(m + add, 0.0);
    bias_grad_.assign(m + add, 0.0);
  }
  dict_row_mask_.clear();
  bias_row_mask_.clear();
  extended_by_ += add;
}

// ---- DecomposedConvLayer ---------------------------------------------------

DecomposedConvLayer::DecomposedConvLayer(std::string name, DecomposedConv parts,
                                         std::size_t in_channels)
    : dict_(parts.dec.dictionary),
      coeff_(parts.coeff_filters),
      dict_grad_(dict_.rows(), dict_.cols(), 0.0),
      coeff_grad_(coeff_.dim(0), coeff_.dim(1), coeff_.dim(2), coeff_.dim(3), 0.0),
      bias_(parts.bias),
      spec_(parts.spec) {
  set_name(std::move(name));
  if (coeff_.dim(1) != in_channels) {
    throw ShapeError("decomposed_conv '" + name_ + "': coefficient filters expect " +
                     std::to_string(coeff_.dim(1)) + " channels, layer declares " +
                     std::to_string(in_channels));
  }
  bias_grad_.assign(bias_.size(), 0.0);
  prov_.beta = parts.dec.beta;
  prov_.achieved_rel_error = parts.dec.achieved_rel_error;
  prov_.rank_exhausted = parts.dec.rank_exhausted;
  prov_.policy = policy_name(parts.dec.policy.rule);
  prov_.selected = parts.dec.selected;
}

DecomposedConvLayer::DecomposedConvLayer(std::string name, std::size_t in_channels,
                                         std::size_t filters, std::size_t l, std::size_t kh,
                                         std::size_t kw, ConvSpec spec, bool with_bias)
    : dict_(filters, l, 0.0),
      coeff_(l, in_channels, kh, kw, 0.0),
      dict_grad_(filters, l, 0.0),
      coeff_grad_(l, in_channels, kh, kw, 0.0),
      spec_(spec) {
  set_name(std::move(name));
  if (with_bias) {
    bias_.assign(filters, 0.0);
    bias_grad_.assign(filters, 0.0);
  }
}

Shape3 DecomposedConvLayer::output_shape(Shape3 in) const {
  if (in.c != coeff_.dim(1)) {
    throw ShapeError("decomposed_conv '" + name_ + "': input channels " + std::to_string(in.c) +
                     " != " + std::to_string(coeff_.dim(1)));
  }
  return {dict_.rows(), conv_out_dim(in.h, coeff_.dim(2), spec_.stride, spec_.padding),
          conv_out_dim(in.w, coeff_.dim(3), spec_.stride, spec_.padding)};
}

Tensor4 DecomposedConvLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_cache_ = x;
  tiny_cache_ = conv2d_forward(x, coeff_, {}, spec_);
  has_cache_ = true;
  return mix_channels_forward(tiny_cache_, dict_, bias_);
}

Tensor4 DecomposedConvLayer::backward(const Tensor4& dy) {
  require_cache(has_cache_, "decomposed_conv");
  MixGrads mg = mix_channels_backward(tiny_cache_, dict_, dy);
  for (std::size_t i = 0; i < mg.ddict.size(); ++i) {
    dict_grad_.values()[i] += mg.ddict.values()[i];
  }
  if (!bias_.empty()) {
    for (std::size_t i = 0; i < bias_.size(); ++i) bias_grad_[i] += mg.dbias[i];
  }
  Conv2dGrads cg = conv2d_backward(x_cache_, coeff_, mg.dt, spec_);
  for (std::size_t i = 0; i < cg.dw.size(); ++i) coeff_grad_.values()[i] += cg.dw.values()[i];
  return std::move(cg.dx);
}

std::vector<ParamRef> DecomposedConvLayer::params() {
  std::vector<ParamRef> out;
  out.push_back(make_ref(name_, "dictionary", ParamRole::kDictionary,
                         {dict_.rows(), dict_.cols()}, dict_.values(), dict_grad_.values(),
                         &dict_trainable_, &dict_row_mask_));
  out.push_back(make_ref(name_, "coefficients", ParamRole::kCoefficient,
                         {coeff_.dim(0), coeff_.dim(1), coeff_.dim(2), coeff_.dim(3)},
                         coeff_.values(), coeff_grad_.values(), &coeff_trainable_, nullptr));
  if (!bias_.empty()) {
    out.push_back(make_ref(name_, "bias", ParamRole::kBias, {bias_.size()}, bias_, bias_grad_,
                           &bias_trainable_, nullptr));
  }
  return out;
}

Json DecomposedConvLayer::describe() const {
  Json j{{"type", "decomposed_conv"},
         {"name", name_},
         {"in_channels", coeff_.dim(1)},
         {"filters", dict_.rows()},
         {"l", dict_.cols()},
         {"kernel", {coeff_.dim(2), coeff_.dim(3)}},
         {"stride", spec_.stride},
         {"padding", spec_.padding},
         {"bias", !bias_.empty()}};
  j["provenance"] = Json{{"beta", prov_.beta},
                         {"achieved_rel_error", prov_.achieved_rel_error},
                         {"rank_exhausted", prov_.rank_exhausted},
                         {"policy", prov_.policy},
                         {"selected", prov_.selected}};
  return j;
}

// ---- MaxPoolLayer ----------------------------------------------------------

MaxPoolLayer::MaxPoolLayer(std::string name, std::size_t window) : window_(window) {
  set_name(std::move(name));
  if (window == 0) throw ArgumentError("maxpool: window must be >= 1");
}

Shape3 MaxPoolLayer::output_shape(Shape3 in) const {
  if (in.h < window_ || in.w < window_) {
    throw ShapeError("maxpool '" + name_ + "': window " + std::to_string(window_) +
                     " too large for " + in.str());
  }
  return {in.c, in.h / window_, in.w / window_};
}

Tensor4 MaxPoolLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_cache_ = x;
  fwd_cache_ = maxpool2d_forward(x, window_);
  has_cache_ = true;
  return fwd_cache_.y;
}

Tensor4 MaxPoolLayer::backward(const Tensor4& dy) {
  require_cache(has_cache_, "maxpool");
  return maxpool2d_backward(x_cache_, fwd_cache_, dy, window_);
}

Json MaxPoolLayer::describe() const {
  return Json{{"type", "maxpool"}, {"name", name_}, {"window", window_}};
}

// ---- BatchNormLayer --------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::string name, std::size_t channels, double momentum,
                               double eps)
    : gamma_(channels, 1.0),
      beta_(channels, 0.0),
      gamma_grad_(channels, 0.0),
      beta_grad_(channels, 0.0),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0),
      momentum_(momentum),
      eps_(eps) {
  set_name(std::move(name));
}

Tensor4 BatchNormLayer::forward(const Tensor4& x, const ForwardCtx& ctx) {
  if (x.dim(1) != gamma_.size()) {
    throw ShapeError("batchnorm '" + name_ + "': " + std::to_string(x.dim(1)) +
                     " channels, expected " + std::to_string(gamma_.size()));
  }
  if (ctx.mode == RunMode::kTrain) {
    train_cache_ = true;
    return batchnorm_forward_train(x, gamma_, beta_, running_mean_, running_var_, momentum_,
                                   eps_, ctx.update_bn_stats, cache_);
  }
  train_cache_ = false;
  return batchnorm_forward_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
}

Tensor4 BatchNormLayer::backward(const Tensor4& dy) {
  require_cache(train_cache_, "batchnorm");
  BatchNormGrads g = batchnorm_backward(dy, gamma_, cache_);
  for (std::size_t i = 0; i < gamma_.size(); ++i) {
    gamma_grad_[i] += g.dgamma[i];
    beta_grad_[i] += g.dbeta[i];
  }
  return std::move(g.dx);
}

std::vector<ParamRef> BatchNormLayer::params() {
  std::vector<ParamRef> out;
  out.push_back(make_ref(name_, "gamma", ParamRole::kDense, {gamma_.size()}, gamma_, gamma_grad_,
                         &gamma_trainable_, nullptr));
  out.push_back(make_ref(name_, "beta", ParamRole::kDense, {beta_.size()}, beta_, beta_grad_,
                         &beta_trainable_, nullptr));
  return out;
}

std::vector<StateRef> BatchNormLayer::state() {
  return {{name_ + ".running_mean", &running_mean_}, {name_ + ".running_var", &running_var_}};
}

Json BatchNormLayer::describe() const {
  return Json{{"type", "batchnorm"},
              {"name", name_},
              {"channels", gamma_.size()},
              {"momentum", momentum_},
              {"eps", eps_}};
}

// ---- DropoutLayer ----------------------------------------------------------

DropoutLayer::DropoutLayer(std::string name, double p) : p_(p) {
  set_name(std::move(name));
  if (p < 0.0 || p >= 1.0) {
    throw ArgumentError("dropout: p must be in [0, 1), got " + std::to_string(p));
  }
}

Tensor4 DropoutLayer::forward(const Tensor4& x, const ForwardCtx& ctx) {
  if (ctx.mode == RunMode::kEval || p_ == 0.0) {
    dropped_ = false;
    return x;
  }
  if (ctx.rng == nullptr) {
    throw ArgumentError("dropout '" + name_ + "': train-mode forward needs an rng");
  }
  dropped_ = true;
  return dropout_forward(x, p_, *ctx.rng, mask_);
}

Tensor4 DropoutLayer::backward(const Tensor4& dy) {
  if (!dropped_) return dy;
  return dropout_backward(dy, p_, mask_);
}

Json DropoutLayer::describe() const {
  return Json{{"type", "dropout"}, {"name", name_}, {"p", p_}};
}

// ---- ActivationLayer -------------------------------------------------------

ActivationLayer::ActivationLayer(std::string name, Activation act, double alpha)
    : act_(act), alpha_(alpha) {
  set_name(std::move(name));
}

Tensor4 ActivationLayer::forward(const Tensor4& x, const ForwardCtx&) {
  x_cache_ = x;
  has_cache_ = true;
  return act_ == Activation::kRelu ? relu_forward(x) : leaky_relu_forward(x, alpha_);
}

Tensor4 ActivationLayer::backward(const Tensor4& dy) {
  require_cache(has_cache_, "activation");
  return act_ == Activation::kRelu ? relu_backward(x_cache_, dy)
                                   : leaky_relu_backward(x_cache_, dy, alpha_);
}

Json ActivationLayer::describe() const {
  Json j{{"type", kind()}, {"name", name_}};
  if (act_ == Activation::kLeakyRelu) j["alpha"] = alpha_;
  return j;
}

// ---- SoftmaxLayer ----------------------------------------------------------

SoftmaxLayer::SoftmaxLayer(std::string name) { set_name(std::move(name)); }

Tensor4 SoftmaxLayer::forward(const Tensor4& x, const ForwardCtx&) {
  const auto [n, c, h, w] = x.dims();
  Tensor4 y(n, c, h, w);
  const std::size_t hw = h * w;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t p = 0; p < hw; ++p) {
      double mx = x.plane(in, 0)[p];
      for (std::size_t ch = 1; ch < c; ++ch) mx = std::max(mx, x.plane(in, ch)[p]);
      double sum = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(x.plane(in, ch)[p] - mx);
        y.plane(in, ch)[p] = e;
        sum += e;
      }
      for (std::size_t ch = 0; ch < c; ++ch) y.plane(in, ch)[p] /= sum;
    }
  }
  probs_ = y;
  has_cache_ = true;
  return y;
}

Tensor4 SoftmaxLayer::backward(const Tensor4& dy) {
  require_cache(has_cache_, "softmax");
  const auto [n, c, h, w] = dy.dims();
  Tensor4 dx(n, c, h, w);
  const std::size_t hw = h * w;
  for (std::size_t in = 0; in < n; ++in) {
    for (std::size_t p = 0; p < hw; ++p) {
      double dot = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        dot += probs_.plane(in, ch)[p] * dy.plane(in, ch)[p];
      }
      for (std::size_t ch = 0; ch < c; ++ch) {
        dx.plane(in, ch)[p] = probs_.plane(in, ch)[p] * (dy.plane(in, ch)[p] - dot);
      }
    }
  }
  return dx;
}

Json SoftmaxLayer::describe() const {
  return Json{{"type", "softmax"}, {"name", name_}};
}

// ---- ModelGraph ------------------------------------------------------------

ModelGraph::ModelGraph(Shape3 input, std::vector<std::unique_ptr<Layer>> layers,
                       std::vector<int> class_labels)
    : input_(input), layers_(std::move(layers)), class_labels_(std::move(class_labels)) {
  validate();
}

ModelGraph::ModelGraph(const ModelGraph& o)
    : input_(o.input_), class_labels_(o.class_labels_), seed_(o.seed_) {
  layers_.reserve(o.layers_.size());
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

ModelGraph& ModelGraph::operator=(const ModelGraph& o) {
  if (this == &o) return *this;
  input_ = o.input_;
  class_labels_ = o.class_labels_;
  seed_ = o.seed_;
  layers_.clear();
  layers_.reserve(o.layers_.size());
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
  return *this;
}

void ModelGraph::validate() {
  if (layers_.empty()) throw StructureError("model has no layers");
  std::set<std::string> names;
  std::size_t auto_id = 0;
  for (auto& l : layers_) {
    if (l->name().empty()) {
      l->set_name(std::string(l->kind()) + "_" + std::to_string(auto_id));
    }
    ++auto_id;
    if (!names.insert(l->name()).second) {
      throw StructureError("duplicate layer name '" + l->name() + "'");
    }
  }
  // Shape chain; throws on the first incompatible layer.
  Shape3 s = input_;
  for (const auto& l : layers_) s = l->output_shape(s);
  if (s.h != 1 || s.w != 1) {
    throw StructureError("model output is " + s.str() + ", expected Kx1x1 logits");
  }
  if (!class_labels_.empty() && class_labels_.size() != s.c) {
    throw StructureError("model outputs " + std::to_string(s.c) + " classes but " +
                         std::to_string(class_labels_.size()) + " class labels recorded");
  }
  if (class_labels_.empty()) {
    for (std::size_t i = 0; i < s.c; ++i) class_labels_.push_back(static_cast<int>(i));
  }
}

Shape3 ModelGraph::shape_after(std::size_t i) const {
  Shape3 s = input_;
  for (std::size_t k = 0; k < i && k < layers_.size(); ++k) s = layers_[k]->output_shape(s);
  return s;
}

DenseMatrix ModelGraph::forward_logits(const Tensor4& batch, const ForwardCtx& ctx) {
  const bool trailing_softmax =
      !layers_.empty() && std::string(layers_.back()->kind()) == "softmax";
  const std::size_t end = layers_.size() - (trailing_softmax ? 1 : 0);
  Tensor4 x = batch;
  for (std::size_t i = 0; i < end; ++i) x = layers_[i]->forward(x, ctx);
  if (x.dim(2) != 1 || x.dim(3) != 1) {
    throw StructureError("logits have spatial extent " + x.shape_str());
  }
  return tensor_to_matrix(x, x.dim(0), x.dim(1));
}

void ModelGraph::backward_logits(const DenseMatrix& dlogits) {
  const bool trailing_softmax =
      !layers_.empty() && std::string(layers_.back()->kind()) == "softmax";
  const std::size_t end = layers_.size() - (trailing_softmax ? 1 : 0);
  Tensor4 g = logits_to_tensor(dlogits);
  for (std::size_t i = end; i-- > 0;) g = layers_[i]->backward(g);
}

Tensor4 ModelGraph::forward(const Tensor4& batch, const ForwardCtx& ctx) {
  Tensor4 x = batch;
  for (auto& l : layers_) x = l->forward(x, ctx);
  return x;
}

void ModelGraph::zero_grads() {
  for (auto& l : layers_) {
    for (auto& p : l->params()) {
      std::fill(p.grad, p.grad + p.size, 0.0);
    }
  }
}

std::vector<ParamRef> ModelGraph::params() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.push_back(p);
  }
  return out;
}

std::vector<StateRef> ModelGraph::states() {
  std::vector<StateRef> out;
  for (auto& l : layers_) {
    for (auto& s : l->state()) out.push_back(s);
  }
  return out;
}

std::size_t ModelGraph::total_param_count() {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.size;
  return n;
}

bool ModelGraph::is_decomposed() const {
  for (const auto& l : layers_) {
    const std::string k = l->kind();
    if (k == "decomposed_fc" || k == "decomposed_conv") return true;
  }
  return false;
}

bool ModelGraph::has_dense_parametric() const {
  for (const auto& l : layers_) {
    const std::string k = l->kind();
    if (k == "fc" || k == "conv") return true;
  }
  return false;
}

Layer& ModelGraph::output_layer() {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if ((*it)->parametric()) return **it;
  }
  throw StructureError("model has no parametric layer");
}

const Layer& ModelGraph::output_layer() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if ((*it)->parametric()) return **it;
  }
  throw StructureError("model has no parametric layer");
}

Json ModelGraph::describe() const {
  Json layers = Json::array();
  for (const auto& l : layers_) layers.push_back(l->describe());
  return Json{{"format", "dictnet-arch"},
              {"input", {input_.c, input_.h, input_.w}},
              {"class_labels", class_labels_},
              {"seed", seed_},
              {"layers", layers}};
}

ModelGraph ModelGraph::from_descriptor(const Json& j) {
  if (!j.contains("layers") || !j.contains("input")) {
    throw ConfigError("architecture descriptor needs 'input' and 'layers'");
  }
  Shape3 input{j["input"][0].get<std::size_t>(), j["input"][1].get<std::size_t>(),
               j["input"][2].get<std::size_t>()};
  std::vector<std::unique_ptr<Layer>> layers;
  for (const auto& lj : j["layers"]) layers.push_back(layer_from_json(lj));
  std::vector<int> labels;
  if (j.contains("class_labels")) labels = j["class_labels"].get<std::vector<int>>();
  ModelGraph m(input, std::move(layers), std::move(labels));
  if (j.contains("seed")) m.set_seed(j["seed"].get<std::uint64_t>());
  return m;
}

std::unique_ptr<Layer> layer_from_json(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  const std::string name = j.value("name", "");
  if (type == "fc") {
    return std::make_unique<DenseFcLayer>(name, j.at("in").get<std::size_t>(),
                                          j.at("units").get<std::size_t>(),
                                          j.value("bias", true));
  }
  if (type == "conv") {
    ConvSpec spec{j.value("stride", std::size_t{1}), j.value("padding", std::size_t{0})};
    const auto kernel = j.at("kernel");
    return std::make_unique<DenseConvLayer>(
        name, j.at("in_channels").get<std::size_t>(), j.at("filters").get<std::size_t>(),
        kernel[0].get<std::size_t>(), kernel[1].get<std::size_t>(), spec, j.value("bias", true));
  }
  if (type == "decomposed_fc") {
    auto layer = std::make_unique<DecomposedFcLayer>(
        name, j.at("in").get<std::size_t>(), j.at("units").get<std::size_t>(),
        j.at("l").get<std::size_t>(), j.value("bias", true));
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      auto& prov = layer->provenance();
      prov.beta = p.value("beta", 0.0);
      prov.achieved_rel_error = p.value("achieved_rel_error", 0.0);
      prov.rank_exhausted = p.value("rank_exhausted", false);
      prov.policy = p.value("policy", "exact_greedy");
      prov.selected = p.value("selected", std::vector<std::size_t>{});
    }
    layer->restore_extension_count(j.value("extended_by", std::size_t{0}));
    return layer;
  }
  if (type == "decomposed_conv") {
    ConvSpec spec{j.value("stride", std::size_t{1}), j.value("padding", std::size_t{0})};
    const auto kernel = j.at("kernel");
    auto layer = std::make_unique<DecomposedConvLayer>(
        name, j.at("in_channels").get<std::size_t>(), j.at("filters").get<std::size_t>(),
        j.at("l").get<std::size_t>(), kernel[0].get<std::size_t>(), kernel[1].get<std::size_t>(),
        spec, j.value("bias", true));
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      auto& prov = layer->provenance();
      prov.beta = p.value("beta", 0.0);
      prov.achieved_rel_error = p.value("achieved_rel_error", 0.0);
      prov.rank_exhausted = p.value("rank_exhausted", false);
      prov.policy = p.value("policy", "exact_greedy");
      prov.selected = p.value("selected", std::vector<std::size_t>{});
    }
    return layer;
  }
  if (type == "maxpool") {
    return std::make_unique<MaxPoolLayer>(name, j.at("window").get<std::size_t>());
  }
  if (type == "batchnorm") {
    return std::make_unique<BatchNormLayer>(name, j.at("channels").get<std::size_t>(),
                                            j.value("momentum", 0.1), j.value("eps", 1e-5));
  }
  if (type == "dropout") {
    return std::make_unique<DropoutLayer>(name, j.at("p").get<double>());
  }
  if (type == "relu") {
    return std::make_unique<ActivationLayer>(name, Activation::kRelu);
  }
  if (type == "leaky_relu") {
    return std::make_unique<ActivationLayer>(name, Activation::kLeakyRelu,
                                             j.value("alpha", 0.01));
  }
  if (type == "softmax") {
    return std::make_unique<SoftmaxLayer>(name);
  }
  throw ConfigError("unknown layer type '" + type + "'");
}

void init_params(ModelGraph& model, Rng& rng) {
  for (auto& layer : model.layers()) {
    for (auto& p : layer->params()) {
      if (p.role == ParamRole::kBias) {
        std::fill(p.value, p.value + p.size, 0.0);
        continue;
      }
      if (std::string(layer->kind()) == "batchnorm") {
        continue;  // gamma/beta keep their 1/0 defaults
      }
      // He-uniform over the receptive fan-in.
      std::size_t fan_in = 1;
      if (p.shape.size() >= 2) {
        fan_in = 1;
        for (std::size_t i = 1; i < p.shape.size(); ++i) fan_in *= p.shape[i];
      }
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (std::size_t i = 0; i < p.size; ++i) p.value[i] = rng.uniform(-bound, bound);
    }
  }
}

}  // namespace dictnet
