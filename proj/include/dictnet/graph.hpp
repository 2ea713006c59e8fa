#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dictnet/kernels.hpp"
#include "dictnet/layer_transform.hpp"
#include "dictnet/rng.hpp"
#include "dictnet/subspace.hpp"
#include "dictnet/tensor.hpp"

namespace dictnet {

using Json = nlohmann::json;

enum class ParamRole { kDense, kDictionary, kCoefficient, kBias };

const char* role_name(ParamRole role);
ParamRole role_from_name(const std::string& name);

/// View over one parameter tensor owned by a layer. The optimizer and the
/// freeze machinery mutate values/flags through this.
struct ParamRef {
  std::string name;  // "<layer>.<param>"
  ParamRole role;
  std::vector<std::size_t> shape;
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
  bool* trainable = nullptr;
  /// Per-row freeze flags (1 = trainable). Empty mask means the whole tensor
  /// follows `trainable`. Rows index the first dimension.
  std::vector<std::uint8_t>* row_mask = nullptr;

  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t row_stride() const { return rows() == 0 ? 0 : size / rows(); }
  bool row_trainable(std::size_t row) const {
    return *trainable && (row_mask == nullptr || row_mask->empty() || (*row_mask)[row] != 0);
  }
};

/// Non-trainable per-layer state that must survive checkpoints (batchnorm
/// running statistics).
struct StateRef {
  std::string name;
  std::vector<double>* data = nullptr;
};

struct Shape3 {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t numel() const { return c * h * w; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

enum class RunMode { kTrain, kEval };

struct ForwardCtx {
  RunMode mode = RunMode::kEval;
  Rng* rng = nullptr;            // needed by dropout in train mode
  bool update_bn_stats = true;   // honored in train mode only
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual const char* kind() const = 0;
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  virtual Shape3 output_shape(Shape3 in) const = 0;
  virtual Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) = 0;
  /// Accumulates parameter gradients and returns d(loss)/d(input).
  virtual Tensor4 backward(const Tensor4& dy) = 0;

  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::vector<StateRef> state() { return {}; }
  virtual bool parametric() const { return false; }

  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Structural description (type, name, hyperparameters, provenance);
  /// parameter payloads are serialized separately by name.
  virtual Json describe() const = 0;

 protected:
  std::string name_;
};

// ---------------------------------------------------------------------------

class DenseFcLayer final : public Layer {
 public:
  DenseFcLayer(std::string name, std::size_t in, std::size_t out, bool with_bias = true);

  const char* kind() const override { return "fc"; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::vector<ParamRef> params() override;
  bool parametric() const override { return true; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseFcLayer>(*this); }
  Json describe() const override;

  DenseMatrix& weight() { return weight_; }
  const DenseMatrix& weight() const { return weight_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }
  std::size_t in_features() const { return weight_.cols(); }
  std::size_t out_features() const { return weight_.rows(); }

 private:
  DenseMatrix weight_;  // m x n
  DenseMatrix weight_grad_;
  std::vector<double> bias_;  // empty when bias-less
  std::vector<double> bias_grad_;
  bool weight_trainable_ = true;
  bool bias_trainable_ = true;
  std::vector<std::uint8_t> weight_row_mask_;
  std::vector<std::uint8_t> bias_row_mask_;
  // forward cache
  DenseMatrix x_flat_;
  std::array<std::size_t, 4> x_dims_{};
  bool has_cache_ = false;
};

class DenseConvLayer final : public Layer {
 public:
  DenseConvLayer(std::string name, std::size_t in_channels, std::size_t filters, std::size_t kh,
                 std::size_t kw, ConvSpec spec = ConvSpec{}, bool with_bias = true);

  const char* kind() const override { return "conv"; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::vector<ParamRef> params() override;
  bool parametric() const override { return true; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseConvLayer>(*this); }
  Json describe() const override;

  Tensor4& weight() { return weight_; }
  const Tensor4& weight() const { return weight_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }
  ConvSpec spec() const { return spec_; }

 private:
  Tensor4 weight_;  // (m, c, kh, kw)
  Tensor4 weight_grad_;
  std::vector<double> bias_;
  std::vector<double> bias_grad_;
  ConvSpec spec_;
  bool weight_trainable_ = true;
  bool bias_trainable_ = true;
  std::vector<std::uint8_t> weight_row_mask_;
  std::vector<std::uint8_t> bias_row_mask_;
  Tensor4 x_cache_;
  bool has_cache_ = false;
};

/// Tiny fc (coefficients) followed by transformation layer (dictionary);
/// carries its decomposition provenance.
class DecomposedFcLayer final : public Layer {
 public:
  DecomposedFcLayer(std::string name, DecomposedFc parts);
  /// Structural constructor; parameter payloads are loaded afterwards.
  DecomposedFcLayer(std::string name, std::size_t in, std::size_t out, std::size_t l,
                    bool with_bias);

  const char* kind() const override { return "decomposed_fc"; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::vector<ParamRef> params() override;
  bool parametric() const override { return true; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<DecomposedFcLayer>(*this);
  }
  Json describe() const override;

  const DenseMatrix& dictionary() const { return dict_; }
  DenseMatrix& dictionary() { return dict_; }
  const DenseMatrix& coefficients() const { return coeff_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& bias() const { return bias_; }
  std::size_t l() const { return dict_.cols(); }
  std::size_t out_features() const { return dict_.rows(); }
  std::size_t in_features() const { return coeff_.cols(); }

  struct Provenance {
    double beta = 0.0;
    double achieved_rel_error = 0.0;
    bool rank_exhausted = false;
    std::string policy = "exact_greedy";
    std::vector<std::size_t> selected;
  };
  Provenance& provenance() { return prov_; }
  const Provenance& provenance() const { return prov_; }

  /// Appends `rows` dictionary rows (and zero bias entries); used by few-shot
  /// class extension. Row r of `new_rows` becomes dictionary row m + r.
  void extend_rows(const DenseMatrix& new_rows);
  std::size_t extended_by() const { return extended_by_; }
  /// Used when rebuilding an extended layer from its descriptor.
  void restore_extension_count(std::size_t n) { extended_by_ = n; }

  void set_dict_row_mask(std::vector<std::uint8_t> mask) { dict_row_mask_ = std::move(mask); }
  void set_bias_row_mask(std::vector<std::uint8_t> mask) { bias_row_mask_ = std::move(mask); }

 private:
  DenseMatrix dict_;   // m x l
  DenseMatrix coeff_;  // l x n
  DenseMatrix dict_grad_;
  DenseMatrix coeff_grad_;
  std::vector<double> bias_;
  std::vector<double> bias_grad_;
  bool dict_trainable_ = true;
  bool coeff_trainable_ = true;
  bool bias_trainable_ = true;
  std::vector<std::uint8_t> dict_row_mask_;
  std::vector<std::uint8_t> bias_row_mask_;
  Provenance prov_;
  std::size_t extended_by_ = 0;
  // forward cache
  DenseMatrix x_flat_;
  DenseMatrix t_cache_;
  std::array<std::size_t, 4> x_dims_{};
  bool has_cache_ = false;
};

/// Tiny conv (coefficient filters) followed by channel-mixing transformation
/// layer (dictionary).
class DecomposedConvLayer final : public Layer {
 public:
  DecomposedConvLayer(std::string name, DecomposedConv parts, std::size_t in_channels);
  DecomposedConvLayer(std::string name, std::size_t in_channels, std::size_t filters,
                      std::size_t l, std::size_t kh, std::size_t kw, ConvSpec spec,
                      bool with_bias);

  const char* kind() const override { return "decomposed_conv"; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::vector<ParamRef> params() override;
  bool parametric() const override { return true; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<DecomposedConvLayer>(*this);
  }
  Json describe() const override;

  const DenseMatrix& dictionary() const { return dict_; }
  const Tensor4& coeff_filters() const { return coeff_; }
  std::vector<double>& bias() { return bias_; }
  ConvSpec spec() const { return spec_; }
  std::size_t l() const { return dict_.cols(); }
  std::size_t out_channels() const { return dict_.rows(); }

  using Provenance = DecomposedFcLayer::Provenance;
  Provenance& provenance() { return prov_; }
  const Provenance& provenance() const { return prov_; }

 private:
  DenseMatrix dict_;  // m x l
  Tensor4 coeff_;     // (l, c, kh, kw)
  DenseMatrix dict_grad_;
  Tensor4 coeff_grad_;
  std::vector<double> bias_;
  std::vector<double> bias_grad_;
  ConvSpec spec_;
  bool dict_trainable_ = true;
  bool coeff_trainable_ = true;
  bool bias_trainable_ = true;
  std::vector<std::uint8_t> dict_row_mask_;
  Provenance prov_;
  Tensor4 x_cache_;
  Tensor4 tiny_cache_;
  bool has_cache_ = false;
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::string name, std::size_t window);

  const char* kind() const override { return "maxpool"; }
  Shape3 output_shape(Shape3 in) const override;
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }
  Json describe() const override;

 private:
  std::size_t window_;
  Tensor4 x_cache_;
  MaxPoolResult fwd_cache_;
  bool has_cache_ = false;
};

class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(std::string name, std::size_t channels, double momentum = 0.1,
                 double eps = 1e-5);

  const char* kind() const override { return "batchnorm"; }
  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::vector<ParamRef> params() override;
  std::vector<StateRef> state() override;
  bool parametric() const override { return true; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNormLayer>(*this); }
  Json describe() const override;

  std::vector<double>& gamma() { return gamma_; }
  std::vector<double>& beta() { return beta_; }

 private:
  std::vector<double> gamma_, beta_;
  std::vector<double> gamma_grad_, beta_grad_;
  std::vector<double> running_mean_, running_var_;
  double momentum_, eps_;
  bool gamma_trainable_ = true;
  bool beta_trainable_ = true;
  BatchNormCache cache_;
  bool train_cache_ = false;
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(std::string name, double p);

  const char* kind() const override { return "dropout"; }
  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DropoutLayer>(*this); }
  Json describe() const override;

  double p() const { return p_; }

 private:
  double p_;
  std::vector<std::uint8_t> mask_;
  bool dropped_ = false;  // whether the last forward was in train mode
};

enum class Activation { kRelu, kLeakyRelu };

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::string name, Activation act, double alpha = 0.01);

  const char* kind() const override {
    return act_ == Activation::kRelu ? "relu" : "leaky_relu";
  }
  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<ActivationLayer>(*this);
  }
  Json describe() const override;

 private:
  Activation act_;
  double alpha_;
  Tensor4 x_cache_;
  bool has_cache_ = false;
};

/// Channel-wise softmax; present for architectures that want explicit
/// probability outputs. Training uses fused softmax cross-entropy on logits,
/// so built-in classifiers end with an fc layer instead.
class SoftmaxLayer final : public Layer {
 public:
  explicit SoftmaxLayer(std::string name);

  const char* kind() const override { return "softmax"; }
  Shape3 output_shape(Shape3 in) const override { return in; }
  Tensor4 forward(const Tensor4& x, const ForwardCtx& ctx) override;
  Tensor4 backward(const Tensor4& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxLayer>(*this); }
  Json describe() const override;

 private:
  Tensor4 probs_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------

/// Ordered layer stack with one classification output. Shapes are validated
/// at construction; `class_labels` records the original dataset label behind
/// each output row.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Shape3 input, std::vector<std::unique_ptr<Layer>> layers,
             std::vector<int> class_labels);

  ModelGraph(const ModelGraph& o);
  ModelGraph& operator=(const ModelGraph& o);
  ModelGraph(ModelGraph&&) = default;
  ModelGraph& operator=(ModelGraph&&) = default;

  Shape3 input_shape() const { return input_; }
  const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

  const std::vector<int>& class_labels() const { return class_labels_; }
  std::vector<int>& class_labels() { return class_labels_; }
  std::size_t num_classes() const { return class_labels_.size(); }

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  /// Runs all layers except a trailing softmax and returns logits (N x K).
  DenseMatrix forward_logits(const Tensor4& batch, const ForwardCtx& ctx);
  /// Backpropagates d(loss)/d(logits) through the layers forward_logits ran.
  void backward_logits(const DenseMatrix& dlogits);

  /// Full forward including a trailing softmax layer, if present.
  Tensor4 forward(const Tensor4& batch, const ForwardCtx& ctx);

  void zero_grads();
  std::vector<ParamRef> params();
  std::vector<StateRef> states();
  std::size_t total_param_count();

  bool is_decomposed() const;
  bool has_dense_parametric() const;

  /// Last parametric layer (the classification head).
  Layer& output_layer();
  const Layer& output_layer() const;

  Json describe() const;
  /// Rebuilds the structure described by `describe()` with zeroed parameters.
  static ModelGraph from_descriptor(const Json& j);

  /// Output shape after layer index i (i == layers.size() gives final shape).
  Shape3 shape_after(std::size_t i) const;

 private:
  void validate();

  Shape3 input_{};
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<int> class_labels_;
  std::uint64_t seed_ = 0;
};

/// He-uniform initialization of every dense weight; biases zero, batchnorm
/// gamma one. Deterministic in layer order for a given rng.
void init_params(ModelGraph& model, Rng& rng);

/// Reconstructs one layer from its description (zeroed parameters).
std::unique_ptr<Layer> layer_from_json(const Json& j);

}  // namespace dictnet
