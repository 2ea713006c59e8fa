#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dictnet/data.hpp"
#include "dictnet/graph.hpp"

namespace dictnet {

enum class OptimizerKind { kSgd, kSgdMomentum, kAdam };

OptimizerKind optimizer_from_name(const std::string& name);
const char* optimizer_name(OptimizerKind k);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t max_iterations = 0;  // 0 = run all epochs
  std::uint64_t seed = 0;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool shuffle = true;
  bool augment_rotations = false;

  void validate() const;
  static TrainConfig from_json(const Json& j);
  Json to_json() const;
};

/// Trainability overrides applied to a model before training. Row masks are
/// only accepted on dictionary-role parameters; partial freezing of an
/// extended output layer's bias is handled by the few-shot mask internally.
class FreezeMask {
 public:
  /// Applied to every parameter before the per-name overrides.
  void set_default(bool trainable) { default_trainable_ = trainable; }
  void set_trainable(const std::string& param_name, bool trainable);
  void set_dictionary_row_mask(const std::string& param_name, std::vector<std::uint8_t> mask);

  void apply(ModelGraph& model) const;

 private:
  std::optional<bool> default_trainable_;
  std::vector<std::pair<std::string, bool>> overrides_;
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> row_masks_;
};

/// SGD / SGD+momentum / Adam. State is keyed by parameter name; frozen
/// parameters and frozen dictionary rows are skipped entirely, leaving their
/// values and optimizer state bit-identical.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg);
  void step(const std::vector<ParamRef>& params);

 private:
  struct State {
    std::vector<double> m;  // momentum / first moment
    std::vector<double> v;  // second moment (adam)
    std::size_t t = 0;
  };
  TrainConfig cfg_;
  std::map<std::string, State> state_;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double running_accuracy = 0.0;  // train-mode batch accuracy over the epoch
  std::size_t iterations = 0;
};

struct TrainReport {
  std::vector<double> loss_curve;       // one entry per iteration
  std::vector<EpochStats> epochs;
  double final_train_accuracy = 0.0;    // eval-mode pass over the training set
  std::size_t iterations = 0;
  bool diverged = false;
  std::size_t diverged_iteration = 0;
};

/// Deterministic mini-batch training with cross-entropy loss. Data order is
/// reshuffled from the config seed each epoch. A non-finite loss aborts with
/// the partial report and `diverged` set.
TrainReport train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                  const FreezeMask* mask = nullptr,
                  const std::function<void(const EpochStats&)>& on_epoch = nullptr);

struct EvalReport {
  double top1 = 0.0;
  std::vector<int> class_ids;                // label value per entry below
  std::vector<double> per_class_accuracy;
  std::vector<std::size_t> per_class_count;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Eval-mode accuracy (dropout off, batchnorm running statistics).
EvalReport evaluate(ModelGraph& model, const Dataset& data, std::size_t batch_size = 256);

/// Per-layer decomposition thresholds: kind-level defaults plus per-name
/// overrides.
struct LayerBetas {
  double conv = 0.5;
  double fc = 0.5;
  std::map<std::string, double> overrides;

  double for_layer(const std::string& kind, const std::string& name) const;
};

/// Replaces every dense fc/conv layer by its decomposed pair; everything else
/// is copied. Refuses models that already contain decomposed layers.
ModelGraph transform_model(const ModelGraph& model, const LayerBetas& betas,
                           const SelectionPolicy& policy = SelectionPolicy{});

}  // namespace dictnet
