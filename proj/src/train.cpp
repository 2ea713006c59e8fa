#include "dictnet/train.hpp"

#include <algorithm>
#include <cmath>

namespace dictnet {

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "sgd-momentum" || name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kSgdMomentum: return "sgd-momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "sgd";
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) {
    throw ConfigError("learning_rate must be > 0, got " + std::to_string(learning_rate));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

TrainConfig TrainConfig::from_json(const Json& j) {
  TrainConfig c;
  if (j.contains("optimizer")) c.optimizer = optimizer_from_name(j["optimizer"]);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.seed = j.value("seed", c.seed);
  c.momentum = j.value("momentum", c.momentum);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.shuffle = j.value("shuffle", c.shuffle);
  c.augment_rotations = j.value("augment_rotations", c.augment_rotations);
  c.validate();
  return c;
}

Json TrainConfig::to_json() const {
  return Json{{"optimizer", optimizer_name(optimizer)},
              {"learning_rate", learning_rate},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"max_iterations", max_iterations},
              {"seed", seed},
              {"momentum", momentum},
              {"adam_beta1", adam_beta1},
              {"adam_beta2", adam_beta2},
              {"adam_eps", adam_eps},
              {"shuffle", shuffle},
              {"augment_rotations", augment_rotations}};
}

void FreezeMask::set_trainable(const std::string& param_name, bool trainable) {
  overrides_.emplace_back(param_name, trainable);
}

void FreezeMask::set_dictionary_row_mask(const std::string& param_name,
                                         std::vector<std::uint8_t> mask) {
  row_masks_.emplace_back(param_name, std::move(mask));
}

void FreezeMask::apply(ModelGraph& model) const {
  auto params = model.params();
  auto find = [&params](const std::string& name) -> ParamRef* {
    for (auto& p : params) {
      if (p.name == name) return &p;
    }
    return nullptr;
  };
  if (default_trainable_.has_value()) {
    for (auto& p : params) *p.trainable = *default_trainable_;
  }
  for (const auto& [name, flag] : overrides_) {
    ParamRef* p = find(name);
    if (!p) throw ArgumentError("freeze mask names unknown parameter '" + name + "'");
    *p->trainable = flag;
  }
  for (const auto& [name, mask] : row_masks_) {
    ParamRef* p = find(name);
    if (!p) throw ArgumentError("freeze mask names unknown parameter '" + name + "'");
    if (p->role != ParamRole::kDictionary) {
      throw ArgumentError("row masks are only valid on dictionary parameters, '" + name +
                          "' has role " + role_name(p->role));
    }
    if (p->row_mask == nullptr) {
      throw ArgumentError("parameter '" + name + "' does not support row masks");
    }
    if (!mask.empty() && mask.size() != p->rows()) {
      throw ShapeError("row mask for '" + name + "' has " + std::to_string(mask.size()) +
                       " entries for " + std::to_string(p->rows()) + " rows");
    }
    *p->row_mask = mask;
  }
}

Optimizer::Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

void Optimizer::step(const std::vector<ParamRef>& params) {
  const double lr = cfg_.learning_rate;
  for (const auto& p : params) {
    if (!*p.trainable) continue;
    const bool masked = p.row_mask != nullptr && !p.row_mask->empty();
    const std::size_t stride = p.row_stride();

    switch (cfg_.optimizer) {
      case OptimizerKind::kSgd: {
        for (std::size_t i = 0; i < p.size; ++i) {
          if (masked && (*p.row_mask)[i / stride] == 0) continue;
          p.value[i] -= lr * p.grad[i];
        }
        break;
      }
      case OptimizerKind::kSgdMomentum: {
        State& st = state_[p.name];
        if (st.m.size() != p.size) st.m.assign(p.size, 0.0);
        for (std::size_t i = 0; i < p.size; ++i) {
          if (masked && (*p.row_mask)[i / stride] == 0) continue;
          st.m[i] = cfg_.momentum * st.m[i] + p.grad[i];
          p.value[i] -= lr * st.m[i];
        }
        break;
      }
      case OptimizerKind::kAdam: {
        State& st = state_[p.name];
        if (st.m.size() != p.size) {
          st.m.assign(p.size, 0.0);
          st.v.assign(p.size, 0.0);
          st.t = 0;
        }
        ++st.t;
        const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.t));
        for (std::size_t i = 0; i < p.size; ++i) {
          if (masked && (*p.row_mask)[i / stride] == 0) continue;
          const double g = p.grad[i];
          st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
          st.v[i] = b2 * st.v[i] + (1.0 - b2) * g * g;
          const double mhat = st.m[i] / bc1;
          const double vhat = st.v[i] / bc2;
          p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
        break;
      }
    }
  }
}

TrainReport train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg,
                  const FreezeMask* mask, const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (data.size() == 0) throw DataError("train: dataset is empty");
  if (mask) mask->apply(model);

  const Dataset* train_data = &data;
  Dataset augmented;
  if (cfg.augment_rotations) {
    augmented = augment_rotations(data);
    train_data = &augmented;
  }

  Rng rng(cfg.seed);
  Optimizer opt(cfg);
  TrainReport report;

  std::vector<std::size_t> order(train_data->size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto params = model.params();
  ForwardCtx ctx{RunMode::kTrain, &rng, true};

  std::size_t iteration = 0;
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, train_data->size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t epoch_correct = 0, epoch_samples = 0, epoch_iters = 0;

    for (std::size_t at = 0; at + batch <= order.size(); at += batch) {
      if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) break;
      std::vector<std::size_t> idx(order.begin() + at, order.begin() + at + batch);
      Batch b = make_batch(*train_data, idx);

      model.zero_grads();
      DenseMatrix logits = model.forward_logits(b.images, ctx);
      CrossEntropyResult ce = cross_entropy_with_logits(logits, b.labels);
      report.loss_curve.push_back(ce.loss);
      ++iteration;
      ++epoch_iters;
      if (!std::isfinite(ce.loss)) {
        report.diverged = true;
        report.diverged_iteration = iteration;
        report.iterations = iteration;
        return report;
      }
      epoch_loss += ce.loss;
      epoch_correct += ce.correct;
      epoch_samples += b.labels.size();

      model.backward_logits(ce.dlogits);
      opt.step(params);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.iterations = epoch_iters;
    stats.mean_loss = epoch_iters ? epoch_loss / static_cast<double>(epoch_iters) : 0.0;
    stats.running_accuracy =
        epoch_samples ? static_cast<double>(epoch_correct) / static_cast<double>(epoch_samples)
                      : 0.0;
    report.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
    if (cfg.max_iterations > 0 && iteration >= cfg.max_iterations) break;
  }

  report.iterations = iteration;
  report.final_train_accuracy = evaluate(model, data).top1;
  return report;
}

EvalReport evaluate(ModelGraph& model, const Dataset& data, std::size_t batch_size) {
  EvalReport rep;
  if (data.size() == 0) return rep;
  rep.class_ids = data.class_ids;
  std::map<int, std::size_t> class_pos;
  for (std::size_t i = 0; i < rep.class_ids.size(); ++i) class_pos[rep.class_ids[i]] = i;
  std::vector<std::size_t> correct_per_class(rep.class_ids.size(), 0);
  std::vector<std::size_t> count_per_class(rep.class_ids.size(), 0);

  ForwardCtx ctx{RunMode::kEval, nullptr, false};
  for (std::size_t at = 0; at < data.size(); at += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - at);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = at + i;
    Batch b = make_batch(data, idx);
    DenseMatrix logits = model.forward_logits(b.images, ctx);
    for (std::size_t r = 0; r < logits.rows(); ++r) {
      const double* row = logits.row(r);
      std::size_t arg = 0;
      for (std::size_t c = 1; c < logits.cols(); ++c) {
        if (row[c] > row[arg]) arg = c;
      }
      const std::size_t pos = class_pos.at(b.labels[r]);
      ++count_per_class[pos];
      if (static_cast<int>(arg) == b.labels[r]) {
        ++correct_per_class[pos];
        ++rep.correct;
      }
    }
    rep.total += n;
  }

  rep.top1 = rep.total ? static_cast<double>(rep.correct) / static_cast<double>(rep.total) : 0.0;
  rep.per_class_accuracy.resize(rep.class_ids.size(), 0.0);
  rep.per_class_count = count_per_class;
  for (std::size_t i = 0; i < rep.class_ids.size(); ++i) {
    rep.per_class_accuracy[i] =
        count_per_class[i]
            ? static_cast<double>(correct_per_class[i]) / static_cast<double>(count_per_class[i])
            : 0.0;
  }
  return rep;
}

double LayerBetas::for_layer(const std::string& kind, const std::string& name) const {
  auto it = overrides.find(name);
  if (it != overrides.end()) return it->second;
  if (kind == "conv") return conv;
  if (kind == "fc") return fc;
  throw ArgumentError("no beta for layer kind '" + kind + "'");
}

ModelGraph transform_model(const ModelGraph& model, const LayerBetas& betas,
                           const SelectionPolicy& policy) {
  if (model.is_decomposed()) {
    throw StructureError("transform_model: model already contains decomposed layers");
  }
  std::vector<std::unique_ptr<Layer>> layers;
  Shape3 shape = model.input_shape();
  for (const auto& l : model.layers()) {
    const std::string kind = l->kind();
    if (kind == "fc") {
      const auto* fc = static_cast<const DenseFcLayer*>(l.get());
      const double beta = betas.for_layer(kind, l->name());
      DecomposedFc parts = transform_fc(fc->weight(), fc->bias(), beta, policy);
      layers.push_back(std::make_unique<DecomposedFcLayer>(l->name(), std::move(parts)));
    } else if (kind == "conv") {
      const auto* cv = static_cast<const DenseConvLayer*>(l.get());
      const double beta = betas.for_layer(kind, l->name());
      DecomposedConv parts =
          transform_conv(cv->weight(), cv->bias(), beta, policy, cv->spec());
      layers.push_back(
          std::make_unique<DecomposedConvLayer>(l->name(), std::move(parts), shape.c));
    } else {
      layers.push_back(l->clone());
    }
    shape = l->output_shape(shape);
  }
  ModelGraph out(model.input_shape(), std::move(layers), model.class_labels());
  out.set_seed(model.seed());
  return out;
}

}  // namespace dictnet
