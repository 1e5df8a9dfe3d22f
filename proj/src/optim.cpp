#include "embeval/optim.hpp"

#include <cmath>
#include <string>

namespace embeval {

namespace {

template <typename Derived>
std::span<double> view(Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

template <typename Derived>
std::span<const double> view(const Eigen::PlainObjectBase<Derived>& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

double log_sum_exp(const Eigen::RowVectorXd& row) {
  const double top = row.maxCoeff();
  return top + std::log((row.array() - top).exp().sum());
}

// softplus(x) = log(1 + e^x), stable for large |x|.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Loss and dL/dlogits for a batch.
double loss_and_logit_grad(const Eigen::MatrixXd& logits, const LabelSet& labels, LossKind loss,
                           Eigen::MatrixXd* grad) {
  const auto n = logits.rows();
  const auto K = logits.cols();
  if (n == 0) throw std::invalid_argument("empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw std::invalid_argument("label count does not match batch size");
  }
  if (grad) grad->resize(n, K);

  double total = 0.0;
  if (loss == LossKind::SoftmaxCe) {
    if (labels.multilabel) throw std::invalid_argument("softmax-ce needs single-label targets");
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto y = labels.classes[static_cast<std::size_t>(i)];
      if (y >= K) throw std::out_of_range("label " + std::to_string(y) + " out of range");
      const Eigen::RowVectorXd row = logits.row(i);
      const double lse = log_sum_exp(row);
      total += lse - row(y);
      if (grad) {
        grad->row(i) = (row.array() - lse).exp().matrix();
        (*grad)(i, y) -= 1.0;
      }
    }
    if (grad) *grad /= static_cast<double>(n);
    return total / static_cast<double>(n);
  }

  // Per-class binary cross-entropy, averaged over batch and classes.
  if (labels.multilabel && labels.membership.cols() != K) {
    throw std::invalid_argument("membership matrix must have K columns");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!labels.multilabel && labels.classes[static_cast<std::size_t>(i)] >= K) {
      throw std::out_of_range("label out of range");
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      const double target = labels.multilabel
                                ? static_cast<double>(labels.membership(i, k))
                                : (labels.classes[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0);
      const double s = logits(i, k);
      total += softplus(s) - target * s;
      if (grad) (*grad)(i, k) = sigmoid(s) - target;
    }
  }
  const double denom = static_cast<double>(n * K);
  if (grad) *grad /= denom;
  return total / denom;
}

void require_finite(std::span<const std::span<const double>> grads) {
  for (std::size_t b = 0; b < grads.size(); ++b) {
    for (double g : grads[b]) {
      if (!std::isfinite(g)) {
        throw NonFiniteGradient("non-finite gradient in parameter block " + std::to_string(b));
      }
    }
  }
}

}  // namespace

std::string_view to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::SgdMomentum: return "sgd-momentum";
    case OptimizerKind::AdamW: return "adamw";
  }
  return "?";
}

std::string_view to_string(ControlKind kind) {
  return kind == ControlKind::Plateau ? "plateau" : "fixed";
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::BinaryCe ? "per-class-binary-ce" : "softmax-ce";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "sgd-momentum") return OptimizerKind::SgdMomentum;
  if (text == "adamw") return OptimizerKind::AdamW;
  throw std::invalid_argument("unknown optimizer '" + std::string(text) + "'");
}

ControlKind parse_control_kind(std::string_view text) {
  if (text == "fixed") return ControlKind::FixedEpochs;
  if (text == "plateau") return ControlKind::Plateau;
  throw std::invalid_argument("unknown training control '" + std::string(text) + "'");
}

void check_config(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
  if (c.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (c.plateau.patience < 1 || c.plateau.patience >= c.plateau.terminate) {
    throw std::invalid_argument("plateau requires 1 <= patience < terminate");
  }
  if (!(c.plateau.factor > 0.0 && c.plateau.factor < 1.0)) {
    throw std::invalid_argument("plateau factor must be in (0, 1)");
  }
}

LossKind default_loss(TaskKind task) {
  return task == TaskKind::Multilabel ? LossKind::BinaryCe : LossKind::SoftmaxCe;
}

double loss_value(const HeadAssembly& assembly, const Eigen::MatrixXd& features,
                  const LabelSet& labels, LossKind loss) {
  return loss_and_logit_grad(score(assembly, features), labels, loss, nullptr);
}

LossAndGrad loss_and_grad(const HeadAssembly& a, const Eigen::MatrixXd& features,
                          const LabelSet& labels, LossKind loss) {
  const auto f = forward(a, features);
  LossAndGrad out;
  Eigen::MatrixXd g_logits;
  out.loss = loss_and_logit_grad(f.logits, labels, loss, &g_logits);

  // logits = tau * (inputs W + b)
  const Eigen::MatrixXd g_scaled = a.temperature * g_logits;
  out.grads.weight = f.inputs.transpose() * g_scaled;
  out.grads.bias = g_scaled.colwise().sum().transpose();
  const bool needs_input_grad = a.feature_path != FeaturePath::Frozen;
  if (!needs_input_grad) return out;

  Eigen::MatrixXd g_inputs = g_scaled * a.weight.transpose();
  Eigen::MatrixXd g_adapted;
  if (a.space == HeadSpace::Joint) {
    Eigen::MatrixXd g_joint = g_inputs;
    if (a.normalize_input) {
      // d(z/|z|) = (I - u u^T) dz / |z|
      for (Eigen::Index i = 0; i < g_joint.rows(); ++i) {
        const double norm = f.joint_norm(i);
        if (norm > 0.0) {
          const auto u = f.inputs.row(i);
          g_joint.row(i) = (g_inputs.row(i) - u.dot(g_inputs.row(i)) * u) / norm;
        } else {
          g_joint.row(i).setZero();
        }
      }
    }
    if (a.feature_path == FeaturePath::TrainProjection) {
      out.grads.projection = g_joint.transpose() * f.adapted;
      return out;
    }
    g_adapted = g_joint * a.projection;
  } else {
    g_adapted = g_inputs;
  }

  if (a.feature_path == FeaturePath::TrainAdaptor) {
    const auto& ad = *a.adaptor;
    const Eigen::MatrixXd hidden = f.hidden_pre.cwiseMax(0.0);
    ResidualAdaptor g;
    g.output_weight = g_adapted.transpose() * hidden;
    g.output_bias = g_adapted.colwise().sum().transpose();
    Eigen::MatrixXd g_pre = g_adapted * ad.output_weight;
    g_pre = g_pre.cwiseProduct((f.hidden_pre.array() > 0.0).cast<double>().matrix());
    g.hidden_weight = g_pre.transpose() * features;
    g.hidden_bias = g_pre.colwise().sum().transpose();
    out.grads.adaptor = std::move(g);
  }
  return out;
}

std::vector<std::span<double>> trainable_parameters(HeadAssembly& a) {
  std::vector<std::span<double>> out{view(a.weight), view(a.bias)};
  if (a.feature_path == FeaturePath::TrainProjection) out.push_back(view(a.projection));
  if (a.feature_path == FeaturePath::TrainAdaptor) {
    auto& ad = a.adaptor.value();
    out.push_back(view(ad.hidden_weight));
    out.push_back(view(ad.hidden_bias));
    out.push_back(view(ad.output_weight));
    out.push_back(view(ad.output_bias));
  }
  return out;
}

std::vector<std::span<const double>> gradient_blocks(const HeadGradients& g) {
  std::vector<std::span<const double>> out{view(g.weight), view(g.bias)};
  if (g.projection) out.push_back(view(*g.projection));
  if (g.adaptor) {
    out.push_back(view(g.adaptor->hidden_weight));
    out.push_back(view(g.adaptor->hidden_bias));
    out.push_back(view(g.adaptor->output_weight));
    out.push_back(view(g.adaptor->output_bias));
  }
  return out;
}

void optimizer_step(OptimizerState& state, std::span<const std::span<double>> params,
                    std::span<const std::span<const double>> grads, const TrainConfig& c,
                    double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size()) {
      throw std::invalid_argument("shape mismatch in parameter block " + std::to_string(b));
    }
  }
  require_finite(grads);

  const bool moments = c.optimizer != OptimizerKind::Sgd;
  if (moments && state.first_moment.empty()) {
    for (const auto& g : grads) state.first_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size())));
  }
  if (c.optimizer == OptimizerKind::AdamW && state.second_moment.empty()) {
    for (const auto& g : grads) state.second_moment.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.size())));
  }
  if (moments && state.first_moment.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameter blocks");
  }
  ++state.steps;

  const double decay = 1.0 - lr * c.weight_decay;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.steps));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.steps));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    const auto g = grads[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (c.weight_decay != 0.0) p[i] *= decay;
      switch (c.optimizer) {
        case OptimizerKind::Sgd:
          p[i] -= lr * g[i];
          break;
        case OptimizerKind::SgdMomentum: {
          double& m = state.first_moment[b][static_cast<Eigen::Index>(i)];
          m = c.momentum * m + g[i];
          p[i] -= lr * m;
          break;
        }
        case OptimizerKind::AdamW: {
          double& m = state.first_moment[b][static_cast<Eigen::Index>(i)];
          double& v = state.second_moment[b][static_cast<Eigen::Index>(i)];
          m = c.beta1 * m + (1.0 - c.beta1) * g[i];
          v = c.beta2 * v + (1.0 - c.beta2) * g[i] * g[i];
          p[i] -= lr * (m / bias1) / (std::sqrt(v / bias2) + c.epsilon);
          break;
        }
      }
    }
  }
}

void optimizer_step(OptimizerState& state, HeadAssembly& assembly, const HeadGradients& grads,
                    const TrainConfig& config, double learning_rate) {
  const auto params = trainable_parameters(assembly);
  const auto blocks = gradient_blocks(grads);
  optimizer_step(state, params, blocks, config, learning_rate);
}

PlateauState plateau_start(double learning_rate) {
  PlateauState s;
  s.learning_rate = learning_rate;
  return s;
}

PlateauState plateau_step(PlateauState s, double metric, const PlateauParams& params) {
  if (s.terminated) throw std::logic_error("plateau_step called after termination");
  if (!std::isfinite(metric)) throw std::invalid_argument("plateau metric must be finite");
  s.improved = metric > s.best;
  if (s.improved) {
    s.best = metric;
    s.since_improvement = 0;
    s.best_epoch = s.epochs_seen;
  } else {
    ++s.since_improvement;
    if (s.since_improvement >= params.terminate) {
      s.terminated = true;
    } else if (s.since_improvement % params.patience == 0) {
      s.learning_rate *= params.factor;
    }
  }
  ++s.epochs_seen;
  return s;
}

}  // namespace embeval
