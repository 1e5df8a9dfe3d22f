#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "embeval/embedstore.hpp"
#include "embeval/heads.hpp"

namespace embeval {

enum class OptimizerKind { Sgd, SgdMomentum, AdamW };
enum class ControlKind { FixedEpochs, Plateau };
enum class LossKind { SoftmaxCe, BinaryCe };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(ControlKind kind);
std::string_view to_string(LossKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);  // sgd | sgd-momentum | adamw
ControlKind parse_control_kind(std::string_view text);      // fixed | plateau

struct PlateauParams {
  int patience = 3;
  double factor = 0.1;
  int terminate = 9;
};

// Defaults follow the pre-selected full-shot values (lr 1e-4, decay 0.05,
// batch 4).
struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.05;  // decoupled
  std::size_t batch_size = 4;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  std::size_t epochs = 50;
  ControlKind control = ControlKind::FixedEpochs;
  PlateauParams plateau;
  LossKind loss = LossKind::SoftmaxCe;
  std::uint64_t seed = 0;

  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void check_config(const TrainConfig& config);

/// Softmax cross-entropy for single-label and binary tasks, per-class binary
/// cross-entropy for multilabel tasks.
LossKind default_loss(TaskKind task);

/// Same layout as the assembly's trainable parameters; absent blocks are not
/// trained under the active feature path.
struct HeadGradients {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  std::optional<Eigen::MatrixXd> projection;
  std::optional<ResidualAdaptor> adaptor;
};

struct LossAndGrad {
  double loss = 0.0;
  HeadGradients grads;
};

/// Mean loss over the batch and its gradient for every trainable parameter.
/// Weight decay is not included; it is applied by optimizer_step.
LossAndGrad loss_and_grad(const HeadAssembly& assembly, const Eigen::MatrixXd& features,
                          const LabelSet& labels, LossKind loss);

double loss_value(const HeadAssembly& assembly, const Eigen::MatrixXd& features,
                  const LabelSet& labels, LossKind loss);

/// Trainable parameter blocks in a fixed order: W, b, then P_v or the four
/// adaptor blocks depending on the feature path.
std::vector<std::span<double>> trainable_parameters(HeadAssembly& assembly);
std::vector<std::span<const double>> gradient_blocks(const HeadGradients& grads);

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerState {
  std::vector<Eigen::VectorXd> first_moment;
  std::vector<Eigen::VectorXd> second_moment;
  std::uint64_t steps = 0;
};

/// One update. Decoupled decay p <- p (1 - lr * decay) is applied before the
/// gradient step. Throws NonFiniteGradient (leaving params untouched) if any
/// gradient entry is NaN or infinite.
void optimizer_step(OptimizerState& state, std::span<const std::span<double>> params,
                    std::span<const std::span<const double>> grads, const TrainConfig& config,
                    double learning_rate);

void optimizer_step(OptimizerState& state, HeadAssembly& assembly, const HeadGradients& grads,
                    const TrainConfig& config, double learning_rate);

struct PlateauState {
  double learning_rate = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  bool terminated = false;
  std::size_t epochs_seen = 0;
  std::optional<std::size_t> best_epoch;  // 0-based
  bool improved = false;                  // last step improved the best

  bool operator==(const PlateauState&) const = default;
};

PlateauState plateau_start(double learning_rate);

/// Strict improvement resets the counter; every `patience` consecutive
/// non-improving epochs multiply the rate by `factor`; `terminate` of them end
/// training (termination takes precedence over a decay due on that epoch).
PlateauState plateau_step(PlateauState state, double metric, const PlateauParams& params = {});

}  // namespace embeval
