#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "embeval/embedstore.hpp"
#include "embeval/lexicon.hpp"

namespace embeval {

enum class HeadSpace { Joint, Backbone };
enum class FeaturePath { Frozen, TrainProjection, TrainAdaptor };
enum class InitKind { Random, LanguageSeparate, LanguageMerge };

std::string_view to_string(InitKind kind);
InitKind parse_init_kind(std::string_view text);  // random | lang-sep | lang-merge

/// Residual two-layer perceptron on backbone features:
/// x -> x + W2 relu(W1 x + b1) + b2. The identity at initialization (W2 = 0).
struct ResidualAdaptor {
  Eigen::MatrixXd hidden_weight;  // H x D
  Eigen::VectorXd hidden_bias;    // H
  Eigen::MatrixXd output_weight;  // D x H
  Eigen::VectorXd output_bias;    // D

  static ResidualAdaptor identity(std::size_t dim, std::size_t hidden, std::uint64_t seed);

  std::size_t dim() const { return static_cast<std::size_t>(output_weight.rows()); }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& features) const;  // rows are samples
};

/// A scoring path: optional feature transform, linear head, temperature.
struct HeadAssembly {
  HeadSpace space = HeadSpace::Joint;
  Eigen::MatrixXd weight;  // (P or D) x K
  Eigen::VectorXd bias;    // K
  double temperature = 1.0;
  FeaturePath feature_path = FeaturePath::Frozen;
  std::optional<ResidualAdaptor> adaptor;
  bool normalize_input = false;
  Eigen::MatrixXd projection;  // P x D image projection; trainable under TrainProjection

  std::size_t num_classes() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(projection.cols()); }
};

/// Throws std::invalid_argument when an assembly invariant does not hold.
void check_assembly(const HeadAssembly& assembly);

struct InitStrategy {
  InitKind kind = InitKind::LanguageSeparate;
  std::uint64_t seed = 0;  // random kind only
  KnowledgeSelection selection;
};

struct HeadOptions {
  FeaturePath feature_path = FeaturePath::Frozen;
  HeadSpace random_space = HeadSpace::Joint;
  double language_temperature = 100.0;
  double random_temperature = 1.0;
  std::size_t adaptor_hidden = 64;
  std::uint64_t adaptor_seed = 0;
};

HeadAssembly init_head(const EmbeddingArchive& archive, const InitStrategy& strategy,
                       const HeadOptions& options = {});

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardPass {
  Eigen::MatrixXd hidden_pre;  // n x H, adaptor only
  Eigen::MatrixXd adapted;     // n x D, path(H)
  Eigen::MatrixXd joint;       // n x P, joint space only, before normalization
  Eigen::VectorXd joint_norm;  // n, when normalize_input
  Eigen::MatrixXd inputs;      // n x rows(W), what the head sees
  Eigen::MatrixXd logits;      // n x K
};

ForwardPass forward(const HeadAssembly& assembly, const Eigen::MatrixXd& features);

/// n x K logits for backbone features (n x D).
Eigen::MatrixXd score(const HeadAssembly& assembly, const Eigen::MatrixXd& features);

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::uint32_t> argmax_rows(const Eigen::MatrixXd& logits);

struct ZeroShotResult {
  std::vector<std::uint32_t> predictions;
  Eigen::MatrixXd logits;
};

/// Cosine-similarity classification of the test split against the composed
/// class matrix; the language-separate head at initialization.
ZeroShotResult zero_shot_predict(const EmbeddingArchive& archive, const KnowledgeSelection& selection,
                                 double temperature = 1.0);

inline Eigen::MatrixXd to_double(const MatrixF& m) { return m.cast<double>(); }

}  // namespace embeval
