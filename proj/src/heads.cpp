#include "embeval/heads.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "embeval/random.hpp"

namespace embeval {

std::string_view to_string(InitKind kind) {
  switch (kind) {
    case InitKind::Random: return "random";
    case InitKind::LanguageSeparate: return "lang-sep";
    case InitKind::LanguageMerge: return "lang-merge";
  }
  return "?";
}

InitKind parse_init_kind(std::string_view text) {
  if (text == "random") return InitKind::Random;
  if (text == "lang-sep") return InitKind::LanguageSeparate;
  if (text == "lang-merge") return InitKind::LanguageMerge;
  throw std::invalid_argument("unknown init kind '" + std::string(text) + "'");
}

ResidualAdaptor ResidualAdaptor::identity(std::size_t dim, std::size_t hidden, std::uint64_t seed) {
  if (dim == 0 || hidden == 0) throw std::invalid_argument("adaptor dimensions must be positive");
  const auto iD = static_cast<Eigen::Index>(dim);
  const auto iH = static_cast<Eigen::Index>(hidden);
  ResidualAdaptor a;
  Rng rng(derive_seed(seed, 0xada7));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  a.hidden_weight.resize(iH, iD);
  for (Eigen::Index c = 0; c < iD; ++c)
    for (Eigen::Index r = 0; r < iH; ++r) a.hidden_weight(r, c) = scale * rng.normal();
  a.hidden_bias = Eigen::VectorXd::Zero(iH);
  a.output_weight = Eigen::MatrixXd::Zero(iD, iH);
  a.output_bias = Eigen::VectorXd::Zero(iD);
  return a;
}

Eigen::MatrixXd ResidualAdaptor::apply(const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd pre = features * hidden_weight.transpose();
  pre.rowwise() += hidden_bias.transpose();
  Eigen::MatrixXd out = features + pre.cwiseMax(0.0) * output_weight.transpose();
  out.rowwise() += output_bias.transpose();
  return out;
}

void check_assembly(const HeadAssembly& a) {
  const auto P = a.projection.rows();
  const auto D = a.projection.cols();
  const auto expected_rows = a.space == HeadSpace::Joint ? P : D;
  if (a.weight.rows() != expected_rows) {
    throw std::invalid_argument("head weight has " + std::to_string(a.weight.rows()) +
                                " rows, expected " + std::to_string(expected_rows));
  }
  if (a.bias.size() != a.weight.cols()) throw std::invalid_argument("bias length must equal K");
  if (!(a.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (a.adaptor.has_value() != (a.feature_path == FeaturePath::TrainAdaptor)) {
    throw std::invalid_argument("an adaptor is present exactly when the feature path is train-adaptor");
  }
  if (a.adaptor) {
    const auto& ad = *a.adaptor;
    if (ad.output_weight.rows() != D || ad.hidden_weight.cols() != D ||
        ad.hidden_weight.rows() != ad.output_weight.cols() ||
        ad.hidden_bias.size() != ad.hidden_weight.rows() || ad.output_bias.size() != D) {
      throw std::invalid_argument("adaptor shapes do not match feature dimension D");
    }
  }
  if (a.feature_path == FeaturePath::TrainProjection && a.space != HeadSpace::Joint) {
    throw std::invalid_argument("train-projection needs a joint-space head");
  }
}

HeadAssembly init_head(const EmbeddingArchive& archive, const InitStrategy& strategy,
                       const HeadOptions& options) {
  const auto& m = archive.manifest;
  const auto K = static_cast<Eigen::Index>(m.num_classes);
  HeadAssembly a;
  a.projection = to_double(archive.image_projection);
  if (a.projection.rows() != static_cast<Eigen::Index>(m.joint_dim) ||
      a.projection.cols() != static_cast<Eigen::Index>(m.feature_dim)) {
    throw std::invalid_argument("archive projection does not match manifest dimensions");
  }
  a.feature_path = options.feature_path;
  a.bias = Eigen::VectorXd::Zero(K);

  switch (strategy.kind) {
    case InitKind::Random: {
      a.space = options.random_space;
      a.normalize_input = a.space == HeadSpace::Joint;
      a.temperature = options.random_temperature;
      const auto rows = a.space == HeadSpace::Joint ? a.projection.rows() : a.projection.cols();
      Rng rng(derive_seed(strategy.seed, 0x4ead));
      const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
      a.weight.resize(rows, K);
      for (Eigen::Index c = 0; c < K; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) a.weight(r, c) = scale * rng.normal();
      break;
    }
    case InitKind::LanguageSeparate:
    case InitKind::LanguageMerge: {
      if (archive.text_embeddings.rows() == 0) {
        throw std::invalid_argument("language initialization needs text variants");
      }
      const auto classes = compose_class_matrix(archive, strategy.selection);
      a.temperature = options.language_temperature;
      if (strategy.kind == InitKind::LanguageSeparate) {
        a.space = HeadSpace::Joint;
        a.weight = classes.columns;
        a.normalize_input = true;
      } else {
        a.space = HeadSpace::Backbone;
        a.weight = a.projection.transpose() * classes.columns;
        a.normalize_input = false;
      }
      break;
    }
  }
  if (a.feature_path == FeaturePath::TrainAdaptor) {
    a.adaptor = ResidualAdaptor::identity(m.feature_dim, options.adaptor_hidden, options.adaptor_seed);
  }
  check_assembly(a);
  return a;
}

ForwardPass forward(const HeadAssembly& a, const Eigen::MatrixXd& features) {
  if (features.cols() != a.projection.cols()) {
    throw std::invalid_argument("feature dimension " + std::to_string(features.cols()) +
                                " does not match D=" + std::to_string(a.projection.cols()));
  }
  ForwardPass f;
  if (a.adaptor) {
    const auto& ad = *a.adaptor;
    f.hidden_pre = features * ad.hidden_weight.transpose();
    f.hidden_pre.rowwise() += ad.hidden_bias.transpose();
    f.adapted = features + f.hidden_pre.cwiseMax(0.0) * ad.output_weight.transpose();
    f.adapted.rowwise() += ad.output_bias.transpose();
  } else {
    f.adapted = features;
  }

  if (a.space == HeadSpace::Joint) {
    f.joint = f.adapted * a.projection.transpose();
    f.inputs = f.joint;
    if (a.normalize_input) {
      f.joint_norm = f.joint.rowwise().norm();
      for (Eigen::Index i = 0; i < f.inputs.rows(); ++i) {
        if (f.joint_norm(i) > 0.0) f.inputs.row(i) /= f.joint_norm(i);
      }
    }
  } else {
    f.inputs = f.adapted;
  }
  f.logits = f.inputs * a.weight;
  f.logits.rowwise() += a.bias.transpose();
  f.logits *= a.temperature;
  return f;
}

Eigen::MatrixXd score(const HeadAssembly& assembly, const Eigen::MatrixXd& features) {
  return forward(assembly, features).logits;
}

std::vector<std::uint32_t> argmax_rows(const Eigen::MatrixXd& logits) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

ZeroShotResult zero_shot_predict(const EmbeddingArchive& archive, const KnowledgeSelection& selection,
                                 double temperature) {
  HeadOptions options;
  options.language_temperature = temperature;
  const auto head = init_head(archive, {InitKind::LanguageSeparate, 0, selection}, options);
  ZeroShotResult out;
  out.logits = score(head, to_double(archive.test_features));
  out.predictions = argmax_rows(out.logits);
  return out;
}

}  // namespace embeval
