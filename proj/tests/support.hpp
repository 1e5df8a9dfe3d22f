#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "embeval/embedstore.hpp"
#include "embeval/heads.hpp"
#include "embeval/optim.hpp"
#include "embeval/random.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    const auto tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
    path_ = std::filesystem::temp_directory_path() / ("embeval_test_" + tag);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline embeval::SynthSpec tiny_spec(std::uint64_t seed = 0, double sigma = 0.5) {
  embeval::SynthSpec s;
  s.num_classes = 4;
  s.feature_dim = 12;
  s.joint_dim = 8;
  s.samples_per_class = 6;
  s.test_samples_per_class = 5;
  s.sigma = sigma;
  s.seed = seed;
  return s;
}

// Minimal valid archive around hand-set text rows: P_v = [I | 0], one test
// sample per class lying on its first variant, no training samples.
inline embeval::EmbeddingArchive hand_archive(std::size_t D, const embeval::MatrixF& text,
                                              const std::vector<embeval::VariantDescriptor>& variants,
                                              std::size_t K) {
  using namespace embeval;
  EmbeddingArchive a;
  auto& m = a.manifest;
  const auto P = static_cast<std::size_t>(text.cols());
  m.dataset_name = "hand";
  m.feature_dim = D;
  m.joint_dim = P;
  m.num_classes = K;
  m.n_train = 0;
  m.n_test = K;
  for (std::size_t k = 0; k < K; ++k) m.class_names.push_back("c" + std::to_string(k));
  m.variants = variants;
  a.text_embeddings = text;
  a.image_projection = MatrixF::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(D));
  for (std::size_t p = 0; p < P; ++p) a.image_projection(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)) = 1.0f;
  a.train_features = MatrixF(0, static_cast<Eigen::Index>(D));
  a.test_features = MatrixF::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
  for (std::size_t k = 0; k < K; ++k) {
    for (const auto& v : variants) {
      if (v.class_id == k) {
        a.test_features.row(static_cast<Eigen::Index>(k)).head(static_cast<Eigen::Index>(P)) = text.row(v.variant_id);
        break;
      }
    }
    a.test_labels.classes.push_back(static_cast<std::uint32_t>(k));
  }
  return a;
}

inline embeval::VariantDescriptor variant(std::uint32_t id, std::uint32_t cls, embeval::KnowledgeSource src,
                                          std::uint32_t index = 0, std::uint32_t tmpl = 0) {
  return {id, cls, tmpl, src, index};
}

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, embeval::Rng& rng, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

using namespace embeval;

struct GradCase {
  HeadAssembly head;
  Eigen::MatrixXd features;
  LabelSet labels;
  LossKind loss = LossKind::SoftmaxCe;
};

// Random assembly over the given feature path. Adaptor configurations whose
// hidden pre-activations sit near the ReLU kink are redrawn so the central
// difference stays on one linear piece.
inline GradCase random_grad_case(embeval::FeaturePath path, embeval::Rng& rng) {
  for (;;) {
    GradCase c;
    const auto K = static_cast<Eigen::Index>(2 + rng.below(4));
    const auto D = static_cast<Eigen::Index>(5 + rng.below(5));
    const auto P = static_cast<Eigen::Index>(2 + rng.below(static_cast<std::uint64_t>(D - 2)));
    const auto n = static_cast<Eigen::Index>(1 + rng.below(6));
    auto& h = c.head;
    h.feature_path = path;
    h.space = (path == FeaturePath::TrainProjection || rng.below(2) == 0) ? HeadSpace::Joint : HeadSpace::Backbone;
    h.normalize_input = h.space == HeadSpace::Joint && rng.below(3) != 0;
    h.projection = gaussian(P, D, rng, 0.5);
    h.weight = gaussian(h.space == HeadSpace::Joint ? P : D, K, rng, 0.7);
    h.bias = gaussian(K, 1, rng, 0.3);
    h.temperature = 0.5 + 2.5 * rng.uniform();
    if (path == FeaturePath::TrainAdaptor) {
      const auto H = static_cast<Eigen::Index>(2 + rng.below(6));
      ResidualAdaptor ad;
      ad.hidden_weight = gaussian(H, D, rng, 0.6);
      ad.hidden_bias = gaussian(H, 1, rng, 0.3);
      ad.output_weight = gaussian(D, H, rng, 0.4);
      ad.output_bias = gaussian(D, 1, rng, 0.2);
      h.adaptor = ad;
    }
    check_assembly(h);
    c.features = gaussian(n, D, rng);

    c.loss = rng.below(2) == 0 ? LossKind::SoftmaxCe : LossKind::BinaryCe;
    if (c.loss == LossKind::BinaryCe && rng.below(2) == 0) {
      c.labels.multilabel = true;
      c.labels.membership.resize(n, K);
      for (Eigen::Index i = 0; i < c.labels.membership.size(); ++i) {
        c.labels.membership.data()[i] = static_cast<std::uint8_t>(rng.below(2));
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) c.labels.classes.push_back(static_cast<std::uint32_t>(rng.below(static_cast<std::uint64_t>(K))));
    }

    if (h.adaptor) {
      Eigen::MatrixXd pre = c.features * h.adaptor->hidden_weight.transpose();
      pre.rowwise() += h.adaptor->hidden_bias.transpose();
      if (pre.cwiseAbs().minCoeff() < 1e-2) continue;
    }
    return c;
  }
}

}  // namespace testing
