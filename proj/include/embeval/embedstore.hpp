#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace embeval {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixU8 = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class TaskKind { SingleLabel, Multilabel, Binary };
enum class MetricKind { Accuracy, MeanPerClass, RocAuc, Map11pt };
enum class KnowledgeSource { None, WnPath, WnDef, WikiDef, Gpt3 };

std::string_view to_string(TaskKind kind);
std::string_view to_string(MetricKind kind);
std::string_view to_string(KnowledgeSource source);
TaskKind parse_task_kind(std::string_view text);
MetricKind parse_metric_kind(std::string_view text);
KnowledgeSource parse_knowledge_source(std::string_view text);

inline constexpr int kArchiveFormatVersion = 1;
inline constexpr int kMaxGpt3PerTemplate = 5;
inline constexpr double kTextNormTolerance = 1e-4;

struct VariantDescriptor {
  std::uint32_t variant_id = 0;
  std::uint32_t class_id = 0;
  std::uint32_t template_id = 0;
  KnowledgeSource source = KnowledgeSource::None;
  std::uint32_t knowledge_index = 0;

  bool operator==(const VariantDescriptor&) const = default;
};

struct TensorInfo {
  std::vector<std::size_t> shape;
  std::string sha256;

  bool operator==(const TensorInfo&) const = default;
};

struct ArchiveManifest {
  int format_version = kArchiveFormatVersion;
  std::string dataset_name;
  TaskKind task_kind = TaskKind::SingleLabel;
  MetricKind metric_kind = MetricKind::Accuracy;
  std::size_t feature_dim = 0;  // D
  std::size_t joint_dim = 0;    // P
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t num_classes = 0;  // K
  std::vector<std::string> class_names;
  std::vector<VariantDescriptor> variants;
  // Keyed by tensor file name. Describes the on-disk form only and is
  // refreshed by save_archive/load_archive, so it is excluded from equality.
  std::map<std::string, TensorInfo> tensors;

  bool operator==(const ArchiveManifest& other) const;
};

/// Per-sample labels: class indices for single-label and binary tasks, an
/// N x K 0/1 membership matrix for multilabel tasks.
struct LabelSet {
  bool multilabel = false;
  std::vector<std::uint32_t> classes;
  MatrixU8 membership;

  std::size_t size() const {
    return multilabel ? static_cast<std::size_t>(membership.rows()) : classes.size();
  }
  LabelSet subset(const std::vector<std::size_t>& indices) const;

  bool operator==(const LabelSet& other) const;
};

struct EmbeddingArchive {
  ArchiveManifest manifest;
  MatrixF train_features;    // N_train x D backbone features
  MatrixF test_features;     // N_test x D
  LabelSet train_labels;
  LabelSet test_labels;
  MatrixF image_projection;  // P x D
  MatrixF text_embeddings;   // M x P, unit-norm rows

  bool operator==(const EmbeddingArchive& other) const;
};

enum class ArchiveErrorKind {
  MissingFile,
  ShapeMismatch,
  ChecksumMismatch,
  NonUnitText,
  BadManifest,
  InvalidArchive,
  Io,
};

std::string_view to_string(ArchiveErrorKind kind);

class ArchiveError : public std::runtime_error {
 public:
  ArchiveError(ArchiveErrorKind kind, const std::string& message);
  ArchiveErrorKind kind() const { return kind_; }

 private:
  ArchiveErrorKind kind_;
};

enum class ViolationKind {
  Dimensions,
  ClassNames,
  VariantIds,
  VariantClass,
  MissingPlainVariant,
  KnowledgeIndex,
  MetricTaskMismatch,
  Shape,
  LabelRange,
  NonUnitText,
  NonFinite,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string message;
  // Row, class or variant the violation is about, when there is one.
  std::optional<std::size_t> index;
};

/// Checks every archive invariant and returns all violations found.
std::vector<Violation> validate_archive(const EmbeddingArchive& archive);

/// Writes the archive directory (manifest.json plus raw tensor files).
/// Creates the directory if needed and overwrites existing files.
void save_archive(const EmbeddingArchive& archive, const std::filesystem::path& dir);

/// Reads and fully validates an archive directory.
/// Throws ArchiveError with a kind distinguishing missing files, shape
/// mismatches, checksum failures, non-unit text rows and other violations.
EmbeddingArchive load_archive(const std::filesystem::path& dir);

std::string sha256_hex(const void* data, std::size_t size);

struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 64;
  std::size_t joint_dim = 32;
  std::size_t samples_per_class = 20;
  std::size_t test_samples_per_class = 20;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  TaskKind task_kind = TaskKind::SingleLabel;
  MetricKind metric_kind = MetricKind::Accuracy;
  std::size_t templates = 1;
  // Adds one wiki_def and five gpt3 variants per class, each a perturbed
  // copy of the class direction.
  bool knowledge_variants = false;
  double knowledge_noise = 0.3;
  // Fixed per-class offset added to image embeddings before noise, so the
  // text directions are not the optimal class prototypes.
  double class_shift = 0.0;
  // Class signal carried by backbone features in the null space of the
  // projection; invisible to joint-space heads over frozen features.
  double null_signal = 0.0;
  std::string dataset_name = "synthetic";
};

/// Synthetic archive with orthonormal plain class directions. Image joint
/// embeddings are normalize(v_label + sigma * gaussian); backbone features
/// are pre-images under the stored projection. Deterministic in spec.seed.
EmbeddingArchive synthesize_archive(const SynthSpec& spec);

/// Desk-scale dimension profiles.
SynthSpec small_profile();  // D=64, P=32
SynthSpec large_profile();  // D=768, P=512

}  // namespace embeval
