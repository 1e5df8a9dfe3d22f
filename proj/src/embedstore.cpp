#include "embeval/embedstore.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "embeval/random.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive tensors are little-endian; big-endian hosts need byte swapping");

namespace embeval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kTrainFeatures = "H_train.f32";
constexpr const char* kTestFeatures = "H_test.f32";
constexpr const char* kProjection = "P_v.f32";
constexpr const char* kText = "T.f32";

std::string label_file(const char* split, bool multilabel) {
  return std::string("labels_") + split + (multilabel ? ".multi.u8" : ".u32");
}

template <typename Enum, std::size_t N>
Enum parse_named(std::string_view text, const std::array<std::pair<Enum, std::string_view>, N>& table,
                 const char* what) {
  for (const auto& [value, name] : table) {
    if (name == text) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

template <typename Enum, std::size_t N>
std::string_view name_of(Enum value, const std::array<std::pair<Enum, std::string_view>, N>& table) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

constexpr std::array<std::pair<TaskKind, std::string_view>, 3> kTaskNames{{
    {TaskKind::SingleLabel, "single-label"},
    {TaskKind::Multilabel, "multilabel"},
    {TaskKind::Binary, "binary"},
}};
constexpr std::array<std::pair<MetricKind, std::string_view>, 4> kMetricNames{{
    {MetricKind::Accuracy, "accuracy"},
    {MetricKind::MeanPerClass, "mean-per-class"},
    {MetricKind::RocAuc, "roc-auc"},
    {MetricKind::Map11pt, "map-11pt"},
}};
constexpr std::array<std::pair<KnowledgeSource, std::string_view>, 5> kSourceNames{{
    {KnowledgeSource::None, "none"},
    {KnowledgeSource::WnPath, "wn_path"},
    {KnowledgeSource::WnDef, "wn_def"},
    {KnowledgeSource::WikiDef, "wiki_def"},
    {KnowledgeSource::Gpt3, "gpt3"},
}};

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ArchiveError(ArchiveErrorKind::MissingFile, "missing file " + path.filename().string());
  }
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError(ArchiveErrorKind::Io, "cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw ArchiveError(ArchiveErrorKind::Io, "short write to " + path.string());
}

struct TensorBlob {
  std::string name;
  std::vector<std::size_t> shape;
  const void* data;
  std::size_t bytes;
};

json manifest_to_json(const ArchiveManifest& m) {
  json variants = json::array();
  for (const auto& v : m.variants) {
    variants.push_back({{"variant_id", v.variant_id},
                        {"class_id", v.class_id},
                        {"template_id", v.template_id},
                        {"source", std::string(to_string(v.source))},
                        {"knowledge_index", v.knowledge_index}});
  }
  json tensors = json::object();
  for (const auto& [name, info] : m.tensors) {
    tensors[name] = {{"shape", info.shape}, {"sha256", info.sha256}};
  }
  return {{"format_version", m.format_version},
          {"dataset_name", m.dataset_name},
          {"task_kind", std::string(to_string(m.task_kind))},
          {"metric_kind", std::string(to_string(m.metric_kind))},
          {"D", m.feature_dim},
          {"P", m.joint_dim},
          {"N_train", m.n_train},
          {"N_test", m.n_test},
          {"K", m.num_classes},
          {"class_names", m.class_names},
          {"variant_table", variants},
          {"tensors", tensors}};
}

ArchiveManifest manifest_from_json(const json& j) {
  ArchiveManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kArchiveFormatVersion) {
      throw ArchiveError(ArchiveErrorKind::BadManifest,
                         "unsupported format_version " + std::to_string(m.format_version));
    }
    m.dataset_name = j.at("dataset_name").get<std::string>();
    m.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
    m.metric_kind = parse_metric_kind(j.at("metric_kind").get<std::string>());
    m.feature_dim = j.at("D").get<std::size_t>();
    m.joint_dim = j.at("P").get<std::size_t>();
    m.n_train = j.at("N_train").get<std::size_t>();
    m.n_test = j.at("N_test").get<std::size_t>();
    m.num_classes = j.at("K").get<std::size_t>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& v : j.at("variant_table")) {
      m.variants.push_back({v.at("variant_id").get<std::uint32_t>(),
                            v.at("class_id").get<std::uint32_t>(),
                            v.at("template_id").get<std::uint32_t>(),
                            parse_knowledge_source(v.at("source").get<std::string>()),
                            v.at("knowledge_index").get<std::uint32_t>()});
    }
    for (const auto& [name, info] : j.at("tensors").items()) {
      m.tensors[name] = {info.at("shape").get<std::vector<std::size_t>>(),
                         info.at("sha256").get<std::string>()};
    }
  } catch (const ArchiveError&) {
    throw;
  } catch (const std::exception& e) {
    throw ArchiveError(ArchiveErrorKind::BadManifest, std::string("manifest.json: ") + e.what());
  }
  return m;
}

// Reads one tensor file, checking its size against the shape recorded in the
// manifest and the shape implied by the manifest counts.
std::vector<char> read_tensor(const fs::path& dir, const ArchiveManifest& m, const std::string& name,
                              const std::vector<std::size_t>& expected_shape, std::size_t elem_size) {
  const auto it = m.tensors.find(name);
  if (it == m.tensors.end()) {
    throw ArchiveError(ArchiveErrorKind::BadManifest, "manifest lists no tensor " + name);
  }
  if (it->second.shape != expected_shape) {
    throw ArchiveError(ArchiveErrorKind::ShapeMismatch,
                       name + ": manifest shape disagrees with manifest counts");
  }
  auto bytes = read_file(dir / name);
  std::size_t expected = elem_size;
  for (auto d : expected_shape) expected *= d;
  if (bytes.size() != expected) {
    throw ArchiveError(ArchiveErrorKind::ShapeMismatch,
                       name + ": expected " + std::to_string(expected) + " bytes, found " +
                           std::to_string(bytes.size()));
  }
  if (sha256_hex(bytes.data(), bytes.size()) != it->second.sha256) {
    throw ArchiveError(ArchiveErrorKind::ChecksumMismatch, name + ": sha256 mismatch");
  }
  return bytes;
}

MatrixF matrix_from_bytes(const std::vector<char>& bytes, std::size_t rows, std::size_t cols) {
  MatrixF out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  if (!bytes.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

bool matrices_equal(const MatrixF& a, const MatrixF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
}

}  // namespace

std::string_view to_string(TaskKind kind) { return name_of(kind, kTaskNames); }
std::string_view to_string(MetricKind kind) { return name_of(kind, kMetricNames); }
std::string_view to_string(KnowledgeSource source) { return name_of(source, kSourceNames); }
TaskKind parse_task_kind(std::string_view text) { return parse_named(text, kTaskNames, "task kind"); }
MetricKind parse_metric_kind(std::string_view text) {
  return parse_named(text, kMetricNames, "metric kind");
}
KnowledgeSource parse_knowledge_source(std::string_view text) {
  return parse_named(text, kSourceNames, "knowledge source");
}

std::string_view to_string(ArchiveErrorKind kind) {
  switch (kind) {
    case ArchiveErrorKind::MissingFile: return "missing-file";
    case ArchiveErrorKind::ShapeMismatch: return "shape-mismatch";
    case ArchiveErrorKind::ChecksumMismatch: return "checksum-mismatch";
    case ArchiveErrorKind::NonUnitText: return "non-unit-text";
    case ArchiveErrorKind::BadManifest: return "bad-manifest";
    case ArchiveErrorKind::InvalidArchive: return "invalid-archive";
    case ArchiveErrorKind::Io: return "io";
  }
  return "?";
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Dimensions: return "dimensions";
    case ViolationKind::ClassNames: return "class-names";
    case ViolationKind::VariantIds: return "variant-ids";
    case ViolationKind::VariantClass: return "variant-class";
    case ViolationKind::MissingPlainVariant: return "missing-plain-variant";
    case ViolationKind::KnowledgeIndex: return "knowledge-index";
    case ViolationKind::MetricTaskMismatch: return "metric-task-mismatch";
    case ViolationKind::Shape: return "shape";
    case ViolationKind::LabelRange: return "label-range";
    case ViolationKind::NonUnitText: return "non-unit-text";
    case ViolationKind::NonFinite: return "non-finite";
  }
  return "?";
}

ArchiveError::ArchiveError(ArchiveErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

bool ArchiveManifest::operator==(const ArchiveManifest& o) const {
  return format_version == o.format_version && dataset_name == o.dataset_name &&
         task_kind == o.task_kind && metric_kind == o.metric_kind && feature_dim == o.feature_dim &&
         joint_dim == o.joint_dim && n_train == o.n_train && n_test == o.n_test &&
         num_classes == o.num_classes && class_names == o.class_names && variants == o.variants;
}

LabelSet LabelSet::subset(const std::vector<std::size_t>& indices) const {
  LabelSet out;
  out.multilabel = multilabel;
  if (multilabel) {
    out.membership.resize(static_cast<Eigen::Index>(indices.size()), membership.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out.membership.row(static_cast<Eigen::Index>(i)) =
          membership.row(static_cast<Eigen::Index>(indices[i]));
    }
  } else {
    out.classes.reserve(indices.size());
    for (auto i : indices) out.classes.push_back(classes.at(i));
  }
  return out;
}

bool LabelSet::operator==(const LabelSet& o) const {
  if (multilabel != o.multilabel) return false;
  if (multilabel) {
    return membership.rows() == o.membership.rows() && membership.cols() == o.membership.cols() &&
           membership == o.membership;
  }
  return classes == o.classes;
}

bool EmbeddingArchive::operator==(const EmbeddingArchive& o) const {
  return manifest == o.manifest && matrices_equal(train_features, o.train_features) &&
         matrices_equal(test_features, o.test_features) && train_labels == o.train_labels &&
         test_labels == o.test_labels && matrices_equal(image_projection, o.image_projection) &&
         matrices_equal(text_embeddings, o.text_embeddings);
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data, size, digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 digest failed");
  }
  std::ostringstream hex;
  hex << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < length; ++i) hex << std::setw(2) << static_cast<int>(digest[i]);
  return hex.str();
}

std::vector<Violation> validate_archive(const EmbeddingArchive& a) {
  std::vector<Violation> out;
  const auto& m = a.manifest;
  const auto add = [&](ViolationKind kind, std::string message,
                       std::optional<std::size_t> index = std::nullopt) {
    out.push_back({kind, std::move(message), index});
  };
  const auto D = m.feature_dim;
  const auto P = m.joint_dim;
  const auto K = m.num_classes;

  if (P < 1 || D < P) add(ViolationKind::Dimensions, "require D >= P >= 1");
  if (K < 2) add(ViolationKind::Dimensions, "require K >= 2");
  if (m.n_test < 1) add(ViolationKind::Dimensions, "require N_test >= 1");
  if (m.class_names.size() != K) {
    add(ViolationKind::ClassNames, "class_names has " + std::to_string(m.class_names.size()) +
                                       " entries, expected K=" + std::to_string(K));
  }

  // Variant table.
  std::set<std::uint32_t> ids;
  for (const auto& v : m.variants) ids.insert(v.variant_id);
  const bool dense = ids.size() == m.variants.size() &&
                     (ids.empty() || *ids.rbegin() == m.variants.size() - 1);
  if (!dense) add(ViolationKind::VariantIds, "variant_id values are not dense and unique");

  std::vector<bool> has_plain(K, false);
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::set<std::uint32_t>> gpt3_seen;
  for (const auto& v : m.variants) {
    if (v.class_id >= K) {
      add(ViolationKind::VariantClass,
          "variant " + std::to_string(v.variant_id) + " references class " +
              std::to_string(v.class_id) + " >= K",
          v.variant_id);
      continue;
    }
    if (v.source == KnowledgeSource::None) has_plain[v.class_id] = true;
    if (v.source == KnowledgeSource::Gpt3) {
      auto& seen = gpt3_seen[{v.class_id, v.template_id}];
      if (v.knowledge_index >= static_cast<std::uint32_t>(kMaxGpt3PerTemplate) ||
          !seen.insert(v.knowledge_index).second) {
        add(ViolationKind::KnowledgeIndex,
            "variant " + std::to_string(v.variant_id) + " has invalid or repeated gpt3 index " +
                std::to_string(v.knowledge_index),
            v.variant_id);
      }
    } else if (v.knowledge_index != 0) {
      add(ViolationKind::KnowledgeIndex,
          "variant " + std::to_string(v.variant_id) + " is not gpt3 but has knowledge_index " +
              std::to_string(v.knowledge_index),
          v.variant_id);
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (!has_plain[k]) {
      add(ViolationKind::MissingPlainVariant,
          "class " + std::to_string(k) + " has no variant with source none", k);
    }
  }

  // Metric / task consistency.
  if (m.metric_kind == MetricKind::RocAuc && m.task_kind != TaskKind::Binary) {
    add(ViolationKind::MetricTaskMismatch, "roc-auc requires a binary task");
  }
  if (m.task_kind == TaskKind::Binary && K != 2) {
    add(ViolationKind::MetricTaskMismatch, "binary task requires K=2, got K=" + std::to_string(K));
  }
  if ((m.metric_kind == MetricKind::Map11pt) != (m.task_kind == TaskKind::Multilabel)) {
    add(ViolationKind::MetricTaskMismatch, "map-11pt and multilabel tasks go together");
  }

  // Shapes.
  const auto check_shape = [&](const char* name, const auto& mat, std::size_t rows, std::size_t cols) {
    if (static_cast<std::size_t>(mat.rows()) != rows || static_cast<std::size_t>(mat.cols()) != cols) {
      add(ViolationKind::Shape, std::string(name) + " is " + std::to_string(mat.rows()) + "x" +
                                    std::to_string(mat.cols()) + ", expected " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
      return false;
    }
    return true;
  };
  check_shape(kTrainFeatures, a.train_features, m.n_train, D);
  check_shape(kTestFeatures, a.test_features, m.n_test, D);
  check_shape(kProjection, a.image_projection, P, D);
  const bool text_ok = check_shape(kText, a.text_embeddings, m.variants.size(), P);

  const bool multilabel = m.task_kind == TaskKind::Multilabel;
  const auto check_labels = [&](const char* split, const LabelSet& labels, std::size_t n) {
    if (labels.multilabel != multilabel) {
      add(ViolationKind::Shape, std::string(split) + " labels have the wrong layout for the task");
      return;
    }
    if (labels.size() != n) {
      add(ViolationKind::Shape, std::string(split) + " has " + std::to_string(labels.size()) +
                                    " labels, expected " + std::to_string(n));
      return;
    }
    if (multilabel) {
      if (static_cast<std::size_t>(labels.membership.cols()) != K) {
        add(ViolationKind::Shape, std::string(split) + " membership matrix must have K columns");
        return;
      }
      for (Eigen::Index i = 0; i < labels.membership.size(); ++i) {
        if (labels.membership.data()[i] > 1) {
          add(ViolationKind::LabelRange, std::string(split) + " membership entry is not 0/1",
              static_cast<std::size_t>(i / labels.membership.cols()));
          return;
        }
      }
    } else {
      for (std::size_t i = 0; i < labels.classes.size(); ++i) {
        if (labels.classes[i] >= K) {
          add(ViolationKind::LabelRange,
              std::string(split) + " sample " + std::to_string(i) + " has label " +
                  std::to_string(labels.classes[i]) + " >= K",
              i);
        }
      }
    }
  };
  check_labels("train", a.train_labels, m.n_train);
  check_labels("test", a.test_labels, m.n_test);

  const auto check_finite = [&](const char* name, const MatrixF& mat) {
    if (!mat.allFinite()) add(ViolationKind::NonFinite, std::string(name) + " has non-finite values");
  };
  check_finite(kTrainFeatures, a.train_features);
  check_finite(kTestFeatures, a.test_features);
  check_finite(kProjection, a.image_projection);
  check_finite(kText, a.text_embeddings);

  if (text_ok) {
    for (Eigen::Index r = 0; r < a.text_embeddings.rows(); ++r) {
      const double norm = a.text_embeddings.row(r).cast<double>().norm();
      if (!(std::abs(norm - 1.0) <= kTextNormTolerance)) {
        std::ostringstream msg;
        msg << "T row " << r << " has norm " << norm;
        add(ViolationKind::NonUnitText, msg.str(), static_cast<std::size_t>(r));
      }
    }
  }
  return out;
}

void save_archive(const EmbeddingArchive& a, const fs::path& dir) {
  fs::create_directories(dir);
  const bool multilabel = a.train_labels.multilabel;
  const auto& m = a.manifest;

  std::vector<std::uint32_t> train_u32(a.train_labels.classes.begin(), a.train_labels.classes.end());
  std::vector<std::uint32_t> test_u32(a.test_labels.classes.begin(), a.test_labels.classes.end());

  std::vector<TensorBlob> blobs{
      {kTrainFeatures, {m.n_train, m.feature_dim}, a.train_features.data(),
       sizeof(float) * static_cast<std::size_t>(a.train_features.size())},
      {kTestFeatures, {m.n_test, m.feature_dim}, a.test_features.data(),
       sizeof(float) * static_cast<std::size_t>(a.test_features.size())},
      {kProjection, {m.joint_dim, m.feature_dim}, a.image_projection.data(),
       sizeof(float) * static_cast<std::size_t>(a.image_projection.size())},
      {kText, {m.variants.size(), m.joint_dim}, a.text_embeddings.data(),
       sizeof(float) * static_cast<std::size_t>(a.text_embeddings.size())},
  };
  if (multilabel) {
    blobs.push_back({label_file("train", true), {m.n_train, m.num_classes},
                     a.train_labels.membership.data(),
                     static_cast<std::size_t>(a.train_labels.membership.size())});
    blobs.push_back({label_file("test", true), {m.n_test, m.num_classes},
                     a.test_labels.membership.data(),
                     static_cast<std::size_t>(a.test_labels.membership.size())});
  } else {
    blobs.push_back({label_file("train", false), {m.n_train}, train_u32.data(),
                     sizeof(std::uint32_t) * train_u32.size()});
    blobs.push_back({label_file("test", false), {m.n_test}, test_u32.data(),
                     sizeof(std::uint32_t) * test_u32.size()});
  }

  ArchiveManifest manifest = m;
  manifest.tensors.clear();
  for (const auto& blob : blobs) {
    std::size_t expected = 1;
    for (auto d : blob.shape) expected *= d;
    const std::size_t elem = blob.name.ends_with(".u8") ? 1 : 4;
    if (expected * elem != blob.bytes) {
      throw ArchiveError(ArchiveErrorKind::ShapeMismatch,
                         blob.name + ": in-memory size disagrees with manifest counts");
    }
    write_file(dir / blob.name, blob.data, blob.bytes);
    manifest.tensors[blob.name] = {blob.shape, sha256_hex(blob.data, blob.bytes)};
  }
  const std::string text = manifest_to_json(manifest).dump(2) + "\n";
  write_file(dir / kManifestFile, text.data(), text.size());
}

EmbeddingArchive load_archive(const fs::path& dir) {
  const auto manifest_bytes = read_file(dir / kManifestFile);
  json j;
  try {
    j = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw ArchiveError(ArchiveErrorKind::BadManifest, std::string("manifest.json: ") + e.what());
  }

  EmbeddingArchive a;
  a.manifest = manifest_from_json(j);
  const auto& m = a.manifest;
  const bool multilabel = m.task_kind == TaskKind::Multilabel;

  const auto read_f32 = [&](const char* name, std::size_t rows, std::size_t cols) {
    return matrix_from_bytes(read_tensor(dir, m, name, {rows, cols}, sizeof(float)), rows, cols);
  };
  a.train_features = read_f32(kTrainFeatures, m.n_train, m.feature_dim);
  a.test_features = read_f32(kTestFeatures, m.n_test, m.feature_dim);
  a.image_projection = read_f32(kProjection, m.joint_dim, m.feature_dim);
  a.text_embeddings = read_f32(kText, m.variants.size(), m.joint_dim);

  const auto read_labels = [&](const char* split, std::size_t n) {
    LabelSet labels;
    labels.multilabel = multilabel;
    const auto name = label_file(split, multilabel);
    if (multilabel) {
      const auto bytes = read_tensor(dir, m, name, {n, m.num_classes}, 1);
      labels.membership.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m.num_classes));
      if (!bytes.empty()) std::memcpy(labels.membership.data(), bytes.data(), bytes.size());
    } else {
      const auto bytes = read_tensor(dir, m, name, {n}, sizeof(std::uint32_t));
      labels.classes.resize(n);
      if (!bytes.empty()) std::memcpy(labels.classes.data(), bytes.data(), bytes.size());
    }
    return labels;
  };
  a.train_labels = read_labels("train", m.n_train);
  a.test_labels = read_labels("test", m.n_test);

  const auto violations = validate_archive(a);
  if (!violations.empty()) {
    std::string rows;
    std::string other;
    for (const auto& v : violations) {
      if (v.kind == ViolationKind::NonUnitText) {
        rows += (rows.empty() ? "" : ", ") + std::to_string(*v.index);
      } else {
        other += (other.empty() ? "" : "; ") + v.message;
      }
    }
    if (!other.empty()) throw ArchiveError(ArchiveErrorKind::InvalidArchive, other);
    throw ArchiveError(ArchiveErrorKind::NonUnitText, "T rows not unit-norm: " + rows);
  }
  return a;
}

SynthSpec small_profile() { return SynthSpec{}; }

SynthSpec large_profile() {
  SynthSpec spec;
  spec.feature_dim = 768;
  spec.joint_dim = 512;
  return spec;
}

EmbeddingArchive synthesize_archive(const SynthSpec& spec) {
  const auto K = spec.num_classes;
  const auto D = spec.feature_dim;
  const auto P = spec.joint_dim;
  if (P > D) throw std::invalid_argument("synthesize_archive: P must not exceed D");
  if (K > P) throw std::invalid_argument("synthesize_archive: K must not exceed P");
  if (K < 2) throw std::invalid_argument("synthesize_archive: K must be at least 2");
  if (!(spec.sigma >= 0.0)) throw std::invalid_argument("synthesize_archive: sigma must be >= 0");
  if (spec.task_kind == TaskKind::Binary && K != 2) {
    throw std::invalid_argument("synthesize_archive: binary task requires K=2");
  }
  if (spec.templates < 1) throw std::invalid_argument("synthesize_archive: need >= 1 template");
  const auto iK = static_cast<Eigen::Index>(K);
  const auto iD = static_cast<Eigen::Index>(D);
  const auto iP = static_cast<Eigen::Index>(P);

  Rng rng(derive_seed(spec.seed, 0x5e7));
  const auto gaussian = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd g(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) g(r, c) = rng.normal();
    return g;
  };

  // Orthonormal class directions, one per column.
  const Eigen::MatrixXd seed_dirs = gaussian(iP, iK);
  Eigen::MatrixXd directions = seed_dirs.householderQr().householderQ() * Eigen::MatrixXd::Identity(iP, iK);

  // Projection rounded to storage precision first so the pre-images are
  // exact for the stored matrix.
  const MatrixF projection_f = (gaussian(iP, iD) / std::sqrt(static_cast<double>(D))).cast<float>();
  const Eigen::MatrixXd projection = projection_f.cast<double>();
  const Eigen::MatrixXd gram = projection * projection.transpose();
  const Eigen::MatrixXd right_inverse = projection.transpose() * gram.ldlt().solve(Eigen::MatrixXd::Identity(iP, iP));
  const Eigen::MatrixXd null_projector =
      Eigen::MatrixXd::Identity(iD, iD) - right_inverse * projection;

  Eigen::MatrixXd shifts = Eigen::MatrixXd::Zero(iP, iK);
  if (spec.class_shift > 0.0) {
    shifts = gaussian(iP, iK);
    for (Eigen::Index k = 0; k < iK; ++k) shifts.col(k) *= spec.class_shift / shifts.col(k).norm();
  }
  Eigen::MatrixXd null_dirs = Eigen::MatrixXd::Zero(iD, iK);
  if (spec.null_signal > 0.0 && D > P) {
    null_dirs = null_projector * gaussian(iD, iK);
    for (Eigen::Index k = 0; k < iK; ++k) null_dirs.col(k) *= spec.null_signal / null_dirs.col(k).norm();
  }

  EmbeddingArchive a;
  auto& m = a.manifest;
  m.dataset_name = spec.dataset_name;
  m.task_kind = spec.task_kind;
  m.metric_kind = spec.metric_kind;
  if (spec.task_kind == TaskKind::Multilabel) m.metric_kind = MetricKind::Map11pt;
  if (spec.task_kind == TaskKind::Binary) m.metric_kind = MetricKind::RocAuc;
  m.feature_dim = D;
  m.joint_dim = P;
  m.num_classes = K;
  for (std::size_t k = 0; k < K; ++k) {
    std::ostringstream name;
    name << "class_" << std::setw(3) << std::setfill('0') << k;
    m.class_names.push_back(name.str());
  }

  // Text variants: plain prompts are the exact class directions.
  std::vector<Eigen::VectorXd> rows;
  const auto add_variant = [&](std::size_t k, std::size_t t, KnowledgeSource source,
                               std::uint32_t index, Eigen::VectorXd v) {
    m.variants.push_back({static_cast<std::uint32_t>(m.variants.size()), static_cast<std::uint32_t>(k),
                          static_cast<std::uint32_t>(t), source, index});
    rows.push_back(v.normalized());
  };
  for (std::size_t k = 0; k < K; ++k) {
    const Eigen::VectorXd dir = directions.col(static_cast<Eigen::Index>(k));
    for (std::size_t t = 0; t < spec.templates; ++t) add_variant(k, t, KnowledgeSource::None, 0, dir);
    if (spec.knowledge_variants) {
      add_variant(k, 0, KnowledgeSource::WikiDef, 0, dir + spec.knowledge_noise * gaussian(iP, 1).col(0));
      for (std::uint32_t g = 0; g < kMaxGpt3PerTemplate; ++g) {
        add_variant(k, 0, KnowledgeSource::Gpt3, g, dir + spec.knowledge_noise * gaussian(iP, 1).col(0));
      }
    }
  }
  a.text_embeddings.resize(static_cast<Eigen::Index>(rows.size()), iP);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    a.text_embeddings.row(static_cast<Eigen::Index>(r)) = rows[r].transpose().cast<float>();
  }
  a.image_projection = projection_f;

  const bool multilabel = spec.task_kind == TaskKind::Multilabel;
  const auto make_split = [&](std::size_t per_class, MatrixF& features, LabelSet& labels) {
    const auto n = per_class * K;
    features.resize(static_cast<Eigen::Index>(n), iD);
    labels.multilabel = multilabel;
    if (multilabel) labels.membership = MatrixU8::Zero(static_cast<Eigen::Index>(n), iK);
    std::size_t row = 0;
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < per_class; ++i, ++row) {
        const auto ik = static_cast<Eigen::Index>(k);
        Eigen::VectorXd target = directions.col(ik) + shifts.col(ik);
        Eigen::VectorXd null_part = null_dirs.col(ik);
        if (multilabel) {
          labels.membership(static_cast<Eigen::Index>(row), ik) = 1;
          for (Eigen::Index j = 0; j < iK; ++j) {
            if (j != ik && rng.uniform() < 0.15) {
              labels.membership(static_cast<Eigen::Index>(row), j) = 1;
              target += directions.col(j) + shifts.col(j);
              null_part += null_dirs.col(j);
            }
          }
        } else {
          labels.classes.push_back(static_cast<std::uint32_t>(k));
        }
        Eigen::VectorXd joint = target;
        if (spec.sigma > 0.0) joint += spec.sigma * gaussian(iP, 1).col(0);
        joint.normalize();
        Eigen::VectorXd backbone = right_inverse * joint;
        if (spec.null_signal > 0.0 && D > P) {
          backbone += null_part + null_projector * (spec.sigma * gaussian(iD, 1).col(0));
        }
        features.row(static_cast<Eigen::Index>(row)) = backbone.transpose().cast<float>();
      }
    }
    return n;
  };
  m.n_train = make_split(spec.samples_per_class, a.train_features, a.train_labels);
  m.n_test = make_split(spec.test_samples_per_class, a.test_features, a.test_labels);
  return a;
}

}  // namespace embeval
