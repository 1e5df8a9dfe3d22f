#include "embeval/lexicon.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace embeval {

namespace {

std::vector<std::uint32_t> filter(const EmbeddingArchive& archive, std::size_t class_id,
                                  KnowledgeSource source, int gpt3_count) {
  std::vector<std::uint32_t> out;
  for (const auto& v : archive.manifest.variants) {
    if (v.class_id != class_id || v.source != source) continue;
    if (source == KnowledgeSource::Gpt3 && v.knowledge_index >= static_cast<std::uint32_t>(gpt3_count)) {
      continue;
    }
    out.push_back(v.variant_id);
  }
  return out;
}

int parse_count(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad knowledge count in '" + std::string(whole) + "'");
  }
  return value;
}

}  // namespace

void check_selection(const KnowledgeSelection& selection) {
  if (selection.gpt3_count < 1 || selection.gpt3_count > kMaxGpt3PerTemplate) {
    throw std::invalid_argument("gpt3_count must be in [1, 5], got " +
                                std::to_string(selection.gpt3_count));
  }
}

KnowledgeSelection parse_knowledge(std::string_view text) {
  KnowledgeSelection sel;
  std::string_view head = text;
  std::string_view count;
  if (const auto colon = text.find(':'); colon != std::string_view::npos) {
    head = text.substr(0, colon);
    count = text.substr(colon + 1);
  }
  if (head == "none") {
    sel.source_set = SourceSet::None;
  } else if (head == "wn_path") {
    sel.source_set = SourceSet::WnPath;
  } else if (head == "wn_def") {
    sel.source_set = SourceSet::WnDef;
  } else if (head == "wiki_def") {
    sel.source_set = SourceSet::WikiDef;
  } else if (head == "gpt3") {
    sel.source_set = SourceSet::Gpt3;
  } else if (head == "wiki+gpt3") {
    sel.source_set = SourceSet::WikiGpt3;
  } else {
    throw std::invalid_argument("unknown knowledge selection '" + std::string(text) + "'");
  }
  const bool takes_count = sel.source_set == SourceSet::Gpt3 || sel.source_set == SourceSet::WikiGpt3;
  if (!count.empty() || text.ends_with(':')) {
    if (!takes_count) {
      throw std::invalid_argument("knowledge selection '" + std::string(head) + "' takes no count");
    }
    sel.gpt3_count = parse_count(count, text);
  }
  check_selection(sel);
  return sel;
}

std::string to_string(const KnowledgeSelection& sel) {
  switch (sel.source_set) {
    case SourceSet::None: return "none";
    case SourceSet::WnPath: return "wn_path";
    case SourceSet::WnDef: return "wn_def";
    case SourceSet::WikiDef: return "wiki_def";
    case SourceSet::Gpt3: return "gpt3:" + std::to_string(sel.gpt3_count);
    case SourceSet::WikiGpt3: return "wiki+gpt3:" + std::to_string(sel.gpt3_count);
  }
  return "?";
}

std::vector<std::uint32_t> select_variants(const EmbeddingArchive& archive,
                                           const KnowledgeSelection& selection,
                                           std::size_t class_id) {
  check_selection(selection);
  if (class_id >= archive.manifest.num_classes) {
    throw std::out_of_range("class id " + std::to_string(class_id) + " >= K");
  }
  const int count = selection.gpt3_count;
  auto plain = filter(archive, class_id, KnowledgeSource::None, count);

  std::vector<std::uint32_t> chosen;
  switch (selection.source_set) {
    case SourceSet::None:
      break;
    case SourceSet::WnPath:
      chosen = filter(archive, class_id, KnowledgeSource::WnPath, count);
      break;
    case SourceSet::WnDef:
      chosen = filter(archive, class_id, KnowledgeSource::WnDef, count);
      break;
    case SourceSet::WikiDef:
      chosen = filter(archive, class_id, KnowledgeSource::WikiDef, count);
      if (chosen.empty() && selection.fallback == Fallback::Gpt3ThenPlain) {
        chosen = filter(archive, class_id, KnowledgeSource::Gpt3, count);
      }
      break;
    case SourceSet::Gpt3:
      chosen = filter(archive, class_id, KnowledgeSource::Gpt3, count);
      break;
    case SourceSet::WikiGpt3: {
      chosen = filter(archive, class_id, KnowledgeSource::WikiDef, count);
      const auto gpt3 = filter(archive, class_id, KnowledgeSource::Gpt3, count);
      chosen.insert(chosen.end(), gpt3.begin(), gpt3.end());
      std::sort(chosen.begin(), chosen.end());
      break;
    }
  }
  if (chosen.empty()) chosen = std::move(plain);
  if (chosen.empty()) {
    throw std::runtime_error("class " + std::to_string(class_id) + " has no text variants");
  }
  return chosen;
}

ClassMatrix compose_class_matrix(const EmbeddingArchive& archive,
                                 const KnowledgeSelection& selection) {
  const auto K = archive.manifest.num_classes;
  const auto P = static_cast<Eigen::Index>(archive.manifest.joint_dim);
  ClassMatrix out;
  out.columns.resize(P, static_cast<Eigen::Index>(K));
  out.provenance.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto ids = select_variants(archive, selection, k);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(P);
    for (auto id : ids) {
      const Eigen::VectorXd row = archive.text_embeddings.row(id).transpose().cast<double>();
      const double norm = row.norm();
      if (!(norm > 0.0)) throw std::runtime_error("text variant " + std::to_string(id) + " is zero");
      sum += row / norm;
    }
    const Eigen::VectorXd mean = sum / static_cast<double>(ids.size());
    const double norm = mean.norm();
    if (!(norm > 0.0)) {
      throw std::runtime_error("selected variants of class " + std::to_string(k) + " cancel out");
    }
    out.columns.col(static_cast<Eigen::Index>(k)) = mean / norm;
    out.provenance.push_back(std::move(ids));
  }
  return out;
}

}  // namespace embeval
