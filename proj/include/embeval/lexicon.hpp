#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "embeval/embedstore.hpp"

namespace embeval {

enum class SourceSet { None, WnPath, WnDef, WikiDef, Gpt3, WikiGpt3 };

enum class Fallback { Plain, Gpt3ThenPlain };

struct KnowledgeSelection {
  SourceSet source_set = SourceSet::None;
  int gpt3_count = kMaxGpt3PerTemplate;
  Fallback fallback = Fallback::Gpt3ThenPlain;

  bool operator==(const KnowledgeSelection&) const = default;
};

/// Parses `none|wn_path|wn_def|wiki_def|gpt3:K|wiki+gpt3:K`; a bare `gpt3`
/// or `wiki+gpt3` means all five records.
KnowledgeSelection parse_knowledge(std::string_view text);
std::string to_string(const KnowledgeSelection& selection);

/// Throws std::invalid_argument when gpt3_count is outside [1, 5].
void check_selection(const KnowledgeSelection& selection);

struct ClassMatrix {
  Eigen::MatrixXd columns;  // P x K, unit-norm columns
  std::vector<std::vector<std::uint32_t>> provenance;
};

/// Variant ids (ascending) used for one class under a selection; never
/// empty, the plain prompts are the final fallback.
std::vector<std::uint32_t> select_variants(const EmbeddingArchive& archive,
                                           const KnowledgeSelection& selection,
                                           std::size_t class_id);

/// Column k is the renormalized mean of the (renormalized) selected text
/// rows of class k.
ClassMatrix compose_class_matrix(const EmbeddingArchive& archive,
                                 const KnowledgeSelection& selection);

}  // namespace embeval
