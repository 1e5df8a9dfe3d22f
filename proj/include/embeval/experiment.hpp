#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "embeval/heads.hpp"
#include "embeval/lexicon.hpp"
#include "embeval/optim.hpp"
#include "embeval/protocol.hpp"
#include "embeval/records.hpp"

namespace embeval {

struct ModeInit {
  AdaptMode mode = AdaptMode::LinearProbe;
  InitKind init = InitKind::LanguageSeparate;
};

struct ExperimentManifest {
  std::vector<std::string> archives;  // as written; part of every run key
  std::filesystem::path base_dir;     // relative archive paths resolve here
  std::vector<ModeInit> settings;     // mode x init pairs
  std::vector<KnowledgeSelection> knowledge{KnowledgeSelection{}};
  std::vector<Shots> shots{Shots::of(5)};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  GridSpec grid;
  TrainConfig config;
  HeadOptions head;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 1;
};

/// Parses the manifest JSON. Either "settings": [{"mode", "init"}] or the
/// cross product of "modes" and "inits" (default ["lang-sep"]).
ExperimentManifest parse_manifest(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentManifest load_manifest(const std::filesystem::path& file);

/// Throws std::invalid_argument listing every problem: missing archives,
/// empty shot/seed lists, invalid mode/init pairs.
void validate_manifest(const ExperimentManifest& manifest);

struct Job {
  std::size_t archive_index = 0;
  AdaptationSpec spec;
  Shots shots;
  std::string key;
};

/// Cross product of settings. Zero-shot settings ignore shots and seeds and
/// contribute one job per (archive, init, knowledge).
std::vector<Job> expand_jobs(const ExperimentManifest& manifest);

struct RunOptions {
  bool force = false;
  bool canonical = false;  // zero wall-clock fields
  std::ostream* log = nullptr;
};

struct RunSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;
  std::size_t computed = 0;
  std::size_t failed = 0;
  std::vector<std::string> errors;  // one JSON object per failure
  int exit_code = 0;
};

std::filesystem::path results_path(const std::filesystem::path& output_dir);
std::filesystem::path errors_path(const std::filesystem::path& output_dir);

/// Executes every job not already present in <output>/results.jsonl (all of
/// them with options.force), appending lines as runs finish and rewriting the
/// file in canonical key order at the end. Failures go to errors.jsonl and
/// make the exit code nonzero.
RunSummary run_manifest(const ExperimentManifest& manifest, const RunOptions& options = {});

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a results JSONL stream; throws ReportError naming every malformed
/// line by number.
std::vector<RunRecord> read_results(std::istream& in);
std::vector<RunRecord> read_results_file(const std::filesystem::path& file);

enum class ReportFormat { Text, Csv };

/// Per-setting tables of mean +/- sample std over seeds (percent), one row
/// per dataset in name order plus an AVERAGE row.
std::string emit_report(const std::vector<RunRecord>& records, ReportFormat format);

}  // namespace embeval
