#include "embeval/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "embeval/metrics.hpp"
#include "json.hpp"

namespace embeval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Shots shots_from_json(const json& v) {
  if (v.is_number_unsigned()) return Shots::of(v.get<std::size_t>());
  return Shots::parse(v.get<std::string>());
}

bool valid_pair(const ModeInit& s, const HeadOptions& head) {
  if (s.mode == AdaptMode::ZeroShot && s.init == InitKind::Random) return false;
  if (s.mode == AdaptMode::FineTuneProjection) {
    if (s.init == InitKind::LanguageMerge) return false;
    if (s.init == InitKind::Random && head.random_space == HeadSpace::Backbone) return false;
  }
  return true;
}

std::string pair_name(const ModeInit& s) {
  return std::string(to_string(s.mode)) + "/" + std::string(to_string(s.init));
}

// Rewrites `path` through a temporary file so readers never see a torn file.
void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
  }
  fs::rename(tmp, path);
}

std::string cell(const SeedSummary& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f \xC2\xB1 %.2f", 100.0 * s.mean, 100.0 * s.stddev);
  std::string out = buf;
  if (s.single) out += " (n=1)";
  return out;
}

}  // namespace

ExperimentManifest parse_manifest(std::string_view text, const fs::path& base_dir) {
  ExperimentManifest m;
  m.base_dir = base_dir;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    m.archives = j.at("archives").get<std::vector<std::string>>();
    if (j.contains("settings")) {
      for (const auto& s : j.at("settings")) {
        ModeInit mi;
        mi.mode = parse_adapt_mode(s.at("mode").get<std::string>());
        mi.init = parse_init_kind(s.value("init", std::string("lang-sep")));
        m.settings.push_back(mi);
      }
    } else {
      const auto modes = j.value("modes", std::vector<std::string>{"zeroshot"});
      const auto inits = j.value("inits", std::vector<std::string>{"lang-sep"});
      for (const auto& mode : modes) {
        for (const auto& init : inits) m.settings.push_back({parse_adapt_mode(mode), parse_init_kind(init)});
      }
    }
    if (j.contains("knowledge")) {
      m.knowledge.clear();
      for (const auto& k : j.at("knowledge")) m.knowledge.push_back(parse_knowledge(k.get<std::string>()));
    }
    if (j.contains("shots")) {
      m.shots.clear();
      for (const auto& s : j.at("shots")) m.shots.push_back(shots_from_json(s));
    }
    if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("grid")) {
      const auto& g = j.at("grid");
      if (g.contains("lr")) m.grid.learning_rates = g.at("lr").get<std::vector<double>>();
      if (g.contains("wd")) m.grid.weight_decays = g.at("wd").get<std::vector<double>>();
      m.grid.search_epochs = g.value("search_epochs", m.grid.search_epochs);
      m.grid.final_epochs = g.value("final_epochs", m.grid.final_epochs);
    }
    if (j.contains("control")) m.config.control = parse_control_kind(j.at("control").get<std::string>());
    if (j.contains("optimizer")) m.config.optimizer = parse_optimizer_kind(j.at("optimizer").get<std::string>());
    m.config.batch_size = j.value("batch_size", m.config.batch_size);
    if (j.contains("head")) {
      const auto& h = j.at("head");
      m.head.language_temperature = h.value("language_temperature", m.head.language_temperature);
      m.head.random_temperature = h.value("random_temperature", m.head.random_temperature);
      m.head.adaptor_hidden = h.value("adaptor_hidden", m.head.adaptor_hidden);
      const auto space = h.value("random_space", std::string("joint"));
      if (space != "joint" && space != "backbone") throw std::invalid_argument("random_space must be joint or backbone");
      m.head.random_space = space == "joint" ? HeadSpace::Joint : HeadSpace::Backbone;
    }
    if (j.contains("output")) m.output_dir = j.at("output").get<std::string>();
    m.workers = j.value("workers", m.workers);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("manifest: ") + e.what());
  }
  return m;
}

ExperimentManifest load_manifest(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read manifest " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto m = parse_manifest(buf.str(), file.parent_path());
  if (m.output_dir.is_relative()) m.output_dir = file.parent_path() / m.output_dir;
  return m;
}

void validate_manifest(const ExperimentManifest& m) {
  std::vector<std::string> problems;
  if (m.archives.empty()) problems.push_back("no archives listed");
  for (const auto& a : m.archives) {
    const fs::path p = fs::path(a).is_absolute() ? fs::path(a) : m.base_dir / a;
    if (!fs::exists(p / "manifest.json")) problems.push_back("archive not found: " + a);
  }
  if (m.settings.empty()) problems.push_back("no mode/init settings");
  if (m.shots.empty()) problems.push_back("shot list is empty");
  if (m.seeds.empty()) problems.push_back("seed list is empty");
  if (m.knowledge.empty()) problems.push_back("knowledge list is empty");
  if (m.workers < 1) problems.push_back("workers must be >= 1");
  for (const auto& s : m.settings) {
    if (!valid_pair(s, m.head)) problems.push_back("invalid mode/init pair " + pair_name(s));
    if (s.mode != AdaptMode::ZeroShot) {
      for (const auto& shots : m.shots) {
        if (shots.zero()) problems.push_back("shots 0 is only meaningful for zeroshot mode");
      }
    }
  }
  try {
    check_grid(m.grid);
    check_config(m.config);
  } catch (const std::invalid_argument& e) {
    problems.push_back(e.what());
  }
  if (!problems.empty()) {
    std::string msg = "invalid manifest:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::invalid_argument(msg);
  }
}

std::vector<Job> expand_jobs(const ExperimentManifest& m) {
  std::vector<Job> jobs;
  std::set<std::string> seen;
  const auto push = [&](Job job, const std::string& archive) {
    RunRecord probe;
    probe.archive = archive;
    probe.mode = std::string(to_string(job.spec.mode));
    probe.init = std::string(to_string(job.spec.init.kind));
    probe.knowledge = to_string(job.spec.init.selection);
    probe.shots = job.spec.mode == AdaptMode::ZeroShot ? "0" : job.shots.to_string();
    probe.seed = job.spec.seed;
    job.key = probe.key();
    if (seen.insert(job.key).second) jobs.push_back(std::move(job));
  };
  for (std::size_t a = 0; a < m.archives.size(); ++a) {
    for (const auto& s : m.settings) {
      for (const auto& k : m.knowledge) {
        Job base;
        base.archive_index = a;
        base.spec.mode = s.mode;
        base.spec.init.kind = s.init;
        base.spec.init.selection = k;
        base.spec.head = m.head;
        base.spec.config = m.config;
        if (s.mode == AdaptMode::ZeroShot) {
          base.shots = Shots::of(0);
          base.spec.seed = 0;
          push(base, m.archives[a]);
          continue;
        }
        for (const auto& shots : m.shots) {
          for (auto seed : m.seeds) {
            Job job = base;
            job.shots = shots;
            job.spec.seed = seed;
            push(std::move(job), m.archives[a]);
          }
        }
      }
    }
  }
  return jobs;
}

fs::path results_path(const fs::path& output_dir) { return output_dir / "results.jsonl"; }
fs::path errors_path(const fs::path& output_dir) { return output_dir / "errors.jsonl"; }

std::vector<RunRecord> read_results(std::istream& in) {
  std::vector<RunRecord> out;
  std::vector<std::string> problems;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const std::invalid_argument& e) {
      problems.push_back("line " + std::to_string(number) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "malformed results:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ReportError(msg);
  }
  return out;
}

std::vector<RunRecord> read_results_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return {};
  return read_results(in);
}

RunSummary run_manifest(const ExperimentManifest& m, const RunOptions& options) {
  validate_manifest(m);
  RunSummary summary;
  const auto jobs = expand_jobs(m);
  summary.planned = jobs.size();

  fs::create_directories(m.output_dir);
  const auto results_file = results_path(m.output_dir);
  std::map<std::string, RunRecord> records;
  for (auto& r : read_results_file(results_file)) records[r.key()] = std::move(r);

  std::vector<const Job*> pending;
  for (const auto& job : jobs) {
    if (!options.force && records.count(job.key)) {
      ++summary.skipped;
    } else {
      pending.push_back(&job);
    }
  }
  if (pending.empty()) {
    if (options.log) *options.log << "nothing to do: " << summary.skipped << " runs already present\n";
    return summary;
  }

  // Load each archive needed at most once; archives are read-only afterwards.
  std::vector<std::optional<EmbeddingArchive>> archives(m.archives.size());
  std::map<std::size_t, std::string> load_errors;
  for (const auto* job : pending) {
    const auto a = job->archive_index;
    if (archives[a] || load_errors.count(a)) continue;
    const fs::path p = fs::path(m.archives[a]).is_absolute() ? fs::path(m.archives[a]) : m.base_dir / m.archives[a];
    try {
      archives[a] = load_archive(p);
    } catch (const std::exception& e) {
      load_errors[a] = e.what();
    }
  }

  std::mutex writer;
  std::ofstream append(results_file, std::ios::binary | std::ios::app);
  if (!append) throw std::runtime_error("cannot open " + results_file.string());
  std::vector<std::optional<RunRecord>> finished(pending.size());
  std::vector<std::string> job_errors(pending.size());

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= pending.size()) return;
      const Job& job = *pending[i];
      std::string error;
      std::optional<RunRecord> record;
      if (const auto it = load_errors.find(job.archive_index); it != load_errors.end()) {
        error = it->second;
      } else {
        try {
          record = evaluate_setting(*archives[job.archive_index], m.archives[job.archive_index], job.spec,
                                    job.shots, m.grid);
          if (options.canonical) record->wall_clock_s = 0.0;
          if (record->status != "ok") {
            error = record->diagnostic;
            record.reset();
          }
        } catch (const std::exception& e) {
          error = e.what();
        }
      }
      std::lock_guard lock(writer);
      if (record) {
        append << to_json_line(*record) << '\n';
        append.flush();
        if (options.log) *options.log << "done " << job.key << " -> " << record->test_metric << '\n';
        finished[i] = std::move(record);
      } else {
        if (options.log) *options.log << "FAILED " << job.key << ": " << error << '\n';
        job_errors[i] = error;
      }
    }
  };
  const auto n_threads = std::min(m.workers, pending.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  append.close();

  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (finished[i]) {
      ++summary.computed;
      records[finished[i]->key()] = std::move(*finished[i]);
    } else {
      ++summary.failed;
      summary.errors.push_back(json{{"key", pending[i]->key}, {"error", job_errors[i]}}.dump());
    }
  }
  std::sort(summary.errors.begin(), summary.errors.end());

  std::string content;
  for (const auto& [key, record] : records) content += to_json_line(record) + "\n";
  write_atomically(results_file, content);

  std::string errors;
  for (const auto& e : summary.errors) errors += e + "\n";
  write_atomically(errors_path(m.output_dir), errors);
  summary.exit_code = summary.failed == 0 ? 0 : 2;
  return summary;
}

std::string emit_report(const std::vector<RunRecord>& records, ReportFormat format) {
  std::vector<MetricSample> samples;
  for (const auto& r : records) {
    if (r.status != "ok") continue;
    samples.push_back({r.dataset, r.setting(), r.test_metric});
  }
  const auto agg = aggregate(samples);

  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "setting,dataset,mean_pct,std_pct,n\n";
    char buf[160];
    for (const auto& [setting, datasets] : agg.table) {
      for (const auto& [dataset, s] : datasets) {
        std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%zu\n", 100.0 * s.mean, 100.0 * s.stddev, s.values.size());
        out << setting << ',' << dataset << buf;
      }
      std::snprintf(buf, sizeof buf, ",%.4f,,%zu\n", 100.0 * agg.cross_dataset_mean.at(setting), datasets.size());
      out << setting << ",AVERAGE" << buf;
    }
    return out.str();
  }

  out << "# test metric in %, mean \xC2\xB1 sample std (n-1) over seeds; "
         "AVERAGE is the unweighted mean of dataset means\n";
  for (const auto& [setting, datasets] : agg.table) {
    std::size_t width = std::string("AVERAGE").size();
    for (const auto& [dataset, s] : datasets) width = std::max(width, dataset.size());
    out << "\n[" << setting << "]\n";
    for (const auto& [dataset, s] : datasets) {
      out << dataset << std::string(width - dataset.size() + 2, ' ') << cell(s) << '\n';
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * agg.cross_dataset_mean.at(setting));
    out << "AVERAGE" << std::string(width - 7 + 2, ' ') << buf << '\n';
  }
  return out.str();
}

}  // namespace embeval
