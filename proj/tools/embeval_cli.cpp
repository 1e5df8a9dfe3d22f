// embeval: zero-shot and adaptation evaluation over embedding archives.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "embeval/embedstore.hpp"
#include "embeval/experiment.hpp"
#include "embeval/metrics.hpp"
#include "json.hpp"

using namespace embeval;
using nlohmann::json;

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& text, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse(item));
  return out;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

// Flags shared by the experiment subcommands.
struct ExperimentFlags {
  std::vector<std::string> archives;
  std::string shots = "5";
  std::string seeds = "0,1,2";
  std::string init = "lang-sep";
  std::string mode = "lp";
  std::string knowledge = "none";
  std::string grid_lr;
  std::string grid_wd;
  std::size_t search_epochs = 10;
  std::size_t final_epochs = 50;
  std::string control = "fixed";
  std::string optimizer = "adamw";
  std::size_t batch_size = 4;
  double language_temperature = 100.0;
  double random_temperature = 1.0;
  std::size_t adaptor_hidden = 64;
  std::string out = "results";
  std::size_t workers = 1;
  bool force = false;
  bool canonical = false;

  void attach(CLI::App* app, bool with_mode) {
    app->add_option("--archive", archives, "archive directory (repeatable)")->required();
    app->add_option("--shots", shots, "comma list of 0|5|20|50|full");
    app->add_option("--seeds", seeds, "comma list of seeds");
    app->add_option("--init", init, "random|lang-sep|lang-merge (comma list)");
    if (with_mode) app->add_option("--mode", mode, "lp|ft-proj|ft-adaptor (comma list)");
    app->add_option("--knowledge", knowledge, "none|wn_path|wn_def|wiki_def|gpt3:K|wiki+gpt3:K (comma list)");
    app->add_option("--grid-lr", grid_lr, "comma list of learning rates");
    app->add_option("--grid-wd", grid_wd, "comma list of weight decays");
    app->add_option("--search-epochs", search_epochs);
    app->add_option("--final-epochs", final_epochs);
    app->add_option("--control", control, "fixed|plateau");
    app->add_option("--optimizer", optimizer, "sgd|sgd-momentum|adamw");
    app->add_option("--batch-size", batch_size);
    app->add_option("--lang-temperature", language_temperature);
    app->add_option("--random-temperature", random_temperature);
    app->add_option("--adaptor-hidden", adaptor_hidden);
    app->add_option("--out", out, "output directory");
    app->add_option("--workers", workers);
    app->add_flag("--force", force, "recompute runs already in the results file");
    app->add_flag("--canonical", canonical, "zero wall-clock fields");
  }

  ExperimentManifest manifest(bool zeroshot_only) const {
    ExperimentManifest m;
    m.archives = archives;
    m.base_dir = std::filesystem::current_path();
    const auto inits = parse_list<InitKind>(init, [](const std::string& s) { return parse_init_kind(s); });
    if (zeroshot_only) {
      for (auto i : inits) m.settings.push_back({AdaptMode::ZeroShot, i});
    } else {
      std::vector<Shots> shot_list = parse_list<Shots>(shots, [](const std::string& s) { return Shots::parse(s); });
      const bool has_zero = std::any_of(shot_list.begin(), shot_list.end(), [](Shots s) { return s.zero(); });
      std::erase_if(shot_list, [](Shots s) { return s.zero(); });
      for (const auto& md : split_list(mode)) {
        for (auto i : inits) m.settings.push_back({parse_adapt_mode(md), i});
      }
      if (has_zero) {
        for (auto i : inits) {
          if (i != InitKind::Random) m.settings.push_back({AdaptMode::ZeroShot, i});
        }
      }
      m.shots = shot_list.empty() ? std::vector<Shots>{Shots::of(5)} : shot_list;
    }
    m.knowledge = parse_list<KnowledgeSelection>(knowledge, [](const std::string& s) { return parse_knowledge(s); });
    m.seeds = parse_list<std::uint64_t>(seeds, [](const std::string& s) { return std::stoull(s); });
    if (!grid_lr.empty()) m.grid.learning_rates = parse_list<double>(grid_lr, parse_double);
    if (!grid_wd.empty()) m.grid.weight_decays = parse_list<double>(grid_wd, parse_double);
    m.grid.search_epochs = search_epochs;
    m.grid.final_epochs = final_epochs;
    m.config.control = parse_control_kind(control);
    m.config.optimizer = parse_optimizer_kind(optimizer);
    m.config.batch_size = batch_size;
    m.head.language_temperature = language_temperature;
    m.head.random_temperature = random_temperature;
    m.head.adaptor_hidden = adaptor_hidden;
    m.output_dir = out;
    m.workers = workers;
    return m;
  }
};

int finish(const RunSummary& summary) {
  std::cout << "planned " << summary.planned << ", computed " << summary.computed << ", skipped "
            << summary.skipped << ", failed " << summary.failed << '\n';
  if (!summary.errors.empty()) {
    std::cerr << "[";
    for (std::size_t i = 0; i < summary.errors.size(); ++i) std::cerr << (i ? "," : "") << summary.errors[i];
    std::cerr << "]\n";
  }
  return summary.exit_code;
}

json cell_json(const GridCell& c) {
  return {{"lr", c.learning_rate}, {"wd", c.weight_decay}, {"trace", c.trace},
          {"diverged", c.diverged}, {"diagnostic", c.diagnostic}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"embeval: evaluate dual-encoder embeddings under zero-shot and adaptation protocols"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic archive");
  SynthSpec spec;
  std::string synth_out;
  std::string profile = "small";
  std::string task = "single-label";
  std::string metric = "accuracy";
  synth->add_option("--out", synth_out, "archive directory")->required();
  synth->add_option("--profile", profile, "small (D=64,P=32) | large (D=768,P=512)");
  synth->add_option("--classes", spec.num_classes);
  synth->add_option("--dim", spec.feature_dim, "backbone dimension D (overrides profile)");
  synth->add_option("--joint", spec.joint_dim, "joint dimension P (overrides profile)");
  synth->add_option("--samples", spec.samples_per_class, "training samples per class");
  synth->add_option("--test-samples", spec.test_samples_per_class, "test samples per class");
  synth->add_option("--sigma", spec.sigma);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--task", task, "single-label|binary|multilabel");
  synth->add_option("--metric", metric, "accuracy|mean-per-class (single-label only)");
  synth->add_option("--templates", spec.templates);
  synth->add_flag("--knowledge-variants", spec.knowledge_variants, "add wiki_def and gpt3 variants");
  synth->add_option("--class-shift", spec.class_shift);
  synth->add_option("--null-signal", spec.null_signal);
  synth->add_option("--name", spec.dataset_name);

  // zeroshot
  auto* zeroshot = app.add_subcommand("zeroshot", "zero-shot evaluation of archives");
  ExperimentFlags zs_flags;
  zs_flags.attach(zeroshot, false);

  // adapt
  auto* adapt = app.add_subcommand("adapt", "grid search plus final run for every setting");
  ExperimentFlags adapt_flags;
  adapt_flags.attach(adapt, true);

  // search
  auto* search = app.add_subcommand("search", "grid search only; prints every cell trace");
  ExperimentFlags search_flags;
  search_flags.attach(search, true);

  // run
  auto* run = app.add_subcommand("run", "execute an experiment manifest");
  std::string manifest_file;
  std::string run_out;
  std::size_t run_workers = 0;
  bool run_force = false;
  bool run_canonical = false;
  run->add_option("manifest", manifest_file, "manifest JSON file")->required();
  run->add_option("--out", run_out, "output directory (overrides manifest)");
  run->add_option("--workers", run_workers, "worker threads (overrides manifest)");
  run->add_flag("--force", run_force);
  run->add_flag("--canonical", run_canonical);

  // report
  auto* report = app.add_subcommand("report", "aggregate a results file");
  std::string results_file;
  std::string format = "text";
  report->add_option("results", results_file, "results.jsonl or an output directory")->required();
  report->add_option("--format", format, "text|csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthSpec base = profile == "large" ? large_profile() : small_profile();
      if (profile != "large" && profile != "small") throw std::invalid_argument("unknown profile " + profile);
      if (synth->count("--dim") == 0) spec.feature_dim = base.feature_dim;
      if (synth->count("--joint") == 0) spec.joint_dim = base.joint_dim;
      spec.task_kind = parse_task_kind(task);
      spec.metric_kind = parse_metric_kind(metric);
      const auto archive = synthesize_archive(spec);
      save_archive(archive, synth_out);
      std::cout << "wrote " << synth_out << ": K=" << archive.manifest.num_classes
                << " D=" << archive.manifest.feature_dim << " P=" << archive.manifest.joint_dim
                << " train=" << archive.manifest.n_train << " test=" << archive.manifest.n_test << '\n';
      return 0;
    }
    if (*zeroshot) {
      auto m = zs_flags.manifest(true);
      return finish(run_manifest(m, {zs_flags.force, zs_flags.canonical, &std::cerr}));
    }
    if (*adapt) {
      auto m = adapt_flags.manifest(false);
      return finish(run_manifest(m, {adapt_flags.force, adapt_flags.canonical, &std::cerr}));
    }
    if (*search) {
      auto m = search_flags.manifest(false);
      validate_manifest(m);
      json out = json::array();
      for (const auto& job : expand_jobs(m)) {
        if (job.spec.mode == AdaptMode::ZeroShot) continue;
        const auto archive = load_archive(m.archives[job.archive_index]);
        const auto split = split_train_val(archive, sample_few_shot(archive, job.shots, job.spec.seed));
        const auto result = grid_search(archive, split, job.spec, m.grid);
        json cells = json::array();
        for (const auto& c : result.cells) cells.push_back(cell_json(c));
        out.push_back({{"key", job.key}, {"chosen_lr", result.learning_rate},
                       {"chosen_wd", result.weight_decay}, {"best_score", result.best_score},
                       {"cells", cells}});
      }
      std::cout << out.dump(2) << '\n';
      return 0;
    }
    if (*run) {
      auto m = load_manifest(manifest_file);
      if (!run_out.empty()) m.output_dir = run_out;
      if (run_workers > 0) m.workers = run_workers;
      return finish(run_manifest(m, {run_force, run_canonical, &std::cerr}));
    }
    if (*report) {
      std::filesystem::path path = results_file;
      if (std::filesystem::is_directory(path)) path = results_path(path);
      std::ifstream in(path, std::ios::binary);
      if (!in) throw std::invalid_argument("cannot read " + path.string());
      if (format != "text" && format != "csv") throw std::invalid_argument("unknown format " + format);
      const auto records = read_results(in);
      std::cout << emit_report(records, format == "csv" ? ReportFormat::Csv : ReportFormat::Text);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
