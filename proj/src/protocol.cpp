#include "embeval/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "embeval/lexicon.hpp"
#include "embeval/metrics.hpp"
#include "embeval/random.hpp"

namespace embeval {

namespace {

constexpr std::uint64_t kFewShotStream = 0xf5e7;
constexpr std::uint64_t kValSplitStream = 0x5a11;
constexpr std::uint64_t kBatchStream = 0xba7c;
constexpr std::uint64_t kHeadStream = 0x4ead;
constexpr std::uint64_t kAdaptorStream = 0xada7;

std::vector<std::vector<std::size_t>> bucket_indices(const LabelSet& labels,
                                                     const std::vector<std::size_t>& indices,
                                                     std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> buckets(num_classes + 1);
  for (auto i : indices) buckets[sampling_bucket(labels, i, num_classes)].push_back(i);
  return buckets;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& features, const std::vector<std::size_t>& indices) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), features.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(indices[r]));
  }
  return out;
}

double split_metric(const EmbeddingArchive& archive, const Eigen::MatrixXd& features,
                    const std::vector<std::size_t>& indices, const HeadAssembly& head) {
  const Eigen::MatrixXd logits = score(head, gather_rows(features, indices));
  if (!logits.allFinite()) throw DivergenceError("non-finite logits on evaluation split");
  return compute_metric(archive.manifest.metric_kind, logits, archive.train_labels.subset(indices)).value;
}

std::string format_cell(double lr, double wd) {
  return "(lr=" + std::to_string(lr) + ", wd=" + std::to_string(wd) + ")";
}

}  // namespace

Shots Shots::parse(std::string_view text) {
  if (text == "full") return all();
  std::size_t n = 0;
  for (char c : text) {
    if (c < '0' || c > '9') throw std::invalid_argument("bad shot count '" + std::string(text) + "'");
    n = n * 10 + static_cast<std::size_t>(c - '0');
  }
  if (text.empty()) throw std::invalid_argument("empty shot count");
  return of(n);
}

std::size_t sampling_bucket(const LabelSet& labels, std::size_t index, std::size_t num_classes) {
  if (!labels.multilabel) return labels.classes.at(index);
  const auto row = static_cast<Eigen::Index>(index);
  for (Eigen::Index k = 0; k < labels.membership.cols(); ++k) {
    if (labels.membership(row, k) != 0) return static_cast<std::size_t>(k);
  }
  return num_classes;
}

SplitSpec sample_few_shot(const EmbeddingArchive& archive, Shots shots, std::uint64_t seed) {
  const auto n = archive.manifest.n_train;
  if (n == 0) throw std::invalid_argument("archive has an empty training split");
  if (shots.zero()) throw std::invalid_argument("few-shot sampling needs N >= 1 or full");
  SplitSpec out;
  out.shots = shots;
  out.seed = seed;
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (shots.full) {
    out.train = std::move(all);
    return out;
  }
  const auto K = archive.manifest.num_classes;
  auto buckets = bucket_indices(archive.train_labels, all, K);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto& members = buckets[b];
    Rng rng(derive_seed(seed, kFewShotStream, b));
    rng.shuffle(std::span<std::size_t>(members));
    const auto take = std::min(shots.per_class, members.size());
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.train.begin(), out.train.end());
  return out;
}

SplitSpec split_train_val(const EmbeddingArchive& archive, const SplitSpec& split) {
  SplitSpec out;
  out.shots = split.shots;
  out.seed = split.seed;
  std::vector<std::size_t> pool = split.train;
  pool.insert(pool.end(), split.val.begin(), split.val.end());
  std::sort(pool.begin(), pool.end());
  auto buckets = bucket_indices(archive.train_labels, pool, archive.manifest.num_classes);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    auto& members = buckets[b];
    const auto count = members.size();
    if (count == 0) continue;
    if (count == 1) {
      out.train.push_back(members.front());
      continue;
    }
    auto n_val = static_cast<std::size_t>(std::max<long>(1, std::lround(0.2 * static_cast<double>(count))));
    n_val = std::min(n_val, count - 1);
    Rng rng(derive_seed(split.seed, kValSplitStream, b));
    rng.shuffle(std::span<std::size_t>(members));
    out.val.insert(out.val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    out.train.insert(out.train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

void check_grid(const GridSpec& grid) {
  if (grid.learning_rates.empty() || grid.weight_decays.empty()) {
    throw std::invalid_argument("grid needs at least one learning rate and one weight decay");
  }
  if (grid.search_epochs < 1) throw std::invalid_argument("search epochs must be positive");
  for (double lr : grid.learning_rates) {
    if (!(lr > 0.0)) throw std::invalid_argument("grid learning rates must be positive");
  }
  for (double wd : grid.weight_decays) {
    if (!(wd >= 0.0)) throw std::invalid_argument("grid weight decays must be non-negative");
  }
}

double GridCell::score() const {
  if (diverged || trace.empty()) return -std::numeric_limits<double>::infinity();
  return *std::max_element(trace.begin(), trace.end());
}

const GridCell& SearchResult::chosen() const {
  for (const auto& c : cells) {
    if (c.learning_rate == learning_rate && c.weight_decay == weight_decay) return c;
  }
  throw std::logic_error("chosen cell missing from search result");
}

SearchResult search_grid(const GridSpec& grid, const CellEvaluator& evaluate) {
  check_grid(grid);
  auto lrs = grid.learning_rates;
  auto wds = grid.weight_decays;
  std::sort(lrs.begin(), lrs.end());
  lrs.erase(std::unique(lrs.begin(), lrs.end()), lrs.end());
  std::sort(wds.begin(), wds.end());
  wds.erase(std::unique(wds.begin(), wds.end()), wds.end());

  SearchResult out;
  out.best_score = -std::numeric_limits<double>::infinity();
  bool found = false;
  std::string failures;
  for (double lr : lrs) {
    for (double wd : wds) {
      GridCell cell;
      cell.learning_rate = lr;
      cell.weight_decay = wd;
      try {
        cell.trace = evaluate(lr, wd);
        for (double v : cell.trace) {
          if (!std::isfinite(v)) throw DivergenceError("non-finite validation metric");
        }
      } catch (const DivergenceError& e) {
        cell.diverged = true;
        cell.diagnostic = e.what();
        cell.trace.clear();
        failures += (failures.empty() ? "" : ", ") + format_cell(lr, wd);
      }
      // Ascending iteration plus strict comparison implements the tie-break.
      if (!cell.diverged && !cell.trace.empty() && (!found || cell.score() > out.best_score)) {
        found = true;
        out.best_score = cell.score();
        out.learning_rate = lr;
        out.weight_decay = wd;
      }
      out.cells.push_back(std::move(cell));
    }
  }
  if (!found) throw DivergenceError("every grid cell diverged: " + failures);
  return out;
}

FeaturePath feature_path_for(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::FineTuneProjection: return FeaturePath::TrainProjection;
    case AdaptMode::FineTuneAdaptor: return FeaturePath::TrainAdaptor;
    case AdaptMode::ZeroShot:
    case AdaptMode::LinearProbe: return FeaturePath::Frozen;
  }
  return FeaturePath::Frozen;
}

void check_adaptation(const AdaptationSpec& spec) {
  check_selection(spec.init.selection);
  check_config(spec.config);
  if (spec.mode == AdaptMode::ZeroShot && spec.init.kind == InitKind::Random) {
    throw std::invalid_argument("zero-shot evaluation needs a language initialization");
  }
  if (spec.mode == AdaptMode::FineTuneProjection) {
    const bool backbone = spec.init.kind == InitKind::LanguageMerge ||
                          (spec.init.kind == InitKind::Random && spec.head.random_space == HeadSpace::Backbone);
    if (backbone) throw std::invalid_argument("ft-proj needs a joint-space head (random or lang-sep)");
  }
}

HeadAssembly initial_head(const EmbeddingArchive& archive, const AdaptationSpec& spec) {
  check_adaptation(spec);
  HeadOptions options = spec.head;
  options.feature_path = feature_path_for(spec.mode);
  options.adaptor_seed = derive_seed(spec.seed, kAdaptorStream);
  InitStrategy init = spec.init;
  init.seed = derive_seed(spec.seed, kHeadStream);
  return init_head(archive, init, options);
}

TrainOutcome train_head(const EmbeddingArchive& archive, const Eigen::MatrixXd& train_features,
                        HeadAssembly head, const std::vector<std::size_t>& train,
                        const std::vector<std::size_t>& val, const TrainConfig& config) {
  check_config(config);
  if (train.empty()) throw std::invalid_argument("training split is empty");
  const bool plateau = config.control == ControlKind::Plateau;

  TrainOutcome out;
  OptimizerState optimizer;
  PlateauState control = plateau_start(config.learning_rate);
  std::optional<HeadAssembly> best;
  double lr = config.learning_rate;

  std::vector<std::size_t> order = train;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order = train;
    Rng rng(derive_seed(config.seed, kBatchStream, epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      const auto step = loss_and_grad(head, gather_rows(train_features, batch),
                                      archive.train_labels.subset(batch), config.loss);
      if (!std::isfinite(step.loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
      }
      try {
        optimizer_step(optimizer, head, step.grads, config, lr);
      } catch (const NonFiniteGradient& e) {
        throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
    }
    ++out.epochs_run;
    out.lr_trace.push_back(lr);

    std::optional<double> val_metric;
    if (!val.empty()) {
      val_metric = split_metric(archive, train_features, val, head);
      out.val_trace.push_back(*val_metric);
    }
    if (plateau) {
      const double monitored = val_metric ? *val_metric : split_metric(archive, train_features, train, head);
      control = plateau_step(control, monitored, config.plateau);
      if (control.improved) best = head;
      lr = control.learning_rate;
      if (control.terminated) {
        out.terminated = true;
        break;
      }
    }
  }
  out.head = plateau && best ? std::move(*best) : std::move(head);
  return out;
}

double test_metric(const EmbeddingArchive& archive, const HeadAssembly& head) {
  const Eigen::MatrixXd logits = score(head, to_double(archive.test_features));
  if (!logits.allFinite()) throw DivergenceError("non-finite logits on the test split");
  return compute_metric(archive.manifest.metric_kind, logits, archive.test_labels).value;
}

SearchResult grid_search(const EmbeddingArchive& archive, const SplitSpec& split,
                         const AdaptationSpec& spec, const GridSpec& grid) {
  if (spec.mode == AdaptMode::ZeroShot) throw std::invalid_argument("zero-shot runs have no grid search");
  if (split.val.empty()) throw std::invalid_argument("grid search needs a validation split");
  check_adaptation(spec);
  const Eigen::MatrixXd features = to_double(archive.train_features);
  const HeadAssembly start = initial_head(archive, spec);
  return search_grid(grid, [&](double lr, double wd) {
    TrainConfig config = spec.config;
    config.learning_rate = lr;
    config.weight_decay = wd;
    config.epochs = grid.search_epochs;
    config.control = ControlKind::FixedEpochs;
    config.seed = spec.seed;
    return train_head(archive, features, start, split.train, split.val, config).val_trace;
  });
}

namespace {

RunRecord base_record(const EmbeddingArchive& archive, const AdaptationSpec& spec) {
  RunRecord r;
  r.dataset = archive.manifest.dataset_name;
  r.mode = std::string(to_string(spec.mode));
  r.init = std::string(to_string(spec.init.kind));
  r.knowledge = to_string(spec.init.selection);
  r.seed = spec.seed;
  r.optimizer = std::string(to_string(spec.config.optimizer));
  r.control = std::string(to_string(spec.config.control));
  r.metric_kind = std::string(to_string(archive.manifest.metric_kind));
  return r;
}

void fail(RunRecord& r, const std::string& diagnostic) {
  r.status = "failed";
  r.diagnostic = diagnostic;
  r.test_metric = 0.0;
}

}  // namespace

RunRecord run_adaptation(const EmbeddingArchive& archive, const SplitSpec& split,
                         const AdaptationSpec& spec, const GridSpec& grid) {
  RunRecord r = base_record(archive, spec);
  r.shots = split.shots.to_string();
  if (spec.mode == AdaptMode::ZeroShot) {
    check_adaptation(spec);
    r.shots = "0";
    r.seed = 0;
    r.optimizer.clear();
    r.control.clear();
    const auto zs = zero_shot_predict(archive, spec.init.selection);
    r.test_metric = compute_metric(archive.manifest.metric_kind, zs.logits, archive.test_labels).value;
    return r;
  }

  TrainConfig config = spec.config;
  config.epochs = grid.final_epochs;
  config.seed = spec.seed;
  r.chosen_lr = config.learning_rate;
  r.chosen_wd = config.weight_decay;
  try {
    const Eigen::MatrixXd features = to_double(archive.train_features);
    const HeadAssembly start = initial_head(archive, spec);
    TrainOutcome outcome;
    if (config.control == ControlKind::FixedEpochs) {
      std::vector<std::size_t> all = split.train;
      all.insert(all.end(), split.val.begin(), split.val.end());
      std::sort(all.begin(), all.end());
      r.final_on_train_val = true;
      r.train_size = all.size();
      outcome = train_head(archive, features, start, all, {}, config);
    } else {
      r.train_size = split.train.size();
      r.val_size = split.val.size();
      outcome = train_head(archive, features, start, split.train, split.val, config);
      r.final_trace = outcome.val_trace;
    }
    r.epochs_run = outcome.epochs_run;
    r.test_metric = test_metric(archive, outcome.head);
  } catch (const DivergenceError& e) {
    fail(r, e.what());
  } catch (const MetricError& e) {
    fail(r, e.what());
  }
  return r;
}

RunRecord evaluate_setting(const EmbeddingArchive& archive, const std::string& archive_id,
                           const AdaptationSpec& spec, Shots shots, const GridSpec& grid) {
  const auto started = std::chrono::steady_clock::now();
  RunRecord r;
  if (spec.mode == AdaptMode::ZeroShot) {
    r = run_adaptation(archive, SplitSpec{}, spec, grid);
  } else {
    const auto split = split_train_val(archive, sample_few_shot(archive, shots, spec.seed));
    try {
      const auto search = grid_search(archive, split, spec, grid);
      AdaptationSpec final_spec = spec;
      final_spec.config.learning_rate = search.learning_rate;
      final_spec.config.weight_decay = search.weight_decay;
      r = run_adaptation(archive, split, final_spec, grid);
      r.search_score = search.best_score;
      r.val_trace = search.chosen().trace;
      if (r.val_size == 0) r.val_size = split.val.size();
    } catch (const DivergenceError& e) {
      r = base_record(archive, spec);
      r.shots = shots.to_string();
      fail(r, e.what());
    } catch (const MetricError& e) {
      r = base_record(archive, spec);
      r.shots = shots.to_string();
      fail(r, e.what());
    }
  }
  r.archive = archive_id;
  r.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return r;
}

}  // namespace embeval
