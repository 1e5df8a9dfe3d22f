#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "embeval/embedstore.hpp"
#include "embeval/heads.hpp"
#include "embeval/optim.hpp"
#include "embeval/records.hpp"

namespace embeval {

/// Shots per class; `full` takes the whole training split.
struct Shots {
  bool full = false;
  std::size_t per_class = 0;

  static Shots all() { return {true, 0}; }
  static Shots of(std::size_t n) { return {false, n}; }
  bool zero() const { return !full && per_class == 0; }
  std::string to_string() const { return full ? "full" : std::to_string(per_class); }
  static Shots parse(std::string_view text);

  bool operator==(const Shots&) const = default;
};

struct SplitSpec {
  Shots shots;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> val;    // ascending
};

/// Bucket used for per-class sampling: the label for single-label tasks, the
/// lowest positive class for multilabel samples, K for samples with none.
std::size_t sampling_bucket(const LabelSet& labels, std::size_t index, std::size_t num_classes);

/// Per class, the first min(N, available) indices of a seeded shuffle of
/// that class's training indices. Larger N under the same seed nests smaller
/// N. Throws on an empty training split or N = 0.
SplitSpec sample_few_shot(const EmbeddingArchive& archive, Shots shots, std::uint64_t seed);

/// Per class with c >= 2 samples: max(1, round(0.2 c)) go to val, capped so
/// at least one stays in train. Single-sample classes stay in train.
SplitSpec split_train_val(const EmbeddingArchive& archive, const SplitSpec& split);

struct GridSpec {
  std::vector<double> learning_rates{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
  std::vector<double> weight_decays{0.0, 1e-4, 1e-2};
  std::size_t search_epochs = 10;
  std::size_t final_epochs = 50;
};

void check_grid(const GridSpec& grid);

/// Raised when training produces non-finite losses, gradients or logits.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GridCell {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  std::vector<double> trace;  // validation metric after each epoch
  bool diverged = false;
  std::string diagnostic;

  double score() const;  // max over the trace; -inf when diverged
};

struct SearchResult {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double best_score = 0.0;
  std::vector<GridCell> cells;  // ascending (lr, wd)

  const GridCell& chosen() const;
};

/// Trains one (lr, wd) cell and returns its per-epoch validation trace.
/// Throws DivergenceError for a diverged cell.
using CellEvaluator = std::function<std::vector<double>(double learning_rate, double weight_decay)>;

/// Scores every cell by the max of its trace and returns the best one;
/// ties go to the smaller learning rate, then the smaller weight decay.
/// Throws DivergenceError naming the cells when every cell diverged.
SearchResult search_grid(const GridSpec& grid, const CellEvaluator& evaluate);

FeaturePath feature_path_for(AdaptMode mode);

/// Head settings shared by one run. Seeds for the random head, the adaptor
/// and batch order all derive from `seed`.
struct AdaptationSpec {
  AdaptMode mode = AdaptMode::LinearProbe;
  InitStrategy init;
  HeadOptions head;
  TrainConfig config;  // template: lr and wd are overridden by the grid
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument for mode/init pairs that cannot be built.
void check_adaptation(const AdaptationSpec& spec);

HeadAssembly initial_head(const EmbeddingArchive& archive, const AdaptationSpec& spec);

struct TrainOutcome {
  HeadAssembly head;
  std::vector<double> val_trace;
  std::vector<double> lr_trace;
  std::size_t epochs_run = 0;
  bool terminated = false;
};

/// Mini-batch training on `train`. With a non-empty `val` the archive metric
/// is evaluated after every epoch. Plateau control monitors val (train when
/// val is empty) and returns the best checkpoint; fixed-epoch control returns
/// the final weights. config.epochs bounds both.
TrainOutcome train_head(const EmbeddingArchive& archive, const Eigen::MatrixXd& train_features,
                        HeadAssembly head, const std::vector<std::size_t>& train,
                        const std::vector<std::size_t>& val, const TrainConfig& config);

SearchResult grid_search(const EmbeddingArchive& archive, const SplitSpec& split,
                         const AdaptationSpec& spec, const GridSpec& grid);

/// Final run with the chosen (lr, wd) in spec.config, then test evaluation.
/// Fixed-epoch control trains on train + val for grid.final_epochs; plateau
/// control trains on train, monitors val, and is bounded by final_epochs.
/// Zero-shot mode skips training. Divergence yields a failed record.
RunRecord run_adaptation(const EmbeddingArchive& archive, const SplitSpec& split,
                         const AdaptationSpec& spec, const GridSpec& grid);

/// Sampling, 80/20 split, grid search and final run for one setting.
RunRecord evaluate_setting(const EmbeddingArchive& archive, const std::string& archive_id,
                           const AdaptationSpec& spec, Shots shots, const GridSpec& grid);

/// Metric of the archive's kind on the test split for a head.
double test_metric(const EmbeddingArchive& archive, const HeadAssembly& head);

}  // namespace embeval
