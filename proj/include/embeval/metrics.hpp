#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "embeval/embedstore.hpp"

namespace embeval {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricResult {
  MetricKind kind = MetricKind::Accuracy;
  double value = 0.0;
  std::size_t n = 0;
  // map-11pt: classes without positives, excluded from the mean.
  std::vector<std::size_t> skipped_classes;
};

/// accuracy: fraction of rows whose argmax is the label.
/// mean-per-class: unweighted mean of per-class recall over classes present.
/// roc-auc: Mann-Whitney statistic of the positive-class logit column
///   (label 1 positive), ties counting one half.
/// map-11pt: mean over classes with positives of the 11-point interpolated
///   average precision of that class's logit column.
MetricResult compute_metric(MetricKind kind, const Eigen::MatrixXd& logits, const LabelSet& labels);

/// Interpolated precision averaged at recall 0, 0.1, ..., 1 for one ranking.
double average_precision_11pt(const Eigen::VectorXd& scores, const std::vector<bool>& positive);

double roc_auc(const Eigen::VectorXd& scores, const std::vector<bool>& positive);

struct SeedSummary {
  std::vector<double> values;
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1); 0 when n == 1
  bool single = false;  // n == 1
};

/// Mean and sample standard deviation over per-seed values.
SeedSummary summarize(const std::vector<double>& values);

struct AggregateResult {
  // setting -> dataset -> summary
  std::map<std::string, std::map<std::string, SeedSummary>> table;
  // setting -> unweighted mean of the per-dataset means
  std::map<std::string, double> cross_dataset_mean;
};

struct MetricSample {
  std::string dataset;
  std::string setting;
  double value = 0.0;
};

AggregateResult aggregate(const std::vector<MetricSample>& samples);

}  // namespace embeval
