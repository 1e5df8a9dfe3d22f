#include "embeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "embeval/heads.hpp"

namespace embeval {

double roc_auc(const Eigen::VectorXd& scores, const std::vector<bool>& positive) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (positive.size() != n) throw MetricError("roc-auc: score/label length mismatch");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores(static_cast<Eigen::Index>(a)) < scores(static_cast<Eigen::Index>(b)); });

  // Ranks are 1-based; tied groups share their average rank. Both sums are
  // kept doubled so every quantity stays an exact integer.
  double doubled_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    const double s = scores(static_cast<Eigen::Index>(order[start]));
    while (end < n && scores(static_cast<Eigen::Index>(order[end])) == s) ++end;
    const double doubled_rank = static_cast<double>(start + 1 + end);  // 2 * mean(start+1..end)
    for (std::size_t i = start; i < end; ++i) {
      if (positive[order[i]]) {
        doubled_rank_sum += doubled_rank;
        ++n_pos;
      }
    }
    start = end;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("roc-auc needs both positives and negatives");
  const double np = static_cast<double>(n_pos);
  // 2 * (R - np (np + 1) / 2) = wins * 2 + ties
  const double doubled_u = doubled_rank_sum - np * (np + 1.0);
  return doubled_u / (2.0 * np * static_cast<double>(n_neg));
}

double average_precision_11pt(const Eigen::VectorXd& scores, const std::vector<bool>& positive) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (positive.size() != n) throw MetricError("map-11pt: score/label length mismatch");
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (n_pos == 0) throw MetricError("map-11pt: class has no positives");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b)); });

  // One operating point per distinct score threshold.
  std::vector<std::size_t> tp_at;
  std::vector<double> precision_at;
  std::size_t tp = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    const double s = scores(static_cast<Eigen::Index>(order[start]));
    while (end < n && scores(static_cast<Eigen::Index>(order[end])) == s) {
      if (positive[order[end]]) ++tp;
      ++end;
    }
    tp_at.push_back(tp);
    precision_at.push_back(static_cast<double>(tp) / static_cast<double>(end));
    start = end;
  }

  // Recall >= r/10 is tested as 10 * tp >= r * n_pos to avoid rounding at
  // the grid points.
  double sum = 0.0;
  for (std::size_t r = 0; r <= 10; ++r) {
    double best = 0.0;
    for (std::size_t i = 0; i < tp_at.size(); ++i) {
      if (10 * tp_at[i] >= r * n_pos) best = std::max(best, precision_at[i]);
    }
    sum += best;
  }
  return sum / 11.0;
}

MetricResult compute_metric(MetricKind kind, const Eigen::MatrixXd& logits, const LabelSet& labels) {
  const auto n = static_cast<std::size_t>(logits.rows());
  const auto K = static_cast<std::size_t>(logits.cols());
  if (n == 0) throw MetricError("metric over zero samples");
  if (labels.size() != n) throw MetricError("label count does not match logit rows");
  MetricResult out;
  out.kind = kind;
  out.n = n;

  switch (kind) {
    case MetricKind::Accuracy:
    case MetricKind::MeanPerClass: {
      if (labels.multilabel) throw MetricError("accuracy metrics need single-label targets");
      const auto predicted = argmax_rows(logits);
      std::vector<std::size_t> hits(K, 0), totals(K, 0);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto y = labels.classes[i];
        if (y >= K) throw MetricError("label out of range");
        ++totals[y];
        if (predicted[i] == y) {
          ++hits[y];
          ++correct;
        }
      }
      if (kind == MetricKind::Accuracy) {
        out.value = static_cast<double>(correct) / static_cast<double>(n);
      } else {
        double sum = 0.0;
        std::size_t present = 0;
        for (std::size_t k = 0; k < K; ++k) {
          if (totals[k] == 0) continue;
          sum += static_cast<double>(hits[k]) / static_cast<double>(totals[k]);
          ++present;
        }
        out.value = sum / static_cast<double>(present);
      }
      break;
    }
    case MetricKind::RocAuc: {
      if (K != 2 || labels.multilabel) throw MetricError("roc-auc needs binary labels and K=2");
      std::vector<bool> positive(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (labels.classes[i] > 1) throw MetricError("label out of range");
        positive[i] = labels.classes[i] == 1;
      }
      out.value = roc_auc(logits.col(1), positive);
      break;
    }
    case MetricKind::Map11pt: {
      if (!labels.multilabel || static_cast<std::size_t>(labels.membership.cols()) != K) {
        throw MetricError("map-11pt needs an N x K membership matrix");
      }
      double sum = 0.0;
      std::size_t used = 0;
      for (std::size_t k = 0; k < K; ++k) {
        std::vector<bool> positive(n);
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
          positive[i] = labels.membership(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) != 0;
          any = any || positive[i];
        }
        if (!any) {
          out.skipped_classes.push_back(k);
          continue;
        }
        sum += average_precision_11pt(logits.col(static_cast<Eigen::Index>(k)), positive);
        ++used;
      }
      if (used == 0) throw MetricError("map-11pt: no class has positives");
      out.value = sum / static_cast<double>(used);
      break;
    }
  }
  return out;
}

SeedSummary summarize(const std::vector<double>& values) {
  if (values.empty()) throw MetricError("cannot summarize an empty group");
  SeedSummary s;
  s.values = values;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  s.single = values.size() == 1;
  if (!s.single) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

AggregateResult aggregate(const std::vector<MetricSample>& samples) {
  std::map<std::string, std::map<std::string, std::vector<double>>> grouped;
  for (const auto& s : samples) grouped[s.setting][s.dataset].push_back(s.value);
  AggregateResult out;
  for (const auto& [setting, datasets] : grouped) {
    double sum = 0.0;
    for (const auto& [dataset, values] : datasets) {
      auto summary = summarize(values);
      sum += summary.mean;
      out.table[setting][dataset] = std::move(summary);
    }
    out.cross_dataset_mean[setting] = sum / static_cast<double>(datasets.size());
  }
  return out;
}

}  // namespace embeval
