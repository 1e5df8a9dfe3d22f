#pragma once

// Brute-force reference implementations used only by tests. Each one follows
// the textbook definition directly and shares no code with src/.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "embeval/embedstore.hpp"
#include "embeval/heads.hpp"
#include "embeval/random.hpp"

namespace oracle {

// Probability that a random positive outscores a random negative, ties 1/2.
inline double auc_pair_count(const Eigen::VectorXd& scores, const std::vector<bool>& positive) {
  double wins = 0.0;
  double ties = 0.0;
  double pairs = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!positive[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < scores.size(); ++j) {
      if (positive[static_cast<std::size_t>(j)]) continue;
      pairs += 1.0;
      if (scores(i) > scores(j)) wins += 1.0;
      if (scores(i) == scores(j)) ties += 1.0;
    }
  }
  return (wins + 0.5 * ties) / pairs;
}

// 11-point interpolated AP: evaluate precision/recall at every distinct score
// threshold (predict positive when score >= t), then for each recall level
// r/10 take the best precision among thresholds reaching that recall.
inline double ap11_threshold_sweep(const Eigen::VectorXd& scores, const std::vector<bool>& positive) {
  const std::set<double> thresholds(scores.data(), scores.data() + scores.size());
  long n_pos = 0;
  for (bool p : positive) n_pos += p ? 1 : 0;
  struct Point {
    long tp;
    double precision;
  };
  std::vector<Point> points;
  for (double t : thresholds) {
    long tp = 0;
    long predicted = 0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      if (scores(i) >= t) {
        ++predicted;
        if (positive[static_cast<std::size_t>(i)]) ++tp;
      }
    }
    points.push_back({tp, static_cast<double>(tp) / static_cast<double>(predicted)});
  }
  double total = 0.0;
  for (long r = 0; r <= 10; ++r) {
    double best = 0.0;
    for (const auto& p : points) {
      if (p.tp * 10 >= r * n_pos) best = std::max(best, p.precision);
    }
    total += best;
  }
  return total / 11.0;
}

// Per-element dot products, no Eigen products.
inline Eigen::MatrixXd naive_logits(const embeval::HeadAssembly& a, const Eigen::MatrixXd& h) {
  const auto n = h.rows();
  const auto D = h.cols();
  const auto P = a.projection.rows();
  const auto K = a.weight.cols();
  Eigen::MatrixXd out(n, K);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> x(static_cast<std::size_t>(D));
    for (Eigen::Index d = 0; d < D; ++d) x[static_cast<std::size_t>(d)] = h(i, d);
    if (a.adaptor) {
      const auto& ad = *a.adaptor;
      std::vector<double> y = x;
      for (Eigen::Index j = 0; j < ad.hidden_weight.rows(); ++j) {
        double pre = ad.hidden_bias(j);
        for (Eigen::Index d = 0; d < D; ++d) pre += ad.hidden_weight(j, d) * x[static_cast<std::size_t>(d)];
        const double act = pre > 0 ? pre : 0.0;
        for (Eigen::Index d = 0; d < D; ++d) y[static_cast<std::size_t>(d)] += ad.output_weight(d, j) * act;
      }
      for (Eigen::Index d = 0; d < D; ++d) y[static_cast<std::size_t>(d)] += ad.output_bias(d);
      x = y;
    }
    std::vector<double> in = x;
    if (a.space == embeval::HeadSpace::Joint) {
      in.assign(static_cast<std::size_t>(P), 0.0);
      double norm2 = 0.0;
      for (Eigen::Index p = 0; p < P; ++p) {
        for (Eigen::Index d = 0; d < D; ++d) in[static_cast<std::size_t>(p)] += a.projection(p, d) * x[static_cast<std::size_t>(d)];
        norm2 += in[static_cast<std::size_t>(p)] * in[static_cast<std::size_t>(p)];
      }
      if (a.normalize_input) {
        for (auto& v : in) v /= std::sqrt(norm2);
      }
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      double s = a.bias(k);
      for (std::size_t r = 0; r < in.size(); ++r) s += in[r] * a.weight(static_cast<Eigen::Index>(r), k);
      out(i, k) = a.temperature * s;
    }
  }
  return out;
}

// Central differences of f with respect to every entry of `param`.
inline std::vector<double> central_differences(std::vector<double*> entries, const std::function<double()>& f,
                                               double step) {
  std::vector<double> out;
  out.reserve(entries.size());
  for (double* p : entries) {
    const double saved = *p;
    *p = saved + step;
    const double up = f();
    *p = saved - step;
    const double down = f();
    *p = saved;
    out.push_back((up - down) / (2.0 * step));
  }
  return out;
}

// Hand simulation of the plateau controller over a metric trace.
struct PlateauTrace {
  std::vector<double> lr_after_step;
  long terminated_at = -1;  // index into the trace, -1 if never
};

inline PlateauTrace simulate_plateau(const std::vector<double>& trace, double lr0, int patience,
                                     double factor, int terminate) {
  PlateauTrace out;
  double best = -INFINITY;
  int bad_run = 0;
  int decays = 0;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (trace[t] > best) {
      best = trace[t];
      bad_run = 0;
    } else {
      ++bad_run;
    }
    if (bad_run == terminate) {
      out.lr_after_step.push_back(lr0 * std::pow(factor, decays));
      out.terminated_at = static_cast<long>(t);
      return out;
    }
    if (bad_run > 0 && bad_run % patience == 0) ++decays;
    double lr = lr0;
    for (int d = 0; d < decays; ++d) lr *= factor;
    out.lr_after_step.push_back(lr);
  }
  return out;
}

}  // namespace oracle
