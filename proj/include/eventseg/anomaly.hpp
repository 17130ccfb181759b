#pragma once

// Abnormality handling: stage-1 filtering via marginal k-means + quantile
// cutoffs, and stage-2 classification via the 1.5-IQR decision tree with
// reinsertion of physiologically plausible epochs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "eventseg/common.hpp"
#include "eventseg/csv.hpp"
#include "eventseg/types.hpp"

namespace eventseg::anomaly {

// ---------------------------------------------------------------------------
// 1-D k-means with deterministic quantile-spread initial centroids (at the
// (2j+1)/(2k) quantiles) and a fixed iteration cap.
// ---------------------------------------------------------------------------

struct KMeans1d {
  std::vector<double> centroids;       // ascending
  std::vector<int> assignment;         // per input value
  std::vector<std::size_t> sizes;      // per cluster
};

inline KMeans1d kmeans_1d(const std::vector<double>& values, int k,
                          int max_iter = 100) {
  if (k < 1) throw validation_error("kmeans_1d: k must be >= 1");
  std::vector<double> distinct = values;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (static_cast<int>(distinct.size()) < k)
    throw degenerate_data_error("kmeans_1d: fewer distinct values than clusters");

  KMeans1d result;
  result.centroids.resize(k);
  for (int j = 0; j < k; ++j)
    result.centroids[j] = quantile(values, (2.0 * j + 1.0) / (2.0 * k));
  std::sort(result.centroids.begin(), result.centroids.end());

  result.assignment.assign(values.size(), 0);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = std::abs(values[i] - result.centroids[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (result.assignment[i] != best) {
        result.assignment[i] = best;
        changed = true;
      }
    }
    std::vector<double> sums(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      sums[result.assignment[i]] += values[i];
      ++counts[result.assignment[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (counts[j] == 0) {
        // revive an empty cluster at the point farthest from its centroid
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double d = std::abs(values[i] - result.centroids[result.assignment[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        result.centroids[j] = values[far];
        changed = true;
      } else {
        result.centroids[j] = sums[j] / static_cast<double>(counts[j]);
      }
    }
    if (!changed && iter > 0) break;
  }

  // normalize to ascending centroid order
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return result.centroids[a] < result.centroids[b];
  });
  std::vector<int> rank(k);
  for (int j = 0; j < k; ++j) rank[order[j]] = j;
  std::vector<double> sorted_centroids(k);
  for (int j = 0; j < k; ++j) sorted_centroids[j] = result.centroids[order[j]];
  result.centroids = std::move(sorted_centroids);
  for (auto& a : result.assignment) a = rank[a];
  result.sizes.assign(k, 0);
  for (int a : result.assignment) ++result.sizes[static_cast<std::size_t>(a)];
  return result;
}

// ---------------------------------------------------------------------------
// Normal-region fitting.
// ---------------------------------------------------------------------------

enum class Tail { lower, upper };  // which side of the cutoff is abnormal

struct NormalRegion {
  std::vector<std::string> features_used;
  std::vector<double> cutoffs;
  std::vector<Tail> directions;
  std::vector<double> excluded_mass;  // fraction of fitted epochs outside S^nor, per feature
};

namespace detail {

// Splits ascending-centroid clusters at the widest adjacent gap; the side
// with fewer clusters is the abnormal extreme.  For k=3 this reduces to:
// normal = clusters 1..2 when |mu2-mu1| < |mu3-mu2|, else clusters 2..3.
inline void split_clusters(const std::vector<double>& centroids, int& abn_begin,
                           int& abn_end, int& nor_begin, int& nor_end) {
  const int k = static_cast<int>(centroids.size());
  int widest = 0;
  double widest_gap = -1.0;
  for (int j = 0; j + 1 < k; ++j) {
    const double gap = centroids[j + 1] - centroids[j];
    if (gap > widest_gap) {
      widest_gap = gap;
      widest = j;
    }
  }
  const int low_count = widest + 1;
  const int high_count = k - widest - 1;
  if (high_count <= low_count) {  // abnormal above
    abn_begin = widest + 1;
    abn_end = k;
    nor_begin = 0;
    nor_end = widest + 1;
  } else {  // abnormal below
    abn_begin = 0;
    abn_end = widest + 1;
    nor_begin = widest + 1;
    nor_end = k;
  }
}

}  // namespace detail

// Per filtering feature: 1-D k-means, merge the clusters on the normal side
// of the widest centroid gap into S^nor, then set the cutoff at the q / 1-q
// quantile of S^nor; the tail follows the sign test on the normal vs
// abnormal centroids (normal above abnormal -> lower-tail cutoff).
inline NormalRegion fit_normal_region(const EpochFeatureMatrix& epochs,
                                      const std::vector<std::string>& filtering_features,
                                      int k = 3, double q = 0.025) {
  if (filtering_features.empty())
    throw validation_error("fit_normal_region: no filtering features");
  if (!(q > 0.0 && q < 0.5))
    throw validation_error("fit_normal_region: quantile must be in (0, 0.5)");

  NormalRegion region;
  region.features_used = filtering_features;
  for (const auto& name : filtering_features) {
    const int col = epochs.require_feature(name);
    std::vector<double> values;
    for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
      const double v = epochs.values(i, col);
      if (!std::isnan(v)) values.push_back(v);
    }
    if (values.size() < static_cast<std::size_t>(3 * k))
      throw insufficient_data_error("fit_normal_region: feature " + name +
                                    " has fewer than 3k non-missing epochs");
    KMeans1d km = kmeans_1d(values, k);
    int abn_begin, abn_end, nor_begin, nor_end;
    detail::split_clusters(km.centroids, abn_begin, abn_end, nor_begin, nor_end);

    std::vector<double> normal_values, abnormal_values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const int c = km.assignment[i];
      if (c >= nor_begin && c < nor_end)
        normal_values.push_back(values[i]);
      else
        abnormal_values.push_back(values[i]);
    }
    const double mu_nor = mean(normal_values);
    const double mu_abn = abnormal_values.empty() ? mu_nor : mean(abnormal_values);

    Tail tail = mu_nor > mu_abn ? Tail::lower : Tail::upper;
    const double cutoff = tail == Tail::lower ? quantile(normal_values, q)
                                              : quantile(normal_values, 1.0 - q);
    region.cutoffs.push_back(cutoff);
    region.directions.push_back(tail);
    region.excluded_mass.push_back(static_cast<double>(abnormal_values.size()) /
                                   static_cast<double>(values.size()));
  }
  return region;
}

// Flags an epoch abnormal when any filtering feature falls strictly on the
// abnormal side of its cutoff.  Missing epochs (or epochs with a filtering
// feature missing) are neither normal nor abnormal and stay unflagged; the
// presence flags on the matrix remain authoritative for missingness.
inline std::vector<char> filter_abnormal(const EpochFeatureMatrix& epochs,
                                         const NormalRegion& region) {
  std::vector<int> cols;
  for (const auto& name : region.features_used)
    cols.push_back(epochs.require_feature(name));

  std::vector<char> flagged(static_cast<std::size_t>(epochs.epoch_count()), 0);
  for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
    if (!epochs.present[static_cast<std::size_t>(i)]) continue;
    bool all_present = true;
    bool abnormal = false;
    for (std::size_t f = 0; f < cols.size(); ++f) {
      const double v = epochs.values(i, cols[f]);
      if (std::isnan(v)) {
        all_present = false;
        break;
      }
      if (region.directions[f] == Tail::lower ? v < region.cutoffs[f]
                                              : v > region.cutoffs[f])
        abnormal = true;
    }
    if (all_present && abnormal) flagged[static_cast<std::size_t>(i)] = 1;
  }
  return flagged;
}

// ---------------------------------------------------------------------------
// Stage-2 abnormality classification.
// ---------------------------------------------------------------------------

enum class AbnormalCategory { nw, loc, wake, active, other };

inline const char* to_string(AbnormalCategory c) {
  switch (c) {
    case AbnormalCategory::nw: return "NW";
    case AbnormalCategory::loc: return "LOC";
    case AbnormalCategory::wake: return "Wake";
    case AbnormalCategory::active: return "Active";
    default: return "Other";
  }
}

struct AbnormalityVerdict {
  Eigen::Index epoch_index = 0;
  AbnormalCategory category = AbnormalCategory::other;
  bool reinserted = false;
};

// Feature roles used by the decision tree.  `temp` may be empty when the
// stream has no temperature analog; the NW/LOC branches are then skipped.
struct TreeFeatures {
  std::string hr = "HR_MED";
  std::string temp = "TEMP_MED";
  std::string acc = "ACC_SD";
};

// The Active split: high HR and high ACC simultaneously, capped by absolute
// plausibility bounds (infinite caps disable them).
struct ActivePredicate {
  double hr_max = std::numeric_limits<double>::infinity();
  double acc_max = std::numeric_limits<double>::infinity();
};

// Walks the abnormality decision tree for every flagged epoch, using
// 1.5-IQR bounds computed per tree feature from the reference (normal)
// epochs pooled over the subject's record.  Epochs classified Wake or
// Active are marked for reinsertion.  An epoch with a missing tree feature
// routes to Other.
inline std::vector<AbnormalityVerdict> classify_abnormal(
    const EpochFeatureMatrix& epochs, const std::vector<Eigen::Index>& abnormal_indices,
    const std::vector<Eigen::Index>& reference_indices,
    const TreeFeatures& tree = TreeFeatures{},
    const ActivePredicate& active = ActivePredicate{}) {
  const bool has_temp = !tree.temp.empty();
  const int hr_col = epochs.require_feature(tree.hr);
  const int temp_col = has_temp ? epochs.require_feature(tree.temp) : -1;
  const int acc_col = epochs.require_feature(tree.acc);

  struct Bounds {
    double lower, upper;
  };
  auto bounds_for = [&](int col) {
    std::vector<double> ref;
    for (Eigen::Index i : reference_indices) {
      const double v = epochs.values(i, col);
      if (!std::isnan(v)) ref.push_back(v);
    }
    if (ref.size() < 4)
      throw insufficient_data_error(
          "classify_abnormal: reference too small for quartiles");
    const double q1 = quantile(ref, 0.25), q3 = quantile(ref, 0.75);
    const double iqr = q3 - q1;
    return Bounds{q1 - 1.5 * iqr, q3 + 1.5 * iqr};
  };
  const Bounds hr_b = bounds_for(hr_col);
  const Bounds acc_b = bounds_for(acc_col);
  const Bounds temp_b = has_temp ? bounds_for(temp_col) : Bounds{0, 0};

  std::vector<AbnormalityVerdict> verdicts;
  verdicts.reserve(abnormal_indices.size());
  for (Eigen::Index i : abnormal_indices) {
    AbnormalityVerdict v;
    v.epoch_index = i;
    const double hr = epochs.values(i, hr_col);
    const double acc = epochs.values(i, acc_col);
    const double temp = has_temp ? epochs.values(i, temp_col) : 0.0;
    if (std::isnan(hr) || std::isnan(acc) || (has_temp && std::isnan(temp))) {
      v.category = AbnormalCategory::other;
    } else {
      const bool low_temp = has_temp && temp < temp_b.lower;
      const bool low_acc = acc < acc_b.lower;
      const bool low_hr = hr < hr_b.lower;
      const bool high_hr = hr > hr_b.upper;
      const bool high_acc = acc > acc_b.upper;
      const bool in_range =
          hr >= hr_b.lower && hr <= hr_b.upper && acc >= acc_b.lower &&
          acc <= acc_b.upper &&
          (!has_temp || (temp >= temp_b.lower && temp <= temp_b.upper));
      if (low_temp && low_acc)
        v.category = AbnormalCategory::nw;
      else if (low_temp && low_hr)
        v.category = AbnormalCategory::loc;
      else if (high_hr && high_acc && hr <= active.hr_max && acc <= active.acc_max)
        v.category = AbnormalCategory::active;
      else if (in_range)
        v.category = AbnormalCategory::wake;
      else
        v.category = AbnormalCategory::other;
    }
    v.reinserted = v.category == AbnormalCategory::wake ||
                   v.category == AbnormalCategory::active;
    verdicts.push_back(v);
  }
  return verdicts;
}

// Optional multivariate route (joint k-means on all filtering features at
// once) kept only to check agreement with the marginal default; it flags an
// epoch abnormal when it belongs to the cluster whose centroid lies farthest
// from the largest cluster's centroid.
inline std::vector<char> filter_abnormal_joint(const EpochFeatureMatrix& epochs,
                                               const std::vector<std::string>& features,
                                               int k = 3) {
  std::vector<int> cols;
  for (const auto& name : features) cols.push_back(epochs.require_feature(name));
  // standardize each dimension, cluster with Lloyd's algorithm seeded at
  // quantile-spread points along the first feature
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
    bool ok = epochs.present[static_cast<std::size_t>(i)] != 0;
    for (int c : cols) ok = ok && !std::isnan(epochs.values(i, c));
    if (ok) rows.push_back(i);
  }
  if (rows.size() < static_cast<std::size_t>(3 * k))
    throw insufficient_data_error("filter_abnormal_joint: too few epochs");
  const int p = static_cast<int>(cols.size());
  Eigen::MatrixXd x(rows.size(), p);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < p; ++c) x(static_cast<Eigen::Index>(r), c) = epochs.values(rows[r], cols[c]);
  for (int c = 0; c < p; ++c) {
    const double m = x.col(c).mean();
    double sd = std::sqrt((x.col(c).array() - m).square().sum() /
                          std::max<double>(1.0, static_cast<double>(x.rows() - 1)));
    if (sd == 0) sd = 1.0;
    x.col(c) = (x.col(c).array() - m) / sd;
  }
  // init: sort by first coordinate, pick quantile rows
  std::vector<int> order(static_cast<int>(rows.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return x(a, 0) < x(b, 0); });
  Eigen::MatrixXd centers(k, p);
  for (int j = 0; j < k; ++j) {
    const auto pos = static_cast<std::size_t>(
        (2.0 * j + 1.0) / (2.0 * k) * static_cast<double>(rows.size() - 1));
    centers.row(j) = x.row(order[pos]);
  }
  std::vector<int> assign(rows.size(), 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = (x.row(static_cast<Eigen::Index>(i)) - centers.row(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, p);
    std::vector<int> counts(k, 0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      sums.row(assign[i]) += x.row(static_cast<Eigen::Index>(i));
      ++counts[assign[i]];
    }
    for (int j = 0; j < k; ++j)
      if (counts[j] > 0) centers.row(j) = sums.row(j) / counts[j];
    if (!changed && iter > 0) break;
  }
  std::vector<int> counts(k, 0);
  for (int a : assign) ++counts[a];
  const int biggest =
      static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  int abn = 0;
  double far = -1.0;
  for (int j = 0; j < k; ++j) {
    const double d = (centers.row(j) - centers.row(biggest)).norm();
    if (d > far) {
      far = d;
      abn = j;
    }
  }
  std::vector<char> flagged(static_cast<std::size_t>(epochs.epoch_count()), 0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (assign[i] == abn) flagged[static_cast<std::size_t>(rows[i])] = 1;
  return flagged;
}

// Abnormality report: `epoch_start,flagged,category,reinserted`.
inline void write_abnormality_csv(const EpochFeatureMatrix& epochs,
                                  const std::vector<char>& flagged,
                                  const std::vector<AbnormalityVerdict>& verdicts,
                                  const std::string& path) {
  std::vector<std::string> category(static_cast<std::size_t>(epochs.epoch_count()), "");
  std::vector<std::string> reins(static_cast<std::size_t>(epochs.epoch_count()), "");
  for (const auto& v : verdicts) {
    category[static_cast<std::size_t>(v.epoch_index)] = to_string(v.category);
    reins[static_cast<std::size_t>(v.epoch_index)] = v.reinserted ? "1" : "0";
  }
  CsvWriter w(path);
  w.header({"epoch_start", "flagged", "category", "reinserted"});
  for (Eigen::Index i = 0; i < epochs.epoch_count(); ++i) {
    const auto s = static_cast<std::size_t>(i);
    w.line({format_double(epochs.epoch_start(i)), flagged[s] ? "1" : "0", category[s],
            reins[s]});
  }
}

}  // namespace eventseg::anomaly
