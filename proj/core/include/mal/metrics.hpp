#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mal/attribution.hpp"

namespace mal {

struct ScoredSample {
  double score = 0.0;
  // Positive iff label > 0; fractional labels are binarized.
  double label = 0.0;
  double weight = 1.0;
  std::uint64_t user_id = 0;
  std::uint32_t industry_id = 0;
};

// Primary-target label and weight of each sample, paired with `scores`.
std::vector<ScoredSample> score_samples(const SampleSet& samples, std::span<const double> scores);

// Pairwise weighted Mann-Whitney AUC, ties count one half.
double weighted_auc(std::span<const ScoredSample> samples);

struct UserAuc {
  std::uint64_t user_id = 0;
  double auc = 0.0;
  std::uint64_t clicks = 0;
};

// sum_u clicks(u) * auc(u) / sum_u clicks(u), accumulated in the order given.
double gauc_reduce(std::span<const UserAuc> users);

struct GaucResult {
  double gauc = 0.0;
  std::uint64_t users_counted = 0;
  std::uint64_t users_skipped = 0;
};

// Users without both classes are skipped. clicks(u) is the user's sample count here.
GaucResult gauc(std::span<const ScoredSample> samples);

// Rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct MetricsReport {
  double weighted_auc = 0.0;
  double gauc = 0.0;
  std::uint64_t users_counted = 0;
  std::uint64_t users_skipped = 0;
  std::uint64_t samples = 0;
  std::uint64_t positives = 0;
};

MetricsReport evaluate(std::span<const ScoredSample> samples);

// Linear-minus-LastClick positive count per user over the trailing fraction of
// `train` ordered by click ts. Users with no clicks in the window are absent.
std::map<std::uint64_t, std::uint64_t> user_positive_gain(const SampleSet& train, double trailing_fraction = 0.25,
                                                          MechanismTag gain_tag = MechanismTag::Linear,
                                                          MechanismTag reference_tag = MechanismTag::LastClick);

struct GroupRow {
  std::string key;
  double metric_base = 0.0;
  double metric_model = 0.0;
  double delta = 0.0;
  // Mean per-user positive gain (user groups); positive ratio gain of the group (industries).
  double pos_gain = 0.0;
  std::uint64_t samples = 0;
};

struct GroupTable {
  std::string grouping;
  std::string metric;
  std::vector<GroupRow> rows;
  std::uint64_t dropped = 0;
};

// Lower edges of the positive-gain buckets; users absent from the gain map land in the first bucket.
inline const std::vector<std::uint64_t> kDefaultGainEdges{0, 1, 2, 3, 5};

// Delta is model minus base, GAUC per bucket.
GroupTable user_gain_lift(std::span<const ScoredSample> base, std::span<const ScoredSample> model,
                          const std::map<std::uint64_t, std::uint64_t>& gains,
                          std::span<const std::uint64_t> edges = kDefaultGainEdges);

// Delta is model minus base, AUC per industry. `pos_gain` is taken from `industry_gain` when present.
GroupTable industry_lift(std::span<const ScoredSample> base, std::span<const ScoredSample> model,
                         const std::map<std::uint32_t, double>& industry_gain = {});

// Positive-count ratio gain-vs-reference per industry over `samples`.
std::map<std::uint32_t, double> industry_positive_gain(const SampleSet& samples,
                                                       MechanismTag gain_tag = MechanismTag::Linear,
                                                       MechanismTag reference_tag = MechanismTag::LastClick);

std::string to_json(const MetricsReport& report);
std::string to_text(const MetricsReport& report);
std::string to_json(const GroupTable& table);
std::string to_text(const GroupTable& table);
std::string to_csv(const GroupTable& table);

}  // namespace mal
