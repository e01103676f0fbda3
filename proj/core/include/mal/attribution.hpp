#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mal/journey.hpp"

namespace mal {

enum class MechanismTag { LastClick, FirstClick, Linear, TimeDecay, RemovalEffectMTA, ShapleyMTA };

std::string_view to_string(MechanismTag tag) noexcept;
MechanismTag parse_mechanism(std::string_view text);
// Bit order of the CAT label: bit i is mechanism i.
inline const std::vector<MechanismTag> kDefaultMechanismOrder{MechanismTag::LastClick, MechanismTag::FirstClick,
                                                              MechanismTag::Linear, MechanismTag::RemovalEffectMTA};

inline bool is_mta(MechanismTag tag) noexcept {
  return tag == MechanismTag::RemovalEffectMTA || tag == MechanismTag::ShapleyMTA;
}

// Observable touchpoint buckets shared by the MTA stand-in and the models.
inline constexpr std::uint32_t kPositionBuckets = 4;
inline constexpr std::uint32_t kRecencyBuckets = 8;
inline constexpr std::uint32_t kCountBuckets = 5;
inline constexpr std::size_t kMaxShapleyClicks = 12;

std::uint32_t position_bucket(std::uint32_t position) noexcept;
// 0 for a journey's first click, otherwise log-spaced gap since the previous click.
std::uint32_t recency_bucket(const Journey& journey, std::size_t index) noexcept;
// Journey-so-far click count (position + 1), log-spaced.
std::uint32_t count_bucket(std::uint32_t position) noexcept;

// Logistic set function P(conv | S) = sigmoid(bias + sum_{t in S} theta . phi(t)),
// with phi = [industry one-hot | position-bucket one-hot | recency-bucket one-hot].
struct MtaModel {
  std::uint64_t n_industries = 0;
  std::vector<double> theta;
  double bias = 0.0;

  std::size_t feature_count() const noexcept { return n_industries + kPositionBuckets + kRecencyBuckets; }
  // theta . phi(click i)
  double contribution(const Journey& journey, std::size_t index) const;
  // P(conv | J) for the full journey.
  double predict(const Journey& journey) const;
};

struct MtaFitConfig {
  double lr = 0.5;
  std::uint64_t steps = 800;
  double l2 = 1e-4;
};

struct MtaFitResult {
  MtaModel model;
  double data_loss = 0.0;
};

// Mean logistic loss of `model` on `journeys` (no regularization term).
double mta_log_loss(const MtaModel& model, const JourneyLog& journeys);

// Proximal gradient descent on the L2-regularized mean logistic loss;
// gradients of the data term come from a numcore graph.
MtaFitResult fit_mta_model(const JourneyLog& train, std::uint64_t n_industries, const MtaFitConfig& config);

struct Mechanism {
  MechanismTag tag = MechanismTag::LastClick;
  double half_life_seconds = 86400.0;
  std::shared_ptr<const MtaModel> mta;
};

struct CreditVector {
  std::vector<double> credits;
};

CreditVector attribute(const Mechanism& mechanism, const Journey& journey);

// Exact Shapley values of the fitted set function before clipping.
std::vector<double> shapley_values(const MtaModel& model, const Journey& journey);

// Algorithm: O = sum_i bits[i] * 2^i.
std::uint32_t cat_label(std::span<const int> bits);
std::vector<int> decode_cat(std::uint32_t label, std::size_t n);

enum class LabelMode { Binary, Fractional };
std::string_view to_string(LabelMode mode) noexcept;
LabelMode parse_label_mode(std::string_view text);

struct LabelWeight {
  double l = 0.0;
  double w = 1.0;
  bool operator==(const LabelWeight&) const = default;
};

struct FeatureIds {
  std::uint32_t user = 0;
  std::uint32_t ad = 0;
  std::uint32_t industry = 0;
  std::uint32_t position = 0;
  std::uint32_t recency = 0;
  std::uint32_t count = 0;
  bool operator==(const FeatureIds&) const = default;
};

struct Sample {
  std::uint64_t user_id = 0;
  std::uint64_t journey_id = 0;
  std::uint32_t industry_id = 0;
  std::uint32_t position = 0;
  std::int64_t ts = 0;
  FeatureIds features;
  // One entry per mechanism, in SampleSet::mechanism_order.
  std::vector<LabelWeight> targets;
  std::uint32_t cat_class = 0;
  bool operator==(const Sample&) const = default;
};

struct SampleSet {
  std::vector<Sample> samples;
  std::vector<MechanismTag> mechanism_order;
  MechanismTag primary_tag = MechanismTag::LastClick;
  LabelMode label_mode = LabelMode::Binary;
  std::string digest;

  std::size_t index_of(MechanismTag tag) const;
  std::size_t primary_index() const { return index_of(primary_tag); }
  bool operator==(const SampleSet&) const = default;
};

SampleSet build_samples(const JourneyLog& journeys, std::span<const Mechanism> mechanisms, MechanismTag primary_tag,
                        LabelMode label_mode);

struct PositiveRatio {
  MechanismTag tag;
  std::uint64_t positives = 0;
  double ratio = 0.0;
};

// positives(m) / positives(reference); positive means credit > 0.
std::vector<PositiveRatio> positive_ratio_report(const SampleSet& samples, MechanismTag reference);

void write_samples(const SampleSet& samples, const std::filesystem::path& path);
SampleSet read_samples(const std::filesystem::path& path);

}  // namespace mal
