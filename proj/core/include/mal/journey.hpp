#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace mal {

struct IndustryProfile {
  double mean_clicks = 1.0;
  double carryover_gamma = 0.0;
};

// Parameters of the synthetic click-journey process.
struct GenConfig {
  std::uint64_t n_users = 0;
  std::uint64_t n_ads = 0;
  std::uint64_t n_industries = 0;
  std::uint64_t latent_dim = 0;
  double journeys_per_user_mean = 1.0;
  std::vector<IndustryProfile> industry_path_profile;
  double conv_bias = 0.0;
  double affinity_scale = 1.0;
  std::uint64_t seed = 0;

  // Standard deviation of the ad "quality" coordinate that every user loads on.
  double ad_quality_sd = 1.0;
  // Probability that a journey stays in the user's home industry.
  double home_industry_prob = 0.7;
  std::int64_t horizon_seconds = 61LL * 86400;
  double mean_click_gap_seconds = 4.0 * 3600;
  double mean_conversion_delay_seconds = 12.0 * 3600;

  // Throws a configuration error naming the first offending field.
  void validate() const;
  // Stable textual form; the digest is computed over it.
  std::string canonical() const;
  std::string digest() const;

  bool is_long_path(std::uint64_t industry) const { return industry_path_profile.at(industry).carryover_gamma >= 0.8; }
  bool is_short_path(std::uint64_t industry) const { return industry_path_profile.at(industry).carryover_gamma <= 0.3; }
};

struct Touchpoint {
  std::uint64_t ad_id = 0;
  std::uint32_t industry_id = 0;
  std::int64_t ts = 0;
  std::uint32_t position = 0;

  bool operator==(const Touchpoint&) const = default;
};

struct Conversion {
  std::int64_t ts = 0;
  bool operator==(const Conversion&) const = default;
};

struct Journey {
  std::uint64_t user_id = 0;
  std::uint64_t journey_id = 0;
  std::uint32_t industry_id = 0;
  std::vector<Touchpoint> clicks;
  std::optional<Conversion> conversion;

  bool converted() const noexcept { return conversion.has_value(); }
  // Timestamp at which the journey's outcome is settled.
  std::int64_t complete_ts() const noexcept { return conversion ? conversion->ts : clicks.back().ts; }
  bool operator==(const Journey&) const = default;
};

struct JourneyLog {
  std::vector<Journey> journeys;
  std::string gen_config_digest;

  bool operator==(const JourneyLog&) const = default;
};

// Hidden user/ad vectors, row-major.
struct Latents {
  std::uint64_t dim = 0;
  std::vector<double> users;
  std::vector<double> ads;

  std::span<const double> user(std::uint64_t id) const { return {users.data() + id * dim, dim}; }
  std::span<const double> ad(std::uint64_t id) const { return {ads.data() + id * dim, dim}; }
};

inline std::uint32_t ad_industry(std::uint64_t ad_id, std::uint64_t n_industries) {
  return static_cast<std::uint32_t>(ad_id % n_industries);
}

Latents make_latents(const GenConfig& config);

double ground_truth_conv_prob(const Journey& journey, const Latents& latents, const GenConfig& config);

JourneyLog generate_dataset(const GenConfig& config);

// Throws on invariant violations (ordering, duplicates, conversion timing).
void validate_log(const JourneyLog& log);

void write_journeys(const JourneyLog& log, const std::filesystem::path& path);
JourneyLog read_journeys(const std::filesystem::path& path);
// Sidecar path holding gen_config_digest: "x.jsonl" -> "x.meta.json".
std::filesystem::path meta_path_for(const std::filesystem::path& path);

struct SplitFraction {
  double train_fraction = 0.9;
};
struct SplitCutoff {
  std::int64_t cutoff_ts = 0;
};
using SplitSpec = std::variant<SplitFraction, SplitCutoff>;

// Temporal split by complete_ts; journeys keep their original order.
std::pair<JourneyLog, JourneyLog> split_train_test(const JourneyLog& log, const SplitSpec& spec);

}  // namespace mal
