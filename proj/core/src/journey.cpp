#include "mal/journey.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "mal/digest.hpp"
#include "mal/error.hpp"
#include "mal/format.hpp"
#include "mal/random.hpp"

namespace mal {
namespace {

using ordered_json = nlohmann::ordered_json;

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) fail(ErrorKind::Config, "GenConfig." + field + " " + what);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

std::int64_t positive_seconds(double seconds) { return std::max<std::int64_t>(1, std::llround(seconds)); }

}  // namespace

void GenConfig::validate() const {
  require(n_users >= 1, "n_users", "must be >= 1");
  require(n_ads >= 1, "n_ads", "must be >= 1");
  require(n_industries >= 1, "n_industries", "must be >= 1");
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(n_ads >= n_industries, "n_ads", "must be >= n_industries so every industry has an ad");
  require(std::isfinite(journeys_per_user_mean) && journeys_per_user_mean >= 1.0, "journeys_per_user_mean",
          "must be >= 1");
  require(industry_path_profile.size() == n_industries, "industry_path_profile",
          "must have one entry per industry (" + std::to_string(n_industries) + ")");
  bool has_long = false;
  bool has_short = false;
  for (std::size_t i = 0; i < industry_path_profile.size(); ++i) {
    const auto& p = industry_path_profile[i];
    const std::string field = "industry_path_profile[" + std::to_string(i) + "]";
    require(std::isfinite(p.mean_clicks) && p.mean_clicks >= 1.0, field + ".mean_clicks", "must be >= 1");
    require(p.carryover_gamma >= 0.0 && p.carryover_gamma <= 1.0, field + ".carryover_gamma", "must be in [0,1]");
    has_long = has_long || p.carryover_gamma >= 0.8;
    has_short = has_short || p.carryover_gamma <= 0.3;
  }
  require(has_long, "industry_path_profile", "needs an industry with carryover_gamma >= 0.8");
  require(has_short, "industry_path_profile", "needs an industry with carryover_gamma <= 0.3");
  require(std::isfinite(conv_bias), "conv_bias", "must be finite");
  require(std::isfinite(affinity_scale), "affinity_scale", "must be finite");
  require(std::isfinite(ad_quality_sd) && ad_quality_sd >= 0.0, "ad_quality_sd", "must be >= 0");
  require(home_industry_prob >= 0.0 && home_industry_prob <= 1.0, "home_industry_prob", "must be in [0,1]");
  require(horizon_seconds > 0, "horizon_seconds", "must be positive");
  require(mean_click_gap_seconds > 0.0, "mean_click_gap_seconds", "must be positive");
  require(mean_conversion_delay_seconds > 0.0, "mean_conversion_delay_seconds", "must be positive");
}

std::string GenConfig::canonical() const {
  std::ostringstream out;
  out << "n_users=" << n_users << "\nn_ads=" << n_ads << "\nn_industries=" << n_industries
      << "\nlatent_dim=" << latent_dim << "\njourneys_per_user_mean=" << format_double(journeys_per_user_mean);
  for (std::size_t i = 0; i < industry_path_profile.size(); ++i) {
    out << "\nindustry." << i << ".mean_clicks=" << format_double(industry_path_profile[i].mean_clicks)
        << "\nindustry." << i << ".carryover_gamma=" << format_double(industry_path_profile[i].carryover_gamma);
  }
  out << "\nconv_bias=" << format_double(conv_bias) << "\naffinity_scale=" << format_double(affinity_scale)
      << "\nseed=" << seed << "\nad_quality_sd=" << format_double(ad_quality_sd)
      << "\nhome_industry_prob=" << format_double(home_industry_prob) << "\nhorizon_seconds=" << horizon_seconds
      << "\nmean_click_gap_seconds=" << format_double(mean_click_gap_seconds)
      << "\nmean_conversion_delay_seconds=" << format_double(mean_conversion_delay_seconds) << "\n";
  return out.str();
}

std::string GenConfig::digest() const { return sha256_hex(canonical()); }

Latents make_latents(const GenConfig& config) {
  const std::uint64_t dim = config.latent_dim;
  Latents latents;
  latents.dim = dim;
  latents.users.resize(config.n_users * dim);
  latents.ads.resize(config.n_ads * dim);
  // Coordinate 0 of every user is pinned to 1, so ad coordinate 0 acts as a
  // user-independent quality term; the rest is a user-specific interaction.
  const double interaction_sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::uint64_t u = 0; u < config.n_users; ++u) {
    RandomStream rng(config.seed, StreamTag::UserLatent, u);
    latents.users[u * dim] = 1.0;
    for (std::uint64_t d = 1; d < dim; ++d) latents.users[u * dim + d] = rng.normal();
  }
  for (std::uint64_t a = 0; a < config.n_ads; ++a) {
    RandomStream rng(config.seed, StreamTag::AdLatent, a);
    latents.ads[a * dim] = config.ad_quality_sd * rng.normal();
    for (std::uint64_t d = 1; d < dim; ++d) latents.ads[a * dim + d] = interaction_sd * rng.normal();
  }
  return latents;
}

double ground_truth_conv_prob(const Journey& journey, const Latents& latents, const GenConfig& config) {
  const double gamma = config.industry_path_profile.at(journey.industry_id).carryover_gamma;
  const auto user = latents.user(journey.user_id);
  // Horner form of a_k + sum_{i<k} gamma^(k-i) a_i.
  double carried = 0.0;
  for (const auto& click : journey.clicks) carried = gamma * carried + dot(user, latents.ad(click.ad_id));
  return sigmoid(config.conv_bias + config.affinity_scale * carried);
}

JourneyLog generate_dataset(const GenConfig& config) {
  config.validate();
  const Latents latents = make_latents(config);
  const std::uint64_t n_ind = config.n_industries;

  JourneyLog log;
  log.gen_config_digest = config.digest();
  std::uint64_t next_id = 0;
  for (std::uint64_t user = 0; user < config.n_users; ++user) {
    RandomStream rng(config.seed, StreamTag::UserJourneys, user);
    const auto home = static_cast<std::uint32_t>(rng.below(n_ind));
    const std::uint64_t n_journeys = rng.shifted_geometric(config.journeys_per_user_mean);
    for (std::uint64_t j = 0; j < n_journeys; ++j) {
      Journey journey;
      journey.user_id = user;
      journey.journey_id = next_id++;
      journey.industry_id =
          rng.bernoulli(config.home_industry_prob) ? home : static_cast<std::uint32_t>(rng.below(n_ind));
      const auto& profile = config.industry_path_profile[journey.industry_id];
      const std::uint64_t length = rng.shifted_geometric(profile.mean_clicks);
      const std::uint64_t ads_in_industry = (config.n_ads - journey.industry_id + n_ind - 1) / n_ind;
      auto ts = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(config.horizon_seconds)));
      journey.clicks.reserve(length);
      for (std::uint64_t pos = 0; pos < length; ++pos) {
        if (pos > 0) ts += positive_seconds(rng.exponential(config.mean_click_gap_seconds));
        Touchpoint click;
        click.ad_id = journey.industry_id + n_ind * rng.below(ads_in_industry);
        click.industry_id = journey.industry_id;
        click.ts = ts;
        click.position = static_cast<std::uint32_t>(pos);
        journey.clicks.push_back(click);
      }
      if (rng.bernoulli(ground_truth_conv_prob(journey, latents, config))) {
        journey.conversion = Conversion{ts + positive_seconds(rng.exponential(config.mean_conversion_delay_seconds))};
      }
      log.journeys.push_back(std::move(journey));
    }
  }
  return log;
}

void validate_log(const JourneyLog& log) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(log.journeys.size());
  for (const auto& journey : log.journeys) {
    const std::string id = std::to_string(journey.journey_id);
    if (!seen.insert(journey.journey_id).second) fail(ErrorKind::Integrity, "duplicate journey_id " + id);
    if (journey.clicks.empty()) fail(ErrorKind::Integrity, "journey " + id + " has no clicks");
    for (std::size_t i = 0; i < journey.clicks.size(); ++i) {
      const auto& click = journey.clicks[i];
      if (click.position != i) fail(ErrorKind::Integrity, "journey " + id + " has a position mismatch");
      if (click.industry_id != journey.industry_id) {
        fail(ErrorKind::Integrity, "journey " + id + " mixes industries");
      }
      if (i > 0 && click.ts <= journey.clicks[i - 1].ts) {
        fail(ErrorKind::Integrity, "journey " + id + " has non-increasing click timestamps");
      }
    }
    if (journey.conversion && journey.conversion->ts <= journey.clicks.back().ts) {
      fail(ErrorKind::Integrity, "journey " + id + " converts before its last click");
    }
  }
}

std::filesystem::path meta_path_for(const std::filesystem::path& path) {
  auto meta = path;
  meta.replace_extension(".meta.json");
  return meta;
}

void write_journeys(const JourneyLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& journey : log.journeys) {
    ordered_json line;
    line["user_id"] = journey.user_id;
    line["journey_id"] = journey.journey_id;
    line["industry_id"] = journey.industry_id;
    auto clicks = ordered_json::array();
    for (const auto& click : journey.clicks) clicks.push_back({{"ad_id", click.ad_id}, {"ts", click.ts}});
    line["clicks"] = std::move(clicks);
    line["conversion"] = journey.conversion ? ordered_json{{"ts", journey.conversion->ts}} : ordered_json(nullptr);
    out << line.dump() << '\n';
  }
  std::ofstream meta(meta_path_for(path), std::ios::binary | std::ios::trunc);
  if (!meta) fail(ErrorKind::Io, "cannot write " + meta_path_for(path).string());
  ordered_json sidecar;
  sidecar["gen_config_digest"] = log.gen_config_digest;
  sidecar["journeys"] = log.journeys.size();
  meta << sidecar.dump(2) << '\n';
}

JourneyLog read_journeys(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  JourneyLog log;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    try {
      const auto line = nlohmann::json::parse(text);
      Journey journey;
      journey.user_id = line.at("user_id").get<std::uint64_t>();
      journey.journey_id = line.at("journey_id").get<std::uint64_t>();
      journey.industry_id = line.at("industry_id").get<std::uint32_t>();
      std::uint32_t position = 0;
      for (const auto& c : line.at("clicks")) {
        journey.clicks.push_back(
            Touchpoint{c.at("ad_id").get<std::uint64_t>(), journey.industry_id, c.at("ts").get<std::int64_t>(), position++});
      }
      const auto& conv = line.at("conversion");
      if (!conv.is_null()) journey.conversion = Conversion{conv.at("ts").get<std::int64_t>()};
      log.journeys.push_back(std::move(journey));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_log(log);
  const auto meta = meta_path_for(path);
  if (std::filesystem::exists(meta)) {
    std::ifstream meta_in(meta, std::ios::binary);
    try {
      log.gen_config_digest = nlohmann::json::parse(meta_in).at("gen_config_digest").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, meta.string() + ": " + e.what());
    }
  }
  return log;
}

std::pair<JourneyLog, JourneyLog> split_train_test(const JourneyLog& log, const SplitSpec& spec) {
  std::vector<bool> to_train(log.journeys.size(), false);
  if (const auto* fraction = std::get_if<SplitFraction>(&spec)) {
    if (!(fraction->train_fraction > 0.0 && fraction->train_fraction < 1.0)) {
      fail(ErrorKind::Config, "split fraction must be in (0,1)");
    }
    std::vector<std::size_t> order(log.journeys.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& ja = log.journeys[a];
      const auto& jb = log.journeys[b];
      if (ja.complete_ts() != jb.complete_ts()) return ja.complete_ts() < jb.complete_ts();
      return ja.journey_id < jb.journey_id;
    });
    const auto n_train = static_cast<std::size_t>(std::llround(fraction->train_fraction * static_cast<double>(order.size())));
    for (std::size_t i = 0; i < n_train; ++i) to_train[order[i]] = true;
  } else {
    const auto cutoff = std::get<SplitCutoff>(spec).cutoff_ts;
    for (std::size_t i = 0; i < log.journeys.size(); ++i) to_train[i] = log.journeys[i].complete_ts() <= cutoff;
  }
  std::pair<JourneyLog, JourneyLog> out;
  out.first.gen_config_digest = log.gen_config_digest;
  out.second.gen_config_digest = log.gen_config_digest;
  for (std::size_t i = 0; i < log.journeys.size(); ++i) {
    (to_train[i] ? out.first : out.second).journeys.push_back(log.journeys[i]);
  }
  if (out.first.journeys.empty() || out.second.journeys.empty()) {
    fail(ErrorKind::Config, "degenerate split: train has " + std::to_string(out.first.journeys.size()) +
                                " journeys, test has " + std::to_string(out.second.journeys.size()));
  }
  return out;
}

}  // namespace mal
