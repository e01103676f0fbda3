#include "mal/attribution.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_set>

#include "json.hpp"
#include "mal/error.hpp"
#include "mal/numcore/graph.hpp"

namespace mal {
namespace {

constexpr std::array<std::pair<MechanismTag, std::string_view>, 6> kMechanismNames{{
    {MechanismTag::LastClick, "LastClick"},
    {MechanismTag::FirstClick, "FirstClick"},
    {MechanismTag::Linear, "Linear"},
    {MechanismTag::TimeDecay, "TimeDecay"},
    {MechanismTag::RemovalEffectMTA, "RemovalEffectMTA"},
    {MechanismTag::ShapleyMTA, "ShapleyMTA"},
}};

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<double> linear_credits(std::size_t k) { return std::vector<double>(k, 1.0 / static_cast<double>(k)); }

// Clips negatives, normalizes, and falls back to Linear when nothing is left.
std::vector<double> normalize_or_linear(std::vector<double> raw) {
  double total = 0.0;
  for (auto& v : raw) {
    v = std::max(v, 0.0);
    total += v;
  }
  if (!(total > 0.0)) return linear_credits(raw.size());
  for (auto& v : raw) v /= total;
  return raw;
}

const MtaModel& require_model(const Mechanism& mechanism) {
  if (!mechanism.mta) fail(ErrorKind::Config, std::string(to_string(mechanism.tag)) + " requires a fitted MtaModel");
  return *mechanism.mta;
}

}  // namespace

std::string_view to_string(MechanismTag tag) noexcept {
  for (const auto& [t, name] : kMechanismNames)
    if (t == tag) return name;
  return "?";
}

MechanismTag parse_mechanism(std::string_view text) {
  for (const auto& [t, name] : kMechanismNames)
    if (name == text) return t;
  fail(ErrorKind::Config, "unknown attribution mechanism '" + std::string(text) + "'");
}

std::string_view to_string(LabelMode mode) noexcept { return mode == LabelMode::Binary ? "binary" : "fractional"; }

LabelMode parse_label_mode(std::string_view text) {
  if (text == "binary") return LabelMode::Binary;
  if (text == "fractional") return LabelMode::Fractional;
  fail(ErrorKind::Config, "unknown label_mode '" + std::string(text) + "'");
}

std::uint32_t position_bucket(std::uint32_t position) noexcept { return std::min(position, kPositionBuckets - 1); }

std::uint32_t recency_bucket(const Journey& journey, std::size_t index) noexcept {
  if (index == 0) return 0;
  const double gap = static_cast<double>(journey.clicks[index].ts - journey.clicks[index - 1].ts);
  const auto b = static_cast<std::uint32_t>(std::floor(std::log2(1.0 + gap / 900.0)));
  return 1 + std::min(b, kRecencyBuckets - 2);
}

std::uint32_t count_bucket(std::uint32_t position) noexcept {
  const std::uint32_t n = position + 1;
  if (n <= 2) return n - 1;
  if (n <= 4) return 2;
  if (n <= 8) return 3;
  return 4;
}

double MtaModel::contribution(const Journey& journey, std::size_t index) const {
  const auto& click = journey.clicks[index];
  return theta.at(click.industry_id) + theta.at(n_industries + position_bucket(click.position)) +
         theta.at(n_industries + kPositionBuckets + recency_bucket(journey, index));
}

double MtaModel::predict(const Journey& journey) const {
  double s = bias;
  for (std::size_t i = 0; i < journey.clicks.size(); ++i) s += contribution(journey, i);
  return sigmoid(s);
}

double mta_log_loss(const MtaModel& model, const JourneyLog& journeys) {
  double total = 0.0;
  for (const auto& j : journeys.journeys) {
    double s = model.bias;
    for (std::size_t i = 0; i < j.clicks.size(); ++i) s += model.contribution(j, i);
    const double l = j.converted() ? 1.0 : 0.0;
    total += std::max(s, 0.0) - s * l + std::log1p(std::exp(-std::abs(s)));
  }
  return journeys.journeys.empty() ? 0.0 : total / static_cast<double>(journeys.journeys.size());
}

MtaFitResult fit_mta_model(const JourneyLog& train, std::uint64_t n_industries, const MtaFitConfig& config) {
  const std::size_t n = train.journeys.size();
  const auto positives = std::count_if(train.journeys.begin(), train.journeys.end(),
                                       [](const Journey& j) { return j.converted(); });
  if (positives == 0 || static_cast<std::size_t>(positives) == n) {
    fail(ErrorKind::DegenerateData, "MTA fit needs converting and non-converting journeys");
  }
  if (!(config.lr > 0.0) || !(config.l2 >= 0.0)) fail(ErrorKind::Config, "MTA fit needs lr > 0 and l2 >= 0");

  MtaModel model;
  model.n_industries = n_industries;
  const std::size_t f = model.feature_count();
  numcore::Tensor features = numcore::Tensor::matrix(n, f);
  std::vector<double> labels(n);
  const std::vector<double> weights(n, 1.0 / static_cast<double>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& j = train.journeys[r];
    if (j.industry_id >= n_industries) fail(ErrorKind::Index, "industry id outside the MTA feature space");
    for (std::size_t i = 0; i < j.clicks.size(); ++i) {
      features.at(r, j.industry_id) += 1.0;
      features.at(r, n_industries + position_bucket(j.clicks[i].position)) += 1.0;
      features.at(r, n_industries + kPositionBuckets + recency_bucket(j, i)) += 1.0;
    }
    labels[r] = j.converted() ? 1.0 : 0.0;
  }

  numcore::ParamStore store;
  auto& theta = store.add("theta", numcore::Tensor::matrix(f, 1));
  auto& bias = store.add("bias", numcore::Tensor::scalar(0.0));
  const double shrink = 1.0 / (1.0 + 2.0 * config.lr * config.l2);
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    numcore::Graph graph(store);
    const auto logits = graph.linear(graph.input(features), graph.param("theta"), graph.param("bias"));
    graph.backward(graph.weighted_bce(logits, labels, weights));
    const auto& g_theta = store.grad("theta");
    for (std::size_t i = 0; i < f; ++i) theta[i] = (theta[i] - config.lr * g_theta[i]) * shrink;
    bias[0] -= config.lr * store.grad("bias")[0];
  }
  model.theta.assign(theta.values().begin(), theta.values().end());
  model.bias = bias[0];
  for (const double t : model.theta) {
    if (!std::isfinite(t)) fail(ErrorKind::Numeric, "MTA fit diverged; lower lr");
  }
  return {model, mta_log_loss(model, train)};
}

std::vector<double> shapley_values(const MtaModel& model, const Journey& journey) {
  const std::size_t k = journey.clicks.size();
  if (k > kMaxShapleyClicks) {
    fail(ErrorKind::Capacity, "exact Shapley supports at most " + std::to_string(kMaxShapleyClicks) +
                                  " clicks, journey " + std::to_string(journey.journey_id) + " has " +
                                  std::to_string(k));
  }
  std::vector<double> c(k);
  for (std::size_t i = 0; i < k; ++i) c[i] = model.contribution(journey, i);
  const std::size_t subsets = std::size_t{1} << k;
  std::vector<double> value(subsets);
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    double s = model.bias;
    for (std::size_t i = 0; i < k; ++i)
      if (mask >> i & 1) s += c[i];
    value[mask] = sigmoid(s);
  }
  // |S|! (k - |S| - 1)! / k!
  std::vector<double> weight(k);
  for (std::size_t s = 0; s < k; ++s) {
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(k - s)) - std::lgamma(k + 1.0));
  }
  std::vector<double> phi(k, 0.0);
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t i = 0; i < k; ++i) {
      if (mask >> i & 1) continue;
      phi[i] += weight[size] * (value[mask | (std::size_t{1} << i)] - value[mask]);
    }
  }
  return phi;
}

CreditVector attribute(const Mechanism& mechanism, const Journey& journey) {
  const std::size_t k = journey.clicks.size();
  if (k == 0) fail(ErrorKind::Integrity, "journey " + std::to_string(journey.journey_id) + " has no clicks");
  if (mechanism.tag == MechanismTag::TimeDecay && !(mechanism.half_life_seconds > 0.0)) {
    fail(ErrorKind::Config, "TimeDecay half_life must be positive");
  }
  if (is_mta(mechanism.tag)) require_model(mechanism);
  if (mechanism.tag == MechanismTag::ShapleyMTA && k > kMaxShapleyClicks) {
    fail(ErrorKind::Capacity, "exact Shapley supports at most " + std::to_string(kMaxShapleyClicks) +
                                  " clicks, journey " + std::to_string(journey.journey_id) + " has " +
                                  std::to_string(k));
  }
  CreditVector out;
  out.credits.assign(k, 0.0);
  if (!journey.converted()) return out;

  switch (mechanism.tag) {
    case MechanismTag::LastClick:
      out.credits.back() = 1.0;
      break;
    case MechanismTag::FirstClick:
      out.credits.front() = 1.0;
      break;
    case MechanismTag::Linear:
      out.credits = linear_credits(k);
      break;
    case MechanismTag::TimeDecay: {
      const double t_conv = static_cast<double>(journey.conversion->ts);
      std::vector<double> exponent(k);
      for (std::size_t i = 0; i < k; ++i) {
        exponent[i] = -(t_conv - static_cast<double>(journey.clicks[i].ts)) / mechanism.half_life_seconds;
      }
      const double top = *std::max_element(exponent.begin(), exponent.end());
      for (std::size_t i = 0; i < k; ++i) out.credits[i] = std::exp2(exponent[i] - top);
      out.credits = normalize_or_linear(std::move(out.credits));
      break;
    }
    case MechanismTag::RemovalEffectMTA: {
      const auto& model = *mechanism.mta;
      std::vector<double> c(k);
      double s = model.bias;
      for (std::size_t i = 0; i < k; ++i) s += (c[i] = model.contribution(journey, i));
      const double full = sigmoid(s);
      for (std::size_t i = 0; i < k; ++i) out.credits[i] = full - sigmoid(s - c[i]);
      out.credits = normalize_or_linear(std::move(out.credits));
      break;
    }
    case MechanismTag::ShapleyMTA:
      out.credits = normalize_or_linear(shapley_values(*mechanism.mta, journey));
      break;
  }
  return out;
}

std::uint32_t cat_label(std::span<const int> bits) {
  if (bits.empty() || bits.size() > 31) fail(ErrorKind::Domain, "CAT label needs 1..31 attribution bits");
  std::uint32_t out = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] != 0 && bits[i] != 1) {
      fail(ErrorKind::Domain, "CAT bit " + std::to_string(i) + " is " + std::to_string(bits[i]) + ", expected 0 or 1");
    }
    out += static_cast<std::uint32_t>(bits[i]) << i;
  }
  return out;
}

std::vector<int> decode_cat(std::uint32_t label, std::size_t n) {
  if (n == 0 || n > 31) fail(ErrorKind::Domain, "CAT label needs 1..31 attribution bits");
  if (label >= (std::uint32_t{1} << n)) {
    fail(ErrorKind::Domain, "CAT label " + std::to_string(label) + " outside [0, 2^" + std::to_string(n) + ")");
  }
  std::vector<int> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = static_cast<int>(label >> i & 1u);
  return bits;
}

std::size_t SampleSet::index_of(MechanismTag tag) const {
  const auto it = std::find(mechanism_order.begin(), mechanism_order.end(), tag);
  if (it == mechanism_order.end()) {
    fail(ErrorKind::Config, "mechanism " + std::string(to_string(tag)) + " not in mechanism_order");
  }
  return static_cast<std::size_t>(it - mechanism_order.begin());
}

SampleSet build_samples(const JourneyLog& journeys, std::span<const Mechanism> mechanisms, MechanismTag primary_tag,
                        LabelMode label_mode) {
  if (mechanisms.empty()) fail(ErrorKind::Config, "build_samples needs at least one mechanism");
  SampleSet set;
  set.primary_tag = primary_tag;
  set.label_mode = label_mode;
  for (const auto& m : mechanisms) {
    if (std::find(set.mechanism_order.begin(), set.mechanism_order.end(), m.tag) != set.mechanism_order.end()) {
      fail(ErrorKind::Config, "duplicate mechanism " + std::string(to_string(m.tag)));
    }
    if (is_mta(m.tag)) require_model(m);
    set.mechanism_order.push_back(m.tag);
  }
  set.index_of(primary_tag);

  const std::size_t n_mech = mechanisms.size();
  std::vector<std::vector<double>> credits(n_mech);
  std::vector<int> bits(n_mech);
  for (const auto& journey : journeys.journeys) {
    for (std::size_t m = 0; m < n_mech; ++m) credits[m] = attribute(mechanisms[m], journey).credits;
    for (std::size_t i = 0; i < journey.clicks.size(); ++i) {
      const auto& click = journey.clicks[i];
      Sample s;
      s.user_id = journey.user_id;
      s.journey_id = journey.journey_id;
      s.industry_id = journey.industry_id;
      s.position = click.position;
      s.ts = click.ts;
      s.features = FeatureIds{static_cast<std::uint32_t>(journey.user_id), static_cast<std::uint32_t>(click.ad_id),
                              journey.industry_id,                           position_bucket(click.position),
                              recency_bucket(journey, i),                    count_bucket(click.position)};
      s.targets.resize(n_mech);
      for (std::size_t m = 0; m < n_mech; ++m) {
        const double credit = credits[m][i];
        bits[m] = credit > 0.0 ? 1 : 0;
        if (label_mode == LabelMode::Binary) {
          s.targets[m] = credit > 0.0 ? LabelWeight{1.0, credit} : LabelWeight{0.0, 1.0};
        } else {
          s.targets[m] = LabelWeight{credit, 1.0};
        }
      }
      s.cat_class = cat_label(bits);
      set.samples.push_back(std::move(s));
    }
  }
  return set;
}

std::vector<PositiveRatio> positive_ratio_report(const SampleSet& samples, MechanismTag reference) {
  const std::size_t ref = samples.index_of(reference);
  std::vector<PositiveRatio> out;
  for (std::size_t m = 0; m < samples.mechanism_order.size(); ++m) {
    PositiveRatio r{samples.mechanism_order[m]};
    for (const auto& s : samples.samples) r.positives += s.targets[m].l > 0.0 ? 1 : 0;
    out.push_back(r);
  }
  if (out[ref].positives == 0) {
    fail(ErrorKind::DegenerateData, "no positives under reference mechanism " + std::string(to_string(reference)));
  }
  for (auto& r : out) r.ratio = static_cast<double>(r.positives) / static_cast<double>(out[ref].positives);
  out[ref].ratio = 1.0;
  return out;
}

void write_samples(const SampleSet& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  nlohmann::ordered_json header;
  header["kind"] = "mal-samples";
  auto order = nlohmann::ordered_json::array();
  for (const auto tag : samples.mechanism_order) order.push_back(to_string(tag));
  header["mechanism_order"] = std::move(order);
  header["primary_tag"] = to_string(samples.primary_tag);
  header["label_mode"] = to_string(samples.label_mode);
  header["digest"] = samples.digest;
  header["count"] = samples.samples.size();
  out << header.dump() << '\n';
  for (const auto& s : samples.samples) {
    nlohmann::ordered_json line;
    line["user_id"] = s.user_id;
    line["journey_id"] = s.journey_id;
    line["industry_id"] = s.industry_id;
    line["position"] = s.position;
    line["ts"] = s.ts;
    line["ad_id"] = s.features.ad;
    line["pos_bucket"] = s.features.position;
    line["recency_bucket"] = s.features.recency;
    line["count_bucket"] = s.features.count;
    nlohmann::ordered_json labels;
    for (std::size_t m = 0; m < s.targets.size(); ++m) {
      labels[std::string(to_string(samples.mechanism_order[m]))] = {{"l", s.targets[m].l}, {"w", s.targets[m].w}};
    }
    line["labels"] = std::move(labels);
    line["cat"] = s.cat_class;
    out << line.dump() << '\n';
  }
}

SampleSet read_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  SampleSet set;
  std::string text;
  std::size_t line_no = 0;
  std::vector<std::string> names;
  try {
    if (!std::getline(in, text)) return set;
    ++line_no;
    const auto header = nlohmann::json::parse(text);
    if (header.at("kind").get<std::string>() != "mal-samples") {
      fail(ErrorKind::Parse, path.string() + ":1: not a sample file");
    }
    for (const auto& tag : header.at("mechanism_order")) {
      names.push_back(tag.get<std::string>());
      set.mechanism_order.push_back(parse_mechanism(names.back()));
    }
    set.primary_tag = parse_mechanism(header.at("primary_tag").get<std::string>());
    set.label_mode = parse_label_mode(header.at("label_mode").get<std::string>());
    set.digest = header.at("digest").get<std::string>();
    set.samples.reserve(header.value("count", std::size_t{0}));
    while (std::getline(in, text)) {
      ++line_no;
      if (text.empty()) continue;
      const auto line = nlohmann::json::parse(text);
      Sample s;
      s.user_id = line.at("user_id").get<std::uint64_t>();
      s.journey_id = line.at("journey_id").get<std::uint64_t>();
      s.industry_id = line.at("industry_id").get<std::uint32_t>();
      s.position = line.at("position").get<std::uint32_t>();
      s.ts = line.at("ts").get<std::int64_t>();
      s.features = FeatureIds{static_cast<std::uint32_t>(s.user_id), line.at("ad_id").get<std::uint32_t>(),
                              s.industry_id,                         line.at("pos_bucket").get<std::uint32_t>(),
                              line.at("recency_bucket").get<std::uint32_t>(),
                              line.at("count_bucket").get<std::uint32_t>()};
      const auto& labels = line.at("labels");
      for (const auto& name : names) {
        const auto& lw = labels.at(name);
        s.targets.push_back({lw.at("l").get<double>(), lw.at("w").get<double>()});
      }
      s.cat_class = line.at("cat").get<std::uint32_t>();
      set.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  return set;
}

}  // namespace mal
