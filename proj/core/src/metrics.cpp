#include "mal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mal/error.hpp"
#include "mal/format.hpp"

namespace mal {
namespace {

bool positive(const ScoredSample& s) { return s.label > 0.0; }

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

void check_paired(std::span<const ScoredSample> base, std::span<const ScoredSample> model) {
  if (base.size() != model.size()) fail(ErrorKind::Data, "group lift needs both models scored on the same samples");
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto& a = base[i];
    const auto& b = model[i];
    if (a.label != b.label || a.weight != b.weight || a.user_id != b.user_id || a.industry_id != b.industry_id) {
      fail(ErrorKind::Data, "scored samples differ at row " + std::to_string(i));
    }
  }
}

std::size_t bucket_of(std::uint64_t gain, std::span<const std::uint64_t> edges) {
  std::size_t b = 0;
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (gain >= edges[i]) b = i;
  return b;
}

std::string bucket_key(std::size_t b, std::span<const std::uint64_t> edges) {
  const std::string lo = std::to_string(edges[b]);
  if (b + 1 == edges.size()) return lo + "+";
  if (edges[b + 1] == edges[b] + 1) return lo;
  return lo + "-" + std::to_string(edges[b + 1] - 1);
}

}  // namespace

std::vector<ScoredSample> score_samples(const SampleSet& samples, std::span<const double> scores) {
  if (scores.size() != samples.samples.size()) {
    fail(ErrorKind::Shape, "got " + std::to_string(scores.size()) + " scores for " +
                               std::to_string(samples.samples.size()) + " samples");
  }
  const std::size_t p = samples.primary_index();
  std::vector<ScoredSample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Sample& s = samples.samples[i];
    out[i] = ScoredSample{scores[i], s.targets[p].l, s.targets[p].w, s.user_id, s.industry_id};
  }
  return out;
}

double weighted_auc(std::span<const ScoredSample> samples) {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& s : samples) {
    if (!(s.weight > 0.0)) fail(ErrorKind::Domain, "sample weights must be positive");
    if (std::isnan(s.score)) fail(ErrorKind::Domain, "NaN score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });

  double pos_total = 0.0;
  double neg_total = 0.0;
  double neg_below = 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double wp = 0.0;
    double wn = 0.0;
    std::size_t j = i;
    for (; j < order.size() && samples[order[j]].score == samples[order[i]].score; ++j) {
      const auto& s = samples[order[j]];
      (positive(s) ? wp : wn) += s.weight;
    }
    num += wp * neg_below + 0.5 * wp * wn;
    neg_below += wn;
    pos_total += wp;
    neg_total += wn;
    i = j;
  }
  if (pos_total == 0.0 || neg_total == 0.0) fail(ErrorKind::UndefinedMetric, "AUC needs both positives and negatives");
  return num / (pos_total * neg_total);
}

double gauc_reduce(std::span<const UserAuc> users) {
  double num = 0.0;
  double den = 0.0;
  for (const auto& u : users) {
    num += static_cast<double>(u.clicks) * u.auc;
    den += static_cast<double>(u.clicks);
  }
  if (den == 0.0) fail(ErrorKind::UndefinedMetric, "GAUC has no scoreable users");
  return num / den;
}

GaucResult gauc(std::span<const ScoredSample> samples) {
  std::map<std::uint64_t, std::vector<ScoredSample>> by_user;
  for (const auto& s : samples) by_user[s.user_id].push_back(s);
  std::vector<UserAuc> users;
  GaucResult result;
  for (const auto& [user, rows] : by_user) {
    const bool has_pos = std::any_of(rows.begin(), rows.end(), positive);
    const bool has_neg = !std::all_of(rows.begin(), rows.end(), positive);
    if (!has_pos || !has_neg) {
      ++result.users_skipped;
      continue;
    }
    users.push_back(UserAuc{user, weighted_auc(rows), rows.size()});
  }
  result.users_counted = users.size();
  result.gauc = gauc_reduce(users);
  return result;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::Shape, "spearman needs equal-length inputs");
  if (x.size() < 2) fail(ErrorKind::UndefinedMetric, "spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::UndefinedMetric, "spearman of a constant sequence");
  return sxy / std::sqrt(sxx * syy);
}

MetricsReport evaluate(std::span<const ScoredSample> samples) {
  MetricsReport r;
  r.samples = samples.size();
  r.positives = static_cast<std::uint64_t>(std::count_if(samples.begin(), samples.end(), positive));
  r.weighted_auc = weighted_auc(samples);
  const auto g = gauc(samples);
  r.gauc = g.gauc;
  r.users_counted = g.users_counted;
  r.users_skipped = g.users_skipped;
  return r;
}

std::map<std::uint64_t, std::uint64_t> user_positive_gain(const SampleSet& train, double trailing_fraction,
                                                          MechanismTag gain_tag, MechanismTag reference_tag) {
  if (!(trailing_fraction > 0.0 && trailing_fraction <= 1.0)) {
    fail(ErrorKind::Config, "trailing window fraction must be in (0, 1]");
  }
  const std::size_t gi = train.index_of(gain_tag);
  const std::size_t ri = train.index_of(reference_tag);
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return train.samples[a].ts < train.samples[b].ts; });
  const auto window = static_cast<std::size_t>(std::llround(trailing_fraction * static_cast<double>(order.size())));
  std::map<std::uint64_t, std::int64_t> diff;
  for (std::size_t k = order.size() - window; k < order.size(); ++k) {
    const Sample& s = train.samples[order[k]];
    auto& d = diff[s.user_id];
    d += (s.targets[gi].l > 0.0 ? 1 : 0) - (s.targets[ri].l > 0.0 ? 1 : 0);
  }
  std::map<std::uint64_t, std::uint64_t> out;
  for (const auto& [user, d] : diff) out[user] = static_cast<std::uint64_t>(std::max<std::int64_t>(0, d));
  return out;
}

GroupTable user_gain_lift(std::span<const ScoredSample> base, std::span<const ScoredSample> model,
                          const std::map<std::uint64_t, std::uint64_t>& gains, std::span<const std::uint64_t> edges) {
  check_paired(base, model);
  if (edges.empty() || edges.front() != 0 || !std::is_sorted(edges.begin(), edges.end())) {
    fail(ErrorKind::Config, "gain bucket edges must start at 0 and increase");
  }
  const std::size_t nb = edges.size();
  std::vector<std::vector<ScoredSample>> a(nb), b(nb);
  std::vector<std::map<std::uint64_t, std::uint64_t>> users(nb);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto it = gains.find(base[i].user_id);
    const std::uint64_t gain = it == gains.end() ? 0 : it->second;
    const std::size_t k = bucket_of(gain, edges);
    a[k].push_back(base[i]);
    b[k].push_back(model[i]);
    users[k][base[i].user_id] = gain;
  }
  GroupTable table{"user_pos_gain", "gauc", {}, 0};
  for (std::size_t k = 0; k < nb; ++k) {
    GroupRow row;
    row.key = bucket_key(k, edges);
    row.samples = a[k].size();
    try {
      row.metric_base = gauc(a[k]).gauc;
      row.metric_model = gauc(b[k]).gauc;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedMetric) throw;
      ++table.dropped;
      continue;
    }
    row.delta = row.metric_model - row.metric_base;
    double total = 0.0;
    for (const auto& [u, g] : users[k]) total += static_cast<double>(g);
    row.pos_gain = total / static_cast<double>(users[k].size());
    table.rows.push_back(row);
  }
  return table;
}

std::map<std::uint32_t, double> industry_positive_gain(const SampleSet& samples, MechanismTag gain_tag,
                                                       MechanismTag reference_tag) {
  const std::size_t gi = samples.index_of(gain_tag);
  const std::size_t ri = samples.index_of(reference_tag);
  std::map<std::uint32_t, std::pair<double, double>> counts;
  for (const auto& s : samples.samples) {
    auto& c = counts[s.industry_id];
    c.first += s.targets[gi].l > 0.0 ? 1.0 : 0.0;
    c.second += s.targets[ri].l > 0.0 ? 1.0 : 0.0;
  }
  std::map<std::uint32_t, double> out;
  for (const auto& [ind, c] : counts)
    if (c.second > 0.0) out[ind] = c.first / c.second;
  return out;
}

GroupTable industry_lift(std::span<const ScoredSample> base, std::span<const ScoredSample> model,
                         const std::map<std::uint32_t, double>& industry_gain) {
  check_paired(base, model);
  std::map<std::uint32_t, std::pair<std::vector<ScoredSample>, std::vector<ScoredSample>>> groups;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto& g = groups[base[i].industry_id];
    g.first.push_back(base[i]);
    g.second.push_back(model[i]);
  }
  GroupTable table{"industry", "auc", {}, 0};
  for (const auto& [ind, g] : groups) {
    GroupRow row;
    row.key = std::to_string(ind);
    row.samples = g.first.size();
    try {
      row.metric_base = weighted_auc(g.first);
      row.metric_model = weighted_auc(g.second);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::UndefinedMetric) throw;
      ++table.dropped;
      continue;
    }
    row.delta = row.metric_model - row.metric_base;
    const auto it = industry_gain.find(ind);
    row.pos_gain = it == industry_gain.end() ? 0.0 : it->second;
    table.rows.push_back(row);
  }
  return table;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["weighted_auc"] = report.weighted_auc;
  j["gauc"] = report.gauc;
  j["users_counted"] = report.users_counted;
  j["users_skipped"] = report.users_skipped;
  j["samples"] = report.samples;
  j["positives"] = report.positives;
  return j.dump(2) + "\n";
}

std::string to_text(const MetricsReport& report) {
  std::ostringstream out;
  out << "weighted_auc  " << format_fixed(report.weighted_auc, 6) << "\n"
      << "gauc          " << format_fixed(report.gauc, 6) << "\n"
      << "users         " << report.users_counted << " counted, " << report.users_skipped << " skipped\n"
      << "samples       " << report.samples << " (" << report.positives << " positive)\n";
  return out.str();
}

std::string to_json(const GroupTable& table) {
  nlohmann::ordered_json j;
  j["grouping"] = table.grouping;
  j["metric"] = table.metric;
  j["dropped"] = table.dropped;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"key", r.key},
                    {"base", r.metric_base},
                    {"model", r.metric_model},
                    {"delta", r.delta},
                    {"pos_gain", r.pos_gain},
                    {"samples", r.samples}});
  }
  j["rows"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string to_text(const GroupTable& table) {
  std::ostringstream out;
  out << table.grouping << " (" << table.metric << ", " << table.dropped << " dropped)\n";
  out << "  key        base      model     delta      pos_gain  samples\n";
  for (const auto& r : table.rows) {
    std::string key = r.key;
    key.resize(std::max<std::size_t>(key.size(), 10), ' ');
    out << "  " << key << " " << format_fixed(r.metric_base, 6) << "  " << format_fixed(r.metric_model, 6) << "  "
        << (r.delta >= 0 ? "+" : "") << format_fixed(r.delta, 6) << "  " << format_fixed(r.pos_gain, 4) << "    "
        << r.samples << "\n";
  }
  return out.str();
}

std::string to_csv(const GroupTable& table) {
  std::ostringstream out;
  out << "grouping,key,metric,base,model,delta,pos_gain,samples\n";
  for (const auto& r : table.rows) {
    out << table.grouping << "," << r.key << "," << table.metric << "," << format_double(r.metric_base) << ","
        << format_double(r.metric_model) << "," << format_double(r.delta) << "," << format_double(r.pos_gain) << ","
        << r.samples << "\n";
  }
  return out.str();
}

}  // namespace mal
