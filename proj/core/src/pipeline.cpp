#include "mal/pipeline.hpp"

#include <atomic>
#include <charconv>
#include <functional>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "mal/digest.hpp"
#include "mal/error.hpp"
#include "mal/format.hpp"
#include "mal/numcore/grad_check.hpp"
#include "mal/random.hpp"

namespace mal {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

constexpr const char* kMarker = "stage.json";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Dependency, "missing " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) fail(ErrorKind::Io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::optional<std::string> marker_digest(const fs::path& dir) {
  const fs::path path = dir / kMarker;
  if (!fs::exists(path)) return std::nullopt;
  try {
    return nlohmann::json::parse(read_text(path)).at("digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

void write_marker(const fs::path& dir, const std::string& stage, const std::string& digest) {
  ordered_json j;
  j["stage"] = stage;
  j["digest"] = digest;
  write_text(dir / kMarker, j.dump(2) + "\n");
}

void require_upstream(const fs::path& dir, const std::string& expected, const std::string& stage) {
  const auto found = marker_digest(dir);
  if (!found) {
    fail(ErrorKind::Dependency, "missing " + (dir / kMarker).string() + "; run `" + stage + "` first");
  }
  if (*found != expected) {
    fail(ErrorKind::Staleness, "outputs in " + dir.string() + " were produced under a different config; rerun `" +
                                   stage + "`");
  }
}

std::string label(Variant v, std::uint64_t seed) { return std::string(to_string(v)) + "/seed-" + std::to_string(seed); }

std::string scores_text(std::span<const double> scores) {
  std::string out;
  out.reserve(scores.size() * 20);
  for (const double s : scores) {
    out += format_double(s);
    out += '\n';
  }
  return out;
}

std::vector<double> read_scores(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<double> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(n) + ": bad score");
    }
    out.push_back(v);
  }
  return out;
}

std::string train_stats_json(const TrainStats& stats, const std::vector<MechanismTag>& order, Variant variant) {
  ordered_json j;
  j["steps"] = stats.steps;
  auto windows = ordered_json::array();
  for (const auto& w : stats.windows) {
    ordered_json row;
    row["first_step"] = w.first_step;
    row["steps"] = w.steps;
    row["total"] = w.total;
    row["primary"] = w.primary;
    if (!w.aux.empty()) {
      ordered_json aux;
      for (std::size_t i = 0; i < w.aux.size(); ++i) {
        std::string name = i < order.size() ? std::string(to_string(order[i])) : std::to_string(i);
        if (variant == Variant::SharedBottomMTL) name = "aux" + std::to_string(i);
        aux[name] = w.aux[i];
      }
      row["aux"] = std::move(aux);
    }
    row["cat"] = w.cat;
    windows.push_back(std::move(row));
  }
  j["windows"] = std::move(windows);
  return j.dump(2) + "\n";
}

GroupTable average_tables(const std::vector<GroupTable>& tables) {
  GroupTable out;
  if (tables.empty()) return out;
  out.grouping = tables.front().grouping;
  out.metric = tables.front().metric;
  std::vector<std::string> keys;
  std::map<std::string, std::vector<const GroupRow*>> rows;
  for (const auto& t : tables) {
    out.dropped = std::max(out.dropped, t.dropped);
    for (const auto& r : t.rows) {
      if (!rows.count(r.key)) keys.push_back(r.key);
      rows[r.key].push_back(&r);
    }
  }
  for (const auto& key : keys) {
    const auto& list = rows[key];
    // Groups missing from some seed are dropped from the average.
    if (list.size() != tables.size()) {
      ++out.dropped;
      continue;
    }
    GroupRow avg;
    avg.key = key;
    avg.pos_gain = list.front()->pos_gain;
    avg.samples = list.front()->samples;
    for (const auto* r : list) {
      avg.metric_base += r->metric_base;
      avg.metric_model += r->metric_model;
      avg.delta += r->delta;
    }
    const double n = static_cast<double>(list.size());
    avg.metric_base /= n;
    avg.metric_model /= n;
    avg.delta /= n;
    out.rows.push_back(avg);
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string signed_fixed(double v, int digits) { return (v >= 0 ? "+" : "") + format_fixed(v, digits); }

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.resize(width, ' ');
  return s;
}

ordered_json group_json(const GroupTable& t) { return ordered_json::parse(to_json(t)); }

}  // namespace

const VariantSummary* ReportData::find(Variant v) const {
  for (const auto& s : variants)
    if (s.variant == v) return &s;
  return nullptr;
}

Pipeline::Pipeline(ExperimentConfig config, RunOptions options) : config_(std::move(config)), options_(options) {
  config_.validate();
  if (options_.jobs == 0) options_.jobs = 1;
}

fs::path Pipeline::data_dir() const { return config_.paths.resolve(config_.paths.data); }
fs::path Pipeline::samples_dir() const { return config_.paths.resolve(config_.paths.samples); }
fs::path Pipeline::reports_dir() const { return config_.paths.resolve(config_.paths.reports); }

fs::path Pipeline::checkpoint_dir(Variant v, std::uint64_t seed) const {
  return config_.paths.resolve(config_.paths.checkpoints) / std::string(to_string(v)) / ("seed-" + std::to_string(seed));
}

fs::path Pipeline::eval_dir(Variant v, std::uint64_t seed) const {
  return reports_dir() / "eval" / std::string(to_string(v)) / ("seed-" + std::to_string(seed));
}

std::string Pipeline::data_digest() const { return sha256_hex("data\n" + config_.data_key()); }

std::string Pipeline::attribution_digest() const {
  return sha256_hex(data_digest() + "\nattribution\n" + config_.attribution_key());
}

std::string Pipeline::model_digest(Variant v, std::uint64_t seed) const {
  return sha256_hex(attribution_digest() + "\nmodel\n" + config_.model_key() + "variant=" + std::string(to_string(v)) +
                    "\nseed=" + std::to_string(seed) + "\n");
}

std::string Pipeline::eval_digest(Variant v, std::uint64_t seed) const {
  return sha256_hex(model_digest(v, seed) + "\neval\n");
}

std::string Pipeline::report_digest() const {
  std::string key = attribution_digest() + "\nreport\n" + config_.report_key();
  for (const auto v : config_.variants)
    for (const auto s : config_.seeds) key += eval_digest(v, s) + "\n";
  return sha256_hex(key);
}

void Pipeline::notice(const std::string& message) {
  if (!options_.log) return;
  std::lock_guard lock(log_mutex_);
  *options_.log << message << '\n';
}

// Returns false when the stage is current and should be skipped.
static bool begin_stage(const fs::path& dir, const std::string& digest, bool force, const std::function<void(const std::string&)>& say,
                        const std::string& what) {
  const auto found = marker_digest(dir);
  if (found && *found == digest && !force) {
    say("skip " + what + ": up to date");
    return false;
  }
  if (found && *found != digest && !force) {
    fail(ErrorKind::Staleness, dir.string() + " holds " + what + " outputs from a different config; pass --force to overwrite");
  }
  fs::remove(dir / kMarker);
  say("run " + what);
  return true;
}

void Pipeline::gen() {
  const fs::path dir = data_dir();
  if (!begin_stage(dir, data_digest(), options_.force, [this](const std::string& m) { notice(m); }, "gen")) return;
  fs::create_directories(dir);
  const JourneyLog log = generate_dataset(config_.gen);
  validate_log(log);
  const auto [train_log, test_log] = split_train_test(log, SplitFraction{config_.train_fraction});
  write_journeys(log, dir / "journeys.jsonl");
  write_journeys(train_log, dir / "train.jsonl");
  write_journeys(test_log, dir / "test.jsonl");
  notice("gen: " + std::to_string(log.journeys.size()) + " journeys, " + std::to_string(train_log.journeys.size()) +
         " train / " + std::to_string(test_log.journeys.size()) + " test");
  write_marker(dir, "gen", data_digest());
}

void Pipeline::attribute() {
  require_upstream(data_dir(), data_digest(), "gen");
  const fs::path dir = samples_dir();
  if (!begin_stage(dir, attribution_digest(), options_.force, [this](const std::string& m) { notice(m); }, "attribute")) {
    return;
  }
  fs::create_directories(dir);
  const JourneyLog train_log = read_journeys(data_dir() / "train.jsonl");
  const JourneyLog test_log = read_journeys(data_dir() / "test.jsonl");
  for (const auto* log : {&train_log, &test_log}) {
    if (log->gen_config_digest != config_.gen.digest()) {
      fail(ErrorKind::Staleness, "journey files in " + data_dir().string() + " do not match [gen]; rerun `gen`");
    }
  }
  const auto& ac = config_.attribution;
  std::shared_ptr<const MtaModel> mta;
  if (std::any_of(ac.mechanism_order.begin(), ac.mechanism_order.end(), is_mta)) {
    const MtaFitResult fit = fit_mta_model(train_log, config_.gen.n_industries, ac.mta);
    mta = std::make_shared<const MtaModel>(fit.model);
    ordered_json j;
    j["n_industries"] = fit.model.n_industries;
    j["bias"] = fit.model.bias;
    j["theta"] = fit.model.theta;
    j["data_loss"] = fit.data_loss;
    write_text(dir / "mta.json", j.dump(2) + "\n");
  }
  std::vector<Mechanism> mechanisms;
  for (const auto tag : ac.mechanism_order) {
    Mechanism m;
    m.tag = tag;
    m.half_life_seconds = ac.half_life_seconds;
    if (is_mta(tag)) m.mta = mta;
    mechanisms.push_back(m);
  }
  const SampleSet train_set = build_samples(train_log, mechanisms, ac.primary_tag, ac.label_mode);
  const SampleSet test_set = build_samples(test_log, mechanisms, ac.primary_tag, ac.label_mode);
  write_samples(train_set, dir / "train.jsonl");
  write_samples(test_set, dir / "test.jsonl");
  notice("attribute: " + std::to_string(train_set.samples.size()) + " train / " +
         std::to_string(test_set.samples.size()) + " test samples");
  write_marker(dir, "attribute", attribution_digest());
}

void Pipeline::train_one(Variant v, std::uint64_t seed) {
  const fs::path dir = checkpoint_dir(v, seed);
  const std::string digest = model_digest(v, seed);
  if (!begin_stage(dir, digest, options_.force, [this](const std::string& m) { notice(m); }, "train " + label(v, seed))) {
    return;
  }
  // Each job reads its own copy so jobs share no mutable state.
  const SampleSet train_set = read_samples(samples_dir() / "train.jsonl");
  ArchConfig arch = config_.arch;
  arch.variant = v;
  VocabSizes vocab;
  vocab.users = static_cast<std::uint32_t>(config_.gen.n_users);
  vocab.ads = static_cast<std::uint32_t>(config_.gen.n_ads);
  vocab.industries = static_cast<std::uint32_t>(config_.gen.n_industries);
  MalModel model = build_model(arch, vocab, config_.attribution.mechanism_order, config_.attribution.primary_tag, seed);
  TrainConfig tc = config_.train;
  tc.seed = seed;
  const TrainStats stats = mal::train(model, train_set, tc);
  save_model(model, dir);
  write_text(dir / "trainstats.json", train_stats_json(stats, model.mechanism_order, v));
  const double last = stats.windows.empty() ? 0.0 : stats.windows.back().total;
  notice("train " + label(v, seed) + ": " + std::to_string(stats.steps) + " steps, final window loss " +
         format_fixed(last, 4));
  write_marker(dir, "train", digest);
}

void Pipeline::eval_one(Variant v, std::uint64_t seed) {
  require_upstream(checkpoint_dir(v, seed), model_digest(v, seed), "train");
  const fs::path dir = eval_dir(v, seed);
  const std::string digest = eval_digest(v, seed);
  if (!begin_stage(dir, digest, options_.force, [this](const std::string& m) { notice(m); }, "eval " + label(v, seed))) {
    return;
  }
  const SampleSet test_set = read_samples(samples_dir() / "test.jsonl");
  const MalModel model = load_model(checkpoint_dir(v, seed));
  const auto scores = predict_primary(model, test_set);
  const MetricsReport metrics = evaluate(score_samples(test_set, scores));
  write_text(dir / "scores.txt", scores_text(scores));
  ordered_json j = ordered_json::parse(to_json(metrics));
  j["variant"] = to_string(v);
  j["seed"] = seed;
  j["digest"] = digest;
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  notice("eval " + label(v, seed) + ": gauc " + format_fixed(metrics.gauc, 5) + ", auc " +
         format_fixed(metrics.weighted_auc, 5));
  write_marker(dir, "eval", digest);
}

void Pipeline::run_jobs(const std::vector<Variant>& variants, bool training) {
  std::vector<std::pair<Variant, std::uint64_t>> jobs;
  for (const auto v : variants)
    for (const auto s : config_.seeds) jobs.emplace_back(v, s);
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        if (training) {
          train_one(jobs[i].first, jobs[i].second);
        } else {
          eval_one(jobs[i].first, jobs[i].second);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(options_.jobs, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void Pipeline::train() {
  require_upstream(samples_dir(), attribution_digest(), "attribute");
  run_jobs(config_.variants, true);
}

void Pipeline::eval() {
  require_upstream(samples_dir(), attribution_digest(), "attribute");
  run_jobs(config_.variants, false);
}

ReportData Pipeline::build_report(const std::vector<Variant>& variants) {
  for (const auto v : variants)
    for (const auto s : config_.seeds) require_upstream(eval_dir(v, s), eval_digest(v, s), "eval");
  require_upstream(samples_dir(), attribution_digest(), "attribute");

  const SampleSet train_set = read_samples(samples_dir() / "train.jsonl");
  const SampleSet test_set = read_samples(samples_dir() / "test.jsonl");
  ReportData r;
  r.digest = report_digest();
  r.primary_tag = config_.attribution.primary_tag;
  const auto& order = config_.attribution.mechanism_order;
  const bool has_last = std::find(order.begin(), order.end(), MechanismTag::LastClick) != order.end();
  const bool has_linear = std::find(order.begin(), order.end(), MechanismTag::Linear) != order.end();
  if (has_last) r.positive_ratios = positive_ratio_report(train_set, MechanismTag::LastClick);

  std::map<std::pair<Variant, std::uint64_t>, std::vector<ScoredSample>> scored;
  for (const auto v : variants) {
    VariantSummary s;
    s.variant = v;
    for (const auto seed : config_.seeds) {
      const auto scores = read_scores(eval_dir(v, seed) / "scores.txt");
      auto rows = score_samples(test_set, scores);
      const MetricsReport m = evaluate(rows);
      s.seeds.push_back(seed);
      s.gauc.push_back(m.gauc);
      s.auc.push_back(m.weighted_auc);
      scored[{v, seed}] = std::move(rows);
    }
    s.mean_gauc = mean(s.gauc);
    s.min_gauc = *std::min_element(s.gauc.begin(), s.gauc.end());
    s.max_gauc = *std::max_element(s.gauc.begin(), s.gauc.end());
    s.mean_auc = mean(s.auc);
    const auto arch = nlohmann::json::parse(read_text(checkpoint_dir(v, config_.seeds.front()) / "arch.json"));
    s.parameter_count = arch.at("parameter_count").get<std::uint64_t>();
    r.variants.push_back(std::move(s));
  }

  const bool pair = std::find(variants.begin(), variants.end(), Variant::Base) != variants.end() &&
                    std::find(variants.begin(), variants.end(), Variant::MAL) != variants.end();
  if (pair) {
    std::map<std::uint64_t, std::uint64_t> gains;
    std::map<std::uint32_t, double> industry_gain;
    if (has_last && has_linear) {
      gains = user_positive_gain(train_set, config_.report.trailing_fraction);
      industry_gain = industry_positive_gain(train_set);
    }
    std::vector<GroupTable> industry_tables;
    for (const auto seed : config_.seeds) {
      const auto& base = scored.at({Variant::Base, seed});
      const auto& model = scored.at({Variant::MAL, seed});
      if (has_last && has_linear) r.user_groups_per_seed.push_back(user_gain_lift(base, model, gains, config_.report.gain_edges));
      GroupTable ind = industry_lift(base, model, industry_gain);
      double lsum = 0.0, ssum = 0.0;
      std::size_t ln = 0, sn = 0;
      for (const auto& row : ind.rows) {
        const auto id = std::stoull(row.key);
        if (config_.gen.is_long_path(id)) {
          lsum += row.delta;
          ++ln;
        } else if (config_.gen.is_short_path(id)) {
          ssum += row.delta;
          ++sn;
        }
      }
      r.long_path_delta_per_seed.push_back(ln ? lsum / static_cast<double>(ln) : 0.0);
      r.short_path_delta_per_seed.push_back(sn ? ssum / static_cast<double>(sn) : 0.0);
      industry_tables.push_back(std::move(ind));
    }
    r.user_groups = average_tables(r.user_groups_per_seed);
    r.industries = average_tables(industry_tables);
    r.long_path_delta = mean(r.long_path_delta_per_seed);
    r.short_path_delta = mean(r.short_path_delta_per_seed);
    if (r.user_groups.rows.size() >= 2) {
      std::vector<double> idx, delta;
      for (std::size_t i = 0; i < r.user_groups.rows.size(); ++i) {
        idx.push_back(static_cast<double>(i));
        delta.push_back(r.user_groups.rows[i].delta);
      }
      try {
        r.user_group_spearman = spearman(idx, delta);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::UndefinedMetric) throw;
      }
    }
  }
  return r;
}

ReportData Pipeline::report() { return report_for(config_.variants); }

ReportData Pipeline::report_for(const std::vector<Variant>& variants) {
  ReportData r = build_report(variants);
  const fs::path dir = reports_dir();
  const std::string digest = sha256_hex(r.digest + "\nvariants=" + std::to_string(variants.size()));
  const std::string stem = variants == config_.variants ? "report" : "ablation";
  if (!options_.force && marker_digest(dir / stem) == digest) {
    notice("skip " + stem + ": up to date");
    return r;
  }
  write_text(dir / (stem + ".txt"), to_text(r));
  write_text(dir / (stem + ".json"), to_json(r));
  if (!r.user_groups.rows.empty()) write_text(dir / (stem + "_user_groups.csv"), to_csv(r.user_groups));
  if (!r.industries.rows.empty()) write_text(dir / (stem + "_industries.csv"), to_csv(r.industries));
  write_marker(dir / stem, stem, digest);
  notice("wrote " + (dir / (stem + ".txt")).string());
  return r;
}

ReportData Pipeline::ablate() {
  const std::vector<Variant> trio{Variant::Base, Variant::MAL_noCAT, Variant::MAL_noMultiAttr, Variant::MAL};
  gen();
  attribute();
  run_jobs(trio, true);
  run_jobs(trio, false);
  return report_for(trio);
}

ReportData Pipeline::run_all() {
  gen();
  attribute();
  train();
  eval();
  return report();
}

std::string to_text(const ReportData& r) {
  std::ostringstream out;
  out << "config digest " << r.digest << "\n";
  out << "primary target " << to_string(r.primary_tag) << "\n\n";
  if (!r.positive_ratios.empty()) {
    out << "positive ratio (train, relative to LastClick)\n";
    for (const auto& p : r.positive_ratios) {
      out << "  " << pad(std::string(to_string(p.tag)), 18) << format_fixed(p.ratio, 3) << "r  (" << p.positives
          << " positives)\n";
    }
    out << "\n";
  }
  const VariantSummary* base = r.find(Variant::Base);
  out << "GAUC over seeds\n";
  out << "  variant           mean      min       max       vs Base    wins  AUC       params\n";
  for (const auto& s : r.variants) {
    out << "  " << pad(std::string(to_string(s.variant)), 17) << " " << format_fixed(s.mean_gauc, 5) << "   "
        << format_fixed(s.min_gauc, 5) << "   " << format_fixed(s.max_gauc, 5) << "   ";
    if (base && s.variant != Variant::Base) {
      std::size_t wins = 0;
      for (std::size_t i = 0; i < s.gauc.size(); ++i) wins += s.gauc[i] > base->gauc[i] ? 1 : 0;
      out << signed_fixed(s.mean_gauc - base->mean_gauc, 5) << "   " << wins << "/" << s.gauc.size() << "   ";
    } else {
      out << pad("-", 11) << pad("-", 6);
    }
    out << format_fixed(s.mean_auc, 5) << "   " << s.parameter_count << "\n";
  }
  out << "\n  per seed\n";
  for (const auto& s : r.variants) {
    out << "  " << pad(std::string(to_string(s.variant)), 17);
    for (std::size_t i = 0; i < s.gauc.size(); ++i) out << " " << s.seeds[i] << ":" << format_fixed(s.gauc[i], 5);
    out << "\n";
  }
  if (!r.user_groups.rows.empty()) {
    out << "\nMAL minus Base by user positive gain (mean over seeds)\n" << to_text(r.user_groups);
    out << "  spearman(bucket, delta) "
        << (r.user_group_spearman ? format_fixed(*r.user_group_spearman, 4) : std::string("undefined")) << "\n";
  }
  if (!r.industries.rows.empty()) {
    out << "\nMAL minus Base by industry (mean over seeds)\n" << to_text(r.industries);
    out << "  long-path mean delta  " << signed_fixed(r.long_path_delta, 5) << "\n";
    out << "  short-path mean delta " << signed_fixed(r.short_path_delta, 5) << "\n";
  }
  return out.str();
}

std::string to_json(const ReportData& r) {
  ordered_json j;
  j["digest"] = r.digest;
  j["primary_tag"] = to_string(r.primary_tag);
  auto ratios = ordered_json::array();
  for (const auto& p : r.positive_ratios) {
    ratios.push_back({{"mechanism", to_string(p.tag)}, {"positives", p.positives}, {"ratio", p.ratio}});
  }
  j["positive_ratios"] = std::move(ratios);
  auto variants = ordered_json::array();
  for (const auto& s : r.variants) {
    ordered_json v;
    v["variant"] = to_string(s.variant);
    v["seeds"] = s.seeds;
    v["gauc"] = s.gauc;
    v["auc"] = s.auc;
    v["mean_gauc"] = s.mean_gauc;
    v["min_gauc"] = s.min_gauc;
    v["max_gauc"] = s.max_gauc;
    v["mean_auc"] = s.mean_auc;
    v["parameter_count"] = s.parameter_count;
    variants.push_back(std::move(v));
  }
  j["variants"] = std::move(variants);
  if (!r.user_groups.rows.empty()) {
    j["user_groups"] = group_json(r.user_groups);
    j["user_group_spearman"] = r.user_group_spearman ? ordered_json(*r.user_group_spearman) : ordered_json(nullptr);
  }
  if (!r.industries.rows.empty()) {
    j["industries"] = group_json(r.industries);
    j["long_path_delta"] = r.long_path_delta;
    j["short_path_delta"] = r.short_path_delta;
    j["long_path_delta_per_seed"] = r.long_path_delta_per_seed;
    j["short_path_delta_per_seed"] = r.short_path_delta_per_seed;
  }
  return j.dump(2) + "\n";
}

bool run_self_checks(std::ostream& out) {
  bool ok = true;
  auto line = [&](bool pass, const std::string& name, const std::string& detail) {
    out << (pass ? "PASS " : "FAIL ") << name << "  " << detail << "\n";
    ok = ok && pass;
  };

  // A random batch for the default MAL graph with four mechanisms plus CAT.
  const std::vector<MechanismTag> order{MechanismTag::LastClick, MechanismTag::FirstClick, MechanismTag::Linear,
                                        MechanismTag::RemovalEffectMTA};
  VocabSizes vocab;
  vocab.users = 20;
  vocab.ads = 30;
  vocab.industries = 4;
  MalModel model = build_model(ArchConfig{}, vocab, order, MechanismTag::LastClick, 11);
  // Embeddings are redrawn at unit scale so finite differences stay clear of ReLU kinks.
  RandomStream draw(11, StreamTag::GradCheck, 1);
  for (const auto& name : model.params.names()) {
    if (name.rfind("emb.", 0) != 0) continue;
    for (auto& x : model.params.value(name).values()) x = draw.normal();
  }
  Batch batch;
  const std::size_t rows = 8;
  for (std::size_t r = 0; r < rows; ++r) {
    batch.user.push_back(static_cast<std::uint32_t>(draw.below(vocab.users)));
    batch.ad.push_back(static_cast<std::uint32_t>(draw.below(vocab.ads)));
    batch.industry.push_back(static_cast<std::uint32_t>(draw.below(vocab.industries)));
    batch.position.push_back(static_cast<std::uint32_t>(draw.below(vocab.positions)));
    batch.recency.push_back(static_cast<std::uint32_t>(draw.below(vocab.recency)));
    batch.count.push_back(static_cast<std::uint32_t>(draw.below(vocab.count)));
  }
  batch.labels.assign(order.size(), std::vector<double>(rows));
  batch.weights.assign(order.size(), std::vector<double>(rows));
  batch.cat.assign(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t m = 0; m < order.size(); ++m) {
      const bool bit = draw.bernoulli(0.4);
      batch.labels[m][r] = bit ? 1.0 : 0.0;
      batch.weights[m][r] = bit ? draw.uniform(0.2, 1.0) : 1.0;
      if (bit) batch.cat[r] |= 1u << m;
    }
  }
  auto loss_with = [&](numcore::GraphOptions opts) {
    return [&model, &batch, opts](numcore::ParamStore& store, bool with_gradients) {
      numcore::Graph g(store, opts);
      const MalOutputs o = forward(g, model, batch);
      const LossTerms t = total_loss(g, o, batch, model);
      if (with_gradients) g.backward(t.total);
      return g.scalar(t.total);
    };
  };
  const auto clean = numcore::grad_check(loss_with({}), model.params, 1e-5, 3);
  line(clean.max_relative_error < 1e-4, "grad_check MAL graph",
       "max rel error " + format_double(clean.max_relative_error) + " over " + std::to_string(clean.coordinates) +
           " coordinates");
  const auto broken = numcore::grad_check(loss_with({numcore::OpKind::Relu}), model.params, 1e-5, 3);
  line(broken.max_relative_error > 1e-2, "grad_check detects a broken ReLU backward",
       "max rel error " + format_double(broken.max_relative_error));

  // Sort-based AUC against the quadratic pairwise definition.
  RandomStream rng(5, StreamTag::Test, 0);
  double worst = 0.0;
  for (int instance = 0; instance < 50; ++instance) {
    const std::size_t n = 2 + rng.below(400);
    std::vector<ScoredSample> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i].score = static_cast<double>(rng.below(20));
      s[i].label = i == 0 ? 1.0 : (i == 1 ? 0.0 : (rng.bernoulli(0.3) ? 1.0 : 0.0));
      s[i].weight = rng.uniform(0.1, 2.0);
    }
    double num = 0.0, wp = 0.0, wn = 0.0;
    for (const auto& p : s) {
      if (p.label > 0) wp += p.weight; else wn += p.weight;
      if (p.label <= 0) continue;
      for (const auto& q : s) {
        if (q.label > 0) continue;
        num += p.weight * q.weight * (p.score > q.score ? 1.0 : (p.score == q.score ? 0.5 : 0.0));
      }
    }
    worst = std::max(worst, std::abs(weighted_auc(s) - num / (wp * wn)));
  }
  line(worst < 1e-12, "weighted_auc matches pairwise definition", "max abs diff " + format_double(worst));

  const std::vector<UserAuc> users{{1, 1.0, 3}, {2, 0.5, 1}};
  const double g = gauc_reduce(users);
  line(g == 0.875, "gauc click weighting", "(3*1.0 + 1*0.5)/4 = " + format_double(g));
  return ok;
}

}  // namespace mal
