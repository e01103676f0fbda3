#include "mal/experiment.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mal/error.hpp"
#include "mal/format.hpp"

namespace mal {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) fail(ErrorKind::Config, key + ": '" + text + "' is not a valid number");
  return value;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::Config, key + ": expected true or false, got '" + text + "'");
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt(items[i]);
  }
  return out;
}

std::string u64s(std::uint64_t v) { return std::to_string(v); }

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto path = [&](const char* key, std::filesystem::path PathsConfig::*m) {
      f.push_back({"paths", key, [m](const C& c) { return (c.paths.*m).string(); },
                   [m](C& c, const std::string& v, const std::string&) { c.paths.*m = v; }});
    };
    path("workdir", &PathsConfig::workdir);
    path("data", &PathsConfig::data);
    path("samples", &PathsConfig::samples);
    path("checkpoints", &PathsConfig::checkpoints);
    path("reports", &PathsConfig::reports);

    auto gen_u64 = [&](const char* key, std::uint64_t GenConfig::*m) {
      f.push_back({"gen", key, [m](const C& c) { return u64s(c.gen.*m); },
                   [m](C& c, const std::string& v, const std::string& k) { c.gen.*m = parse_number<std::uint64_t>(v, k); }});
    };
    auto gen_real = [&](const char* key, double GenConfig::*m) {
      f.push_back({"gen", key, [m](const C& c) { return format_double(c.gen.*m); },
                   [m](C& c, const std::string& v, const std::string& k) { c.gen.*m = parse_number<double>(v, k); }});
    };
    gen_u64("n_users", &GenConfig::n_users);
    gen_u64("n_ads", &GenConfig::n_ads);
    gen_u64("n_industries", &GenConfig::n_industries);
    gen_u64("latent_dim", &GenConfig::latent_dim);
    gen_real("journeys_per_user_mean", &GenConfig::journeys_per_user_mean);
    auto profile = [&](const char* key, double IndustryProfile::*m) {
      f.push_back({"gen", key,
                   [m](const C& c) { return join(c.gen.industry_path_profile, [m](const IndustryProfile& p) { return format_double(p.*m); }); },
                   [m](C& c, const std::string& v, const std::string& k) {
                     const auto items = split_list(v);
                     auto& prof = c.gen.industry_path_profile;
                     if (prof.size() < items.size()) prof.resize(items.size());
                     if (prof.size() > items.size()) prof.resize(items.size());
                     for (std::size_t i = 0; i < items.size(); ++i) prof[i].*m = parse_number<double>(items[i], k);
                   }});
    };
    profile("mean_clicks", &IndustryProfile::mean_clicks);
    profile("carryover_gamma", &IndustryProfile::carryover_gamma);
    gen_real("conv_bias", &GenConfig::conv_bias);
    gen_real("affinity_scale", &GenConfig::affinity_scale);
    gen_u64("seed", &GenConfig::seed);
    gen_real("ad_quality_sd", &GenConfig::ad_quality_sd);
    gen_real("home_industry_prob", &GenConfig::home_industry_prob);
    f.push_back({"gen", "horizon_seconds", [](const C& c) { return std::to_string(c.gen.horizon_seconds); },
                 [](C& c, const std::string& v, const std::string& k) { c.gen.horizon_seconds = parse_number<std::int64_t>(v, k); }});
    gen_real("mean_click_gap_seconds", &GenConfig::mean_click_gap_seconds);
    gen_real("mean_conversion_delay_seconds", &GenConfig::mean_conversion_delay_seconds);

    f.push_back({"split", "train_fraction", [](const C& c) { return format_double(c.train_fraction); },
                 [](C& c, const std::string& v, const std::string& k) { c.train_fraction = parse_number<double>(v, k); }});

    f.push_back({"attribution", "mechanism_order",
                 [](const C& c) { return join(c.attribution.mechanism_order, [](MechanismTag t) { return std::string(to_string(t)); }); },
                 [](C& c, const std::string& v, const std::string&) {
                   c.attribution.mechanism_order.clear();
                   for (const auto& item : split_list(v)) c.attribution.mechanism_order.push_back(parse_mechanism(item));
                 }});
    f.push_back({"attribution", "primary_tag", [](const C& c) { return std::string(to_string(c.attribution.primary_tag)); },
                 [](C& c, const std::string& v, const std::string&) { c.attribution.primary_tag = parse_mechanism(v); }});
    f.push_back({"attribution", "label_mode", [](const C& c) { return std::string(to_string(c.attribution.label_mode)); },
                 [](C& c, const std::string& v, const std::string&) { c.attribution.label_mode = parse_label_mode(v); }});
    f.push_back({"attribution", "half_life_seconds", [](const C& c) { return format_double(c.attribution.half_life_seconds); },
                 [](C& c, const std::string& v, const std::string& k) { c.attribution.half_life_seconds = parse_number<double>(v, k); }});
    f.push_back({"attribution", "mta_lr", [](const C& c) { return format_double(c.attribution.mta.lr); },
                 [](C& c, const std::string& v, const std::string& k) { c.attribution.mta.lr = parse_number<double>(v, k); }});
    f.push_back({"attribution", "mta_steps", [](const C& c) { return u64s(c.attribution.mta.steps); },
                 [](C& c, const std::string& v, const std::string& k) { c.attribution.mta.steps = parse_number<std::uint64_t>(v, k); }});
    f.push_back({"attribution", "mta_l2", [](const C& c) { return format_double(c.attribution.mta.l2); },
                 [](C& c, const std::string& v, const std::string& k) { c.attribution.mta.l2 = parse_number<double>(v, k); }});

    auto dims = [&](const char* key, std::vector<std::size_t> ArchConfig::*m) {
      f.push_back({"arch", key, [m](const C& c) { return join(c.arch.*m, [](std::size_t d) { return std::to_string(d); }); },
                   [m](C& c, const std::string& v, const std::string& k) {
                     (c.arch.*m).clear();
                     for (const auto& item : split_list(v)) (c.arch.*m).push_back(parse_number<std::size_t>(item, k));
                   }});
    };
    f.push_back({"arch", "embedding_dim", [](const C& c) { return std::to_string(c.arch.embedding_dim); },
                 [](C& c, const std::string& v, const std::string& k) { c.arch.embedding_dim = parse_number<std::size_t>(v, k); }});
    dims("shared_mlp", &ArchConfig::shared_mlp);
    dims("tower", &ArchConfig::tower);
    dims("ptp_mlp", &ArchConfig::ptp_mlp);
    f.push_back({"arch", "projection_dim", [](const C& c) { return std::to_string(c.arch.projection_dim); },
                 [](C& c, const std::string& v, const std::string& k) { c.arch.projection_dim = parse_number<std::size_t>(v, k); }});
    f.push_back({"arch", "lambda_aux", [](const C& c) { return format_double(c.arch.lambda_aux); },
                 [](C& c, const std::string& v, const std::string& k) { c.arch.lambda_aux = parse_number<double>(v, k); }});
    f.push_back({"arch", "lambda_cat", [](const C& c) { return format_double(c.arch.lambda_cat); },
                 [](C& c, const std::string& v, const std::string& k) { c.arch.lambda_cat = parse_number<double>(v, k); }});
    f.push_back({"arch", "stop_gradient_at_K", [](const C& c) { return std::string(c.arch.stop_gradient_at_K ? "true" : "false"); },
                 [](C& c, const std::string& v, const std::string& k) { c.arch.stop_gradient_at_K = parse_bool(v, k); }});

    auto train_real = [&](const char* key, double numcore::AdamConfig::*m) {
      f.push_back({"train", key, [m](const C& c) { return format_double(c.train.adam.*m); },
                   [m](C& c, const std::string& v, const std::string& k) { c.train.adam.*m = parse_number<double>(v, k); }});
    };
    train_real("lr", &numcore::AdamConfig::lr);
    train_real("beta1", &numcore::AdamConfig::beta1);
    train_real("beta2", &numcore::AdamConfig::beta2);
    train_real("epsilon", &numcore::AdamConfig::eps);
    auto train_size = [&](const char* key, std::size_t TrainConfig::*m) {
      f.push_back({"train", key, [m](const C& c) { return std::to_string(c.train.*m); },
                   [m](C& c, const std::string& v, const std::string& k) { c.train.*m = parse_number<std::size_t>(v, k); }});
    };
    train_size("batch_size", &TrainConfig::batch_size);
    train_size("epochs", &TrainConfig::epochs);
    train_size("log_every", &TrainConfig::log_every);

    f.push_back({"run", "seeds", [](const C& c) { return join(c.seeds, u64s); },
                 [](C& c, const std::string& v, const std::string& k) {
                   c.seeds.clear();
                   for (const auto& item : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(item, k));
                 }});
    f.push_back({"run", "variants", [](const C& c) { return join(c.variants, [](Variant x) { return std::string(to_string(x)); }); },
                 [](C& c, const std::string& v, const std::string&) {
                   c.variants.clear();
                   for (const auto& item : split_list(v)) c.variants.push_back(parse_variant(item));
                 }});

    f.push_back({"report", "trailing_fraction", [](const C& c) { return format_double(c.report.trailing_fraction); },
                 [](C& c, const std::string& v, const std::string& k) { c.report.trailing_fraction = parse_number<double>(v, k); }});
    f.push_back({"report", "gain_edges", [](const C& c) { return join(c.report.gain_edges, u64s); },
                 [](C& c, const std::string& v, const std::string& k) {
                   c.report.gain_edges.clear();
                   for (const auto& item : split_list(v)) c.report.gain_edges.push_back(parse_number<std::uint64_t>(item, k));
                 }});
    return f;
  }();
  return table;
}

std::string section_text(const ExperimentConfig& config, std::initializer_list<std::string_view> sections) {
  std::string out;
  for (const auto section : sections) {
    for (const auto& f : fields()) {
      if (f.section == section) out += f.section + "." + f.key + "=" + f.get(config) + "\n";
    }
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  GenConfig& g = c.gen;
  g.n_users = 50000;
  g.n_ads = 10000;
  g.n_industries = 8;
  g.latent_dim = 8;
  g.journeys_per_user_mean = 3.0;
  for (std::size_t i = 0; i < g.n_industries; ++i) {
    const bool long_path = i % 2 == 0;
    g.industry_path_profile.push_back(long_path ? IndustryProfile{1.8, 0.9} : IndustryProfile{1.05, 0.2});
  }
  g.conv_bias = -3.0;
  g.affinity_scale = 1.0;
  g.ad_quality_sd = 3.0;
  g.seed = 7;
  g.home_industry_prob = 1.0;
  // FirstClick credits the journey head, which fights the recency signal the
  // LastClick primary depends on; the struct default keeps all four for CAT.
  c.attribution.mechanism_order = {MechanismTag::LastClick, MechanismTag::Linear, MechanismTag::RemovalEffectMTA};
  return c;
}

void ExperimentConfig::validate() const {
  gen.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail(ErrorKind::Config, "split.train_fraction must be in (0, 1)");
  const auto& order = attribution.mechanism_order;
  if (order.empty()) fail(ErrorKind::Config, "attribution.mechanism_order is empty");
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (order[i] == order[j]) fail(ErrorKind::Config, "attribution.mechanism_order lists " + std::string(to_string(order[i])) + " twice");
  if (std::find(order.begin(), order.end(), attribution.primary_tag) == order.end()) {
    fail(ErrorKind::Config, "attribution.primary_tag must appear in mechanism_order");
  }
  if (!(attribution.half_life_seconds > 0.0)) fail(ErrorKind::Config, "attribution.half_life_seconds must be positive");
  if (!(attribution.mta.lr > 0.0) || attribution.mta.steps == 0 || !(attribution.mta.l2 >= 0.0)) {
    fail(ErrorKind::Config, "attribution.mta_lr/mta_steps/mta_l2 out of range");
  }
  for (const auto v : variants) {
    ArchConfig a = arch;
    a.variant = v;
    a.validate(order.size());
  }
  if (train.batch_size == 0 || train.epochs == 0) fail(ErrorKind::Config, "train.batch_size and train.epochs must be positive");
  if (!(train.adam.lr > 0.0) || !(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0) ||
      !(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0) || !(train.adam.eps > 0.0)) {
    fail(ErrorKind::Config, "train optimizer settings out of range");
  }
  if (seeds.empty()) fail(ErrorKind::Config, "run.seeds is empty");
  if (variants.empty()) fail(ErrorKind::Config, "run.variants is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail(ErrorKind::Config, "run.seeds has duplicates");
  if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size()) {
    fail(ErrorKind::Config, "run.variants has duplicates");
  }
  if (!(report.trailing_fraction > 0.0 && report.trailing_fraction <= 1.0)) {
    fail(ErrorKind::Config, "report.trailing_fraction must be in (0, 1]");
  }
  if (report.gain_edges.empty() || report.gain_edges.front() != 0 ||
      !std::is_sorted(report.gain_edges.begin(), report.gain_edges.end()) ||
      std::adjacent_find(report.gain_edges.begin(), report.gain_edges.end()) != report.gain_edges.end()) {
    fail(ErrorKind::Config, "report.gain_edges must start at 0 and strictly increase");
  }
  const std::vector<std::filesystem::path> dirs{paths.resolve(paths.data), paths.resolve(paths.samples),
                                                paths.resolve(paths.checkpoints), paths.resolve(paths.reports)};
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = i + 1; j < dirs.size(); ++j)
      if (dirs[i].lexically_normal() == dirs[j].lexically_normal()) {
        fail(ErrorKind::Config, "paths must be distinct: " + dirs[i].string());
      }
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out << "\n";
      out << "[" << f.section << "]\n";
      current = f.section;
    }
    out << f.key << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

std::string ExperimentConfig::data_key() const { return gen.canonical() + section_text(*this, {"split"}); }

std::string ExperimentConfig::attribution_key() const { return section_text(*this, {"attribution"}); }

std::string ExperimentConfig::model_key() const { return section_text(*this, {"arch", "train"}); }

std::string ExperimentConfig::report_key() const { return section_text(*this, {"report"}); }

ExperimentConfig parse_config(std::string_view text, const std::string& origin) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorKind::Config, origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig config = ExperimentConfig::defaults();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) fail(ErrorKind::Config, origin + ": key '" + section + "' outside a section");
    for (const auto& [key, node] : body) {
      const auto it = std::find_if(fields().begin(), fields().end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields().end()) fail(ErrorKind::Config, origin + ": unknown key [" + section + "] " + key);
      it->set(config, trim(node.data()), section + "." + key);
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Config, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

}  // namespace mal
