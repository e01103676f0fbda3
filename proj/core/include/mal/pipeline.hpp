#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mal/experiment.hpp"
#include "mal/metrics.hpp"

namespace mal {

struct RunOptions {
  bool force = false;
  unsigned jobs = 1;
  // Progress and skip notices; null silences them.
  std::ostream* log = nullptr;
};

struct VariantSummary {
  Variant variant = Variant::Base;
  std::vector<std::uint64_t> seeds;
  std::vector<double> gauc;
  std::vector<double> auc;
  double mean_gauc = 0.0;
  double min_gauc = 0.0;
  double max_gauc = 0.0;
  double mean_auc = 0.0;
  std::uint64_t parameter_count = 0;
};

struct ReportData {
  std::string digest;
  MechanismTag primary_tag = MechanismTag::LastClick;
  std::vector<PositiveRatio> positive_ratios;
  std::vector<VariantSummary> variants;
  // MAL versus Base, averaged over seeds; empty when either variant is missing.
  GroupTable user_groups;
  std::vector<GroupTable> user_groups_per_seed;
  std::optional<double> user_group_spearman;
  GroupTable industries;
  std::vector<double> long_path_delta_per_seed;
  std::vector<double> short_path_delta_per_seed;
  double long_path_delta = 0.0;
  double short_path_delta = 0.0;

  const VariantSummary* find(Variant v) const;
};

// Stage runner over one experiment workdir. Every stage checks the digest
// recorded by its upstream stage and skips itself when its own outputs are current.
class Pipeline {
 public:
  Pipeline(ExperimentConfig config, RunOptions options);

  void gen();
  void attribute();
  void train();
  void eval();
  ReportData report();
  // Trains and evaluates Base plus the three MAL ablations, then reports.
  ReportData ablate();
  ReportData run_all();

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path data_dir() const;
  std::filesystem::path samples_dir() const;
  std::filesystem::path checkpoint_dir(Variant v, std::uint64_t seed) const;
  std::filesystem::path eval_dir(Variant v, std::uint64_t seed) const;
  std::filesystem::path reports_dir() const;

  std::string data_digest() const;
  std::string attribution_digest() const;
  std::string model_digest(Variant v, std::uint64_t seed) const;
  std::string eval_digest(Variant v, std::uint64_t seed) const;
  std::string report_digest() const;

 private:
  void notice(const std::string& message);
  void train_one(Variant v, std::uint64_t seed);
  void eval_one(Variant v, std::uint64_t seed);
  void run_jobs(const std::vector<Variant>& variants, bool training);
  ReportData build_report(const std::vector<Variant>& variants);
  ReportData report_for(const std::vector<Variant>& variants);

  ExperimentConfig config_;
  RunOptions options_;
  std::mutex log_mutex_;
};

// Gradient-check and metric-oracle self tests; one line per check on `out`.
bool run_self_checks(std::ostream& out);

std::string to_text(const ReportData& report);
std::string to_json(const ReportData& report);

}  // namespace mal
