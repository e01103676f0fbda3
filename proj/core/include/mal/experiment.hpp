#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mal/attribution.hpp"
#include "mal/journey.hpp"
#include "mal/malnet.hpp"
#include "mal/metrics.hpp"

namespace mal {

struct PathsConfig {
  std::filesystem::path workdir = "work";
  // Relative entries resolve against workdir.
  std::filesystem::path data = "data";
  std::filesystem::path samples = "samples";
  std::filesystem::path checkpoints = "checkpoints";
  std::filesystem::path reports = "reports";

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : workdir / p; }
};

struct AttributionConfig {
  std::vector<MechanismTag> mechanism_order{MechanismTag::LastClick, MechanismTag::FirstClick, MechanismTag::Linear,
                                            MechanismTag::RemovalEffectMTA};
  MechanismTag primary_tag = MechanismTag::LastClick;
  LabelMode label_mode = LabelMode::Binary;
  double half_life_seconds = 86400.0;
  MtaFitConfig mta;
};

struct ReportConfig {
  double trailing_fraction = 0.25;
  std::vector<std::uint64_t> gain_edges = kDefaultGainEdges;
};

struct ExperimentConfig {
  PathsConfig paths;
  GenConfig gen;
  double train_fraction = 0.9;
  AttributionConfig attribution;
  ArchConfig arch;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Variant> variants{Variant::Base, Variant::SharedBottomMTL, Variant::MAL_noCAT, Variant::MAL_noMultiAttr,
                                Variant::MAL};
  ReportConfig report;

  // The calibrated benchmark.
  static ExperimentConfig defaults();

  void validate() const;
  // Fully resolved config in the file format; parse_config(to_ini()) round-trips.
  std::string to_ini() const;

  // Canonical text of the settings each stage depends on.
  std::string data_key() const;
  std::string attribution_key() const;
  std::string model_key() const;
  std::string report_key() const;
};

// Dotted `key = value` pairs under [section] headers, applied over defaults().
ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace mal
