#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mal/attribution.hpp"
#include "mal/numcore/graph.hpp"
#include "mal/numcore/optim.hpp"
#include "mal/numcore/param_store.hpp"

namespace mal {

enum class Variant { MAL, MAL_noCAT, MAL_noMultiAttr, Base, SharedBottomMTL };

std::string_view to_string(Variant variant) noexcept;
Variant parse_variant(std::string_view text);

struct ArchConfig {
  std::size_t embedding_dim = 8;
  std::vector<std::size_t> shared_mlp{64, 32};
  // Hidden widths of every attribution/CAT tower; the last one is the
  // penultimate layer whose activations form a knowledge vector.
  std::vector<std::size_t> tower{16, 8};
  std::vector<std::size_t> ptp_mlp{32};
  std::size_t projection_dim = 32;
  double lambda_aux = 1.0;
  double lambda_cat = 1.0;
  bool stop_gradient_at_K = false;
  Variant variant = Variant::MAL;

  void validate(std::size_t n_mechanisms) const;
};

struct VocabSizes {
  std::uint32_t users = 1;
  std::uint32_t ads = 1;
  std::uint32_t industries = 1;
  std::uint32_t positions = kPositionBuckets;
  std::uint32_t recency = kRecencyBuckets;
  std::uint32_t count = kCountBuckets;
};

struct MalModel {
  ArchConfig arch;
  VocabSizes vocab;
  std::vector<MechanismTag> mechanism_order;
  MechanismTag primary_tag = MechanismTag::LastClick;
  std::uint64_t init_seed = 0;
  numcore::ParamStore params;

  std::size_t primary_index() const;
  std::size_t cat_classes() const { return std::size_t{1} << mechanism_order.size(); }
  bool has_aka() const;
  bool has_cat() const;
  // Width of the concatenated knowledge vector K (0 when no AKA).
  std::size_t knowledge_dim() const;
  std::size_t parameter_count() const { return params.parameter_count(); }
};

MalModel build_model(const ArchConfig& arch, const VocabSizes& vocab, std::vector<MechanismTag> mechanism_order,
                     MechanismTag primary_tag, std::uint64_t seed);

// Column-major view of a batch of samples.
struct Batch {
  std::vector<std::uint32_t> user, ad, industry, position, recency, count;
  // labels[m][row], weights[m][row], m in mechanism order.
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<double>> weights;
  std::vector<std::uint32_t> cat;

  std::size_t size() const noexcept { return user.size(); }
};

Batch make_batch(const SampleSet& samples, std::span<const std::size_t> indices);
Batch make_batch(const SampleSet& samples, std::size_t begin, std::size_t end);

struct MalOutputs {
  numcore::NodeId v;
  std::vector<numcore::NodeId> mechanism_logits;
  std::vector<numcore::NodeId> knowledge;
  std::optional<numcore::NodeId> cat_logits;
  std::optional<numcore::NodeId> knowledge_cat;
  std::optional<numcore::NodeId> knowledge_all;
  std::optional<numcore::NodeId> v_p;
  std::optional<numcore::NodeId> v_a;
  std::optional<numcore::NodeId> v_fusion;
  numcore::NodeId primary_logit;
};

MalOutputs forward(numcore::Graph& graph, const MalModel& model, const Batch& batch);

struct LossTerms {
  numcore::NodeId total;
  numcore::NodeId primary;
  std::vector<numcore::NodeId> aux;
  std::optional<numcore::NodeId> cat;
};

// L = L_primary + lambda_aux * sum_a L_a + lambda_cat * L_CAT, each a summed
// weighted cross-entropy.
LossTerms total_loss(numcore::Graph& graph, const MalOutputs& outputs, const Batch& batch, const MalModel& model);

struct TrainConfig {
  numcore::AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;
  // Parameters whose names start with one of these prefixes are not updated.
  std::vector<std::string> frozen_prefixes;
};

struct LossWindow {
  std::size_t first_step = 0;
  std::size_t steps = 0;
  std::size_t samples = 0;
  // Summed losses over the window, divided by the sample count.
  double total = 0.0;
  double primary = 0.0;
  std::vector<double> aux;
  double cat = 0.0;
  bool operator==(const LossWindow&) const = default;
};

struct TrainStats {
  std::size_t steps = 0;
  std::vector<double> step_total_loss;
  std::vector<LossWindow> windows;
  bool operator==(const TrainStats&) const = default;
};

TrainStats train(MalModel& model, const SampleSet& train_set, const TrainConfig& config);

std::vector<double> predict_primary(const MalModel& model, const SampleSet& samples, std::size_t chunk = 1024);
std::vector<double> predict_primary(const MalModel& model, const Batch& batch);

void save_model(const MalModel& model, const std::filesystem::path& dir);
MalModel load_model(const std::filesystem::path& dir);
std::string arch_descriptor(const MalModel& model);

}  // namespace mal
