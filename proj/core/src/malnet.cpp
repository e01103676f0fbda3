#include "mal/malnet.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mal/error.hpp"
#include "mal/numcore/checkpoint.hpp"
#include "mal/random.hpp"

namespace mal {
namespace {

using numcore::Graph;
using numcore::NodeId;
using numcore::Tensor;

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames{{
    {Variant::MAL, "MAL"},
    {Variant::MAL_noCAT, "MAL_noCAT"},
    {Variant::MAL_noMultiAttr, "MAL_noMultiAttr"},
    {Variant::Base, "Base"},
    {Variant::SharedBottomMTL, "SharedBottomMTL"},
}};

const std::string kCatTower = "tower.CAT";

std::string tower_prefix(MechanismTag tag) { return "tower." + std::string(to_string(tag)); }

void add_dense(numcore::ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::uint64_t seed) {
  Tensor w = Tensor::matrix(in, out);
  RandomStream rng(seed, StreamTag::ParamInit, fnv1a64(name + ".W"));
  const double limit = std::sqrt(3.0 / static_cast<double>(in));
  for (auto& v : w.values()) v = rng.uniform(-limit, limit);
  store.add(name + ".W", std::move(w));
  store.add(name + ".b", Tensor::matrix(1, out));
}

void add_embedding(numcore::ParamStore& store, const std::string& name, std::size_t rows, std::size_t dim,
                   std::uint64_t seed) {
  Tensor t = Tensor::matrix(rows, dim);
  RandomStream rng(seed, StreamTag::ParamInit, fnv1a64(name));
  for (auto& v : t.values()) v = 0.01 * rng.normal();
  store.add(name, std::move(t));
}

// Returns the output width.
std::size_t add_mlp(numcore::ParamStore& store, const std::string& prefix, std::size_t in,
                    const std::vector<std::size_t>& dims, std::uint64_t seed) {
  for (std::size_t i = 0; i < dims.size(); ++i) {
    add_dense(store, prefix + "." + std::to_string(i), in, dims[i], seed);
    in = dims[i];
  }
  return in;
}

NodeId dense(Graph& g, NodeId x, const std::string& name) {
  return g.linear(x, g.param(name + ".W"), g.param(name + ".b"));
}

NodeId mlp(Graph& g, NodeId x, const std::string& prefix, std::size_t layers) {
  for (std::size_t i = 0; i < layers; ++i) x = g.relu(dense(g, x, prefix + "." + std::to_string(i)));
  return x;
}

bool is_mal_family(Variant v) { return v == Variant::MAL || v == Variant::MAL_noCAT || v == Variant::MAL_noMultiAttr; }

}  // namespace

std::string_view to_string(Variant variant) noexcept {
  for (const auto& [v, name] : kVariantNames)
    if (v == variant) return name;
  return "?";
}

Variant parse_variant(std::string_view text) {
  for (const auto& [v, name] : kVariantNames)
    if (name == text) return v;
  fail(ErrorKind::Config, "unknown variant '" + std::string(text) + "'");
}

void ArchConfig::validate(std::size_t n_mechanisms) const {
  if (embedding_dim == 0) fail(ErrorKind::Config, "arch.embedding_dim must be positive");
  if (shared_mlp.empty()) fail(ErrorKind::Config, "arch.shared_mlp needs at least one layer");
  if (tower.empty() || tower.back() == 0) fail(ErrorKind::Config, "arch.tower penultimate width must be positive");
  if (ptp_mlp.empty()) fail(ErrorKind::Config, "arch.ptp_mlp needs at least one layer");
  for (const auto* dims : {&shared_mlp, &tower, &ptp_mlp})
    for (const auto d : *dims)
      if (d == 0) fail(ErrorKind::Config, "arch layer widths must be positive");
  if (projection_dim != ptp_mlp.back()) {
    fail(ErrorKind::Config, "arch.projection_dim (" + std::to_string(projection_dim) +
                                ") must equal the PTP width (" + std::to_string(ptp_mlp.back()) + ") for fusion");
  }
  if (!(lambda_aux >= 0.0) || !(lambda_cat >= 0.0)) fail(ErrorKind::Config, "loss weights must be non-negative");
  if (stop_gradient_at_K && !is_mal_family(variant)) {
    fail(ErrorKind::Config, "stop_gradient_at_K needs a variant with a knowledge vector, not " +
                                std::string(to_string(variant)));
  }
  if (n_mechanisms == 0 || n_mechanisms > 10) fail(ErrorKind::Config, "between 1 and 10 mechanisms are supported");
}

std::size_t MalModel::primary_index() const {
  const auto it = std::find(mechanism_order.begin(), mechanism_order.end(), primary_tag);
  if (it == mechanism_order.end()) fail(ErrorKind::Config, "primary tag not in mechanism_order");
  return static_cast<std::size_t>(it - mechanism_order.begin());
}

bool MalModel::has_aka() const { return is_mal_family(arch.variant); }

bool MalModel::has_cat() const { return arch.variant == Variant::MAL || arch.variant == Variant::MAL_noMultiAttr; }

std::size_t MalModel::knowledge_dim() const {
  if (!has_aka()) return 0;
  return (mechanism_order.size() + (has_cat() ? 1 : 0)) * arch.tower.back();
}

MalModel build_model(const ArchConfig& arch, const VocabSizes& vocab, std::vector<MechanismTag> mechanism_order,
                     MechanismTag primary_tag, std::uint64_t seed) {
  arch.validate(mechanism_order.size());
  for (const auto n : {vocab.users, vocab.ads, vocab.industries, vocab.positions, vocab.recency, vocab.count}) {
    if (n == 0) fail(ErrorKind::Config, "vocabulary sizes must be positive");
  }
  MalModel model;
  model.arch = arch;
  model.vocab = vocab;
  model.mechanism_order = std::move(mechanism_order);
  model.primary_tag = primary_tag;
  model.init_seed = seed;
  model.primary_index();

  auto& store = model.params;
  const std::size_t e = arch.embedding_dim;
  add_embedding(store, "emb.user", vocab.users, e, seed);
  add_embedding(store, "emb.ad", vocab.ads, e, seed);
  add_embedding(store, "emb.industry", vocab.industries, e, seed);
  add_embedding(store, "emb.position", vocab.positions, e, seed);
  add_embedding(store, "emb.recency", vocab.recency, e, seed);
  add_embedding(store, "emb.count", vocab.count, e, seed);
  const std::size_t v_dim = add_mlp(store, "shared", 6 * e, arch.shared_mlp, seed);

  if (arch.variant == Variant::Base || model.has_aka()) {
    const std::size_t p_dim = add_mlp(store, "ptp", v_dim, arch.ptp_mlp, seed);
    add_dense(store, "head", p_dim, 1, seed);
  }
  if (arch.variant == Variant::SharedBottomMTL || model.has_aka()) {
    for (const auto tag : model.mechanism_order) {
      const std::size_t k = add_mlp(store, tower_prefix(tag), v_dim, arch.tower, seed);
      add_dense(store, tower_prefix(tag) + ".out", k, 1, seed);
    }
  }
  if (model.has_cat()) {
    const std::size_t k = add_mlp(store, kCatTower, v_dim, arch.tower, seed);
    add_dense(store, kCatTower + ".out", k, model.cat_classes(), seed);
  }
  if (model.has_aka()) add_dense(store, "proj", model.knowledge_dim(), arch.projection_dim, seed);
  return model;
}

Batch make_batch(const SampleSet& samples, std::span<const std::size_t> indices) {
  Batch b;
  const std::size_t n = indices.size();
  const std::size_t m = samples.mechanism_order.size();
  for (auto* col : {&b.user, &b.ad, &b.industry, &b.position, &b.recency, &b.count}) col->resize(n);
  b.labels.assign(m, std::vector<double>(n));
  b.weights.assign(m, std::vector<double>(n));
  b.cat.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Sample& s = samples.samples.at(indices[r]);
    b.user[r] = s.features.user;
    b.ad[r] = s.features.ad;
    b.industry[r] = s.features.industry;
    b.position[r] = s.features.position;
    b.recency[r] = s.features.recency;
    b.count[r] = s.features.count;
    if (s.targets.size() != m) fail(ErrorKind::Data, "sample has " + std::to_string(s.targets.size()) + " targets, expected " + std::to_string(m));
    for (std::size_t k = 0; k < m; ++k) {
      b.labels[k][r] = s.targets[k].l;
      b.weights[k][r] = s.targets[k].w;
    }
    b.cat[r] = s.cat_class;
  }
  return b;
}

Batch make_batch(const SampleSet& samples, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return make_batch(samples, idx);
}

MalOutputs forward(Graph& g, const MalModel& model, const Batch& batch) {
  const auto& arch = model.arch;
  const std::array<NodeId, 6> emb{
      g.embedding(g.param("emb.user"), batch.user),         g.embedding(g.param("emb.ad"), batch.ad),
      g.embedding(g.param("emb.industry"), batch.industry), g.embedding(g.param("emb.position"), batch.position),
      g.embedding(g.param("emb.recency"), batch.recency),   g.embedding(g.param("emb.count"), batch.count)};
  MalOutputs out;
  out.v = mlp(g, g.concat(emb), "shared", arch.shared_mlp.size());

  if (arch.variant == Variant::SharedBottomMTL || model.has_aka()) {
    for (const auto tag : model.mechanism_order) {
      const NodeId k = mlp(g, out.v, tower_prefix(tag), arch.tower.size());
      out.mechanism_logits.push_back(dense(g, k, tower_prefix(tag) + ".out"));
      if (model.has_aka()) out.knowledge.push_back(k);
    }
  }
  if (model.has_cat()) {
    out.knowledge_cat = mlp(g, out.v, kCatTower, arch.tower.size());
    out.cat_logits = dense(g, *out.knowledge_cat, kCatTower + ".out");
  }

  if (arch.variant == Variant::SharedBottomMTL) {
    out.primary_logit = out.mechanism_logits.at(model.primary_index());
    return out;
  }
  out.v_p = mlp(g, out.v, "ptp", arch.ptp_mlp.size());
  if (arch.variant == Variant::Base) {
    out.primary_logit = dense(g, *out.v_p, "head");
    return out;
  }
  std::vector<NodeId> parts = out.knowledge;
  if (out.knowledge_cat) parts.push_back(*out.knowledge_cat);
  out.knowledge_all = g.concat(parts);
  const NodeId k_in = arch.stop_gradient_at_K ? g.stop_gradient(*out.knowledge_all) : *out.knowledge_all;
  out.v_a = dense(g, k_in, "proj");
  out.v_fusion = g.add(*out.v_p, *out.v_a);
  out.primary_logit = dense(g, *out.v_fusion, "head");
  return out;
}

LossTerms total_loss(Graph& g, const MalOutputs& outputs, const Batch& batch, const MalModel& model) {
  const std::size_t m = model.mechanism_order.size();
  if (batch.labels.size() < m || batch.weights.size() < m) {
    fail(ErrorKind::Data, "batch carries labels for " + std::to_string(batch.labels.size()) + " mechanisms, model wires " +
                              std::to_string(m));
  }
  const std::size_t p = model.primary_index();
  const Variant variant = model.arch.variant;
  LossTerms terms;
  terms.primary = g.weighted_bce(outputs.primary_logit, batch.labels[p], batch.weights[p]);

  if (model.has_aka() || variant == Variant::SharedBottomMTL) {
    const bool primary_only = variant == Variant::MAL_noMultiAttr;
    for (std::size_t k = 0; k < m; ++k) {
      if (variant == Variant::SharedBottomMTL && k == p) continue;
      const std::size_t src = primary_only ? p : k;
      terms.aux.push_back(g.weighted_bce(outputs.mechanism_logits.at(k), batch.labels[src], batch.weights[src]));
    }
  }
  if (model.has_cat()) {
    if (!outputs.cat_logits) fail(ErrorKind::Data, "CAT head wired but no CAT logits");
    if (variant == Variant::MAL_noMultiAttr) {
      // Every attribution bit equals the primary bit.
      const std::uint32_t all_ones = static_cast<std::uint32_t>(model.cat_classes() - 1);
      std::vector<std::uint32_t> classes(batch.size());
      for (std::size_t r = 0; r < batch.size(); ++r) classes[r] = batch.labels[p][r] > 0.0 ? all_ones : 0;
      terms.cat = g.softmax_ce(*outputs.cat_logits, classes);
    } else {
      if (batch.cat.size() != batch.size()) fail(ErrorKind::Data, "batch is missing CAT labels");
      terms.cat = g.softmax_ce(*outputs.cat_logits, batch.cat);
    }
  }

  NodeId total = terms.primary;
  if (!terms.aux.empty()) {
    NodeId aux = terms.aux.front();
    for (std::size_t i = 1; i < terms.aux.size(); ++i) aux = g.add(aux, terms.aux[i]);
    total = g.add(total, g.scale(aux, model.arch.lambda_aux));
  }
  if (terms.cat) total = g.add(total, g.scale(*terms.cat, model.arch.lambda_cat));
  terms.total = total;
  return terms;
}

TrainStats train(MalModel& model, const SampleSet& train_set, const TrainConfig& config) {
  if (train_set.samples.empty()) fail(ErrorKind::Data, "training set is empty");
  if (train_set.mechanism_order != model.mechanism_order) {
    fail(ErrorKind::Config, "sample mechanism_order does not match the model's");
  }
  if (train_set.primary_tag != model.primary_tag) fail(ErrorKind::Config, "sample primary_tag does not match the model's");
  if (config.batch_size == 0) fail(ErrorKind::Config, "batch_size must be positive");

  for (const auto& prefix : config.frozen_prefixes) model.params.set_trainable(prefix, false);
  TrainStats stats;
  const std::size_t n = train_set.samples.size();
  std::vector<std::size_t> order(n);
  LossWindow window;
  auto flush = [&] {
    if (window.steps == 0) return;
    const double denom = static_cast<double>(window.samples);
    window.total /= denom;
    window.primary /= denom;
    for (auto& a : window.aux) a /= denom;
    window.cat /= denom;
    stats.windows.push_back(window);
    window = LossWindow{};
  };
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    RandomStream rng(config.seed, StreamTag::Shuffle, epoch);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Batch batch = make_batch(train_set, std::span<const std::size_t>(order).subspan(begin, end - begin));
      try {
        Graph g(model.params);
        const MalOutputs outputs = forward(g, model, batch);
        const LossTerms terms = total_loss(g, outputs, batch, model);
        g.backward(terms.total);
        numcore::adam_step(model.params, config.adam);

        if (window.steps == 0) {
          window.first_step = stats.steps;
          window.aux.assign(terms.aux.size(), 0.0);
        }
        ++window.steps;
        window.samples += batch.size();
        window.total += g.scalar(terms.total);
        window.primary += g.scalar(terms.primary);
        for (std::size_t i = 0; i < terms.aux.size(); ++i) window.aux[i] += g.scalar(terms.aux[i]);
        if (terms.cat) window.cat += g.scalar(*terms.cat);
        stats.step_total_loss.push_back(g.scalar(terms.total));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Numeric) {
          fail(ErrorKind::Numeric, "training step " + std::to_string(stats.steps) + ": " + e.what());
        }
        throw;
      }
      ++stats.steps;
      if (config.log_every > 0 && window.steps == config.log_every) flush();
    }
  }
  flush();
  for (const auto& prefix : config.frozen_prefixes) model.params.set_trainable(prefix, true);
  return stats;
}

std::vector<double> predict_primary(const MalModel& model, const Batch& batch) {
  Graph g(static_cast<const numcore::ParamStore&>(model.params));
  const MalOutputs out = forward(g, model, batch);
  const NodeId prob = g.sigmoid(out.primary_logit);
  const auto values = g.value(prob).values();
  return {values.begin(), values.end()};
}

std::vector<double> predict_primary(const MalModel& model, const SampleSet& samples, std::size_t chunk) {
  std::vector<double> out;
  out.reserve(samples.samples.size());
  for (std::size_t begin = 0; begin < samples.samples.size(); begin += chunk) {
    const std::size_t end = std::min(samples.samples.size(), begin + chunk);
    const auto part = predict_primary(model, make_batch(samples, begin, end));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::string arch_descriptor(const MalModel& model) {
  nlohmann::ordered_json j;
  const auto& a = model.arch;
  j["variant"] = to_string(a.variant);
  j["embedding_dim"] = a.embedding_dim;
  j["shared_mlp"] = a.shared_mlp;
  j["tower"] = a.tower;
  j["ptp_mlp"] = a.ptp_mlp;
  j["projection_dim"] = a.projection_dim;
  j["lambda_aux"] = a.lambda_aux;
  j["lambda_cat"] = a.lambda_cat;
  j["stop_gradient_at_K"] = a.stop_gradient_at_K;
  auto order = nlohmann::ordered_json::array();
  for (const auto tag : model.mechanism_order) order.push_back(to_string(tag));
  j["mechanism_order"] = std::move(order);
  j["primary_tag"] = to_string(model.primary_tag);
  j["vocab"] = {{"users", model.vocab.users},       {"ads", model.vocab.ads},
                {"industries", model.vocab.industries}, {"positions", model.vocab.positions},
                {"recency", model.vocab.recency},   {"count", model.vocab.count}};
  j["init_seed"] = model.init_seed;
  j["parameter_count"] = model.parameter_count();
  return j.dump(2) + "\n";
}

void save_model(const MalModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  numcore::save_checkpoint(model.params, dir / "model.ckpt");
  std::ofstream out(dir / "arch.json", std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "arch.json").string());
  out << arch_descriptor(model);
}

MalModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "arch.json", std::ios::binary);
  if (!in) fail(ErrorKind::Dependency, "missing " + (dir / "arch.json").string());
  ArchConfig arch;
  VocabSizes vocab;
  std::vector<MechanismTag> order;
  MechanismTag primary;
  std::uint64_t seed = 0;
  try {
    const auto j = nlohmann::json::parse(in);
    arch.variant = parse_variant(j.at("variant").get<std::string>());
    arch.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    arch.shared_mlp = j.at("shared_mlp").get<std::vector<std::size_t>>();
    arch.tower = j.at("tower").get<std::vector<std::size_t>>();
    arch.ptp_mlp = j.at("ptp_mlp").get<std::vector<std::size_t>>();
    arch.projection_dim = j.at("projection_dim").get<std::size_t>();
    arch.lambda_aux = j.at("lambda_aux").get<double>();
    arch.lambda_cat = j.at("lambda_cat").get<double>();
    arch.stop_gradient_at_K = j.at("stop_gradient_at_K").get<bool>();
    for (const auto& t : j.at("mechanism_order")) order.push_back(parse_mechanism(t.get<std::string>()));
    primary = parse_mechanism(j.at("primary_tag").get<std::string>());
    const auto& v = j.at("vocab");
    vocab = VocabSizes{v.at("users").get<std::uint32_t>(),      v.at("ads").get<std::uint32_t>(),
                       v.at("industries").get<std::uint32_t>(), v.at("positions").get<std::uint32_t>(),
                       v.at("recency").get<std::uint32_t>(),    v.at("count").get<std::uint32_t>()};
    seed = j.at("init_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, (dir / "arch.json").string() + ": " + e.what());
  }
  MalModel model = build_model(arch, vocab, std::move(order), primary, seed);
  numcore::load_checkpoint_into(model.params, dir / "model.ckpt");
  return model;
}

}  // namespace mal
