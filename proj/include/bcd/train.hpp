#pragma once

// SGD training loop with PK sampling and augmentation, the per-epoch JSON
// log, checkpoints, and retrieval evaluation of a trained model.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bcd/model.hpp"
#include "bcd/tns_io.hpp"

namespace bcd {

/// Learning rate for a 0-based epoch: lr times the decay factor once per
/// milestone already reached.
inline double lr_at(const ExperimentConfig& c, std::size_t epoch) {
  double lr = c.lr;
  for (auto m : c.lr_decay_epochs)
    if (epoch >= m) lr *= c.lr_decay_factor;
  return lr;
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossValues loss;  // means over the epoch's batches
  double lr = 0.0;
  double wall_seconds = 0.0;

  json to_json() const {
    return json{{"epoch", epoch},
                {"id", loss.id},
                {"triplet", loss.triplet},
                {"bcca", loss.bcca},
                {"part_reg", loss.part_reg},
                {"holistic_reg", loss.holistic_reg},
                {"stripe_id", loss.stripe_id},
                {"total", loss.total},
                {"lr", lr},
                {"wall_seconds", wall_seconds}};
  }
};

/// Maps training identities to classifier rows, in ascending identity order.
struct ClassMap {
  std::map<int, std::size_t> index;

  static ClassMap build(const Dataset& ds) {
    ClassMap m;
    for (auto i : ds.indices(Split::kTrain)) m.index.emplace(ds.samples[i].identity, 0);
    std::size_t next = 0;
    for (auto& [id, cls] : m.index) cls = next++;
    return m;
  }

  std::size_t size() const { return index.size(); }
  std::size_t at(int identity) const {
    auto it = index.find(identity);
    require(it != index.end(), "identity " + std::to_string(identity) + " is not a training identity");
    return it->second;
  }
};

inline std::size_t batches_per_epoch(const ExperimentConfig& c, std::size_t train_images) {
  if (c.batches_per_epoch > 0) return c.batches_per_epoch;
  return std::max<std::size_t>(1, (train_images + c.batch_size() - 1) / c.batch_size());
}

/// One augmented P×A batch: images plus class and identity labels.
struct TrainBatch {
  Tensor images;
  std::vector<std::size_t> classes;
  std::vector<int> identities;
};

inline TrainBatch draw_batch(const Dataset& ds, const std::vector<std::size_t>& train, const IdentityIndex& index,
                             const ClassMap& classes, const ExperimentConfig& c, Rng& rng) {
  const PkBatch pk = sample_pk(index, c.p, c.a, rng);
  const std::size_t per = 3 * ds.height * ds.width;
  std::vector<double> data;
  data.reserve(pk.size() * per);
  TrainBatch b;
  for (std::size_t i = 0; i < pk.size(); ++i) {
    std::vector<double> img = ds.samples[train[pk.samples[i]]].image;
    if (c.flip && std::bernoulli_distribution(0.5)(rng)) flip_horizontal(img, ds.height, ds.width);
    random_erase(img, ds.height, ds.width, c.random_erase, rng);
    data.insert(data.end(), img.begin(), img.end());
    b.classes.push_back(classes.at(pk.identities[i]));
    b.identities.push_back(pk.identities[i]);
  }
  b.images = Tensor({pk.size(), 3, ds.height, ds.width}, std::move(data));
  return b;
}

/// Trains `model` on the train split. Aborts with NumericError on the first
/// non-finite loss. `on_epoch` receives each epoch record as it completes.
inline std::vector<EpochRecord> train(BcdNet& model, const Dataset& ds,
                                      const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  const ExperimentConfig& c = model.config();
  const auto train_idx = ds.indices(Split::kTrain);
  require(!train_idx.empty(), "train: dataset has no training samples");
  std::vector<int> labels;
  for (auto i : train_idx) labels.push_back(ds.samples[i].identity);
  const IdentityIndex index = IdentityIndex::build(labels);
  const ClassMap classes = ClassMap::build(ds);
  const std::size_t batches = batches_per_epoch(c, train_idx.size());
  Rng rng(detail::mix_seed(c.seed, 0x7a1));
  Sgd opt(SgdSettings{c.lr, c.momentum, c.weight_decay});
  const LossWeights weights = model.loss_weights();
  std::vector<EpochRecord> log;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    opt.set_lr(lr_at(c, epoch));
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(c, epoch);
    for (std::size_t b = 0; b < batches; ++b) {
      const TrainBatch batch = draw_batch(ds, train_idx, index, classes, c, rng);
      const ForwardPass pass = model.forward(batch.images, true);
      LossValues v;
      Tensor loss = total_loss(model.losses(pass, batch.classes, batch.identities), weights, &v);
      if (!std::isfinite(v.total))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      model.params().zero_grad();
      backward(loss);
      opt.step(model.params());
      rec.loss.id += v.id;
      rec.loss.triplet += v.triplet;
      rec.loss.bcca += v.bcca;
      rec.loss.part_reg += v.part_reg;
      rec.loss.holistic_reg += v.holistic_reg;
      rec.loss.stripe_id += v.stripe_id;
      rec.loss.total += v.total;
    }
    const double nb = static_cast<double>(batches);
    for (double* f : {&rec.loss.id, &rec.loss.triplet, &rec.loss.bcca, &rec.loss.part_reg, &rec.loss.holistic_reg,
                      &rec.loss.stripe_id, &rec.loss.total})
      *f /= nb;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

/// Query-versus-gallery retrieval metrics of a model on a dataset's test split.
inline RetrievalMetrics evaluate_model(BcdNet& model, const Dataset& ds, std::size_t max_rank = 50) {
  const auto q = model.embed_samples(ds, ds.indices(Split::kQuery));
  const auto g = model.embed_samples(ds, ds.indices(Split::kGallery));
  return evaluate(q, g, max_rank);
}

inline json metrics_json(const RetrievalMetrics& m) {
  return json{{"rank1", m.rank1},
              {"map", m.map},
              {"cmc", m.cmc},
              {"evaluated_queries", m.evaluated_queries},
              {"skipped_queries", m.skipped_queries}};
}

// Checkpoints: one .tns file per parameter and buffer plus manifest.json
// carrying the configuration, its hash and the class count.

inline std::string checkpoint_file_name(const std::string& name) { return name + ".tns"; }

inline void save_checkpoint(BcdNet& model, std::size_t classes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json params = json::array(), buffers = json::array();
  for (const auto& p : model.params().params()) {
    write_tns(dir / checkpoint_file_name(p.name), *p.tensor);
    params.push_back({{"name", p.name}, {"file", checkpoint_file_name(p.name)}, {"shape", p.tensor->shape()}});
  }
  for (const auto& b : model.params().buffers()) {
    write_tns(dir / checkpoint_file_name(b.name), {b.values->size()}, *b.values);
    buffers.push_back({{"name", b.name}, {"file", checkpoint_file_name(b.name)}});
  }
  const json manifest{{"config", model.config().to_json()},
                      {"config_hash", config_hash(model.config())},
                      {"classes", classes},
                      {"params", params},
                      {"buffers", buffers}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

inline json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed checkpoint manifest: " + std::string(e.what()));
  }
}

inline std::unique_ptr<BcdNet> load_checkpoint(const std::filesystem::path& dir) {
  const json manifest = read_manifest(dir);
  const auto config = ExperimentConfig::from_json(manifest.at("config"));
  auto model = std::make_unique<BcdNet>(config, manifest.at("classes").get<std::size_t>());
  for (const auto& p : model->params().params()) {
    const Tensor t = read_tns(dir / checkpoint_file_name(p.name));
    require(t.shape() == p.tensor->shape(), "checkpoint entry " + p.name + " has shape " + shape_str(t.shape()) +
                                                ", model expects " + shape_str(p.tensor->shape()));
    auto dst = p.tensor->mutable_values();
    std::copy(t.values().begin(), t.values().end(), dst.begin());
  }
  for (const auto& b : model->params().buffers()) {
    const Tensor t = read_tns(dir / checkpoint_file_name(b.name));
    require(t.numel() == b.values->size(), "checkpoint buffer " + b.name + " has the wrong length");
    *b.values = t.vec();
  }
  return model;
}

}  // namespace bcd
