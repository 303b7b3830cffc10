#include "cmro/pipeline.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cmro/random.hpp"
#include "cmro/weights.hpp"
#include "json.hpp"

namespace cmro {

std::vector<LabeledExample> expand_examples(const std::vector<Volume>& volumes,
                                            std::span<const std::size_t> which,
                                            const PreprocConfig& cfg) {
  cfg.validate();
  std::vector<LabeledExample> out;
  for (auto vi : which) {
    const Volume& v = volumes.at(vi);
    if (v.rows < 2 || v.cols < 2 || v.depth == 0)
      throw Error(Errc::invalid_argument, "volume " + std::to_string(vi) + " has degenerate in-plane dims " +
                                              std::to_string(v.rows) + "x" + std::to_string(v.cols));
    for (std::size_t z = 0; z < v.depth; ++z) {
      const Slice s = v.slice(z);
      for (auto o : Orientation::all()) {
        auto input = assemble(apply(o, s), cfg);
        out.push_back({input.tensor.cast<float>(), o.code(), vi, z});
      }
    }
  }
  return out;
}

SplitDataset build_dataset(const std::vector<Volume>& volumes, const PreprocConfig& cfg,
                           std::uint64_t seed, double val_fraction) {
  if (volumes.empty()) throw Error(Errc::invalid_argument, "build_dataset needs at least one volume");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw Error(Errc::invalid_argument, "validation fraction must lie in [0, 1)");
  std::vector<std::size_t> order(volumes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(volumes.size())));
  if (n_val == 0 && val_fraction > 0.0 && volumes.size() >= 2) n_val = 1;

  SplitDataset ds;
  ds.split_seed = seed;
  ds.val_volumes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  ds.train_volumes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(ds.val_volumes.begin(), ds.val_volumes.end());
  std::sort(ds.train_volumes.begin(), ds.train_volumes.end());
  ds.train = expand_examples(volumes, ds.train_volumes, cfg);
  ds.val = expand_examples(volumes, ds.val_volumes, cfg);
  return ds;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::invalid_argument, what); };
  if (batch_size == 0) fail("batch size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("learning rate must be a finite non-negative number");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) fail("batchnorm momentum must lie in (0, 1)");
  if (!(bn_epsilon > 0.0)) fail("batchnorm epsilon must be positive");
}

std::string to_json_line(const EpochRecord& r) {
  nlohmann::json j{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_accuracy", r.val_accuracy}};
  return j.dump();
}

namespace {

Tensor make_batch(std::span<const LabeledExample> all, std::span<const std::size_t> idx,
                  const PreprocConfig& pc, Rng* aug_rng, std::vector<int>& labels) {
  const auto& shape = all[idx[0]].input.shape();
  const std::size_t per = all[idx[0]].input.size();
  Tensor batch({idx.size(), shape[0], shape[1], shape[2]});
  labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& ex = all[idx[i]];
    labels[i] = ex.label;
    if (aug_rng) {
      const auto augmented = augment_input(ex.input.cast<double>(), pc, *aug_rng);
      std::transform(augmented.values().begin(), augmented.values().end(), batch.data() + i * per,
                     [](double v) { return static_cast<float>(v); });
    } else {
      std::copy(ex.input.values().begin(), ex.input.values().end(), batch.data() + i * per);
    }
  }
  return batch;
}

}  // namespace

TrainResult fit(ModelParams<float> params, const SplitDataset& ds, const TrainConfig& tc,
                const PreprocConfig& pc, const EpochCallback& on_epoch) {
  tc.validate();
  TrainResult result;
  result.params = params;
  if (tc.epochs == 0) return result;
  if (ds.train.empty()) throw Error(Errc::invalid_argument, "training set is empty");

  Rng shuffle_rng(tc.seed);
  Rng aug_rng = shuffle_rng.split();
  SgdState<float> sgd;
  const auto bn = tc.batchnorm();
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += tc.batch_size, ++b) {
      const std::size_t n = std::min(tc.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      const Tensor batch = make_batch(ds.train, idx, pc, tc.augment ? &aug_rng : nullptr, labels);
      ForwardCache<float> cache;
      const Tensor logits = model_forward(params, batch, Mode::train, bn, &cache);
      const auto loss = softmax_cross_entropy(logits, std::span<const int>(labels));
      if (!std::isfinite(loss.loss))
        throw Error(Errc::non_finite, "non-finite loss at epoch " + std::to_string(epoch) +
                                          ", batch " + std::to_string(b));
      const auto grads = model_backward(params, cache, loss.grad);
      try {
        sgd_step(params, grads, sgd, tc.lr, tc.momentum);
      } catch (const Error& e) {
        if (e.code() != Errc::non_finite) throw;
        throw Error(Errc::non_finite, std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                          ", batch " + std::to_string(b));
      }
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(n);
      seen += n;
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), 0.0};
    if (!ds.val.empty()) rec.val_accuracy = evaluate(params, ds.val, bn).accuracy;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool better = ds.val.empty() || !have_best || rec.val_accuracy > result.best_val_accuracy;
    if (better) {
      have_best = true;
      result.params = params;
      result.best_epoch = epoch;
      result.best_val_accuracy = rec.val_accuracy;
    }
  }
  return result;
}

TrainResult train(const SplitDataset& ds, const TrainConfig& tc, const PreprocConfig& pc,
                  const Architecture& arch, const EpochCallback& on_epoch) {
  tc.validate();
  return fit(ModelParams<float>::initialize(arch, tc.seed), ds, tc, pc, on_epoch);
}

TransferResult transfer(const ModelParams<float>& base, const SplitDataset& ds_new,
                        const TransferConfig& cfg, const PreprocConfig& pc, const Architecture& arch,
                        const EpochCallback& on_epoch) {
  check_architecture(base, arch);
  TransferResult out;

  ModelParams<float> stage = base;
  stage.set_all_frozen(false);
  stage.set_backbone_frozen(true);
  TrainConfig tc1 = cfg.base;
  tc1.lr = cfg.stage1_lr;
  tc1.epochs = cfg.stage1_epochs;
  auto r1 = fit(std::move(stage), ds_new, tc1, pc, on_epoch);
  out.stage1_history = std::move(r1.history);
  out.after_stage1 = r1.params;

  ModelParams<float> whole = std::move(r1.params);
  whole.set_all_frozen(false);
  TrainConfig tc2 = cfg.base;
  tc2.lr = cfg.stage2_lr;
  tc2.epochs = cfg.stage2_epochs;
  tc2.seed = cfg.base.seed + 1;
  auto r2 = fit(std::move(whole), ds_new, tc2, pc, on_epoch);
  out.stage2_history = std::move(r2.history);
  out.params = std::move(r2.params);
  out.params.set_all_frozen(false);
  out.after_stage1.set_all_frozen(false);
  return out;
}

EvalReport report_from_predictions(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size())
    throw Error(Errc::shape_mismatch, "label and prediction counts differ");
  if (labels.empty()) throw Error(Errc::invalid_argument, "cannot evaluate an empty example set");
  EvalReport r;
  r.total = labels.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= 8 || p < 0 || p >= 8) throw Error(Errc::invalid_argument, "class index outside [0, 8)");
    ++r.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    if (y == p) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  for (std::size_t k = 0; k < 8; ++k) {
    const auto row = std::accumulate(r.confusion[k].begin(), r.confusion[k].end(), std::size_t{0});
    r.per_class_accuracy[k] = row ? static_cast<double>(r.confusion[k][k]) / static_cast<double>(row) : 0.0;
  }
  return r;
}

std::vector<int> predict_classes(const ModelParams<float>& params, std::span<const LabeledExample> examples,
                                 BatchNormOptions bn) {
  std::vector<int> preds;
  preds.reserve(examples.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, examples.size() - start);
    const auto& shape = examples[start].input.shape();
    const std::size_t per = examples[start].input.size();
    Tensor batch({n, shape[0], shape[1], shape[2]});
    for (std::size_t i = 0; i < n; ++i)
      std::copy(examples[start + i].input.values().begin(), examples[start + i].input.values().end(),
                batch.data() + i * per);
    const Tensor logits = model_predict(params, batch, bn);
    const std::size_t K = logits.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = logits.data() + i * K;
      preds.push_back(static_cast<int>(std::max_element(row, row + K) - row));
    }
  }
  return preds;
}

EvalReport evaluate(const ModelParams<float>& params, std::span<const LabeledExample> examples,
                    BatchNormOptions bn) {
  if (examples.empty()) throw Error(Errc::invalid_argument, "cannot evaluate an empty example set");
  const auto preds = predict_classes(params, examples, bn);
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label);
  return report_from_predictions(labels, preds);
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "accuracy " << accuracy << " (" << total << " examples)\n";
  os << "confusion (rows: true class, columns: predicted)\n     ";
  for (int k = 0; k < 8; ++k) os << "      " << k;
  os << "\n";
  for (std::size_t y = 0; y < 8; ++y) {
    os << "  " << y << "  ";
    for (std::size_t p = 0; p < 8; ++p) {
      std::string cell = std::to_string(confusion[y][p]);
      os << std::string(7 - std::min<std::size_t>(7, cell.size()), ' ') << cell;
    }
    os << "   acc " << per_class_accuracy[y] << "\n";
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["total"] = total;
  j["confusion"] = confusion;
  j["per_class_accuracy"] = per_class_accuracy;
  return j.dump();
}

Recognition decide_by_votes(const std::array<std::size_t, 8>& votes) {
  Recognition r;
  r.votes = votes;
  std::size_t best = 0;
  for (std::size_t k = 1; k < 8; ++k)
    if (votes[k] > votes[best]) best = k;
  r.detected = Orientation::from_code(static_cast<int>(best));
  const auto total = std::accumulate(votes.begin(), votes.end(), std::size_t{0});
  r.confidence = total ? static_cast<double>(votes[best]) / static_cast<double>(total) : 0.0;
  return r;
}

Recognition recognize_volume(const ModelParams<float>& params, const PreprocConfig& cfg,
                             const Volume& v, BatchNormOptions bn) {
  if (v.rows < 2 || v.cols < 2 || v.depth == 0)
    throw Error(Errc::invalid_argument, "cannot recognise a volume with degenerate dims");
  std::vector<LabeledExample> slices;
  slices.reserve(v.depth);
  for (std::size_t z = 0; z < v.depth; ++z)
    slices.push_back({assemble(v.slice(z), cfg).tensor.cast<float>(), 0, 0, z});
  std::array<std::size_t, 8> votes{};
  for (int p : predict_classes(params, slices, bn)) ++votes[static_cast<std::size_t>(p)];
  return decide_by_votes(votes);
}

}  // namespace cmro
