#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sev/data.hpp"
#include "sev/layers.hpp"
#include "sev/model.hpp"
#include "sev/optimizer.hpp"

namespace sev {

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> history;
  double train_accuracy = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename S>
Tensor<S> chunk_to_tensor(const std::vector<float>& chunk, std::size_t frames,
                          std::size_t dim) {
  std::vector<S> data(chunk.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = S(chunk[i]);
  return Tensor<S>::from_data({frames, dim}, std::move(data));
}

}  // namespace detail

// Eval-mode classification accuracy over one deterministic pass of fresh
// chunk crops.
template <typename S>
double training_accuracy(Model<S>& model, const data::LabeledCorpus& corpus,
                         const TrainConfig& tc) {
  const std::size_t dim = model.cfg.input_dim;
  auto batches = data::make_epoch_batches(corpus.utts, corpus.labels,
                                          tc.chunk_frames, tc.batch_size,
                                          model.rng);
  std::size_t correct = 0, total = 0;
  for (const auto& batch : batches) {
    std::vector<Tensor<S>> embs;
    embs.reserve(batch.items.size());
    for (const auto& item : batch.items) {
      Tensor<S> x = detail::chunk_to_tensor<S>(item.chunk, tc.chunk_frames, dim);
      embs.push_back(embed_utterance(model, x, Mode::eval, model.rng));
    }
    Tensor<S> logits = classify_batch(model, stack_rows(embs), Mode::eval);
    const std::size_t classes = logits.shape()[1];
    for (std::size_t b = 0; b < batch.items.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < classes; ++j) {
        if (logits.at(b, j) > logits.at(b, best)) best = j;
      }
      correct += int(best) == batch.items[b].label;
      ++total;
    }
  }
  return double(correct) / double(total);
}

// Cross-entropy training with AdamW and a per-epoch learning-rate decay.
// Deterministic per (seed, scalar type): batch order, crops and dropout all
// come from the model's single random stream.
template <typename S>
TrainResult train(Model<S>& model, const data::LabeledCorpus& corpus,
                  const TrainConfig& tc) {
  if (corpus.utts.empty()) throw std::invalid_argument("train: empty corpus");
  if (corpus.speakers.size() != model.cfg.num_speakers) {
    throw std::invalid_argument(
        "train: corpus has " + std::to_string(corpus.speakers.size()) +
        " speakers but the model was built for " +
        std::to_string(model.cfg.num_speakers));
  }
  const std::size_t dim = model.cfg.input_dim;
  AdamW<S> opt(model.params, tc.opt);
  TrainResult res;
  double lr = tc.opt.lr;
  std::size_t gstep = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    opt.set_lr(lr);
    auto batches = data::make_epoch_batches(corpus.utts, corpus.labels,
                                            tc.chunk_frames, tc.batch_size,
                                            model.rng);
    for (const auto& batch : batches) {
      opt.zero_grad();
      std::vector<Tensor<S>> embs;
      std::vector<int> labels;
      embs.reserve(batch.items.size());
      labels.reserve(batch.items.size());
      for (const auto& item : batch.items) {
        Tensor<S> x = detail::chunk_to_tensor<S>(item.chunk, tc.chunk_frames, dim);
        embs.push_back(embed_utterance(model, x, Mode::train, model.rng));
        labels.push_back(item.label);
      }
      Tensor<S> logits = classify_batch(model, stack_rows(embs), Mode::train);
      Tensor<S> loss = layers::cross_entropy_softmax(logits, labels);
      const double loss_value = double(loss.item());
      if (!std::isfinite(loss_value)) {
        throw TrainingDiverged("train: loss became non-finite at step " +
                               std::to_string(gstep) + " (epoch " +
                               std::to_string(epoch) + ")");
      }
      res.history.push_back({epoch, gstep, loss_value});
      backward(loss);
      opt.step();
      ++gstep;
    }
    lr *= tc.opt.lr_decay;
  }
  res.train_accuracy = training_accuracy(model, corpus, tc);
  return res;
}

// One line per step, full-precision loss so identical runs produce
// byte-identical files.
inline void write_loss_history(const std::filesystem::path& path,
                               const std::vector<StepRecord>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_loss_history: cannot open " + path.string());
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%zu %zu %.17g\n", r.step, r.epoch, r.loss);
    os << buf;
  }
}

}  // namespace sev
