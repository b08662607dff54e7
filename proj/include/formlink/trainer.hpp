#pragma once

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "formlink/chargrid.hpp"
#include "formlink/config.hpp"
#include "formlink/decoder.hpp"
#include "formlink/eval.hpp"
#include "formlink/funsd.hpp"
#include "formlink/net.hpp"

namespace formlink {

struct TrainOptions {
  NetConfig net;  // vocab_size is overwritten from the vocabulary
  LossWeights loss;
  TrainConfig train;
  AugmentConfig augment;
  std::string checkpoint_dir;  // empty: keep checkpoints in memory only
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  LossBreakdown<float> mean;
};

/// Thrown when the loss turns non-finite; the last completed epoch's
/// checkpoint is retained on disk when a checkpoint_dir is set.
struct TrainAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::unique_ptr<FormNet<float>> train_net(
    const std::vector<FormDocument>& forms, const CharVocab& vocab, const TrainOptions& opts,
    std::ostream* log = nullptr,
    const std::function<void(const EpochStats&)>& on_epoch = nullptr);

/// Rasterizes a form and runs the network; returns plain field maps for the
/// decoder.
FieldMaps run_inference(const FormNet<float>& net, const FormDocument& form,
                        const CharVocab& vocab, double target_median_height = 3.0);

/// Decode + score every form against its ground truth.
EvalReport evaluate_net(const FormNet<float>& net, const std::vector<FormDocument>& forms,
                        const CharVocab& vocab, const DecodeConfig& decode_cfg,
                        const EvalOptions& eval_opts, double target_median_height = 3.0);

}  // namespace formlink
