// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pcrt/dataset.hpp"
#include "pcrt/surrogate.hpp"

namespace pcrt {

// Thrown when training hits a non-finite loss; maps to exit code 3.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    int epoch = -1;
};

struct EpochStats {
    double dir_loss = 0.0;
    double att_loss = 0.0;
    double total_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
};

// Combined loss lambda1 * dir + lambda2 * att for the model's mechanism.
nn::Tensor total_loss(const nn::Tensor& dir_loss, const nn::Tensor& att_loss,
                      const SurrogateConfig& cfg, Mechanism mech);

// Single-bounce training per the hop-by-hop scheme: shuffled mini-batches;
// per sample encode the local crop, predict the outgoing direction from
// d_in, then predict the amplitude from (d_in, predicted direction,
// material); cosine loss on directions and mechanism-specific amplitude
// loss. The batch is split into cfg.n_shards fixed shards whose gradients
// reduce in shard order, so any worker count reproduces the same result.
// Writes a per-epoch CSV (epoch, dir_loss, att_loss, total) when
// log_csv_path is non-empty.
TrainResult train_model(SurrogateModel& model, const TrainingSet& data,
                        const std::string& log_csv_path = "", int epochs_override = -1,
                        double lr_override = 0.0);

// Held-out evaluation of a trained model on a sample set: mean angular error
// of predicted directions (degrees) and the median absolute per-hop power
// error (dB) of predicted amplitudes, both against the stored targets.
struct HeldOutEval {
    double mean_angular_error_deg = 0.0;
    double median_power_error_db = 0.0;
    std::size_t n = 0;
};
HeldOutEval evaluate_held_out(const SurrogateModel& model, const TrainingSet& data);

}  // namespace pcrt
