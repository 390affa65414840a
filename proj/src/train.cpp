// SPDX-License-Identifier: Apache-2.0
#include "pcrt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pcrt/threadpool.hpp"

namespace pcrt {

using nn::Tensor;

nn::Tensor total_loss(const nn::Tensor& dir_loss, const nn::Tensor& att_loss,
                      const SurrogateConfig& cfg, Mechanism mech) {
    auto [l1, l2] = loss_weights(cfg, mech);
    return nn::add(nn::scale(dir_loss, l1), nn::scale(att_loss, l2));
}

namespace {

struct ShardBatch {
    std::vector<std::size_t> sample_ids;
};

// Forward + loss for one shard; returns (dir_loss, att_loss) values and the
// scaled total loss tensor ready for backward.
struct ShardOutcome {
    double dir = 0.0, att = 0.0;
};

ShardOutcome run_shard(const TrainingSet& data, const std::vector<std::size_t>& ids,
                       const ModelView& view, const SurrogateConfig& cfg, Mechanism mech,
                       double weight, bool do_backward) {
    std::size_t B = ids.size();
    std::vector<const CropPlan*> plans(B);
    std::vector<double> din(B * 3), dout(B * 3), truth_amp(B * 8), mats(B * 4);
    for (std::size_t i = 0; i < B; ++i) {
        const RaySample& s = data.samples[ids[i]];
        plans[i] = &data.plans[data.plan_of_sample[ids[i]]];
        din[i * 3 + 0] = s.d_in.x;
        din[i * 3 + 1] = s.d_in.y;
        din[i * 3 + 2] = s.d_in.z;
        dout[i * 3 + 0] = s.d_out.x;
        dout[i * 3 + 1] = s.d_out.y;
        dout[i * 3 + 2] = s.d_out.z;
        for (int c = 0; c < 8; ++c) truth_amp[i * 8 + c] = s.I[c];
        const auto& m = data.mat_of_sample[ids[i]];
        for (int c = 0; c < 4; ++c) mats[i * 4 + c] = m[c];
    }
    BatchPlan bp = stack_plans(plans, cfg);
    Tensor d_in = Tensor::from({B, 3}, std::move(din));
    Tensor d_truth = Tensor::from({B, 3}, std::move(dout));
    Tensor amp_truth = Tensor::from({B, 8}, std::move(truth_amp));
    Tensor mat_rows = Tensor::from({B, 4}, std::move(mats));

    Tensor feat = encode_batch(bp, view);
    Tensor d_pred = predict_direction_batch(feat, d_in, 0, view);
    Tensor dir_loss = nn::cosine_direction_loss(d_pred, d_truth);
    Tensor amp_pred = predict_amplitude_batch(feat, d_in, d_pred, mat_rows, view);
    Tensor att_loss;
    if (mech == Mechanism::deterministic) {
        att_loss = nn::mse_loss(amp_pred, amp_truth);
    } else {
        std::size_t excluded = 0;
        att_loss = nn::log_power_loss(amp_pred, amp_truth, &excluded);
    }
    ShardOutcome out{dir_loss.value(), att_loss.value()};
    if (do_backward) {
        Tensor loss = nn::scale(total_loss(dir_loss, att_loss, cfg, mech), weight);
        loss.backward();
    }
    return out;
}

}  // namespace

TrainResult train_model(SurrogateModel& model, const TrainingSet& data,
                        const std::string& log_csv_path, int epochs_override,
                        double lr_override) {
    if (data.size() == 0) throw InputError("train: empty dataset");
    const SurrogateConfig& cfg = model.cfg;
    int epochs = epochs_override > 0 ? epochs_override : cfg.epochs;

    nn::AdamConfig adam;
    adam.lr = lr_override > 0.0 ? lr_override : cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.weight_decay = cfg.weight_decay;
    adam.mode = cfg.wd_mode == "l2" ? nn::WeightDecayMode::l2_decoupled
                                    : nn::WeightDecayMode::lr_schedule;
    adam.decay_epochs = cfg.decay_epochs;

    int n_shards = std::max(1, cfg.n_shards);
    // shard views share the weight buffers but own their gradients
    std::vector<ModelView> shard_views;
    std::vector<std::vector<Tensor>> shard_tensors;
    for (int s = 0; s < n_shards; ++s) {
        shard_views.push_back(make_view(model, true));
        shard_tensors.push_back(shard_views.back().all_tensors());
    }
    ModelView canon = make_view(model, false);
    std::vector<Tensor> canon_tensors = canon.all_tensors();

    std::ofstream log;
    if (!log_csv_path.empty()) {
        log.open(log_csv_path);
        if (!log) throw InputError("cannot write training log: " + log_csv_path);
        log << "epoch,dir_loss,att_loss,total_loss\n";
        log.precision(12);
    }

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    auto [l1w, l2w] = loss_weights(cfg, model.mechanism);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        Rng shuffle_rng(sub_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double lr = lr_override > 0.0
                        ? lr_override
                        : nn::scheduled_lr(adam, epoch);
        nn::AdamConfig step_cfg = adam;
        step_cfg.lr = lr;

        EpochStats stats;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < data.size(); start += cfg.batch) {
            std::size_t end = std::min(data.size(), start + cfg.batch);
            std::size_t bsz = end - start;
            // fixed shard decomposition: contiguous slices of the batch
            std::vector<std::vector<std::size_t>> shards(n_shards);
            for (std::size_t i = 0; i < bsz; ++i)
                shards[i * n_shards / bsz].push_back(order[start + i]);

            for (auto& t : canon_tensors) t.zero_grad();
            std::vector<ShardOutcome> outcomes(n_shards);
            parallel_chunks(n_shards, cfg.threads, [&](std::size_t s) {
                if (shards[s].empty()) return;
                for (auto& t : shard_tensors[s]) t.zero_grad();
                double w = static_cast<double>(shards[s].size()) / static_cast<double>(bsz);
                outcomes[s] = run_shard(data, shards[s], shard_views[s], cfg,
                                        model.mechanism, w, true);
            });
            // canonical reduction in shard order
            for (int s = 0; s < n_shards; ++s) {
                if (shards[s].empty()) continue;
                for (std::size_t t = 0; t < canon_tensors.size(); ++t) {
                    auto& dst = canon_tensors[t].grad();
                    const auto& src = shard_tensors[s][t].grad();
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
                }
            }
            double dir = 0.0, att = 0.0;
            for (int s = 0; s < n_shards; ++s) {
                if (shards[s].empty()) continue;
                double w = static_cast<double>(shards[s].size()) / static_cast<double>(bsz);
                dir += w * outcomes[s].dir;
                att += w * outcomes[s].att;
            }
            double tot = l1w * dir + l2w * att;
            if (!std::isfinite(tot)) {
                NumericalError err("training loss is not finite at epoch " +
                                   std::to_string(epoch));
                err.epoch = epoch;
                throw err;
            }
            stats.dir_loss += dir;
            stats.att_loss += att;
            stats.total_loss += tot;
            ++n_batches;

            nn::adam_step(model.params, step_cfg);
        }
        stats.dir_loss /= static_cast<double>(n_batches);
        stats.att_loss /= static_cast<double>(n_batches);
        stats.total_loss /= static_cast<double>(n_batches);
        result.curve.push_back(stats);
        if (log)
            log << epoch << "," << stats.dir_loss << "," << stats.att_loss << ","
                << stats.total_loss << "\n";
    }
    return result;
}

HeldOutEval evaluate_held_out(const SurrogateModel& model, const TrainingSet& data) {
    nn::NoGradGuard ng;
    HeldOutEval ev;
    if (data.size() == 0) return ev;
    ModelView view = make_view(model, false);
    double ang_sum = 0.0;
    std::vector<double> pow_errs;
    constexpr std::size_t kChunk = 256;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        std::size_t end = std::min(data.size(), start + kChunk);
        std::vector<std::size_t> ids(end - start);
        std::iota(ids.begin(), ids.end(), start);
        std::size_t B = ids.size();
        std::vector<const CropPlan*> plans(B);
        std::vector<double> din(B * 3), mats(B * 4);
        for (std::size_t i = 0; i < B; ++i) {
            const RaySample& s = data.samples[ids[i]];
            plans[i] = &data.plans[data.plan_of_sample[ids[i]]];
            din[i * 3 + 0] = s.d_in.x;
            din[i * 3 + 1] = s.d_in.y;
            din[i * 3 + 2] = s.d_in.z;
            const auto& m = data.mat_of_sample[ids[i]];
            for (int c = 0; c < 4; ++c) mats[i * 4 + c] = m[c];
        }
        BatchPlan bp = stack_plans(plans, model.cfg);
        Tensor d_in = Tensor::from({B, 3}, std::move(din));
        Tensor mat_rows = Tensor::from({B, 4}, std::move(mats));
        Tensor feat = encode_batch(bp, view);
        Tensor d_pred = predict_direction_batch(feat, d_in, 0, view);
        Tensor amp_pred = predict_amplitude_batch(feat, d_in, d_pred, mat_rows, view);
        for (std::size_t i = 0; i < B; ++i) {
            const RaySample& s = data.samples[ids[i]];
            Vec3 dp{d_pred.data()[i * 3], d_pred.data()[i * 3 + 1], d_pred.data()[i * 3 + 2]};
            ang_sum += angle_between(dp, s.d_out) * 180.0 / M_PI;
            double p_pred = 0.0, p_true = 0.0;
            for (int c = 0; c < 8; ++c) {
                p_pred += amp_pred.data()[i * 8 + c] * amp_pred.data()[i * 8 + c];
                p_true += s.I[c] * s.I[c];
            }
            if (p_true > 0.0 && p_pred > 0.0)
                pow_errs.push_back(std::fabs(10.0 * std::log10(p_pred / p_true)));
        }
    }
    ev.n = data.size();
    ev.mean_angular_error_deg = ang_sum / static_cast<double>(data.size());
    if (!pow_errs.empty()) {
        std::sort(pow_errs.begin(), pow_errs.end());
        ev.median_power_error_db = pow_errs[pow_errs.size() / 2];
    }
    return ev;
}

}  // namespace pcrt
