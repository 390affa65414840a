// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcrt/geometry.hpp"
#include "pcrt/material.hpp"
#include "pcrt/optim.hpp"
#include "pcrt/polarization.hpp"
#include "pcrt/tensor.hpp"

namespace pcrt {

enum class Mechanism : int { deterministic = 0, non_deterministic = 1 };
const char* mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& s);

// Hop-by-hop surrogate: scene encoder (set-abstraction levels), direction
// predictor (input embedding + transformer encoder + unit-normalized head),
// and amplitude predictor (material embedding + MLP to 8 reals).
struct SurrogateConfig {
    struct SaLevel {
        std::size_t n_prime;
        double radius;
        std::size_t K;
        std::size_t width;
    };
    std::vector<SaLevel> sa;
    std::size_t d_env = 128;

    double crop_radius = 1.0;
    std::size_t crop_max_points = 512;

    int posenc_K = 4;  // input embedding octaves; 6*K dims per direction
    // learnable lift of the raw direction concatenated with the sinusoids;
    // the sinusoidal octaves alone alias components mod 1
    std::size_t dir_lift = 4;
    int n_layers = 2;
    int n_heads = 4;
    int ffn_mult = 2;
    int max_bounces = 3;

    std::size_t mat_embed = 16;
    std::vector<std::size_t> amp_widths = {128, 256, 68, 8};
    bool use_material = true;
    bool use_normals = false;

    // training hyperparameters
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    std::size_t batch = 64;
    int epochs = 800;
    double weight_decay = 0.8;
    std::string wd_mode = "lr_schedule";  // or "l2"
    int decay_epochs = 100;
    double lambda1_det = 1.0, lambda2_det = 5.0;
    double lambda1_non = 1.0, lambda2_non = 0.001;
    std::uint64_t seed = 1;
    int threads = 1;
    int n_shards = 8;  // fixed shard count; results independent of threads

    // Desk-scale profile sized for the acceptance runtime budget.
    static SurrogateConfig desk();
    // Full-size profile (three SA levels 256/64/16 at K=32, 256-wide
    // encoder); heavier than the desk budget allows for training runs.
    static SurrogateConfig reference();

    std::size_t d_model() const {
        return dir_lift + 6 * static_cast<std::size_t>(posenc_K) + d_env;
    }
    std::string to_json() const;
    static SurrogateConfig from_json(const std::string& s);
    std::uint64_t config_hash() const;
};

// Group structures of one crop, reusable across epochs (geometry is static;
// only features change).
struct CropPlan {
    struct Level {
        std::shared_ptr<std::vector<double>> rel;          // G*K relative coords
        std::shared_ptr<std::vector<std::uint32_t>> idx;   // G*K parent-row ids
        std::shared_ptr<std::vector<std::uint32_t>> counts;
        std::size_t n_groups = 0;
        std::size_t K = 0;
    };
    std::vector<Level> levels;
    std::size_t n_points = 0;                 // crop size
    std::shared_ptr<std::vector<double>> l1_normals;  // n_points*3 when used
    bool padded = false;  // crop smaller than the first-level n'
};

CropPlan build_crop_plan(const PointCloud& crop, const SurrogateConfig& cfg);

struct SurrogateModel {
    SurrogateConfig cfg;
    Mechanism mechanism = Mechanism::deterministic;
    nn::ParamStore params;

    static SurrogateModel init(const SurrogateConfig& cfg, Mechanism mech);
};

// Read-only view of the parameters used by forward passes. Shard workers
// build views over shared data with private gradient buffers.
struct ModelView {
    const SurrogateConfig* cfg = nullptr;
    std::vector<nn::Tensor> enc_W, enc_b;  // one per SA level
    nn::Tensor final_W, final_b;
    nn::Tensor dir_lift_W, dir_lift_b;  // raw-direction lift (when enabled)
    nn::Tensor amp_lift_W, amp_lift_b;
    nn::Tensor e_b;  // (max_bounces, d_model) learned bounce embeddings
    std::vector<nn::EncoderLayerParams> layers;
    nn::Tensor head_W, head_b;
    nn::Tensor mat_W, mat_b;  // material embedding (when enabled)
    std::vector<nn::Tensor> amp_W, amp_b;

    std::vector<nn::Tensor> all_tensors() const;
};

// View over the canonical parameters (shared_data = false) or over
// shard-private leaves sharing the same buffers (shared_data = true).
ModelView make_view(const SurrogateModel& model, bool shared_data);

// Stacked group structures for a batch of crops; one fused kernel call per
// level encodes the whole batch.
struct BatchPlan {
    std::vector<CropPlan::Level> levels;  // concatenated with shifted idx
    nn::Tensor l1_feat;                   // stacked per-point normal channels or undefined
    std::size_t batch = 0;
};

BatchPlan stack_plans(const std::vector<const CropPlan*>& plans, const SurrogateConfig& cfg);

// (B, d_env) scene features.
nn::Tensor encode_batch(const BatchPlan& bp, const ModelView& v);

// (B, 3) unit outgoing directions for bounce index b.
nn::Tensor predict_direction_batch(const nn::Tensor& feat, const nn::Tensor& d_in,
                                   int bounce_index, const ModelView& v);

// (B, 8) real/imag components of the polarimetric interaction factor.
nn::Tensor predict_amplitude_batch(const nn::Tensor& feat, const nn::Tensor& d_in,
                                   const nn::Tensor& d_out, const nn::Tensor& mat_params,
                                   const ModelView& v);

// Single-sample wrappers (inference mode).
std::vector<double> encode_scene(const PointCloud& crop, const SurrogateModel& model);
Vec3 predict_direction(const std::vector<double>& feat, const Vec3& d_in,
                       const SurrogateModel& model, int bounce_index = 0);
PolAmp predict_amplitude(const std::vector<double>& feat, const Vec3& d_in, const Vec3& d_out,
                         const Material& mat, const SurrogateModel& model);

// PolAmp <-> 8 reals (r11,i11,r12,i12,r21,i21,r22,i22).
std::array<double, 8> amp_to_reals(const PolAmp& a);
PolAmp amp_from_reals(const std::array<double, 8>& r);

// Material parameter row (sigma, eps_r, S, K_x).
std::array<double, 4> material_row(const Material& m);

// Loss weights for a mechanism per the training configuration.
std::pair<double, double> loss_weights(const SurrogateConfig& cfg, Mechanism m);

// Checkpoint IO with the config embedded.
void save_model(const SurrogateModel& model, const std::string& path);
SurrogateModel load_model(const std::string& path);

}  // namespace pcrt
