// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "pcrt/rng.hpp"
#include "pcrt/tensor.hpp"

namespace pcrt::nn {

// Named parameter tensors with Adam moment buffers.
class ParamStore {
  public:
    struct Entry {
        Tensor t;
        std::vector<double> m, v;
    };

    // Uniform fan-in init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in taken
    // from the first shape dimension (1 for vectors).
    Tensor add(const std::string& name, std::vector<std::size_t> shape, Rng& rng);
    Tensor add_const(const std::string& name, std::vector<std::size_t> shape, double value);
    Tensor add_data(const std::string& name, std::vector<std::size_t> shape,
                    std::vector<double> data);

    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    void zero_grad();
    std::size_t n_params() const;

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    std::int64_t step = 0;

  private:
    std::map<std::string, Entry> entries_;  // ordered: deterministic iteration
};

enum class WeightDecayMode {
    lr_schedule,   // factor applied to the learning rate every decay_epochs
    l2_decoupled,  // per-step decoupled decay p -= lr * wd * p
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.8;  // interpretation chosen by mode
    WeightDecayMode mode = WeightDecayMode::lr_schedule;
    int decay_epochs = 100;  // lr <- lr * weight_decay every this many epochs
};

// Bias-corrected Adam update; every parameter must have a gradient.
void adam_step(ParamStore& store, const AdamConfig& cfg);

// Effective learning rate at a given epoch under the schedule mode.
double scheduled_lr(const AdamConfig& cfg, int epoch);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    bool pass = false;
};

// Central-difference check of backward gradients for a scalar-valued
// closure. The closure must rebuild the graph from the given leaf tensors
// on every call.
GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                           double eps = 1e-5, double tol = 1e-4);

// Versioned checkpoint: parameters, Adam state, and a caller-provided
// config JSON string (hashed for compatibility checks).
void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& config_json);
ParamStore load_checkpoint(const std::string& path, std::string* config_json = nullptr);

}  // namespace pcrt::nn
