// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcrt/surrogate.hpp"
#include "pcrt/tracer.hpp"

namespace pcrt {

// One ray-level training sample: a single interaction of a traced path.
// I is the hop interaction factor between the canonical segment bases.
struct RaySample {
    Vec3 tx, rx, p;
    Vec3 d_in, d_out;
    std::array<double, 8> I{};
    int material_id = 0;
    Mechanism mechanism = Mechanism::deterministic;
    int hop_index = 0;   // 0 = first interaction after Tx
    int path_index = 0;  // path within the link's realization
    std::size_t crop_anchor = 0;  // cloud point id anchoring the local crop
    std::string link_id;
};

struct LinkSpec {
    std::string id;
    std::string scene_path;  // scene file; tx/rx below override its terminals
    Vec3 tx, rx;
};

struct DatasetManifest {
    int version = 1;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    struct Link {
        std::string id;
        std::string scene_path;
        Vec3 tx, rx;
        std::string split;  // "train" or "test"
        std::size_t n_samples = 0, n_det = 0, n_non = 0;
        bool empty = false;  // no NLOS paths above the floor
    };
    std::vector<Link> links;
    std::size_t total_det = 0, total_non = 0;
};

// Loads the scene per link (cached by path), traces, decomposes every
// retained NLOS path into per-hop samples, splits links 5:1 train:test and
// writes manifest.json plus samples/<link>.json under out_dir.
DatasetManifest gen_dataset(const std::vector<LinkSpec>& links, const TraceConfig& cfg,
                            const std::string& out_dir, std::uint64_t seed);

// Decomposition of one realization (exposed for tests).
std::vector<RaySample> decompose_paths(const ChannelRealization& real, const Scene& scene,
                                       const std::string& link_id);

DatasetManifest load_manifest(const std::string& out_dir);
void save_manifest(const DatasetManifest& m, const std::string& out_dir);
std::vector<RaySample> load_samples(const std::string& out_dir, const std::string& link_id);
void save_samples(const std::vector<RaySample>& samples, const std::string& out_dir,
                  const std::string& link_id);

// In-memory training set: single-bounce samples of one mechanism with their
// crop plans (cached per anchor point, geometry reused across epochs).
struct TrainingSet {
    std::vector<RaySample> samples;
    std::vector<std::size_t> plan_of_sample;
    std::vector<CropPlan> plans;
    std::vector<std::array<double, 4>> mat_of_sample;

    std::size_t size() const { return samples.size(); }
};

// Builds the training set for a mechanism from manifest links with the given
// split label; only hop_index == 0 samples train (single-bounce rule).
TrainingSet build_training_set(const DatasetManifest& manifest, const std::string& dataset_dir,
                               const std::string& split, Mechanism mech,
                               const SurrogateConfig& cfg, bool first_hop_only = true);

}  // namespace pcrt
