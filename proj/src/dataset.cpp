// SPDX-License-Identifier: Apache-2.0
#include "pcrt/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

namespace fs = std::filesystem;

namespace pcrt {

using nlohmann::json;

namespace {

json vec_js(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_of(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

}  // namespace

std::vector<RaySample> decompose_paths(const ChannelRealization& real, const Scene& scene,
                                       const std::string& link_id) {
    std::vector<RaySample> out;
    int path_index = 0;
    for (const auto& path : real.nlos) {
        for (std::size_t h = 0; h < path.hops.size(); ++h) {
            const PathHop& hop = path.hops[h];
            RaySample s;
            s.tx = scene.tx;
            s.rx = scene.rx;
            s.p = hop.position;
            s.d_in = hop.dir_in;
            s.d_out = hop.dir_out;
            s.I = amp_to_reals(hop.amp);
            s.material_id = hop.material_id;
            s.mechanism = hop.kind == HopKind::reflect ? Mechanism::deterministic
                                                       : Mechanism::non_deterministic;
            s.hop_index = static_cast<int>(h);
            s.path_index = path_index;
            // diffraction hops carry an edge index, not a point id; anchor
            // the crop at the nearest cloud point instead
            s.crop_anchor = hop.kind == HopKind::diffract
                                ? scene.index.nearest(hop.position)
                                : hop.point_id;
            s.link_id = link_id;
            out.push_back(std::move(s));
        }
        ++path_index;
    }
    return out;
}

DatasetManifest gen_dataset(const std::vector<LinkSpec>& links, const TraceConfig& cfg,
                            const std::string& out_dir, std::uint64_t seed) {
    if (links.empty()) throw InputError("gen_dataset: no links");
    fs::create_directories(fs::path(out_dir) / "samples");

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.config_hash = hash64(std::to_string(cfg.n_rays) + "/" +
                                  std::to_string(cfg.max_bounces) + "/" +
                                  std::to_string(cfg.seed));

    std::map<std::string, Scene> scene_cache;
    for (const auto& link : links) {
        auto it = scene_cache.find(link.scene_path);
        if (it == scene_cache.end())
            it = scene_cache.emplace(link.scene_path, load_scene(link.scene_path)).first;
        Scene scene = it->second;  // shallow copy shares the cloud
        scene.tx = link.tx;
        scene.rx = link.rx;
        scene.validate();

        TraceConfig link_cfg = cfg;
        link_cfg.seed = sub_seed(seed, "trace", hash64(link.id));
        ChannelRealization real = trace(scene, link_cfg);
        auto samples = decompose_paths(real, scene, link.id);

        DatasetManifest::Link ml;
        ml.id = link.id;
        ml.scene_path = link.scene_path;
        ml.tx = link.tx;
        ml.rx = link.rx;
        ml.n_samples = samples.size();
        for (const auto& s : samples)
            (s.mechanism == Mechanism::deterministic ? ml.n_det : ml.n_non) += 1;
        ml.empty = samples.empty();
        manifest.total_det += ml.n_det;
        manifest.total_non += ml.n_non;
        manifest.links.push_back(ml);
        save_samples(samples, out_dir, link.id);
    }

    // 5:1 split by link, seeded shuffle; empty links excluded from both sides
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < manifest.links.size(); ++i)
        if (!manifest.links[i].empty) usable.push_back(i);
    Rng rng(sub_seed(seed, "split"));
    rng.shuffle(usable);
    std::size_t n_test = std::max<std::size_t>(1, (usable.size() + 3) / 6);
    for (std::size_t k = 0; k < usable.size(); ++k)
        manifest.links[usable[k]].split = k < n_test ? "test" : "train";
    for (auto& l : manifest.links)
        if (l.empty) l.split = "excluded";

    save_manifest(manifest, out_dir);
    return manifest;
}

void save_manifest(const DatasetManifest& m, const std::string& out_dir) {
    json j;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["config_hash"] = m.config_hash;
    j["total_det"] = m.total_det;
    j["total_non"] = m.total_non;
    json links = json::array();
    for (const auto& l : m.links) {
        json jl;
        jl["id"] = l.id;
        jl["scene"] = l.scene_path;
        jl["tx"] = vec_js(l.tx);
        jl["rx"] = vec_js(l.rx);
        jl["split"] = l.split;
        jl["n_samples"] = l.n_samples;
        jl["n_det"] = l.n_det;
        jl["n_non"] = l.n_non;
        jl["empty"] = l.empty;
        links.push_back(jl);
    }
    j["links"] = links;
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    if (!out) throw InputError("cannot write manifest in " + out_dir);
    out << j.dump(1) << "\n";
}

DatasetManifest load_manifest(const std::string& out_dir) {
    std::ifstream in(fs::path(out_dir) / "manifest.json");
    if (!in) throw InputError("cannot open manifest in " + out_dir);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("bad manifest: " + std::string(e.what()));
    }
    DatasetManifest m;
    m.version = j.at("version");
    m.seed = j.at("seed");
    m.config_hash = j.at("config_hash");
    m.total_det = j.at("total_det");
    m.total_non = j.at("total_non");
    for (const auto& jl : j.at("links")) {
        DatasetManifest::Link l;
        l.id = jl.at("id");
        l.scene_path = jl.at("scene");
        l.tx = vec_of(jl.at("tx"));
        l.rx = vec_of(jl.at("rx"));
        l.split = jl.at("split");
        l.n_samples = jl.at("n_samples");
        l.n_det = jl.at("n_det");
        l.n_non = jl.at("n_non");
        l.empty = jl.at("empty");
        m.links.push_back(l);
    }
    return m;
}

void save_samples(const std::vector<RaySample>& samples, const std::string& out_dir,
                  const std::string& link_id) {
    json arr = json::array();
    for (const auto& s : samples) {
        json js;
        js["tx"] = vec_js(s.tx);
        js["rx"] = vec_js(s.rx);
        js["p"] = vec_js(s.p);
        js["din"] = vec_js(s.d_in);
        js["dout"] = vec_js(s.d_out);
        js["I"] = s.I;
        js["mat"] = s.material_id;
        js["mech"] = mechanism_name(s.mechanism);
        js["hop"] = s.hop_index;
        js["path"] = s.path_index;
        js["anchor"] = s.crop_anchor;
        arr.push_back(js);
    }
    std::ofstream out(fs::path(out_dir) / "samples" / (link_id + ".json"));
    if (!out) throw InputError("cannot write samples for link " + link_id);
    out << arr.dump(1) << "\n";
}

std::vector<RaySample> load_samples(const std::string& out_dir, const std::string& link_id) {
    std::ifstream in(fs::path(out_dir) / "samples" / (link_id + ".json"));
    if (!in) throw InputError("cannot open samples for link " + link_id);
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw InputError("bad sample file: " + std::string(e.what()));
    }
    std::vector<RaySample> out;
    for (const auto& js : arr) {
        RaySample s;
        s.tx = vec_of(js.at("tx"));
        s.rx = vec_of(js.at("rx"));
        s.p = vec_of(js.at("p"));
        s.d_in = vec_of(js.at("din"));
        s.d_out = vec_of(js.at("dout"));
        auto iv = js.at("I");
        for (int i = 0; i < 8; ++i) s.I[i] = iv.at(i);
        s.material_id = js.at("mat");
        s.mechanism = mechanism_from_name(js.at("mech"));
        s.hop_index = js.at("hop");
        s.path_index = js.at("path");
        s.crop_anchor = js.at("anchor");
        s.link_id = link_id;
        out.push_back(std::move(s));
    }
    return out;
}

TrainingSet build_training_set(const DatasetManifest& manifest, const std::string& dataset_dir,
                               const std::string& split, Mechanism mech,
                               const SurrogateConfig& cfg, bool first_hop_only) {
    TrainingSet set;
    std::map<std::string, Scene> scene_cache;
    // plan cache keyed by (scene, anchor)
    std::map<std::pair<std::string, std::size_t>, std::size_t> plan_ids;
    for (const auto& link : manifest.links) {
        if (link.split != split) continue;
        auto it = scene_cache.find(link.scene_path);
        if (it == scene_cache.end())
            it = scene_cache.emplace(link.scene_path, load_scene(link.scene_path)).first;
        const Scene& scene = it->second;
        for (auto& s : load_samples(dataset_dir, link.id)) {
            if (s.mechanism != mech) continue;
            if (first_hop_only && s.hop_index != 0) continue;
            auto key = std::make_pair(link.scene_path, s.crop_anchor);
            auto pit = plan_ids.find(key);
            if (pit == plan_ids.end()) {
                Vec3 center = scene.cloud->positions[s.crop_anchor];
                CropResult cr = crop(*scene.cloud, scene.index, center, cfg.crop_radius,
                                     cfg.crop_max_points,
                                     sub_seed(manifest.seed, "crop", s.crop_anchor));
                set.plans.push_back(build_crop_plan(cr.cloud, cfg));
                pit = plan_ids.emplace(key, set.plans.size() - 1).first;
            }
            set.plan_of_sample.push_back(pit->second);
            set.mat_of_sample.push_back(
                material_row(scene.materials.get(s.material_id)));
            set.samples.push_back(std::move(s));
        }
    }
    return set;
}

}  // namespace pcrt
