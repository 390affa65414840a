// SPDX-License-Identifier: Apache-2.0
#include "pcrt/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "pcrt/geometry.hpp"
#include "pcrt/threadpool.hpp"

namespace pcrt {

using nn::Tensor;

namespace {

constexpr double kEpsSelf = 1e-4;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-model cache of scene features keyed by crop anchor point id.
struct FeatureCache {
    std::unordered_map<std::size_t, std::size_t> row_of_anchor;
    std::vector<double> rows;  // n * d_env
    std::size_t d_env = 0;
};

struct StoredHop {
    std::int32_t parent = -1;
    PathHop hop;
};

struct LiveRay {
    Vec3 origin, dir;
    double unfolded = 0.0;
    std::int32_t hop_node = -1;  // index into the hop tree
    int diffuse_used = 0;
    std::uint64_t key = 0;
};

struct HitRec {
    std::size_t ray = 0;
    Hit hit;
};

// Batched direction/amplitude inference over row chunks, parallel and
// order-independent (rows land at fixed offsets).
void predict_chunked(const ModelView& view, const std::vector<double>& feat_rows,
                     const std::vector<double>& din_rows, int bounce,
                     const std::vector<double>& mat_rows, int threads, std::size_t B,
                     std::size_t d_env, std::vector<double>* dirs_out,
                     std::vector<double>* amps_out) {
    dirs_out->assign(B * 3, 0.0);
    constexpr std::size_t kChunk = 512;
    parallel_blocks(B, kChunk, threads, [&](std::size_t b0, std::size_t b1) {
        nn::NoGradGuard ng;
        std::size_t n = b1 - b0;
        Tensor feat = Tensor::from({n, d_env},
                                   {feat_rows.begin() + b0 * d_env,
                                    feat_rows.begin() + b1 * d_env});
        Tensor din = Tensor::from({n, 3},
                                  {din_rows.begin() + b0 * 3, din_rows.begin() + b1 * 3});
        Tensor d_pred = predict_direction_batch(feat, din, bounce, view);
        std::copy(d_pred.data(), d_pred.data() + n * 3, dirs_out->begin() + b0 * 3);
        if (amps_out) {
            Tensor mats = Tensor::from({n, 4},
                                       {mat_rows.begin() + b0 * 4, mat_rows.begin() + b1 * 4});
            Tensor amp = predict_amplitude_batch(feat, din, d_pred, mats, view);
            std::copy(amp.data(), amp.data() + n * 8, amps_out->begin() + b0 * 8);
        }
    });
}

// Amplitude for explicitly chosen outgoing directions (scatter spawns).
void predict_amp_chunked(const ModelView& view, const std::vector<double>& feat_rows,
                         const std::vector<double>& din_rows,
                         const std::vector<double>& dout_rows,
                         const std::vector<double>& mat_rows, int threads, std::size_t B,
                         std::size_t d_env, std::vector<double>* amps_out) {
    amps_out->assign(B * 8, 0.0);
    constexpr std::size_t kChunk = 512;
    parallel_blocks(B, kChunk, threads, [&](std::size_t b0, std::size_t b1) {
        nn::NoGradGuard ng;
        std::size_t n = b1 - b0;
        Tensor feat = Tensor::from({n, d_env},
                                   {feat_rows.begin() + b0 * d_env,
                                    feat_rows.begin() + b1 * d_env});
        Tensor din = Tensor::from({n, 3},
                                  {din_rows.begin() + b0 * 3, din_rows.begin() + b1 * 3});
        Tensor dout = Tensor::from({n, 3},
                                   {dout_rows.begin() + b0 * 3, dout_rows.begin() + b1 * 3});
        Tensor mats = Tensor::from({n, 4},
                                   {mat_rows.begin() + b0 * 4, mat_rows.begin() + b1 * 4});
        Tensor amp = predict_amplitude_batch(feat, din, dout, mats, view);
        std::copy(amp.data(), amp.data() + n * 8, amps_out->begin() + b0 * 8);
    });
}

// Ensures features exist for all anchors; encodes missing crops in batches.
void encode_anchors(const Scene& scene, const SurrogateConfig& cfg, const ModelView& view,
                    const std::vector<std::size_t>& anchors, int threads, FeatureCache* cache,
                    RolloutDiag* diag) {
    std::vector<std::size_t> missing;
    for (auto a : anchors)
        if (!cache->row_of_anchor.count(a)) {
            cache->row_of_anchor.emplace(a, cache->row_of_anchor.size());
            missing.push_back(a);
        }
    if (missing.empty()) return;
    cache->d_env = cfg.d_env;
    std::size_t base = cache->rows.size() / cfg.d_env;
    cache->rows.resize((base + missing.size()) * cfg.d_env);
    if (diag) diag->crops_encoded += missing.size();

    // crop plans in parallel (pure geometry)
    std::vector<CropPlan> plans(missing.size());
    parallel_blocks(missing.size(), 16, threads, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            Vec3 center = scene.cloud->positions[missing[i]];
            CropResult cr = crop(*scene.cloud, scene.index, center, cfg.crop_radius,
                                 cfg.crop_max_points, sub_seed(cfg.seed, "crop", missing[i]));
            plans[i] = build_crop_plan(cr.cloud, cfg);
        }
    });
    constexpr std::size_t kChunk = 48;
    parallel_blocks(missing.size(), kChunk, threads, [&](std::size_t i0, std::size_t i1) {
        nn::NoGradGuard ng;
        std::vector<const CropPlan*> ptrs;
        for (std::size_t i = i0; i < i1; ++i) ptrs.push_back(&plans[i]);
        BatchPlan bp = stack_plans(ptrs, cfg);
        Tensor feat = encode_batch(bp, view);
        for (std::size_t i = i0; i < i1; ++i) {
            std::size_t row = cache->row_of_anchor.at(missing[i]);
            std::copy(feat.data() + (i - i0) * cfg.d_env,
                      feat.data() + (i - i0 + 1) * cfg.d_env,
                      cache->rows.begin() + row * cfg.d_env);
        }
    });
}

bool path_less_r(const TracedPath& a, const TracedPath& b) {
    if (a.gain.tau != b.gain.tau) return a.gain.tau < b.gain.tau;
    if (a.hops.size() != b.hops.size()) return a.hops.size() < b.hops.size();
    for (std::size_t i = 0; i < a.hops.size(); ++i) {
        if (a.hops[i].kind != b.hops[i].kind) return a.hops[i].kind < b.hops[i].kind;
        const Vec3& pa = a.hops[i].position;
        const Vec3& pb = b.hops[i].position;
        if (pa.x != pb.x) return pa.x < pb.x;
        if (pa.y != pb.y) return pa.y < pb.y;
        if (pa.z != pb.z) return pa.z < pb.z;
    }
    return a.gain.a > b.gain.a;
}

std::vector<TracedPath> merge_duplicates_r(std::vector<TracedPath> paths, double tol) {
    std::sort(paths.begin(), paths.end(), path_less_r);
    std::vector<TracedPath> merged;
    for (auto& p : paths) {
        bool dup = false;
        for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
            if (p.gain.tau - it->gain.tau >
                (tol * static_cast<double>(p.hops.size() + 1) + 1e-6) / kSpeedOfLight * 4.0)
                break;
            if (it->hops.size() != p.hops.size()) continue;
            bool same = true;
            for (std::size_t i = 0; i < p.hops.size() && same; ++i)
                same = it->hops[i].kind == p.hops[i].kind &&
                       distance(it->hops[i].position, p.hops[i].position) <= tol;
            if (same) {
                if (p.gain.a > it->gain.a) *it = std::move(p);
                dup = true;
                break;
            }
        }
        if (!dup) merged.push_back(std::move(p));
    }
    return merged;
}

}  // namespace

ChannelRealization rollout(const Scene& scene, const SurrogateModel& det,
                           const SurrogateModel& non, const TraceConfig& cfg,
                           RolloutDiag* diag) {
    cfg.validate();
    scene.validate();
    if (det.mechanism != Mechanism::deterministic ||
        non.mechanism != Mechanism::non_deterministic)
        throw InputError("rollout: models passed in the wrong mechanism order");
    double lambda = scene.lambda();
    bool has_cloud = scene.cloud && !scene.cloud->empty();
    double pr = has_cloud ? scene.cloud->point_radius : 0.01;

    ChannelRealization real;
    real.f_hz = scene.f_hz;
    real.n_rays = cfg.n_rays;

    // LOS by geometry, identical to the tracer.
    Vec3 d_los = normalized(scene.rx - scene.tx);
    double d_tr = distance(scene.tx, scene.rx);
    bool blocked =
        has_cloud && scene.index.occluded(scene.tx, d_los, kEpsSelf, d_tr - kEpsSelf);
    if (!blocked) {
        TracedPath los;
        los.final_seg_len = d_tr;
        std::vector<ChainHop> ch = {
            {PolAmp::identity() * propagation_factor(d_tr, lambda), d_tr}};
        los.gain = chain(ch, lambda);
        los.aod = d_los;
        los.aoa = normalized(scene.tx - scene.rx);
        real.los = los;
    }
    if (!has_cloud) return power_filter(std::move(real), cfg.power_floor_db);

    ModelView det_view = make_view(det, false);
    ModelView non_view = make_view(non, false);
    FeatureCache det_cache, non_cache;
    std::vector<StoredHop> tree;
    std::vector<TracedPath> found;

    auto dirs = fibonacci_directions(cfg.n_rays);
    std::vector<LiveRay> wave;
    wave.reserve(dirs.size());
    for (std::size_t r = 0; r < dirs.size(); ++r)
        wave.push_back({scene.tx, dirs[r], 0.0, -1, 0, r + 1});
    if (diag) diag->rays_launched = dirs.size();

    auto emit_path = [&](const LiveRay& ray) {
        // reconstruct the hop chain from the tree
        std::vector<PathHop> hops;
        for (std::int32_t n = ray.hop_node; n >= 0; n = tree[n].parent)
            hops.push_back(tree[n].hop);
        std::reverse(hops.begin(), hops.end());
        TracedPath p;
        p.final_seg_len = distance(scene.rx, ray.origin);
        std::vector<ChainHop> ch;
        for (const auto& h : hops)
            ch.push_back({h.amp * propagation_factor(h.seg_len_in, lambda), h.seg_len_in});
        ch.push_back({PolAmp::identity() * propagation_factor(p.final_seg_len, lambda),
                      p.final_seg_len});
        p.gain = chain(ch, lambda);
        p.aod = hops.front().dir_in;
        p.aoa = normalized(ray.origin - scene.rx);
        p.hops = std::move(hops);
        found.push_back(std::move(p));
    };

    for (int bounce = 0; bounce <= cfg.max_bounces && !wave.empty(); ++bounce) {
        // geometric step: intersect + receive, in parallel over fixed blocks
        std::vector<std::optional<Hit>> hits(wave.size());
        std::vector<std::uint8_t> received(wave.size(), 0);
        parallel_blocks(wave.size(), 1024, cfg.threads, [&](std::size_t i0, std::size_t i1) {
            for (std::size_t i = i0; i < i1; ++i) {
                const LiveRay& ray = wave[i];
                hits[i] = scene.index.intersect(ray.origin, ray.dir, kEpsSelf);
                double t_block = hits[i] ? hits[i]->t : kInf;
                if (ray.hop_node >= 0 &&
                    reception_test(ray.origin, ray.dir, ray.unfolded, scene.rx, cfg.n_rays,
                                   t_block))
                    received[i] = 1;
            }
        });
        for (std::size_t i = 0; i < wave.size(); ++i)
            if (received[i]) emit_path(wave[i]);
        if (bounce == cfg.max_bounces) break;

        // collect hits and encode their crops (per mechanism model)
        std::vector<HitRec> hit_list;
        for (std::size_t i = 0; i < wave.size(); ++i)
            if (hits[i]) hit_list.push_back({i, *hits[i]});
        if (hit_list.empty()) break;

        std::vector<std::size_t> anchors;
        anchors.reserve(hit_list.size());
        for (const auto& h : hit_list) anchors.push_back(h.hit.point_id);
        encode_anchors(scene, det.cfg, det_view, anchors, cfg.threads, &det_cache, diag);
        bool any_diffuse_budget = false;
        for (const auto& h : hit_list)
            if (wave[h.ray].diffuse_used < cfg.max_diffuse) any_diffuse_budget = true;
        if (any_diffuse_budget)
            encode_anchors(scene, non.cfg, non_view, anchors, cfg.threads, &non_cache,
                           nullptr);

        std::size_t B = hit_list.size();
        std::vector<double> det_feat(B * det.cfg.d_env), din(B * 3), mats(B * 4);
        for (std::size_t i = 0; i < B; ++i) {
            std::size_t row = det_cache.row_of_anchor.at(hit_list[i].hit.point_id);
            std::copy(det_cache.rows.begin() + row * det.cfg.d_env,
                      det_cache.rows.begin() + (row + 1) * det.cfg.d_env,
                      det_feat.begin() + i * det.cfg.d_env);
            const Vec3& d = wave[hit_list[i].ray].dir;
            din[i * 3] = d.x;
            din[i * 3 + 1] = d.y;
            din[i * 3 + 2] = d.z;
            auto mr = material_row(scene.materials.get(hit_list[i].hit.material_id));
            for (int c = 0; c < 4; ++c) mats[i * 4 + c] = mr[c];
        }
        std::vector<double> det_dirs, det_amps(B * 8);
        predict_chunked(det_view, det_feat, din, bounce, mats, cfg.threads, B, det.cfg.d_env,
                        &det_dirs, &det_amps);
        if (diag) diag->hops_predicted += B;

        std::vector<LiveRay> next;
        next.reserve(B * 2);
        // deterministic continuations
        for (std::size_t i = 0; i < B; ++i) {
            const HitRec& hr = hit_list[i];
            const LiveRay& ray = wave[hr.ray];
            Vec3 d_out{det_dirs[i * 3], det_dirs[i * 3 + 1], det_dirs[i * 3 + 2]};
            // the surface normal is flipped toward the incident side; a valid
            // outgoing direction leaves on that side
            if (dot(d_out, hr.hit.normal) <= 0.0) {
                if (diag) diag->rejected_hops += 1;
                continue;
            }
            PathHop hop;
            hop.position = hr.hit.position;
            hop.dir_in = ray.dir;
            hop.dir_out = d_out;
            hop.kind = HopKind::reflect;
            std::array<double, 8> amp;
            std::copy(det_amps.begin() + i * 8, det_amps.begin() + (i + 1) * 8, amp.begin());
            hop.amp = amp_from_reals(amp);
            hop.seg_len_in = hr.hit.t;
            hop.point_id = hr.hit.point_id;
            hop.material_id = hr.hit.material_id;
            tree.push_back({ray.hop_node, hop});
            next.push_back({hr.hit.position, d_out, ray.unfolded + hr.hit.t,
                            static_cast<std::int32_t>(tree.size() - 1), ray.diffuse_used,
                            ray.key * 37u + 1u});
        }

        // non-deterministic spawns while the diffuse budget lasts
        if (any_diffuse_budget && cfg.n_scatter > 0) {
            std::vector<std::size_t> spawn_rows;
            for (std::size_t i = 0; i < B; ++i)
                if (wave[hit_list[i].ray].diffuse_used < cfg.max_diffuse)
                    spawn_rows.push_back(i);
            std::size_t S = spawn_rows.size();
            std::vector<double> non_feat(S * non.cfg.d_env), din_s(S * 3), mats_s(S * 4);
            for (std::size_t k = 0; k < S; ++k) {
                std::size_t i = spawn_rows[k];
                std::size_t row = non_cache.row_of_anchor.at(hit_list[i].hit.point_id);
                std::copy(non_cache.rows.begin() + row * non.cfg.d_env,
                          non_cache.rows.begin() + (row + 1) * non.cfg.d_env,
                          non_feat.begin() + k * non.cfg.d_env);
                std::copy(din.begin() + i * 3, din.begin() + (i + 1) * 3,
                          din_s.begin() + k * 3);
                std::copy(mats.begin() + i * 4, mats.begin() + (i + 1) * 4,
                          mats_s.begin() + k * 4);
            }
            std::vector<double> non_dirs;
            predict_chunked(non_view, non_feat, din_s, bounce, mats_s, cfg.threads, S,
                            non.cfg.d_env, &non_dirs, nullptr);
            // sample scatter directions around the predicted lobe axis and
            // query amplitudes for the actual outgoing directions
            std::vector<double> dout_all(S * cfg.n_scatter * 3);
            std::vector<std::uint8_t> dir_ok(S * cfg.n_scatter, 0);
            for (std::size_t k = 0; k < S; ++k) {
                std::size_t i = spawn_rows[k];
                const HitRec& hr = hit_list[i];
                const LiveRay& ray = wave[hr.ray];
                Vec3 axis{non_dirs[k * 3], non_dirs[k * 3 + 1], non_dirs[k * 3 + 2]};
                if (dot(axis, hr.hit.normal) <= 0.0) axis = hr.hit.normal;
                Rng rng(sub_seed(cfg.seed, "rollout_scatter",
                                 ray.key * 1315423911u + static_cast<std::uint64_t>(bounce)));
                for (int s = 0; s < cfg.n_scatter; ++s) {
                    Vec3 dir = rng.lambertian(axis);
                    std::size_t slot = k * cfg.n_scatter + s;
                    if (dot(dir, hr.hit.normal) <= 0.0) {
                        if (diag) diag->rejected_hops += 1;
                        continue;
                    }
                    dir_ok[slot] = 1;
                    dout_all[slot * 3] = dir.x;
                    dout_all[slot * 3 + 1] = dir.y;
                    dout_all[slot * 3 + 2] = dir.z;
                }
            }
            // amplitude inputs replicated per spawn
            std::size_t T = S * static_cast<std::size_t>(cfg.n_scatter);
            std::vector<double> feat_rep(T * non.cfg.d_env), din_rep(T * 3), mats_rep(T * 4);
            for (std::size_t k = 0; k < S; ++k)
                for (int s = 0; s < cfg.n_scatter; ++s) {
                    std::size_t slot = k * cfg.n_scatter + s;
                    std::copy(non_feat.begin() + k * non.cfg.d_env,
                              non_feat.begin() + (k + 1) * non.cfg.d_env,
                              feat_rep.begin() + slot * non.cfg.d_env);
                    std::copy(din_s.begin() + k * 3, din_s.begin() + (k + 1) * 3,
                              din_rep.begin() + slot * 3);
                    std::copy(mats_s.begin() + k * 4, mats_s.begin() + (k + 1) * 4,
                              mats_rep.begin() + slot * 4);
                }
            std::vector<double> amps_all;
            predict_amp_chunked(non_view, feat_rep, din_rep, dout_all, mats_rep, cfg.threads,
                                T, non.cfg.d_env, &amps_all);
            if (diag) diag->hops_predicted += T;
            for (std::size_t k = 0; k < S; ++k) {
                std::size_t i = spawn_rows[k];
                const HitRec& hr = hit_list[i];
                const LiveRay& ray = wave[hr.ray];
                for (int s = 0; s < cfg.n_scatter; ++s) {
                    std::size_t slot = k * cfg.n_scatter + s;
                    if (!dir_ok[slot]) continue;
                    Vec3 d_out{dout_all[slot * 3], dout_all[slot * 3 + 1],
                               dout_all[slot * 3 + 2]};
                    PathHop hop;
                    hop.position = hr.hit.position;
                    hop.dir_in = ray.dir;
                    hop.dir_out = d_out;
                    hop.kind = HopKind::scatter;
                    std::array<double, 8> amp;
                    std::copy(amps_all.begin() + slot * 8, amps_all.begin() + (slot + 1) * 8,
                              amp.begin());
                    hop.amp = amp_from_reals(amp);
                    hop.seg_len_in = hr.hit.t;
                    hop.point_id = hr.hit.point_id;
                    hop.material_id = hr.hit.material_id;
                    tree.push_back({ray.hop_node, hop});
                    next.push_back({hr.hit.position, d_out, ray.unfolded + hr.hit.t,
                                    static_cast<std::int32_t>(tree.size() - 1),
                                    ray.diffuse_used + 1,
                                    ray.key * 37u + 2u + static_cast<std::uint64_t>(s)});
                }
            }
        }
        wave = std::move(next);
    }

    real.nlos = merge_duplicates_r(std::move(found), pr);
    real = power_filter(std::move(real), cfg.power_floor_db);
    std::sort(real.nlos.begin(), real.nlos.end(), path_less_r);
    return real;
}

}  // namespace pcrt
