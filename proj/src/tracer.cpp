// SPDX-License-Identifier: Apache-2.0
#include "pcrt/tracer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pcrt/geometry.hpp"
#include "pcrt/rng.hpp"
#include "pcrt/threadpool.hpp"

namespace pcrt {

namespace {
constexpr double kEpsSelf = 1e-4;  // self-intersection guard, meters
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

const char* hop_kind_name(HopKind k) {
    switch (k) {
        case HopKind::reflect: return "reflect";
        case HopKind::scatter: return "scatter";
        case HopKind::diffract: return "diffract";
    }
    return "?";
}

HopKind hop_kind_from_name(const std::string& s) {
    if (s == "reflect") return HopKind::reflect;
    if (s == "scatter") return HopKind::scatter;
    if (s == "diffract") return HopKind::diffract;
    throw InputError("unknown hop kind: " + s);
}

double reception_radius(double unfolded, std::size_t n_rays) {
    return unfolded * std::sqrt(4.0 * M_PI / static_cast<double>(n_rays)) / std::sqrt(3.0);
}

std::optional<double> reception_test(const Vec3& origin, const Vec3& dir, double unfolded,
                                     const Vec3& rx, std::size_t n_rays, double t_block) {
    double t_ca = dot(rx - origin, dir);
    if (t_ca <= kEpsSelf) return std::nullopt;
    if (t_ca >= t_block) return std::nullopt;  // a surface blocks the approach
    double miss = norm(rx - (origin + dir * t_ca));
    if (miss > reception_radius(unfolded + t_ca, n_rays)) return std::nullopt;
    return t_ca;
}

namespace {

struct TraceContext {
    const Scene& scene;
    const TraceConfig& cfg;
    double lambda;
    double patch_area;
    std::vector<TracedPath>* out;  // per-chunk sink
};

PathGain assemble_gain(const std::vector<PathHop>& hops, double final_seg, double lambda) {
    std::vector<ChainHop> ch;
    ch.reserve(hops.size() + 1);
    for (const auto& h : hops)
        ch.push_back({h.amp * propagation_factor(h.seg_len_in, lambda), h.seg_len_in});
    ch.push_back({PolAmp::identity() * propagation_factor(final_seg, lambda), final_seg});
    return chain(ch, lambda);
}

TracedPath finish_path(std::vector<PathHop> hops, const Vec3& last_vertex, const Vec3& tx,
                       const Vec3& rx, double lambda) {
    TracedPath p;
    p.final_seg_len = distance(rx, last_vertex);
    p.gain = assemble_gain(hops, p.final_seg_len, lambda);
    p.aod = hops.empty() ? normalized(rx - tx) : hops.front().dir_in;
    p.aoa = normalized(last_vertex - rx);
    p.hops = std::move(hops);
    return p;
}

struct RayState {
    Vec3 origin, dir;
    double unfolded = 0.0;
    int diffuse_used = 0;
    double gamma = 1.0;
    std::uint64_t key = 0;
    std::vector<PathHop> hops;
};

void advance(TraceContext& ctx, RayState st) {
    std::optional<Hit> hit;
    if (ctx.scene.cloud && !ctx.scene.cloud->empty())
        hit = ctx.scene.index.intersect(st.origin, st.dir, kEpsSelf);
    double t_block = hit ? hit->t : kInf;

    if (!st.hops.empty()) {
        auto t_ca = reception_test(st.origin, st.dir, st.unfolded, ctx.scene.rx,
                                   ctx.cfg.n_rays, t_block);
        if (t_ca)
            ctx.out->push_back(
                finish_path(st.hops, st.origin, ctx.scene.tx, ctx.scene.rx, ctx.lambda));
    }

    if (!hit || static_cast<int>(st.hops.size()) >= ctx.cfg.max_bounces) return;

    const Material& mat = ctx.scene.materials.get(hit->material_id);
    Vec3 d_in = st.dir;
    double seg = hit->t;
    double unfolded = st.unfolded + seg;

    PathHop base;
    base.position = hit->position;
    base.dir_in = d_in;
    base.seg_len_in = seg;
    base.point_id = hit->point_id;
    base.material_id = hit->material_id;
    base.gamma = st.gamma;

    // Specular continuation.
    if (mat.R_sq() > 0.0 && dot(d_in, hit->normal) < 0.0) {
        Vec3 k_r = reflect_dir(d_in, hit->normal);
        PathHop hop = base;
        hop.kind = HopKind::reflect;
        hop.dir_out = k_r;
        hop.amp = reflection_interaction(d_in, k_r, hit->normal, mat, ctx.scene.f_hz);
        RayState child;
        child.origin = hit->position;
        child.dir = k_r;
        child.unfolded = unfolded;
        child.diffuse_used = st.diffuse_used;
        child.gamma = st.gamma * hop.amp.sigma_max();
        child.key = st.key * 37u + 1u;
        child.hops = st.hops;
        child.hops.push_back(hop);
        advance(ctx, std::move(child));
    }

    // Diffuse spawns, budget permitting.
    if (st.diffuse_used < ctx.cfg.max_diffuse && mat.S > 0.0 &&
        dot(d_in, hit->normal) < 0.0) {
        Rng rng(sub_seed(ctx.cfg.seed, "scatter", st.key * 1315423911u + st.hops.size()));
        for (int s = 0; s < ctx.cfg.n_scatter; ++s) {
            Vec3 k_s = rng.lambertian(hit->normal);
            PathHop hop = base;
            hop.kind = HopKind::scatter;
            hop.dir_out = k_s;
            hop.amp = scatter_interaction(d_in, k_s, hit->normal, mat, ctx.patch_area,
                                          st.gamma);
            RayState child;
            child.origin = hit->position;
            child.dir = k_s;
            child.unfolded = unfolded;
            child.diffuse_used = st.diffuse_used + 1;
            child.gamma = st.gamma * hop.amp.sigma_max();
            child.key = st.key * 37u + 2u + static_cast<std::uint64_t>(s);
            child.hops = st.hops;
            child.hops.push_back(hop);
            advance(ctx, std::move(child));
        }
    }
}

// Total order on paths; makes merging independent of discovery order.
bool path_less(const TracedPath& a, const TracedPath& b) {
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

bool same_geometric_path(const TracedPath& a, const TracedPath& b, double tol) {
    if (a.hops.size() != b.hops.size()) return false;
    for (std::size_t i = 0; i < a.hops.size(); ++i) {
        if (a.hops[i].kind != b.hops[i].kind) return false;
        if (distance(a.hops[i].position, b.hops[i].position) > tol) return false;
    }
    return true;
}

std::vector<TracedPath> merge_duplicates(std::vector<TracedPath> paths, double tol) {
    std::sort(paths.begin(), paths.end(), path_less);
    std::vector<TracedPath> merged;
    for (auto& p : paths) {
        bool dup = false;
        // duplicates sit close in delay; scan back while within reach
        for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
            if (p.gain.tau - it->gain.tau >
                (tol * static_cast<double>(p.hops.size() + 1) + 1e-6) / kSpeedOfLight * 4.0)
                break;
            if (same_geometric_path(*it, p, tol)) {
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

std::vector<TracedPath> enumerate_diffraction(const Scene& scene, const TraceConfig& cfg) {
    std::vector<TracedPath> out;
    if (cfg.diffraction_order < 1) return out;
    double lambda = scene.lambda();
    double pr = scene.cloud ? scene.cloud->point_radius : 0.0;
    for (std::size_t ei = 0; ei < scene.edges.size(); ++ei) {
        const EdgeSegment& edge = scene.edges[ei];
        // Fermat point: minimize |tx-q| + |q-rx| along the edge (convex).
        auto len = [&](double s) {
            Vec3 q = edge.a + (edge.b - edge.a) * s;
            return distance(scene.tx, q) + distance(q, scene.rx);
        };
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 200; ++it) {
            double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
            if (len(m1) <= len(m2)) hi = m2; else lo = m1;
        }
        double s_param = 0.5 * (lo + hi);
        if (s_param < 1e-6 || s_param > 1.0 - 1e-6) continue;  // minimizer off-segment
        Vec3 q = edge.a + (edge.b - edge.a) * s_param;

        double s_prime = distance(scene.tx, q);
        double s_len = distance(q, scene.rx);
        if (s_prime < kEpsSelf || s_len < kEpsSelf) continue;
        Vec3 d_in = normalized(q - scene.tx);
        Vec3 d_out = normalized(scene.rx - q);
        Vec3 axis = edge.axis();
        if (std::fabs(dot(d_in, axis)) > 1.0 - 1e-9) continue;  // degenerate cone
        // Keller condition holds at the Fermat point by construction.
        if (std::fabs(dot(d_in, axis) - dot(d_out, axis)) > 1e-6) continue;
        // Terminals must sit in the wedge exterior.
        if (enters_wedge_material(edge, normalized(scene.tx - q))) continue;
        if (enters_wedge_material(edge, normalized(scene.rx - q))) continue;
        // Occlusion of both legs; the end zones graze the cloud points that
        // sample the wedge itself, so stop short of the edge.
        double margin = std::max(4.0 * pr, 1e-3);
        if (scene.cloud && !scene.cloud->empty()) {
            if (s_prime > margin + kEpsSelf &&
                scene.index.occluded(scene.tx, d_in, kEpsSelf, s_prime - margin))
                continue;
            if (s_len > margin + kEpsSelf &&
                scene.index.occluded(q + d_out * margin, d_out, 0.0, s_len - 2.0 * margin))
                continue;
        }
        const Material& m0 = scene.materials.get(edge.material[0]);
        const Material& mn = scene.materials.get(edge.material[1]);
        PathHop hop;
        hop.position = q;
        hop.dir_in = d_in;
        hop.dir_out = d_out;
        hop.kind = HopKind::diffract;
        hop.seg_len_in = s_prime;
        hop.point_id = ei;
        hop.material_id = edge.material[0];
        hop.gamma = 1.0;
        try {
            hop.amp = diffraction_interaction(edge, q, d_in, d_out, m0, mn, s_prime, s_len,
                                              lambda);
        } catch (const InputError&) {
            continue;  // inconsistent wedge metadata or degenerate geometry
        }
        TracedPath p = finish_path({hop}, q, scene.tx, scene.rx, lambda);
        out.push_back(std::move(p));
    }
    return out;
}

ChannelRealization power_filter(ChannelRealization real, double floor_db) {
    std::vector<const TracedPath*> all = real.all_paths();
    if (all.empty()) return real;
    double best = -kInf;
    for (const auto* p : all) best = std::max(best, p->power_db());
    double floor = best - floor_db;
    if (real.los && real.los->power_db() < floor) real.los.reset();
    std::vector<TracedPath> kept;
    for (auto& p : real.nlos)
        if (p.power_db() >= floor) kept.push_back(std::move(p));
    real.nlos = std::move(kept);
    return real;
}

ChannelRealization trace(const Scene& scene, const TraceConfig& cfg) {
    cfg.validate();
    scene.validate();
    double lambda = scene.lambda();
    bool has_cloud = scene.cloud && !scene.cloud->empty();
    double pr = has_cloud ? scene.cloud->point_radius : 0.01;

    if (has_cloud) {
        if (scene.index.nearest_distance(scene.tx) < pr)
            throw InputError("terminal embedded in geometry");
        if (scene.index.nearest_distance(scene.rx) < pr)
            throw InputError("terminal embedded in geometry");
    }

    ChannelRealization real;
    real.f_hz = scene.f_hz;
    real.n_rays = cfg.n_rays;

    // LOS from geometry.
    Vec3 d_los = normalized(scene.rx - scene.tx);
    double d = distance(scene.tx, scene.rx);
    bool blocked =
        has_cloud && scene.index.occluded(scene.tx, d_los, kEpsSelf, d - kEpsSelf);
    if (!blocked) real.los = finish_path({}, scene.tx, scene.tx, scene.rx, lambda);

    // SBR launch.
    std::vector<TracedPath> found;
    if (has_cloud) {
        auto dirs = fibonacci_directions(cfg.n_rays);
        constexpr std::size_t kBlock = 2048;
        std::size_t n_blocks = (dirs.size() + kBlock - 1) / kBlock;
        std::vector<std::vector<TracedPath>> per_block(n_blocks);
        parallel_chunks(n_blocks, cfg.threads, [&](std::size_t b) {
            TraceContext ctx{scene, cfg, lambda, M_PI * pr * pr, &per_block[b]};
            std::size_t begin = b * kBlock, end = std::min(dirs.size(), begin + kBlock);
            for (std::size_t r = begin; r < end; ++r) {
                RayState st;
                st.origin = scene.tx;
                st.dir = dirs[r];
                st.key = r + 1;
                advance(ctx, std::move(st));
            }
        });
        for (auto& blk : per_block)
            for (auto& p : blk) found.push_back(std::move(p));
    }

    auto diff = enumerate_diffraction(scene, cfg);
    for (auto& p : diff) found.push_back(std::move(p));

    real.nlos = merge_duplicates(std::move(found), pr);
    real = power_filter(std::move(real), cfg.power_floor_db);
    std::sort(real.nlos.begin(), real.nlos.end(), path_less);
    return real;
}

// ---------------------------------------------------------------------------
// Channel file IO
// ---------------------------------------------------------------------------

namespace {
using nlohmann::json;

json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

json amp_to_json(const PolAmp& a) {
    json out = json::array();
    for (const auto& e : a.m) {
        out.push_back(e.real());
        out.push_back(e.imag());
    }
    return out;
}

PolAmp amp_from_json(const json& j) {
    PolAmp a;
    for (int i = 0; i < 4; ++i) a.m[i] = cplx(j.at(2 * i), j.at(2 * i + 1));
    return a;
}

json path_to_json(const TracedPath& p) {
    json jp;
    jp["a"] = p.gain.a;
    jp["tau"] = p.gain.tau;
    jp["T"] = amp_to_json(p.gain.T);
    jp["final_seg"] = p.final_seg_len;
    jp["aod"] = vec_to_json(p.aod);
    jp["aoa"] = vec_to_json(p.aoa);
    jp["bounces"] = p.hops.size();
    json hops = json::array();
    for (const auto& h : p.hops) {
        json jh;
        jh["p"] = vec_to_json(h.position);
        jh["din"] = vec_to_json(h.dir_in);
        jh["dout"] = vec_to_json(h.dir_out);
        jh["kind"] = hop_kind_name(h.kind);
        jh["amp"] = amp_to_json(h.amp);
        jh["seg"] = h.seg_len_in;
        jh["point_id"] = h.point_id;
        jh["mat"] = h.material_id;
        jh["gamma"] = h.gamma;
        hops.push_back(jh);
    }
    jp["hops"] = hops;
    return jp;
}

TracedPath path_from_json(const json& jp) {
    TracedPath p;
    p.gain.a = jp.at("a");
    p.gain.tau = jp.at("tau");
    p.gain.T = amp_from_json(jp.at("T"));
    p.final_seg_len = jp.at("final_seg");
    p.aod = vec_from_json(jp.at("aod"));
    p.aoa = vec_from_json(jp.at("aoa"));
    for (const auto& jh : jp.at("hops")) {
        PathHop h;
        h.position = vec_from_json(jh.at("p"));
        h.dir_in = vec_from_json(jh.at("din"));
        h.dir_out = vec_from_json(jh.at("dout"));
        h.kind = hop_kind_from_name(jh.at("kind"));
        h.amp = amp_from_json(jh.at("amp"));
        h.seg_len_in = jh.at("seg");
        h.point_id = jh.at("point_id");
        h.material_id = jh.at("mat");
        h.gamma = jh.at("gamma");
        p.hops.push_back(h);
    }
    return p;
}
}  // namespace

void save_channel(const ChannelRealization& real, const std::string& path) {
    json j;
    j["version"] = 1;
    j["f_hz"] = real.f_hz;
    j["n_rays"] = real.n_rays;
    j["los"] = real.los ? path_to_json(*real.los) : json(nullptr);
    json paths = json::array();
    for (const auto& p : real.nlos) paths.push_back(path_to_json(p));
    j["paths"] = paths;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write channel file: " + path);
    out << j.dump(1) << "\n";
}

ChannelRealization load_channel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open channel file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("bad channel file " + path + ": " + e.what());
    }
    ChannelRealization real;
    real.f_hz = j.at("f_hz");
    real.n_rays = j.at("n_rays");
    if (!j.at("los").is_null()) real.los = path_from_json(j.at("los"));
    for (const auto& jp : j.at("paths")) real.nlos.push_back(path_from_json(jp));
    return real;
}

}  // namespace pcrt
