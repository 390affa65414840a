// SPDX-License-Identifier: Apache-2.0
#include "pcrt/oracles.hpp"

#include <cmath>
#include <optional>

#include "pcrt/rng.hpp"

namespace pcrt::oracles {

std::shared_ptr<PointCloud> box_cloud(const Vec3& lo, const Vec3& hi, double spacing,
                                             std::uint64_t seed) {
    auto c = std::make_shared<PointCloud>();
    c->point_radius = 0.75 * spacing;
    Rng rng(seed);
    auto add_wall = [&](int axis, double value, const Vec3& normal) {
        int u = (axis + 1) % 3, v = (axis + 2) % 3;
        for (double a = lo[u] + spacing / 2; a < hi[u]; a += spacing)
            for (double b = lo[v] + spacing / 2; b < hi[v]; b += spacing) {
                double ja = a + rng.uniform(-0.3, 0.3) * spacing;
                double jb = b + rng.uniform(-0.3, 0.3) * spacing;
                Vec3 p;
                if (axis == 0) p = {value, ja, jb};
                if (axis == 1) p = {jb, value, ja};
                if (axis == 2) p = {ja, jb, value};
                c->positions.push_back(p);
                c->normals.push_back(normal);
                c->material_id.push_back(0);
            }
    };
    add_wall(0, lo.x, {1, 0, 0});
    add_wall(0, hi.x, {-1, 0, 0});
    add_wall(1, lo.y, {0, 1, 0});
    add_wall(1, hi.y, {0, -1, 0});
    add_wall(2, lo.z, {0, 0, 1});
    add_wall(2, hi.z, {0, 0, -1});
    c->normal_ok.assign(c->size(), 1);
    return c;
}

std::shared_ptr<PointCloud> floor_cloud(double half, double spacing,
                                               std::uint64_t seed) {
    auto c = std::make_shared<PointCloud>();
    c->point_radius = 0.75 * spacing;
    Rng rng(seed);
    for (double x = -half; x <= half; x += spacing)
        for (double y = -half; y <= half; y += spacing) {
            c->positions.push_back({x + rng.uniform(-0.3, 0.3) * spacing,
                                    y + rng.uniform(-0.3, 0.3) * spacing, 0.0});
            c->normals.push_back({0, 0, 1});
            c->material_id.push_back(0);
        }
    c->normal_ok.assign(c->size(), 1);
    return c;
}

// Exhaustive image-method enumeration for an empty axis-aligned box with a
// single wall material. Reflection points are validated to lie on the walls
// in the correct order.
std::vector<ImagePath> image_method_box(const Vec3& lo, const Vec3& hi, const Vec3& tx,
                                               const Vec3& rx, int max_bounces,
                                               const Material& mat, double f_hz) {
    struct Wall {
        int axis;
        double value;
        Vec3 normal;  // inward
    };
    std::vector<Wall> walls = {{0, lo.x, {1, 0, 0}},  {0, hi.x, {-1, 0, 0}},
                               {1, lo.y, {0, 1, 0}},  {1, hi.y, {0, -1, 0}},
                               {2, lo.z, {0, 0, 1}},  {2, hi.z, {0, 0, -1}}};
    auto mirror = [](const Vec3& p, const Wall& w) {
        Vec3 m = p;
        if (w.axis == 0) m.x = 2 * w.value - p.x;
        if (w.axis == 1) m.y = 2 * w.value - p.y;
        if (w.axis == 2) m.z = 2 * w.value - p.z;
        return m;
    };
    auto on_face = [&](const Vec3& p, const Wall& w) {
        int u = (w.axis + 1) % 3, v = (w.axis + 2) % 3;
        return p[u] >= lo[u] - 1e-9 && p[u] <= hi[u] + 1e-9 && p[v] >= lo[v] - 1e-9 &&
               p[v] <= hi[v] + 1e-9;
    };
    // Intersection of the segment a->b with the wall plane; nullopt unless
    // strictly interior to the segment and on the wall rectangle.
    auto hit_wall = [&](const Vec3& a, const Vec3& b, const Wall& w) -> std::optional<Vec3> {
        double pa = a[w.axis], pb = b[w.axis];
        if (pa == pb) return std::nullopt;
        double t = (w.value - pa) / (pb - pa);
        if (t <= 1e-9 || t >= 1.0 - 1e-9) return std::nullopt;
        Vec3 q = a + (b - a) * t;
        if (!on_face(q, w)) return std::nullopt;
        return q;
    };
    double lambda = kSpeedOfLight / f_hz;

    auto assemble = [&](const std::vector<Vec3>& pts) -> ImagePath {
        ImagePath ip;
        ip.points = pts;
        ip.bounces = static_cast<int>(pts.size());
        std::vector<ChainHop> hops;
        Vec3 prev = tx;
        double total = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            Vec3 d_in = normalized(pts[i] - prev);
            Vec3 next = i + 1 < pts.size() ? pts[i + 1] : rx;
            Vec3 d_out = normalized(next - pts[i]);
            // recover the wall normal from the direction change
            Vec3 n = normalized(d_out - d_in);
            if (dot(d_in, n) > 0) n = -n;
            double seg = distance(prev, pts[i]);
            PolAmp inter = reflection_interaction(d_in, d_out, n, mat, f_hz);
            hops.push_back({inter * propagation_factor(seg, lambda), seg});
            total += seg;
            prev = pts[i];
        }
        double fin = distance(prev, rx);
        hops.push_back({PolAmp::identity() * propagation_factor(fin, lambda), fin});
        total += fin;
        PathGain g = chain(hops, lambda);
        ip.delay = g.tau;
        ip.a = g.a;
        return ip;
    };

    std::vector<ImagePath> out;
    for (const auto& w1 : walls) {
        Vec3 img1 = mirror(tx, w1);
        if (auto q1 = hit_wall(rx, img1, w1)) out.push_back(assemble({*q1}));
        if (max_bounces < 2) continue;
        for (const auto& w2 : walls) {
            if (w1.axis == w2.axis && w1.value == w2.value) continue;
            Vec3 img2 = mirror(img1, w2);
            auto q2 = hit_wall(rx, img2, w2);
            if (!q2) continue;
            auto q1 = hit_wall(*q2, img1, w1);
            if (!q1) continue;
            out.push_back(assemble({*q1, *q2}));
        }
    }
    return out;
}


}  // namespace pcrt::oracles
