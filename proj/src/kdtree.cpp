// SPDX-License-Identifier: Apache-2.0
#include "pcrt/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace pcrt {

namespace {
constexpr std::size_t kLeafSize = 16;

inline void grow(Vec3& lo, Vec3& hi, const Vec3& p) {
    lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
    hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
}

// Slab test against an AABB inflated by pad. Returns entry distance, or
// nullopt when the ray misses or enters beyond t_max.
inline std::optional<double> ray_box(const Vec3& o, const Vec3& inv_d, const Vec3& lo,
                                     const Vec3& hi, double pad, double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
        double lo_a = lo[a] - pad, hi_a = hi[a] + pad;
        double o_a = o[a], id = inv_d[a];
        double near_t, far_t;
        if (std::isinf(id)) {
            if (o_a < lo_a || o_a > hi_a) return std::nullopt;
            continue;
        }
        near_t = (lo_a - o_a) * id;
        far_t = (hi_a - o_a) * id;
        if (near_t > far_t) std::swap(near_t, far_t);
        t0 = std::max(t0, near_t);
        t1 = std::min(t1, far_t);
        if (t0 > t1) return std::nullopt;
    }
    return t0;
}

inline double point_box_dist2(const Vec3& q, const Vec3& lo, const Vec3& hi) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
        double v = q[a];
        double d = v < lo[a] ? lo[a] - v : (v > hi[a] ? v - hi[a] : 0.0);
        d2 += d * d;
    }
    return d2;
}
}  // namespace

std::optional<double> ray_disc_t(const Vec3& origin, const Vec3& dir, const Vec3& center,
                                 const Vec3& normal, double radius, double t_min, double t_max) {
    double denom = dot(dir, normal);
    if (std::fabs(denom) < 1e-12) return std::nullopt;  // ray parallel to disc
    double t = dot(center - origin, normal) / denom;
    if (t <= t_min || t >= t_max) return std::nullopt;
    Vec3 p = origin + dir * t;
    if (norm2(p - center) > radius * radius) return std::nullopt;
    return t;
}

SpatialIndex SpatialIndex::build(std::shared_ptr<const PointCloud> cloud) {
    if (!cloud || cloud->empty()) throw InputError("empty scene");
    SpatialIndex idx;
    idx.cloud_ = std::move(cloud);
    idx.order_.resize(idx.cloud_->size());
    std::iota(idx.order_.begin(), idx.order_.end(), 0u);
    idx.nodes_.reserve(2 * idx.cloud_->size() / kLeafSize + 2);
    idx.build_node(idx.order_.begin(), idx.order_.end(), 0);
    return idx;
}

SpatialIndex SpatialIndex::build(const PointCloud& cloud) {
    return build(std::shared_ptr<const PointCloud>(&cloud, [](const PointCloud*) {}));
}

std::uint32_t SpatialIndex::build_node(std::vector<std::uint32_t>::iterator begin,
                                       std::vector<std::uint32_t>::iterator end,
                                       std::uint32_t offset) {
    const auto& pos = cloud_->positions;
    Node node;
    node.lo = Vec3{1e300, 1e300, 1e300};
    node.hi = Vec3{-1e300, -1e300, -1e300};
    for (auto it = begin; it != end; ++it) grow(node.lo, node.hi, pos[*it]);
    node.begin = offset;
    node.end = offset + static_cast<std::uint32_t>(end - begin);

    std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(node);
    if (static_cast<std::size_t>(end - begin) <= kLeafSize) return id;

    Vec3 extent = node.hi - node.lo;
    int axis = extent.x >= extent.y && extent.x >= extent.z ? 0 : (extent.y >= extent.z ? 1 : 2);
    auto mid = begin + (end - begin) / 2;
    std::nth_element(begin, mid, end, [&](std::uint32_t a, std::uint32_t b) {
        return pos[a][axis] < pos[b][axis] || (pos[a][axis] == pos[b][axis] && a < b);
    });
    std::uint32_t left = build_node(begin, mid, offset);
    std::uint32_t right =
        build_node(mid, end, offset + static_cast<std::uint32_t>(mid - begin));
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::optional<Hit> SpatialIndex::intersect(const Vec3& origin, const Vec3& dir, double t_min,
                                           double t_max) const {
    if (!cloud_ || !cloud_->has_normals()) {
        if (!cloud_) return std::nullopt;
        throw InputError("intersection requires point normals");
    }
    const auto& pos = cloud_->positions;
    const auto& nrm = cloud_->normals;
    double pr = cloud_->point_radius;
    Vec3 inv_d{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};

    double best_t = t_max;
    std::size_t best_i = 0;
    bool found = false;

    // Manual stack; children visited near-first so pruning is effective.
    std::uint32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[stack[--sp]];
        auto entry = ray_box(origin, inv_d, n.lo, n.hi, pr, best_t);
        if (!entry) continue;
        if (n.left == 0) {  // leaf
            for (std::uint32_t k = n.begin; k < n.end; ++k) {
                std::uint32_t i = order_[k];
                if (!cloud_->normal_ok.empty() && cloud_->normal_ok[i] == 0) continue;
                auto t = ray_disc_t(origin, dir, pos[i], nrm[i], pr, t_min, t_max);
                // ties on t resolve to the lower point id, matching the
                // brute-force scan exactly
                if (t && (!found || *t < best_t || (*t == best_t && i < best_i))) {
                    best_t = *t;
                    best_i = i;
                    found = true;
                }
            }
        } else {
            // Push far child first so the near one is processed first.
            auto e_l = ray_box(origin, inv_d, nodes_[n.left].lo, nodes_[n.left].hi, pr, best_t);
            auto e_r = ray_box(origin, inv_d, nodes_[n.right].lo, nodes_[n.right].hi, pr, best_t);
            if (e_l && e_r) {
                if (*e_l <= *e_r) {
                    stack[sp++] = n.right;
                    stack[sp++] = n.left;
                } else {
                    stack[sp++] = n.left;
                    stack[sp++] = n.right;
                }
            } else if (e_l) {
                stack[sp++] = n.left;
            } else if (e_r) {
                stack[sp++] = n.right;
            }
        }
    }
    if (!found) return std::nullopt;
    Hit h;
    h.point_id = best_i;
    h.t = best_t;
    h.position = origin + dir * best_t;
    h.normal = dot(nrm[best_i], dir) > 0.0 ? -nrm[best_i] : nrm[best_i];
    h.material_id = cloud_->material_id.empty() ? 0 : cloud_->material_id[best_i];
    return h;
}

bool SpatialIndex::occluded(const Vec3& origin, const Vec3& dir, double t_min,
                            double t_max) const {
    return intersect(origin, dir, t_min, t_max).has_value();
}

std::vector<std::size_t> SpatialIndex::radius_query(const Vec3& center, double radius) const {
    std::vector<std::size_t> out;
    const auto& pos = cloud_->positions;
    double r2 = radius * radius;
    std::uint32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[stack[--sp]];
        if (point_box_dist2(center, n.lo, n.hi) > r2) continue;
        if (n.left == 0) {
            for (std::uint32_t k = n.begin; k < n.end; ++k) {
                std::uint32_t i = order_[k];
                if (norm2(pos[i] - center) <= r2) out.push_back(i);
            }
        } else {
            stack[sp++] = n.left;
            stack[sp++] = n.right;
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> SpatialIndex::knn(const Vec3& q, std::size_t k) const {
    const auto& pos = cloud_->positions;
    using Entry = std::pair<double, std::size_t>;  // (dist2, index)
    std::priority_queue<Entry> heap;                // max-heap on dist2

    struct Visit { double d2; std::uint32_t node; };
    Visit stack[64];
    int sp = 0;
    stack[sp++] = {0.0, 0};
    while (sp > 0) {
        Visit v = stack[--sp];
        if (heap.size() == k && v.d2 > heap.top().first) continue;
        const Node& n = nodes_[v.node];
        if (n.left == 0) {
            for (std::uint32_t j = n.begin; j < n.end; ++j) {
                std::uint32_t i = order_[j];
                double d2 = norm2(pos[i] - q);
                if (heap.size() < k) {
                    heap.push({d2, i});
                } else if (d2 < heap.top().first ||
                           (d2 == heap.top().first && i < heap.top().second)) {
                    heap.pop();
                    heap.push({d2, i});
                }
            }
        } else {
            double dl = point_box_dist2(q, nodes_[n.left].lo, nodes_[n.left].hi);
            double dr = point_box_dist2(q, nodes_[n.right].lo, nodes_[n.right].hi);
            // Push far child first.
            if (dl <= dr) {
                stack[sp++] = {dr, n.right};
                stack[sp++] = {dl, n.left};
            } else {
                stack[sp++] = {dl, n.left};
                stack[sp++] = {dr, n.right};
            }
        }
    }
    std::vector<Entry> entries;
    entries.reserve(heap.size());
    while (!heap.empty()) {
        entries.push_back(heap.top());
        heap.pop();
    }
    std::sort(entries.begin(), entries.end());
    std::vector<std::size_t> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.second);
    return out;
}

std::size_t SpatialIndex::nearest(const Vec3& q) const { return knn(q, 1).at(0); }

double SpatialIndex::nearest_distance(const Vec3& q) const {
    return distance(cloud_->positions[nearest(q)], q);
}

}  // namespace pcrt
