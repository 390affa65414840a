// SPDX-License-Identifier: Apache-2.0
#include "pcrt/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pcrt {

namespace {

// Smallest-eigenvalue eigenvector of a symmetric 3x3 matrix via cyclic
// Jacobi. Returns eigenvalues ascending and the eigenvector of the smallest.
struct Eig3 {
    double eval[3];
    Vec3 smallest_evec;
};

Eig3 sym_eig3(double a00, double a01, double a02, double a11, double a12, double a22) {
    double A[3][3] = {{a00, a01, a02}, {a01, a11, a12}, {a02, a12, a22}};
    double V[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int sweep = 0; sweep < 30; ++sweep) {
        double off = A[0][1] * A[0][1] + A[0][2] * A[0][2] + A[1][2] * A[1][2];
        if (off < 1e-30) break;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                if (std::fabs(A[p][q]) < 1e-300) continue;
                double theta = (A[q][q] - A[p][p]) / (2.0 * A[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < 3; ++k) {
                    double akp = A[k][p], akq = A[k][q];
                    A[k][p] = c * akp - s * akq;
                    A[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    double apk = A[p][k], aqk = A[q][k];
                    A[p][k] = c * apk - s * aqk;
                    A[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 3; ++k) {
                    double vkp = V[k][p], vkq = V[k][q];
                    V[k][p] = c * vkp - s * vkq;
                    V[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int i, int j) { return A[i][i] < A[j][j]; });
    Eig3 out;
    for (int i = 0; i < 3; ++i) out.eval[i] = A[order[i]][order[i]];
    out.smallest_evec = Vec3{V[0][order[0]], V[1][order[0]], V[2][order[0]]};
    return out;
}

}  // namespace

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k,
                            std::optional<Vec3> orient_toward) {
    if (k < 3) throw InputError("estimate_normals requires k >= 3");
    if (cloud.size() < k) throw InputError("estimate_normals: cloud smaller than k");
    SpatialIndex index = SpatialIndex::build(cloud);

    Vec3 ref;
    if (orient_toward) {
        ref = *orient_toward;
    } else {
        Vec3 sum{0, 0, 0};
        for (const auto& p : cloud.positions) sum += p;
        ref = sum / static_cast<double>(cloud.size());
    }

    PointCloud out = cloud;
    out.normals.assign(cloud.size(), Vec3{0, 0, 1});
    out.normal_ok.assign(cloud.size(), 1);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        auto nb = index.knn(cloud.positions[i], k);
        Vec3 mean{0, 0, 0};
        for (auto j : nb) mean += cloud.positions[j];
        mean = mean / static_cast<double>(nb.size());
        double c00 = 0, c01 = 0, c02 = 0, c11 = 0, c12 = 0, c22 = 0;
        for (auto j : nb) {
            Vec3 d = cloud.positions[j] - mean;
            c00 += d.x * d.x; c01 += d.x * d.y; c02 += d.x * d.z;
            c11 += d.y * d.y; c12 += d.y * d.z; c22 += d.z * d.z;
        }
        Eig3 e = sym_eig3(c00, c01, c02, c11, c12, c22);
        // rank < 2: the two largest eigenvalues must both carry spread.
        double scale = e.eval[2];
        if (scale <= 0.0 || e.eval[1] < 1e-12 * scale) {
            out.normal_ok[i] = 0;
            continue;
        }
        Vec3 n = normalized(e.smallest_evec);
        if (dot(n, ref - cloud.positions[i]) < 0.0) n = -n;
        out.normals[i] = n;
    }
    return out;
}

CropResult crop(const PointCloud& cloud, const SpatialIndex& index, const Vec3& center,
                double radius, std::size_t max_points, std::uint64_t seed) {
    if (radius <= 0.0) throw InputError("crop radius must be positive");
    std::vector<std::size_t> ids = index.radius_query(center, radius);
    if (ids.empty()) throw InputError("isolated interaction point");
    if (ids.size() > max_points) {
        Rng rng(seed);
        rng.shuffle(ids);
        ids.resize(max_points);
        std::sort(ids.begin(), ids.end());
    }
    CropResult res;
    res.source_ids = ids;
    PointCloud& c = res.cloud;
    c.point_radius = cloud.point_radius;
    c.positions.reserve(ids.size());
    for (auto i : ids) {
        c.positions.push_back(cloud.positions[i] - center);
        if (cloud.has_normals()) {
            c.normals.push_back(cloud.normals[i]);
            c.normal_ok.push_back(cloud.normal_ok.empty() ? 1 : cloud.normal_ok[i]);
        }
        if (!cloud.material_id.empty()) c.material_id.push_back(cloud.material_id[i]);
    }
    return res;
}

std::vector<std::size_t> fps(const std::vector<Vec3>& points, std::size_t n_prime) {
    std::size_t n = points.size();
    if (n_prime < 1 || n_prime > n)
        throw InputError("fps: n_prime out of range");
    Vec3 centroid{0, 0, 0};
    for (const auto& p : points) centroid += p;
    centroid = centroid / static_cast<double>(n);

    std::size_t start = 0;
    double best = norm2(points[0] - centroid);
    for (std::size_t i = 1; i < n; ++i) {
        double d = norm2(points[i] - centroid);
        if (d < best) {
            best = d;
            start = i;
        }
    }

    std::vector<std::size_t> sel;
    sel.reserve(n_prime);
    sel.push_back(start);
    std::vector<double> dist2(n);
    for (std::size_t i = 0; i < n; ++i) dist2[i] = norm2(points[i] - points[start]);
    while (sel.size() < n_prime) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (dist2[i] > far_d) {
                far_d = dist2[i];
                far = i;
            }
        }
        sel.push_back(far);
        for (std::size_t i = 0; i < n; ++i)
            dist2[i] = std::min(dist2[i], norm2(points[i] - points[far]));
    }
    return sel;
}

GroupedSets group(const std::vector<Vec3>& points, const std::vector<Vec3>& centroids,
                  double r, std::size_t K) {
    if (r <= 0.0 || K < 1) throw InputError("group: r and K must be positive");
    GroupedSets g;
    g.n_centroids = centroids.size();
    g.group_size = K;
    g.indices.resize(centroids.size() * K);
    g.rel_coords.resize(centroids.size() * K);
    g.unique_counts.resize(centroids.size());
    g.empty_flag.assign(centroids.size(), 0);

    double r2 = r * r;
    std::vector<std::pair<double, std::uint32_t>> members;
    for (std::size_t j = 0; j < centroids.size(); ++j) {
        const Vec3& c = centroids[j];
        members.clear();
        for (std::size_t i = 0; i < points.size(); ++i) {
            double d2 = norm2(points[i] - c);
            if (d2 <= r2) members.emplace_back(d2, static_cast<std::uint32_t>(i));
        }
        std::sort(members.begin(), members.end());
        if (members.size() > K) members.resize(K);

        std::uint32_t* idx = &g.indices[j * K];
        Vec3* rel = &g.rel_coords[j * K];
        if (members.empty()) {
            g.empty_flag[j] = 1;
            g.unique_counts[j] = 1;
            for (std::size_t k = 0; k < K; ++k) {
                idx[k] = 0;
                rel[k] = Vec3{0, 0, 0};
            }
            continue;
        }
        g.unique_counts[j] = static_cast<std::uint32_t>(members.size());
        for (std::size_t k = 0; k < K; ++k) {
            std::uint32_t i = k < members.size() ? members[k].second : members[0].second;
            idx[k] = i;
            rel[k] = points[i] - c;
        }
    }
    return g;
}

std::vector<Vec3> fibonacci_directions(std::size_t L) {
    if (L < 1) throw InputError("fibonacci_directions: L must be >= 1");
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    std::vector<Vec3> dirs;
    dirs.reserve(L);
    for (std::size_t l = 1; l <= L; ++l) {
        double z = 1.0 - 2.0 * static_cast<double>(l) / static_cast<double>(L);
        if (z < -1.0) z = -1.0;
        double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        double az = 2.0 * M_PI * static_cast<double>(l) * phi;
        dirs.push_back(Vec3{s * std::cos(az), s * std::sin(az), z});
    }
    return dirs;
}

}  // namespace pcrt
