// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "pcrt/cloud.hpp"
#include "pcrt/geometry.hpp"
#include "pcrt/kdtree.hpp"
#include "pcrt/rng.hpp"

using namespace pcrt;

namespace {

// Brute-force oracles the tree must agree with.
std::optional<Hit> linear_intersect(const PointCloud& c, const Vec3& o, const Vec3& d,
                                    double t_min = 1e-4) {
    std::optional<Hit> best;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.normal_ok.empty() && c.normal_ok[i] == 0) continue;
        auto t = ray_disc_t(o, d, c.positions[i], c.normals[i], c.point_radius, t_min, 1e300);
        if (t && (!best || *t < best->t)) {
            Hit h;
            h.point_id = i;
            h.t = *t;
            h.position = o + d * (*t);
            h.normal = dot(c.normals[i], d) > 0.0 ? -c.normals[i] : c.normals[i];
            best = h;
        }
    }
    return best;
}

std::vector<std::size_t> linear_radius(const PointCloud& c, const Vec3& q, double r) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (norm2(c.positions[i] - q) <= r * r) out.push_back(i);
    return out;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 4.0) {
    Rng rng(seed);
    PointCloud c;
    c.point_radius = 0.08;
    for (std::size_t i = 0; i < n; ++i) {
        c.positions.push_back(
            {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)});
        // random unit normal
        Vec3 nrm{rng.normal(), rng.normal(), rng.normal()};
        c.normals.push_back(normalized(nrm));
        c.material_id.push_back(0);
    }
    c.normal_ok.assign(n, 1);
    return c;
}

PointCloud plane_cloud(double half, double spacing, double z, std::uint64_t seed = 7,
                       double jitter = 0.0) {
    Rng rng(seed);
    PointCloud c;
    c.point_radius = 0.75 * spacing;
    for (double x = -half; x <= half; x += spacing) {
        for (double y = -half; y <= half; y += spacing) {
            double jx = jitter > 0 ? rng.uniform(-jitter, jitter) : 0.0;
            double jy = jitter > 0 ? rng.uniform(-jitter, jitter) : 0.0;
            c.positions.push_back({x + jx, y + jy, z});
            c.normals.push_back({0, 0, 1});
            c.material_id.push_back(0);
        }
    }
    c.normal_ok.assign(c.size(), 1);
    return c;
}

}  // namespace

TEST_CASE("index: single point retrievable") {
    PointCloud c;
    c.positions = {{1, 2, 3}};
    c.normals = {{0, 0, 1}};
    c.normal_ok = {1};
    c.material_id = {0};
    c.point_radius = 0.1;
    auto idx = SpatialIndex::build(c);
    auto r = idx.radius_query({1, 2, 3}, 0.5);
    REQUIRE(r.size() == 1);
    CHECK(r[0] == 0);
}

TEST_CASE("index: empty cloud rejected") {
    PointCloud c;
    CHECK_THROWS_WITH_AS(SpatialIndex::build(c), "empty scene", InputError);
}

TEST_CASE("index: duplicate points both retrievable with stable ids") {
    PointCloud c;
    c.positions = {{0, 0, 0}, {0, 0, 0}, {1, 1, 1}};
    c.normals = {{0, 0, 1}, {0, 0, 1}, {0, 0, 1}};
    c.normal_ok = {1, 1, 1};
    c.material_id = {0, 0, 0};
    c.point_radius = 0.1;
    auto idx = SpatialIndex::build(c);
    auto r = idx.radius_query({0, 0, 0}, 0.01);
    REQUIRE(r.size() == 2);
    CHECK(r[0] == 0);
    CHECK(r[1] == 1);
}

TEST_CASE("index: ray queries match linear scan on random clouds") {
    auto c = random_cloud(1000, 42);
    auto idx = SpatialIndex::build(c);
    Rng rng(43);
    int hits = 0;
    for (int q = 0; q < 50; ++q) {
        Vec3 o{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
        Vec3 d = normalized(Vec3{rng.normal(), rng.normal(), rng.normal()});
        auto a = idx.intersect(o, d);
        auto b = linear_intersect(c, o, d);
        REQUIRE(a.has_value() == b.has_value());
        if (a) {
            ++hits;
            CHECK(a->point_id == b->point_id);
            CHECK(a->t == doctest::Approx(b->t).epsilon(1e-12));
        }
    }
    CHECK(hits > 0);
}

TEST_CASE("index: radius queries match linear scan") {
    auto c = random_cloud(800, 5);
    auto idx = SpatialIndex::build(c);
    Rng rng(6);
    for (int q = 0; q < 30; ++q) {
        Vec3 center{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
        double r = rng.uniform(0.2, 2.5);
        CHECK(idx.radius_query(center, r) == linear_radius(c, center, r));
    }
}

TEST_CASE("index: knn matches sorted linear distances") {
    auto c = random_cloud(500, 11);
    auto idx = SpatialIndex::build(c);
    Rng rng(12);
    for (int q = 0; q < 20; ++q) {
        Vec3 p{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
        auto nb = idx.knn(p, 8);
        REQUIRE(nb.size() == 8);
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < c.size(); ++i) all.push_back({norm2(c.positions[i] - p), i});
        std::sort(all.begin(), all.end());
        for (int k = 0; k < 8; ++k) CHECK(nb[k] == all[k].second);
    }
}

TEST_CASE("intersect: plane hit straight down") {
    auto c = plane_cloud(2.0, 0.1, -2.0);
    auto idx = SpatialIndex::build(c);
    auto h = idx.intersect({0, 0, 0}, {0, 0, -1});
    REQUIRE(h.has_value());
    CHECK(h->t == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(h->position.z == doctest::Approx(-2.0).epsilon(1e-9));
    // normal flipped toward the incident side
    CHECK(dot(h->normal, Vec3{0, 0, -1}) < 0.0);
}

TEST_CASE("intersect: ray parallel to all discs misses") {
    auto c = plane_cloud(2.0, 0.1, 0.0);
    auto idx = SpatialIndex::build(c);
    CHECK_FALSE(idx.intersect({0, 0, 1}, {1, 0, 0}).has_value());
}

TEST_CASE("intersect: occluding column in front of wall, nearest hit wins") {
    // wall at z=-3, column of points at z=-1 in a small disc around the axis
    auto c = plane_cloud(2.0, 0.1, -3.0);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        double a = rng.uniform(0, 2 * M_PI), r = 0.3 * std::sqrt(rng.uniform01());
        c.positions.push_back({r * std::cos(a), r * std::sin(a), -1.0});
        c.normals.push_back({0, 0, 1});
        c.normal_ok.push_back(1);
        c.material_id.push_back(1);
    }
    auto idx = SpatialIndex::build(c);
    Rng rng2(4);
    for (int q = 0; q < 40; ++q) {
        Vec3 o{rng2.uniform(-0.2, 0.2), rng2.uniform(-0.2, 0.2), 0.5};
        Vec3 d = normalized(Vec3{rng2.uniform(-0.1, 0.1), rng2.uniform(-0.1, 0.1), -1.0});
        auto a = idx.intersect(o, d);
        auto b = linear_intersect(c, o, d);
        REQUIRE(a.has_value());
        REQUIRE(b.has_value());
        CHECK(a->point_id == b->point_id);
    }
}

TEST_CASE("estimate_normals: plane gives +-z") {
    auto c = plane_cloud(1.0, 0.1, 0.0);
    c.normals.clear();
    c.normal_ok.clear();
    auto out = estimate_normals(c, 8);
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out.normal_ok[i] == 1);
        CHECK(std::fabs(out.normals[i].z) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("estimate_normals: noisy plane within 5 degrees") {
    // 8 cm spacing, 1 cm gaussian z-noise
    Rng rng(21);
    PointCloud c;
    c.point_radius = 0.06;
    for (double x = -1.0; x <= 1.0; x += 0.08)
        for (double y = -1.0; y <= 1.0; y += 0.08) {
            c.positions.push_back({x, y, 0.01 * rng.normal()});
            c.material_id.push_back(0);
        }
    auto out = estimate_normals(c, 16, Vec3{0, 0, 10});
    double worst = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(out.normal_ok[i] == 1);
        worst = std::max(worst, angle_between(out.normals[i], {0, 0, 1}));
    }
    CHECK(worst < 5.0 * M_PI / 180.0);
}

TEST_CASE("estimate_normals: cylinder radial within 5 degrees") {
    PointCloud c;
    c.point_radius = 0.05;
    int na = 160, nz = 40;
    for (int i = 0; i < na; ++i)
        for (int k = 0; k < nz; ++k) {
            double a = 2 * M_PI * i / na;
            c.positions.push_back({std::cos(a), std::sin(a), 0.05 * k});
            c.material_id.push_back(0);
        }
    auto out = estimate_normals(c, 16, Vec3{0, 0, 1.0});  // axis is interior
    // check against the analytic inward normal
    double worst = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        Vec3 inward = normalized(Vec3{-out.positions[i].x, -out.positions[i].y, 0.0});
        worst = std::max(worst, angle_between(out.normals[i], inward));
    }
    CHECK(worst < 5.0 * M_PI / 180.0);
}

TEST_CASE("estimate_normals: collinear points flagged invalid") {
    PointCloud c;
    c.point_radius = 0.05;
    for (int i = 0; i < 3; ++i) {
        c.positions.push_back({0.1 * i, 0, 0});
        c.material_id.push_back(0);
    }
    auto out = estimate_normals(c, 3);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.normal_ok[i] == 0);
}

TEST_CASE("crop: wall points only, recentered") {
    auto c = plane_cloud(3.0, 0.1, 0.0);
    auto idx = SpatialIndex::build(c);
    auto res = crop(c, idx, {0.5, -0.3, 0.0}, 1.0, 4096, 1);
    REQUIRE(!res.cloud.empty());
    for (const auto& p : res.cloud.positions) CHECK(norm(p) <= 1.0 + 1e-12);
}

TEST_CASE("crop: membership equals linear scan") {
    auto c = random_cloud(2000, 77);
    auto idx = SpatialIndex::build(c);
    auto res = crop(c, idx, {0.2, 0.1, -0.4}, 1.7, 100000, 9);
    auto expect = linear_radius(c, {0.2, 0.1, -0.4}, 1.7);
    CHECK(res.source_ids == expect);
}

TEST_CASE("crop: exact count and determinism under subsampling") {
    auto c = random_cloud(10000, 88, 1.0);
    auto idx = SpatialIndex::build(c);
    auto a = crop(c, idx, {0, 0, 0}, 0.9, 512, 123);
    auto b = crop(c, idx, {0, 0, 0}, 0.9, 512, 123);
    REQUIRE(a.cloud.size() == 512);
    CHECK(a.source_ids == b.source_ids);
    auto d = crop(c, idx, {0, 0, 0}, 0.9, 512, 124);
    CHECK(a.source_ids != d.source_ids);
}

TEST_CASE("crop: empty ball is an error") {
    auto c = plane_cloud(1.0, 0.1, 0.0);
    auto idx = SpatialIndex::build(c);
    CHECK_THROWS_WITH_AS(crop(c, idx, {0, 0, 50}, 0.5, 10, 1), "isolated interaction point",
                         InputError);
}

TEST_CASE("fps: full selection and n_prime=1") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({double(i), 0, 0});
    auto all = fps(pts, 10);
    std::set<std::size_t> s(all.begin(), all.end());
    CHECK(s.size() == 10);
    auto one = fps(pts, 1);
    REQUIRE(one.size() == 1);
    // centroid at 4.5; nearest points are 4 and 5, lower index wins via <
    CHECK((one[0] == 4 || one[0] == 5));
}

TEST_CASE("fps: matches brute-force greedy on a line") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({double(i), 0, 0});
    auto two = fps(pts, 2);
    REQUIRE(two.size() == 2);
    // start near centroid, then the farthest endpoint
    CHECK((two[0] == 4 || two[0] == 5));
    CHECK((two[1] == 0 || two[1] == 9));
    double d0 = std::fabs(double(two[0]) - double(two[1]));
    CHECK(d0 >= 5.0);
}

TEST_CASE("fps: permutation invariant selection set") {
    auto c = random_cloud(200, 31);
    auto sel = fps(c.positions, 40);
    std::set<std::size_t> orig;
    for (auto i : sel) orig.insert(i);

    // permute
    std::vector<std::size_t> perm(c.positions.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(32);
    rng.shuffle(perm);
    std::vector<Vec3> shuffled(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = c.positions[perm[i]];
    auto sel2 = fps(shuffled, 40);
    std::set<std::size_t> back;
    for (auto i : sel2) back.insert(perm[i]);
    CHECK(orig == back);
}

TEST_CASE("fps: out of range rejected") {
    std::vector<Vec3> pts = {{0, 0, 0}};
    CHECK_THROWS_AS(fps(pts, 2), InputError);
}

TEST_CASE("group: single centroid gets K nearest, relative coords") {
    auto c = random_cloud(100, 51, 1.0);
    std::vector<Vec3> cen = {{0, 0, 0}};
    auto g = group(c.positions, cen, 10.0, 8);
    REQUIRE(g.n_centroids == 1);
    REQUIRE(g.unique_counts[0] == 8);
    // members are the 8 nearest
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < c.size(); ++i) all.push_back({norm2(c.positions[i]), i});
    std::sort(all.begin(), all.end());
    for (int k = 0; k < 8; ++k) {
        CHECK(g.indices[k] == all[k].second);
        CHECK(norm(g.rel_coords[k] - c.positions[g.indices[k]]) < 1e-12);
    }
}

TEST_CASE("group: membership equals linear ball query") {
    auto c = random_cloud(500, 52, 1.0);
    std::vector<Vec3> cen = {{0.3, 0.1, 0}, {-0.5, 0.2, 0.4}};
    double r = 0.6;
    auto g = group(c.positions, cen, r, 64);
    for (std::size_t j = 0; j < cen.size(); ++j) {
        auto expect = linear_radius(c, cen[j], r);
        std::set<std::uint32_t> got(g.indices.begin() + j * 64,
                                    g.indices.begin() + j * 64 + g.unique_counts[j]);
        std::set<std::uint32_t> want;
        for (auto i : expect) want.insert(static_cast<std::uint32_t>(i));
        if (expect.size() <= 64) {
            CHECK(got == want);
        } else {
            for (auto i : got) CHECK(want.count(i) == 1);
        }
    }
}

TEST_CASE("group: padding repeats the nearest member") {
    std::vector<Vec3> pts = {{0, 0, 0}, {0.05, 0, 0}, {5, 5, 5}};
    std::vector<Vec3> cen = {{0.04, 0, 0}};
    auto g = group(pts, cen, 0.1, 8);
    REQUIRE(g.unique_counts[0] == 2);
    for (int k = 2; k < 8; ++k) CHECK(g.indices[k] == g.indices[0]);
}

TEST_CASE("fibonacci: anchors and unit length") {
    auto d1 = fibonacci_directions(1);
    REQUIRE(d1.size() == 1);
    CHECK(norm(d1[0] - Vec3{0, 0, -1}) < 1e-12);

    auto d2 = fibonacci_directions(2);
    CHECK(std::fabs(d2[0].z) < 1e-12);  // z = 0, lies in xy-plane
    CHECK(norm(d2[1] - Vec3{0, 0, -1}) < 1e-12);

    for (auto L : {10, 100, 1000}) {
        auto dirs = fibonacci_directions(L);
        Vec3 mean{0, 0, 0};
        for (const auto& d : dirs) {
            CHECK(std::fabs(norm(d) - 1.0) < 1e-12);
            mean += d;
        }
        mean = mean / double(L);
        CHECK(norm(mean) < 3.0 / std::sqrt(double(L)));
    }
}

TEST_CASE("fibonacci: min pairwise angle near uniform spacing at L=1000") {
    // The lattice places l = L exactly at the pole, so the tightest pair is
    // the pole and its neighbour at angle ~2/sqrt(L) = 0.564 * sqrt(4*pi/L).
    auto dirs = fibonacci_directions(1000);
    double min_angle = 1e9;
    for (std::size_t i = 0; i < dirs.size(); ++i)
        for (std::size_t j = i + 1; j < dirs.size(); ++j)
            min_angle = std::min(min_angle, angle_between(dirs[i], dirs[j]));
    double avg_spacing = std::sqrt(4.0 * M_PI / 1000.0);
    CHECK(min_angle >= 0.55 * avg_spacing);
}

TEST_CASE("cloud file round trip") {
    auto c = plane_cloud(0.5, 0.1, 0.25);
    std::filesystem::create_directories("tmp_test");
    save_cloud(c, "tmp_test/rt.pts");
    auto d = load_cloud("tmp_test/rt.pts");
    REQUIRE(d.size() == c.size());
    CHECK(d.point_radius == c.point_radius);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(norm(d.positions[i] - c.positions[i]) == 0.0);
        CHECK(norm(d.normals[i] - c.normals[i]) == 0.0);
        CHECK(d.material_id[i] == c.material_id[i]);
    }
    std::filesystem::remove_all("tmp_test");
}
