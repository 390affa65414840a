// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pcrt/geometry.hpp"
#include "pcrt/metrics.hpp"
#include "pcrt/rng.hpp"
#include "pcrt/tracer.hpp"
#include "test_util.hpp"

using namespace pcrt;
using testutil::box_cloud;
using testutil::floor_cloud;
using testutil::image_method_box;

namespace {

constexpr double kF = 28e9;

Material wall_material(double S = 0.0) { return {"wall", 0.3, 5.0, S, 0.1}; }

MaterialTable test_materials(double S = 0.0) {
    MaterialTable t;
    t.add(0, wall_material(S));
    return t;
}

Scene make_box_scene(double S = 0.0) {
    Vec3 lo{0, 0, 0}, hi{6, 4, 3};
    auto cloud = box_cloud(lo, hi, 0.08, 11);
    return make_scene(cloud, {}, test_materials(S), {1.5, 1.0, 1.4}, {4.5, 2.8, 1.7}, kF);
}

}  // namespace

TEST_CASE("reception radius formula") {
    double rho = reception_radius(10.0, 100000);
    CHECK(rho == doctest::Approx(10.0 * std::sqrt(4 * M_PI / 1e5) / std::sqrt(3.0)));
}

TEST_CASE("reception test: direct hit, perpendicular miss, occlusion") {
    Vec3 rx{0, 0, 10};
    auto t = reception_test({0, 0, 0}, {0, 0, 1}, 0.0, rx, 10000, 1e30);
    REQUIRE(t.has_value());
    CHECK(*t == doctest::Approx(10.0));
    double rho = reception_radius(10.0, 10000);
    CHECK_FALSE(
        reception_test({10 * rho, 0, 0}, {0, 0, 1}, 0.0, rx, 10000, 1e30).has_value());
    CHECK(reception_test({0.9 * rho, 0, 0}, {0, 0, 1}, 0.0, rx, 10000, 1e30).has_value());
    // wall before the approach point blocks
    CHECK_FALSE(reception_test({0.9 * rho, 0, 0}, {0, 0, 1}, 0.0, rx, 10000, 5.0).has_value());
}

TEST_CASE("trace: empty room gives LOS only at Friis power") {
    MaterialTable mats = test_materials();
    Scene s = make_scene(nullptr, {}, mats, {0, 0, 0}, {5, 0, 0}, kF);
    TraceConfig cfg;
    cfg.n_rays = 1000;
    auto real = trace(s, cfg);
    REQUIRE(real.los.has_value());
    CHECK(real.nlos.empty());
    double pl = path_loss_db(real);
    double friis = 20.0 * std::log10(4.0 * M_PI * 5.0 / (kSpeedOfLight / kF));
    CHECK(std::fabs(pl - friis) < 0.01);
}

TEST_CASE("trace: single floor gives LOS plus one specular path at image delay") {
    auto cloud = floor_cloud(6.0, 0.08, 3);
    Scene s = make_scene(cloud, {}, test_materials(), {-1.0, 0.2, 1.5}, {1.2, -0.3, 1.1}, kF);
    TraceConfig cfg;
    cfg.n_rays = 40000;
    cfg.max_bounces = 2;
    auto real = trace(s, cfg);
    REQUIRE(real.los.has_value());
    REQUIRE(real.nlos.size() == 1);
    const auto& p = real.nlos[0];
    CHECK(p.hops.size() == 1);
    CHECK(p.hops[0].kind == HopKind::reflect);
    Vec3 img{-1.0, 0.2, -1.5};
    double tau_expect = distance(img, Vec3{1.2, -0.3, 1.1}) / kSpeedOfLight;
    double rho = reception_radius(tau_expect * kSpeedOfLight, cfg.n_rays);
    CHECK(std::fabs(p.gain.tau - tau_expect) * kSpeedOfLight < 2.0 * rho);
}

TEST_CASE("trace: box room delays match the image method oracle") {
    Scene s = make_box_scene();
    TraceConfig cfg;
    cfg.n_rays = 100000;
    cfg.max_bounces = 2;
    cfg.threads = 2;
    auto real = trace(s, cfg);
    REQUIRE(real.los.has_value());
    REQUIRE(!real.nlos.empty());

    auto oracle = image_method_box({0, 0, 0}, {6, 4, 3}, s.tx, s.rx, 2, wall_material(), kF);

    // every traced path matches an oracle delay within the reception tolerance
    for (const auto& p : real.nlos) {
        double best = 1e9;
        for (const auto& ip : oracle)
            if (ip.bounces == p.bounce_count())
                best = std::min(best, std::fabs(ip.delay - p.gain.tau));
        double rho = reception_radius(p.gain.tau * kSpeedOfLight, cfg.n_rays);
        CHECK(best * kSpeedOfLight < 2.0 * rho + 4.0 * s.cloud->point_radius);
    }

    // every oracle path above the 40 dB floor is found (2 dB guard band so
    // borderline paths do not flap)
    double best_a = real.los->gain.a;
    for (const auto& ip : oracle) best_a = std::max(best_a, ip.a);
    int must_find = 0;
    for (const auto& ip : oracle) {
        if (20.0 * std::log10(ip.a / best_a) < -38.0) continue;
        ++must_find;
        double best = 1e9;
        for (const auto& p : real.nlos)
            if (p.bounce_count() == ip.bounces)
                best = std::min(best, std::fabs(ip.delay - p.gain.tau));
        double rho = reception_radius(ip.delay * kSpeedOfLight, cfg.n_rays);
        CHECK(best * kSpeedOfLight < 2.0 * rho + 4.0 * s.cloud->point_radius);
    }
    CHECK(must_find >= 6);  // all first-order images are visible in an empty box
}

TEST_CASE("trace: deterministic across thread counts and repeats") {
    Scene s = make_box_scene(0.4);  // scattering on
    TraceConfig cfg;
    cfg.n_rays = 20000;
    cfg.seed = 5;
    cfg.threads = 1;
    auto a = trace(s, cfg);
    cfg.threads = 2;
    auto b = trace(s, cfg);
    auto c = trace(s, cfg);
    REQUIRE(a.nlos.size() == b.nlos.size());
    REQUIRE(b.nlos.size() == c.nlos.size());
    for (std::size_t i = 0; i < a.nlos.size(); ++i) {
        CHECK(a.nlos[i].gain.tau == b.nlos[i].gain.tau);
        CHECK(a.nlos[i].gain.a == b.nlos[i].gain.a);
        CHECK(b.nlos[i].gain.a == c.nlos[i].gain.a);
        REQUIRE(a.nlos[i].hops.size() == b.nlos[i].hops.size());
        for (std::size_t h = 0; h < a.nlos[i].hops.size(); ++h)
            CHECK(norm(a.nlos[i].hops[h].position - b.nlos[i].hops[h].position) == 0.0);
    }
}

TEST_CASE("trace: mechanism laws hold on every hop") {
    Scene s = make_box_scene(0.4);
    TraceConfig cfg;
    cfg.n_rays = 20000;
    cfg.seed = 7;
    cfg.threads = 2;
    auto real = trace(s, cfg);
    int n_scatter_hops = 0;
    for (const auto& p : real.nlos) {
        CHECK(p.bounce_count() <= cfg.max_bounces);
        int diffuse = 0;
        for (const auto& h : p.hops) {
            if (h.kind == HopKind::reflect) {
                // recover the surface normal from the bisector and check the
                // fixed mapping
                Vec3 n = normalized(h.dir_out - h.dir_in);
                Vec3 expect = reflect_dir(h.dir_in, dot(h.dir_in, n) < 0 ? n : -n);
                CHECK(norm(expect - h.dir_out) < 1e-9);
            } else if (h.kind == HopKind::scatter) {
                ++diffuse;
                ++n_scatter_hops;
            }
        }
        CHECK(diffuse <= cfg.max_diffuse);
    }
    CHECK(n_scatter_hops > 0);
}

TEST_CASE("trace: monotone ray budget on specular paths") {
    Scene s = make_box_scene();
    TraceConfig cfg;
    cfg.n_rays = 25000;
    cfg.max_bounces = 2;
    cfg.threads = 2;
    auto coarse = trace(s, cfg);
    cfg.n_rays = 100000;
    auto fine = trace(s, cfg);
    for (const auto& p : coarse.nlos) {
        double best = 1e9;
        for (const auto& q : fine.nlos)
            if (q.bounce_count() == p.bounce_count())
                best = std::min(best, std::fabs(q.gain.tau - p.gain.tau));
        double rho = reception_radius(p.gain.tau * kSpeedOfLight, 25000);
        CHECK(best * kSpeedOfLight < 2.0 * rho + 4.0 * s.cloud->point_radius);
    }
}

TEST_CASE("trace: terminal embedded in geometry is an error") {
    auto cloud = floor_cloud(2.0, 0.08, 9);
    Scene s = make_scene(cloud, {}, test_materials(), {0.0, 0.0, 0.02}, {1.0, 0.0, 1.0}, kF);
    TraceConfig cfg;
    CHECK_THROWS_WITH_AS(trace(s, cfg), "terminal embedded in geometry", InputError);
}

TEST_CASE("power_filter keeps the strongest and the 40 dB window") {
    ChannelRealization real;
    real.f_hz = kF;
    auto mk = [&](double rel_db) {
        TracedPath p;
        p.gain.a = std::pow(10.0, rel_db / 20.0);
        p.gain.tau = 1e-8;
        return p;
    };
    real.nlos.push_back(mk(0.0));
    real.nlos.push_back(mk(-39.9));
    real.nlos.push_back(mk(-40.1));
    auto out = power_filter(std::move(real), 40.0);
    CHECK(out.nlos.size() == 2);

    ChannelRealization eq;
    eq.nlos = {mk(-3), mk(-3), mk(-3)};
    CHECK(power_filter(std::move(eq), 40.0).nlos.size() == 3);

    // random set equals a brute-force threshold scan
    Rng rng(3);
    ChannelRealization rnd;
    std::vector<double> dbs;
    for (int i = 0; i < 40; ++i) {
        double db = rng.uniform(-80.0, 0.0);
        dbs.push_back(db);
        rnd.nlos.push_back(mk(db));
    }
    double maxdb = *std::max_element(dbs.begin(), dbs.end());
    std::size_t expect = 0;
    for (double db : dbs)
        if (db >= maxdb - 40.0) ++expect;
    CHECK(power_filter(std::move(rnd), 40.0).nlos.size() == expect);
}

TEST_CASE("enumerate_diffraction: no edges -> empty; symmetric edge -> foot point") {
    MaterialTable mats = test_materials();
    Scene s0 = make_scene(nullptr, {}, mats, {0, 0, 0}, {4, 0, 0}, kF);
    TraceConfig cfg;
    CHECK(enumerate_diffraction(s0, cfg).empty());

    // vertical knife edge halfway between tx and rx, symmetric geometry
    EdgeSegment e;
    e.a = {2, 0, -3};
    e.b = {2, 0, 3};
    e.face_normal[0] = {0, 1, 0};
    e.face_normal[1] = {0, -1, 0};
    e.interior_angle = 1e-3;
    e.material[0] = e.material[1] = 0;
    Scene s1 = make_scene(nullptr, {e}, mats, {0, 1.0, 0.7}, {4, 1.0, 0.7}, kF);
    auto paths = enumerate_diffraction(s1, cfg);
    REQUIRE(paths.size() == 1);
    CHECK(paths[0].hops[0].position.z == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(paths[0].hops[0].position.x == doctest::Approx(2.0));
    Vec3 ax = e.axis();
    CHECK(std::fabs(dot(paths[0].hops[0].dir_in, ax) - dot(paths[0].hops[0].dir_out, ax)) <
          1e-6);
}

TEST_CASE("enumerate_diffraction: fermat point matches dense line search") {
    MaterialTable mats = test_materials();
    Rng rng(17);
    int checked = 0;
    for (int rep = 0; rep < 8; ++rep) {
        EdgeSegment e;
        e.a = {rng.uniform(-2, 0), rng.uniform(-1, 1), rng.uniform(-1, 0)};
        e.b = {rng.uniform(0, 2), rng.uniform(1, 3), rng.uniform(0, 1)};
        Vec3 axis = e.axis();
        Vec3 u = normalized(cross(axis, Vec3{0.3, -0.8, 0.52}));
        Vec3 v = cross(axis, u);
        e.face_normal[0] = u;
        e.face_normal[1] = v;
        e.interior_angle = M_PI / 2;
        e.material[0] = e.material[1] = 0;
        Vec3 tx = e.a + u * 2.0 + v * 0.5 - axis * 1.0;
        Vec3 rx = e.b + v * 2.0 + u * 0.5 + axis * 1.0;
        Scene s = make_scene(nullptr, {e}, mats, tx, rx, kF);
        TraceConfig cfg;
        auto paths = enumerate_diffraction(s, cfg);
        if (paths.empty()) continue;  // fermat point off-segment for this draw
        double best_len = 1e300;
        Vec3 best_q;
        for (int i = 0; i <= 1000000; ++i) {
            double t = i / 1000000.0;
            Vec3 q = e.a + (e.b - e.a) * t;
            double L = distance(tx, q) + distance(q, rx);
            if (L < best_len) {
                best_len = L;
                best_q = q;
            }
        }
        CHECK(distance(paths[0].hops[0].position, best_q) < 1e-5);
        ++checked;
    }
    CHECK(checked > 0);
}

TEST_CASE("channel file round trip") {
    Scene s = make_box_scene(0.3);
    TraceConfig cfg;
    cfg.n_rays = 10000;
    cfg.threads = 2;
    auto real = trace(s, cfg);
    save_channel(real, "tmp_channel.json");
    auto back = load_channel("tmp_channel.json");
    REQUIRE(back.nlos.size() == real.nlos.size());
    CHECK(back.los.has_value() == real.los.has_value());
    for (std::size_t i = 0; i < real.nlos.size(); ++i) {
        CHECK(back.nlos[i].gain.a == real.nlos[i].gain.a);
        CHECK(back.nlos[i].gain.tau == real.nlos[i].gain.tau);
        CHECK(back.nlos[i].hops.size() == real.nlos[i].hops.size());
    }
    std::filesystem::remove("tmp_channel.json");
}

TEST_CASE("constraint enforcement: tighter budgets never add paths") {
    Scene s = make_box_scene(0.4);
    TraceConfig tight;
    tight.n_rays = 15000;
    tight.max_bounces = 2;
    tight.max_diffuse = 0;
    tight.seed = 3;
    tight.threads = 2;
    TraceConfig loose = tight;
    loose.max_bounces = 3;
    loose.max_diffuse = 1;
    auto a = trace(s, tight);
    auto b = trace(s, loose);
    CHECK(a.nlos.size() <= b.nlos.size());
    for (const auto& p : a.nlos) {
        CHECK(p.bounce_count() <= 2);
        for (const auto& h : p.hops) CHECK(h.kind == HopKind::reflect);
    }
}
