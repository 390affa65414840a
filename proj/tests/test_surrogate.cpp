// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "pcrt/dataset.hpp"
#include "pcrt/em.hpp"
#include "pcrt/geometry.hpp"
#include "pcrt/rollout.hpp"
#include "pcrt/train.hpp"

using namespace pcrt;
using nn::Tensor;

namespace {

SurrogateConfig tiny_config() {
    SurrogateConfig c;
    c.sa = {{16, 0.4, 8, 12}, {8, 0.8, 8, 16}, {4, 1.2, 8, 24}};
    c.d_env = 24;
    c.posenc_K = 2;
    c.n_layers = 1;
    c.n_heads = 2;
    c.ffn_mult = 2;
    c.mat_embed = 6;
    c.amp_widths = {16, 12, 8};
    c.crop_max_points = 64;
    c.batch = 8;
    c.n_shards = 2;
    c.seed = 3;
    return c;
}

PointCloud small_plane(double half = 1.5, double spacing = 0.15) {
    PointCloud c;
    c.point_radius = 0.75 * spacing;
    Rng rng(9);
    for (double x = -half; x <= half; x += spacing)
        for (double y = -half; y <= half; y += spacing) {
            c.positions.push_back({x + rng.uniform(-0.03, 0.03), y + rng.uniform(-0.03, 0.03), 0});
            c.normals.push_back({0, 0, 1});
            c.material_id.push_back(0);
        }
    c.normal_ok.assign(c.size(), 1);
    return c;
}

Material mat_concrete() { return {"c", 0.6, 5.0, 0.0, 0.1}; }

// synthetic planar-reflection samples whose targets come from the field
// computation directly
TrainingSet synth_set(const SurrogateConfig& cfg, const PointCloud& plane,
                      const SpatialIndex& index, int n, std::uint64_t seed,
                      Mechanism mech = Mechanism::deterministic) {
    TrainingSet set;
    Rng rng(seed);
    Material mat = mat_concrete();
    std::map<std::size_t, std::size_t> plan_of_anchor;
    for (int i = 0; i < n; ++i) {
        Vec3 p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};
        std::size_t anchor = index.nearest(p);
        Vec3 ap = plane.positions[anchor];
        Vec3 tx{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 2.0)};
        RaySample s;
        s.tx = tx;
        s.rx = tx;
        s.p = ap;
        s.d_in = normalized(ap - tx);
        s.crop_anchor = anchor;
        s.material_id = 0;
        s.mechanism = mech;
        if (mech == Mechanism::deterministic) {
            s.d_out = reflect_dir(s.d_in, {0, 0, 1});
            s.I = amp_to_reals(reflection_interaction(s.d_in, s.d_out, {0, 0, 1}, mat, 28e9));
        } else {
            Rng srng(seed + 100 + i);
            s.d_out = srng.lambertian({0, 0, 1});
            Material scat{"s", 0.6, 5.0, 0.6, 0.1};
            s.I = amp_to_reals(scatter_interaction(s.d_in, s.d_out, {0, 0, 1}, scat,
                                                   M_PI * 0.01, 1.0));
        }
        auto it = plan_of_anchor.find(anchor);
        if (it == plan_of_anchor.end()) {
            auto cr = crop(plane, index, ap, cfg.crop_radius, cfg.crop_max_points, 11);
            set.plans.push_back(build_crop_plan(cr.cloud, cfg));
            it = plan_of_anchor.emplace(anchor, set.plans.size() - 1).first;
        }
        set.plan_of_sample.push_back(it->second);
        set.mat_of_sample.push_back(material_row(mat));
        set.samples.push_back(s);
    }
    return set;
}

}  // namespace

TEST_CASE("posenc anchors from the input embedding definition") {
    auto z = nn::posenc(Tensor::from({1, 3}, {0.0, 0.0, 0.0}), 3);
    REQUIRE(z.size() == 18);
    for (int k = 0; k < 3; ++k)
        for (int c = 0; c < 3; ++c) {
            CHECK(z.data()[k * 6 + c] == 0.0);        // sines
            CHECK(z.data()[k * 6 + 3 + c] == 1.0);    // cosines
        }
    // K=1, d=(0.25,0,0): first sine entry sin(2*pi*0.25) = 1
    auto z1 = nn::posenc(Tensor::from({1, 3}, {0.25, 0.0, 0.0}), 1);
    CHECK(z1.data()[0] == doctest::Approx(1.0));
    // dimension = 6K
    for (int K = 1; K <= 10; ++K)
        CHECK(nn::posenc(Tensor::from({1, 3}, {0.1, 0.2, 0.3}), K).size() ==
              static_cast<std::size_t>(6 * K));
}

TEST_CASE("encode_scene: permutation and translation invariance, untrained") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane();
    auto index = SpatialIndex::build(plane);
    auto cr = crop(plane, index, {0.2, -0.1, 0}, cfg.crop_radius, cfg.crop_max_points, 5);

    auto f0 = encode_scene(cr.cloud, model);
    REQUIRE(f0.size() == cfg.d_env);
    for (double v : f0) CHECK(std::isfinite(v));

    // permute the crop points
    PointCloud perm = cr.cloud;
    Rng rng(6);
    std::vector<std::size_t> order(perm.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    PointCloud shuffled;
    shuffled.point_radius = perm.point_radius;
    for (auto i : order) {
        shuffled.positions.push_back(perm.positions[i]);
        shuffled.normals.push_back(perm.normals[i]);
        shuffled.normal_ok.push_back(perm.normal_ok[i]);
        shuffled.material_id.push_back(perm.material_id[i]);
    }
    auto f1 = encode_scene(shuffled, model);
    for (std::size_t i = 0; i < f0.size(); ++i)
        CHECK(f0[i] == doctest::Approx(f1[i]).epsilon(1e-9));

    // crop coordinates are already relative, so a translated scene cropped at
    // the translated center produces the same local cloud; encode directly
    auto f2 = encode_scene(cr.cloud, model);
    for (std::size_t i = 0; i < f0.size(); ++i) CHECK(f0[i] == f2[i]);
}

TEST_CASE("predict_direction: unit norm, finite, deterministic") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane();
    auto index = SpatialIndex::build(plane);
    auto cr = crop(plane, index, {0, 0, 0}, cfg.crop_radius, cfg.crop_max_points, 5);
    auto feat = encode_scene(cr.cloud, model);
    Vec3 d_in = normalized(Vec3{0.3, -0.2, -1.0});
    Vec3 d1 = predict_direction(feat, d_in, model);
    Vec3 d2 = predict_direction(feat, d_in, model);
    CHECK(std::fabs(norm(d1) - 1.0) < 1e-12);
    CHECK(is_finite(d1));
    CHECK(norm(d1 - d2) == 0.0);
}

TEST_CASE("predict_amplitude: 8-real codec round trip and finite untrained output") {
    PolAmp a;
    a.m = {cplx(0.1, -0.2), cplx(0.3, 0.4), cplx(-0.5, 0.6), cplx(0.7, -0.8)};
    auto r = amp_to_reals(a);
    PolAmp b = amp_from_reals(r);
    for (int i = 0; i < 4; ++i) CHECK(a.m[i] == b.m[i]);

    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane();
    auto index = SpatialIndex::build(plane);
    auto cr = crop(plane, index, {0, 0, 0}, cfg.crop_radius, cfg.crop_max_points, 5);
    auto feat = encode_scene(cr.cloud, model);
    Vec3 d_in = normalized(Vec3{0.3, -0.2, -1.0});
    PolAmp amp = predict_amplitude(feat, d_in, reflect_dir(d_in, {0, 0, 1}), mat_concrete(),
                                   model);
    CHECK(amp.finite());
}

TEST_CASE("loss weights: Table defaults and total loss arithmetic") {
    SurrogateConfig cfg;  // defaults
    auto [l1d, l2d] = loss_weights(cfg, Mechanism::deterministic);
    CHECK(l1d == 1.0);
    CHECK(l2d == 5.0);
    auto [l1n, l2n] = loss_weights(cfg, Mechanism::non_deterministic);
    CHECK(l1n == 1.0);
    CHECK(l2n == 0.001);

    auto dir = Tensor::scalar(0.1);
    auto att = Tensor::scalar(0.2);
    CHECK(total_loss(dir, att, cfg, Mechanism::deterministic).value() ==
          doctest::Approx(1.1));
    auto att2 = Tensor::scalar(100.0);
    CHECK(total_loss(dir, att2, cfg, Mechanism::non_deterministic).value() ==
          doctest::Approx(0.2));
    CHECK(total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), cfg,
                     Mechanism::deterministic)
              .value() == 0.0);
}

TEST_CASE("composed surrogate forward+loss passes the gradient check at 1e-3") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane(1.0, 0.2);
    auto index = SpatialIndex::build(plane);
    auto set = synth_set(cfg, plane, index, 3, 21);

    ModelView view = make_view(model, false);
    std::vector<const CropPlan*> plans;
    std::vector<double> din, dout, amp_t, mats;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& s = set.samples[i];
        plans.push_back(&set.plans[set.plan_of_sample[i]]);
        din.insert(din.end(), {s.d_in.x, s.d_in.y, s.d_in.z});
        dout.insert(dout.end(), {s.d_out.x, s.d_out.y, s.d_out.z});
        amp_t.insert(amp_t.end(), s.I.begin(), s.I.end());
        const auto& m = set.mat_of_sample[i];
        mats.insert(mats.end(), m.begin(), m.end());
    }
    auto bp = stack_plans(plans, cfg);
    auto d_in = Tensor::from({set.size(), 3}, din);
    auto d_truth = Tensor::from({set.size(), 3}, dout);
    auto a_truth = Tensor::from({set.size(), 8}, amp_t);
    auto m_rows = Tensor::from({set.size(), 4}, mats);

    auto fn = [&] {
        auto feat = encode_batch(bp, view);
        auto d_pred = predict_direction_batch(feat, d_in, 0, view);
        auto dir_l = nn::cosine_direction_loss(d_pred, d_truth);
        auto amp_pred = predict_amplitude_batch(feat, d_in, d_pred, m_rows, view);
        auto att_l = nn::mse_loss(amp_pred, a_truth);
        return total_loss(dir_l, att_l, cfg, Mechanism::deterministic);
    };
    auto rep = nn::grad_check(fn, view.all_tensors(), 1e-5, 1e-3);
    CAPTURE(rep.max_rel_err);
    CAPTURE(rep.worst_param);
    CHECK(rep.pass);
}

TEST_CASE("train: single-sample loss decreases monotonically after epoch 5") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane(1.0, 0.2);
    auto index = SpatialIndex::build(plane);
    auto set = synth_set(cfg, plane, index, 1, 33);
    auto res = train_model(model, set, "", 50, 1e-3);
    REQUIRE(res.curve.size() == 50);
    for (std::size_t i = 5; i + 1 < res.curve.size(); ++i)
        CHECK(res.curve[i + 1].total_loss < res.curve[i].total_loss);
}

TEST_CASE("train: identical seeds give identical loss curves; threads do not matter") {
    auto cfg = tiny_config();
    auto plane = small_plane(1.0, 0.2);
    auto index = SpatialIndex::build(plane);
    auto set = synth_set(cfg, plane, index, 24, 44);

    auto m1 = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto r1 = train_model(m1, set, "", 6);
    auto m2 = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto r2 = train_model(m2, set, "", 6);
    cfg.threads = 2;
    auto m3 = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto r3 = train_model(m3, set, "", 6);
    for (int e = 0; e < 6; ++e) {
        CHECK(r1.curve[e].total_loss == r2.curve[e].total_loss);
        CHECK(r1.curve[e].total_loss == r3.curve[e].total_loss);
    }
    // parameters bitwise equal as well
    for (auto& [name, ent] : m1.params.entries()) {
        auto& other = m3.params.entries().at(name);
        for (std::size_t i = 0; i < ent.t.size(); ++i)
            CHECK(ent.t.data()[i] == other.t.data()[i]);
    }
}

TEST_CASE("train: non-finite loss aborts with a numerical error") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane(1.0, 0.2);
    auto index = SpatialIndex::build(plane);
    auto set = synth_set(cfg, plane, index, 4, 55);
    // poison a weight
    auto w = model.params.get("dir.head.W");
    w.data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_model(model, set, "", 2), NumericalError);
}

TEST_CASE("train: empty dataset rejected") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    TrainingSet empty;
    CHECK_THROWS_AS(train_model(model, empty, "", 1), InputError);
}

TEST_CASE("mechanism separation: training one model leaves the other untouched") {
    auto cfg = tiny_config();
    auto det = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto non = SurrogateModel::init(cfg, Mechanism::non_deterministic);
    // snapshot non-deterministic params
    std::map<std::string, std::vector<double>> before;
    for (auto& [name, e] : non.params.entries())
        before[name] = *e.t.node()->data;
    auto plane = small_plane(1.0, 0.2);
    auto index = SpatialIndex::build(plane);
    auto set = synth_set(cfg, plane, index, 16, 66);
    train_model(det, set, "", 3);
    for (auto& [name, e] : non.params.entries()) {
        const auto& now = *e.t.node()->data;
        const auto& b = before.at(name);
        for (std::size_t i = 0; i < now.size(); ++i) CHECK(now[i] == b[i]);
    }
    // and the two inits are independent draws
    bool any_diff = false;
    for (auto& [name, e] : det.params.entries()) {
        const auto& o = *non.params.entries().at(name).t.node()->data;
        for (std::size_t i = 0; i < e.t.size() && !any_diff; ++i)
            any_diff = e.t.data()[i] != o[i];
    }
    CHECK(any_diff);
}

TEST_CASE("train: short run on planar reflections learns the direction law") {
    auto cfg = tiny_config();
    cfg.batch = 16;
    auto model = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto plane = small_plane(1.5, 0.12);
    auto index = SpatialIndex::build(plane);
    auto train_set = synth_set(cfg, plane, index, 256, 77);
    auto test_set = synth_set(cfg, plane, index, 64, 78);

    auto before = evaluate_held_out(model, test_set);
    train_model(model, train_set, "", 120, 3e-3);
    auto after = evaluate_held_out(model, test_set);
    CAPTURE(before.mean_angular_error_deg);
    CAPTURE(after.mean_angular_error_deg);
    CHECK(after.mean_angular_error_deg < before.mean_angular_error_deg);
    CHECK(after.mean_angular_error_deg < 20.0);  // tiny config, short run
}

TEST_CASE("model checkpoint round trip preserves outputs") {
    auto cfg = tiny_config();
    auto model = SurrogateModel::init(cfg, Mechanism::non_deterministic);
    auto plane = small_plane();
    auto index = SpatialIndex::build(plane);
    auto cr = crop(plane, index, {0, 0, 0}, cfg.crop_radius, cfg.crop_max_points, 5);
    auto feat = encode_scene(cr.cloud, model);
    Vec3 d_in = normalized(Vec3{0.1, 0.4, -1.0});
    Vec3 d1 = predict_direction(feat, d_in, model);

    save_model(model, "tmp_model.ckpt");
    auto back = load_model("tmp_model.ckpt");
    CHECK(back.mechanism == Mechanism::non_deterministic);
    CHECK(back.cfg.d_env == cfg.d_env);
    auto feat2 = encode_scene(cr.cloud, back);
    Vec3 d2 = predict_direction(feat2, d_in, back);
    CHECK(norm(d1 - d2) == 0.0);
    std::remove("tmp_model.ckpt");
}

TEST_CASE("rollout: empty scene reduces to the tracer's LOS") {
    auto cfg = tiny_config();
    auto det = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto non = SurrogateModel::init(cfg, Mechanism::non_deterministic);
    MaterialTable mats;
    mats.add(0, mat_concrete());
    Scene s = make_scene(nullptr, {}, mats, {0, 0, 0}, {4, 1, 0.5}, 28e9);
    TraceConfig tc;
    tc.n_rays = 500;
    auto truth = trace(s, tc);
    auto pred = rollout(s, det, non, tc, nullptr);
    REQUIRE(truth.los.has_value());
    REQUIRE(pred.los.has_value());
    CHECK(pred.nlos.empty());
    CHECK(pred.los->gain.a == truth.los->gain.a);
    CHECK(pred.los->gain.tau == truth.los->gain.tau);
}

TEST_CASE("direction loss stays within [0, 2] on random batches") {
    Rng rng(91);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t n = 1 + rng.uniform_index(6);
        std::vector<double> p(n * 3), t(n * 3);
        for (auto& v : p) v = rng.normal();
        for (auto& v : t) v = rng.normal();
        auto loss = nn::cosine_direction_loss(nn::Tensor::from({n, 3}, p),
                                              nn::Tensor::from({n, 3}, t));
        CHECK(loss.value() >= 0.0);
        CHECK(loss.value() <= 2.0 + 1e-12);
    }
}
