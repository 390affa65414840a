// SPDX-License-Identifier: Apache-2.0
#include "pcrt/accept.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "pcrt/dataset.hpp"
#include "pcrt/evalcmp.hpp"
#include "pcrt/metrics.hpp"
#include "pcrt/oracles.hpp"
#include "pcrt/rollout.hpp"
#include "pcrt/scenegen.hpp"
#include "pcrt/train.hpp"

namespace fs = std::filesystem;

namespace pcrt {

namespace {

using nn::Tensor;

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

struct Ctx {
    std::string out;
    int threads = 2;
    std::uint64_t seed = 1;
    // artifacts shared between criteria
    std::string plane_ds_dir;
    SurrogateModel plane_det;  // criterion 5/6 model
    bool plane_trained = false;
    TrainingSet plane_det_train, plane_det_test, plane_non_train;
    std::string suite_dir, ds_a_dir;
    std::vector<LinkSpec> links_b;
    std::vector<ChannelRealization> truth_b;
    SurrogateModel room_det, room_non;
    bool room_trained = false;
};

Material plane_material() { return {"itu_concrete", 0.626, 5.24, 0.3, 0.1}; }

// --- criterion 1: Friis exactness -------------------------------------------

CriterionResult c1_friis(Ctx& ctx) {
    CriterionResult r{1, "friis_exactness"};
    MaterialTable mats;
    mats.add(0, plane_material());
    double worst = 0.0;
    for (double d : {1.0, 5.0, 20.0}) {
        Scene s = make_scene(nullptr, {}, mats, {0, 0, 0}, {d, 0, 0}, 28e9);
        TraceConfig cfg;
        cfg.n_rays = 1000;
        cfg.threads = ctx.threads;
        auto real = trace(s, cfg);
        double pl = path_loss_db(real);
        double friis = 20.0 * std::log10(4.0 * M_PI * d / s.lambda());
        worst = std::max(worst, std::fabs(pl - friis));
    }
    r.pass = worst < 0.01;
    r.detail = fmt("max |PL - Friis| = %.6f dB (threshold 0.01)", worst);
    return r;
}

// --- criterion 2: image-method equivalence ----------------------------------

CriterionResult c2_image_method(Ctx& ctx) {
    CriterionResult r{2, "image_method_equivalence"};
    Vec3 lo{0, 0, 0}, hi{6, 4, 3};
    auto cloud = oracles::box_cloud(lo, hi, 0.08, sub_seed(ctx.seed, "c2"));
    Material wall{"wall", 0.3, 5.0, 0.0, 0.1};  // specular only
    MaterialTable mats;
    mats.add(0, wall);
    Scene s = make_scene(cloud, {}, mats, {1.5, 1.0, 1.4}, {4.5, 2.8, 1.7}, 28e9);
    TraceConfig cfg;
    cfg.n_rays = 100000;
    cfg.max_bounces = 2;
    cfg.threads = ctx.threads;
    auto real = trace(s, cfg);
    auto oracle = oracles::image_method_box(lo, hi, s.tx, s.rx, 2, wall, 28e9);

    double pr = cloud->point_radius;
    double worst_traced = 0.0;
    bool all_traced_match = true;
    for (const auto& p : real.nlos) {
        double best = 1e9;
        for (const auto& ip : oracle)
            if (ip.bounces == p.bounce_count())
                best = std::min(best, std::fabs(ip.delay - p.gain.tau));
        double tol = 2.0 * reception_radius(p.gain.tau * kSpeedOfLight, cfg.n_rays) + 4.0 * pr;
        worst_traced = std::max(worst_traced, best * kSpeedOfLight - tol);
        if (best * kSpeedOfLight >= tol) all_traced_match = false;
    }

    double best_a = real.los ? real.los->gain.a : 0.0;
    for (const auto& ip : oracle) best_a = std::max(best_a, ip.a);
    std::size_t must_find = 0, found = 0;
    for (const auto& ip : oracle) {
        // 2 dB guard inside the 40 dB floor so boundary paths do not flap
        if (20.0 * std::log10(ip.a / best_a) < -38.0) continue;
        ++must_find;
        double best = 1e9;
        for (const auto& p : real.nlos)
            if (p.bounce_count() == ip.bounces)
                best = std::min(best, std::fabs(ip.delay - p.gain.tau));
        double tol = 2.0 * reception_radius(ip.delay * kSpeedOfLight, cfg.n_rays) + 4.0 * pr;
        if (best * kSpeedOfLight < tol) ++found;
    }
    r.pass = all_traced_match && found == must_find && must_find >= 6;
    r.detail = fmt("traced=%zu all matched=%d; oracle above floor=%zu found=%zu",
                   real.nlos.size(), all_traced_match ? 1 : 0, must_find, found);
    return r;
}

// --- criterion 3: gradient suite ---------------------------------------------

CriterionResult c3_gradients(Ctx& ctx) {
    (void)ctx;
    CriterionResult r{3, "gradient_suite"};
    Rng rng(991);
    auto randn = [&](std::vector<std::size_t> shape, double s = 1.0) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        std::vector<double> data(n);
        for (auto& v : data) v = s * rng.normal();
        return Tensor::from(std::move(shape), std::move(data), true);
    };
    double worst_single = 0.0;
    auto check = [&](const std::function<Tensor()>& fn, std::vector<Tensor> inputs) {
        auto rep = nn::grad_check(fn, std::move(inputs), 1e-5, 1e-4);
        worst_single = std::max(worst_single, rep.max_rel_err);
    };

    {
        auto x = randn({4, 5});
        auto W = randn({5, 3});
        auto b = randn({3});
        check([&] { return nn::mean_all(nn::relu(nn::linear(x, W, b))); }, {x, W, b});
    }
    {
        auto a = randn({3, 4});
        auto b = randn({4, 5});
        check([&] { return nn::mean_all(nn::matmul(a, b)); }, {a, b});
    }
    {
        auto x = randn({3, 6});
        auto g = randn({6});
        auto b = randn({6});
        check([&] {
            auto y = nn::layer_norm(x, g, b);
            return nn::mean_all(nn::mul(y, y));
        }, {x, g, b});
    }
    {
        auto x = randn({3, 5});
        auto w = randn({3, 5});
        w.node()->requires_grad = false;
        check([&] { return nn::mean_all(nn::mul(nn::softmax(x), w)); }, {x});
    }
    {
        auto x = randn({3, 4, 2});
        check([&] { return nn::mean_all(nn::max_axis(x, 1)); }, {x});
    }
    {
        auto d = randn({3, 3}, 0.4);
        auto w = randn({3, 18});
        w.node()->requires_grad = false;
        check([&] { return nn::mean_all(nn::mul(nn::posenc(d, 3), w)); }, {d});
    }
    {
        auto x = randn({4, 3});
        auto w = randn({4, 3});
        w.node()->requires_grad = false;
        check([&] { return nn::mean_all(nn::mul(nn::normalize_rows(x), w)); }, {x});
    }
    {
        std::size_t G = 3, K = 4, CF = 5, CO = 6;
        auto rel = std::make_shared<std::vector<double>>(G * K * 3);
        for (auto& v : *rel) v = rng.normal();
        auto idx = std::make_shared<std::vector<std::uint32_t>>(G * K);
        for (auto& v : *idx) v = static_cast<std::uint32_t>(rng.uniform_index(8));
        auto counts = std::make_shared<std::vector<std::uint32_t>>(G, 3);
        auto feat = randn({8, CF});
        auto W = randn({3 + CF, CO});
        auto b = randn({CO});
        auto w2 = randn({G, CO});
        w2.node()->requires_grad = false;
        check(
            [&] {
                return nn::mean_all(
                    nn::mul(nn::sa_group_reduce(feat, rel, idx, counts, G, K, W, b), w2));
            },
            {feat, W, b});
    }
    {
        std::size_t D = 8;
        nn::EncoderLayerParams p;
        p.ln1_g = Tensor::from({D}, std::vector<double>(D, 1.0), true);
        p.ln1_b = Tensor::zeros({D}, true);
        p.ln2_g = Tensor::from({D}, std::vector<double>(D, 1.0), true);
        p.ln2_b = Tensor::zeros({D}, true);
        p.attn.Wq = randn({D, D}, 0.3);
        p.attn.bq = randn({D}, 0.1);
        p.attn.Wk = randn({D, D}, 0.3);
        p.attn.bk = randn({D}, 0.1);
        p.attn.Wv = randn({D, D}, 0.3);
        p.attn.bv = randn({D}, 0.1);
        p.attn.Wo = randn({D, D}, 0.3);
        p.attn.bo = randn({D}, 0.1);
        p.W_ff1 = randn({D, 2 * D}, 0.3);
        p.b_ff1 = randn({2 * D}, 0.1);
        p.W_ff2 = randn({2 * D, D}, 0.3);
        p.b_ff2 = randn({D}, 0.1);
        auto x = randn({3, D});
        check([&] { return nn::mean_all(nn::self_attention(x, p.attn, 2)); },
              {p.attn.Wq, p.attn.bq, p.attn.Wv, p.attn.bv, x});
        check([&] { return nn::mean_all(nn::encoder_layer(x, p, 2, true)); },
              {p.ln1_g, p.W_ff1, p.b_ff2, x});
    }
    {
        auto p = randn({4, 3});
        auto t = randn({4, 3});
        t.node()->requires_grad = false;
        check([&] { return nn::cosine_direction_loss(p, t); }, {p});
        auto p8 = randn({3, 8});
        auto t8 = randn({3, 8});
        t8.node()->requires_grad = false;
        check([&] { return nn::mse_loss(p8, t8); }, {p8});
        check([&] { return nn::log_power_loss(p8, t8, nullptr); }, {p8});
    }

    // composed surrogate forward + loss at 1e-3 on a tiny configuration
    SurrogateConfig tiny;
    tiny.sa = {{12, 0.4, 6, 10}, {6, 0.8, 6, 12}, {4, 1.2, 6, 16}};
    tiny.d_env = 16;
    tiny.posenc_K = 2;
    tiny.dir_lift = 4;
    tiny.n_layers = 1;
    tiny.n_heads = 2;
    tiny.mat_embed = 4;
    tiny.amp_widths = {12, 10, 8};
    tiny.crop_max_points = 48;
    tiny.seed = 5;
    auto model = SurrogateModel::init(tiny, Mechanism::deterministic);
    PointCloud plane;
    plane.point_radius = 0.1;
    Rng prng(17);
    for (double x = -1; x <= 1; x += 0.2)
        for (double y = -1; y <= 1; y += 0.2) {
            plane.positions.push_back({x + prng.uniform(-0.05, 0.05),
                                       y + prng.uniform(-0.05, 0.05), 0.0});
            plane.normals.push_back({0, 0, 1});
            plane.material_id.push_back(0);
        }
    plane.normal_ok.assign(plane.size(), 1);
    auto index = SpatialIndex::build(plane);
    auto cr = crop(plane, index, {0, 0, 0}, 1.0, tiny.crop_max_points, 3);
    CropPlan plan = build_crop_plan(cr.cloud, tiny);
    ModelView view = make_view(model, false);
    BatchPlan bp = stack_plans({&plan, &plan}, tiny);
    Material mat = plane_material();
    Vec3 d1 = normalized(Vec3{0.3, -0.2, -1.0});
    Vec3 d2 = normalized(Vec3{-0.5, 0.1, -0.8});
    auto d_in = Tensor::from({2, 3}, {d1.x, d1.y, d1.z, d2.x, d2.y, d2.z});
    Vec3 o1 = reflect_dir(d1, {0, 0, 1}), o2 = reflect_dir(d2, {0, 0, 1});
    auto d_truth = Tensor::from({2, 3}, {o1.x, o1.y, o1.z, o2.x, o2.y, o2.z});
    auto i1 = amp_to_reals(reflection_interaction(d1, o1, {0, 0, 1}, mat, 28e9));
    auto i2 = amp_to_reals(reflection_interaction(d2, o2, {0, 0, 1}, mat, 28e9));
    std::vector<double> amp_t(i1.begin(), i1.end());
    amp_t.insert(amp_t.end(), i2.begin(), i2.end());
    auto a_truth = Tensor::from({2, 8}, amp_t);
    auto mrow = material_row(mat);
    auto mats_t = Tensor::from({2, 4}, {mrow[0], mrow[1], mrow[2], mrow[3], mrow[0], mrow[1],
                                        mrow[2], mrow[3]});
    auto composed = [&] {
        auto feat = encode_batch(bp, view);
        auto d_pred = predict_direction_batch(feat, d_in, 0, view);
        auto dir_l = nn::cosine_direction_loss(d_pred, d_truth);
        auto amp_pred = predict_amplitude_batch(feat, d_in, d_pred, mats_t, view);
        auto att_l = nn::mse_loss(amp_pred, a_truth);
        return total_loss(dir_l, att_l, tiny, Mechanism::deterministic);
    };
    auto rep = nn::grad_check(composed, view.all_tensors(), 1e-5, 1e-3);

    r.pass = worst_single < 1e-4 && rep.pass;
    r.detail = fmt("max single-op rel err = %.3e (tol 1e-4); composed rel err = %.3e (tol 1e-3)",
                   worst_single, rep.max_rel_err);
    return r;
}

// --- criterion 4: energy and normalization ------------------------------------

CriterionResult c4_energy(Ctx& ctx) {
    (void)ctx;
    CriterionResult r{4, "energy_normalization"};
    auto table = default_material_table(28e9);
    bool fresnel_ok = true;
    for (const auto& [id, m] : table.entries())
        for (int deg = 1; deg <= 89; ++deg) {
            auto fc = fresnel(std::cos(deg * M_PI / 180.0), m, 28e9);
            if (std::abs(fc.r_perp) > 1.0 + 1e-12 || std::abs(fc.r_par) > 1.0 + 1e-12)
                fresnel_ok = false;
        }
    int nt = 600, np = 600;
    double integral = 0.0;
    for (int i = 0; i < nt; ++i) {
        double th = (i + 0.5) * (M_PI / 2.0) / nt;
        integral += lambertian_pattern(std::cos(th)) * std::sin(th) * (M_PI / 2.0 / nt) *
                    (2.0 * M_PI) / np * np;
    }
    bool lamb_ok = integral >= 0.99 && integral <= 1.01;
    double worst_energy = 0.0;
    for (const auto& [id, m] : table.entries())
        worst_energy = std::max(worst_energy, std::fabs(m.R_sq() + m.S_sq() - 1.0));
    for (double S = 0.0; S <= 1.0; S += 0.05) {
        Material m{"x", 0.0, 2.0, S, 0.0};
        worst_energy = std::max(worst_energy, std::fabs(m.R_sq() + m.S_sq() - 1.0));
    }
    bool energy_ok = worst_energy <= 1e-15;
    r.pass = fresnel_ok && lamb_ok && energy_ok;
    r.detail = fmt("|r|<=1 sweep ok=%d; lambertian integral=%.6f; max |R^2+S^2-1|=%.1e",
                   fresnel_ok ? 1 : 0, integral, worst_energy);
    return r;
}

// --- criteria 5 and 6: direction and amplitude learning ----------------------

void build_plane_dataset(Ctx& ctx) {
    fs::path dir = fs::path(ctx.out) / "plane";
    fs::create_directories(dir);
    auto cloud = oracles::floor_cloud(6.0, 0.08, sub_seed(ctx.seed, "plane"));
    MaterialTable mats;
    mats.add(0, plane_material());
    Scene scene;
    scene.cloud = cloud;
    scene.materials = mats;
    scene.tx = {-1, 0, 1.5};
    scene.rx = {1, 0, 1.2};
    scene.f_hz = 28e9;
    std::string scene_path = fs::absolute(dir / "plane.scene").string();
    save_scene(scene, scene_path, "plane.pts", "plane.mat");

    Rng rng(sub_seed(ctx.seed, "plane_links"));
    std::vector<LinkSpec> links;
    for (int i = 0; i < 2400; ++i) {
        LinkSpec l;
        l.id = "p" + std::to_string(i);
        l.scene_path = scene_path;
        auto draw = [&] {
            return Vec3{rng.uniform(-4.5, 4.5), rng.uniform(-4.5, 4.5), rng.uniform(0.6, 2.5)};
        };
        l.tx = draw();
        do {
            l.rx = draw();
        } while (distance(l.tx, l.rx) < 1.0);
        links.push_back(l);
    }
    TraceConfig cfg;
    cfg.n_rays = 4000;
    cfg.max_bounces = 1;
    cfg.n_scatter = 8;
    cfg.seed = ctx.seed;
    cfg.threads = ctx.threads;
    ctx.plane_ds_dir = (dir / "dataset").string();
    gen_dataset(links, cfg, ctx.plane_ds_dir, ctx.seed);
}

std::pair<CriterionResult, CriterionResult> c5_c6_learning(Ctx& ctx) {
    CriterionResult r5{5, "direction_learning"};
    CriterionResult r6{6, "amplitude_learning"};
    auto t0 = std::chrono::steady_clock::now();

    build_plane_dataset(ctx);
    auto manifest = load_manifest(ctx.plane_ds_dir);
    SurrogateConfig cfg = SurrogateConfig::desk();
    cfg.seed = ctx.seed;
    cfg.threads = ctx.threads;
    ctx.plane_det_train = build_training_set(manifest, ctx.plane_ds_dir, "train",
                                             Mechanism::deterministic, cfg);
    ctx.plane_det_test = build_training_set(manifest, ctx.plane_ds_dir, "test",
                                            Mechanism::deterministic, cfg);
    ctx.plane_non_train = build_training_set(manifest, ctx.plane_ds_dir, "train",
                                             Mechanism::non_deterministic, cfg);

    ctx.plane_det = SurrogateModel::init(cfg, Mechanism::deterministic);
    fs::path mdir = fs::path(ctx.out) / "models";
    fs::create_directories(mdir);
    train_model(ctx.plane_det, ctx.plane_det_train,
                (mdir / "plane_det_training_log.csv").string(), 200);
    ctx.plane_trained = true;
    save_model(ctx.plane_det, (mdir / "plane_det.ckpt").string());

    auto ev = evaluate_held_out(ctx.plane_det, ctx.plane_det_test);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    r5.pass = ev.mean_angular_error_deg <= 5.0 && elapsed < 1800.0;
    r5.detail = fmt("train=%zu held-out=%zu mean angular error=%.3f deg (threshold 5)",
                    ctx.plane_det_train.size(), ctx.plane_det_test.size(),
                    ev.mean_angular_error_deg);
    r5.seconds = elapsed;

    SurrogateConfig defaults;
    bool weights_ok = defaults.lambda1_det == 1.0 && defaults.lambda2_det == 5.0 &&
                      defaults.lambda1_non == 1.0 && defaults.lambda2_non == 0.001;
    r6.pass = ev.median_power_error_db <= 1.5 && weights_ok;
    r6.detail = fmt("median per-hop power error=%.4f dB (threshold 1.5); "
                    "loss weights det=(1,5) non=(1,0.001) ok=%d",
                    ev.median_power_error_db, weights_ok ? 1 : 0);
    return {r5, r6};
}

// --- criterion 7: rollout fidelity --------------------------------------------

CriterionResult c7_rollout(Ctx& ctx) {
    CriterionResult r{7, "rollout_fidelity"};
    auto t0 = std::chrono::steady_clock::now();
    ctx.suite_dir = (fs::path(ctx.out) / "suite").string();
    auto suite = make_eval_suite(ctx.seed, ctx.suite_dir);
    ctx.links_b = suite.links_b;

    // room-A training dataset
    TraceConfig ds_cfg;
    ds_cfg.n_rays = 30000;
    ds_cfg.max_bounces = 3;
    ds_cfg.n_scatter = 8;
    ds_cfg.seed = ctx.seed;
    ds_cfg.threads = ctx.threads;
    ctx.ds_a_dir = (fs::path(ctx.out) / "ds_a").string();
    gen_dataset(suite.links_a, ds_cfg, ctx.ds_a_dir, ctx.seed);
    auto manifest = load_manifest(ctx.ds_a_dir);

    SurrogateConfig cfg = SurrogateConfig::desk();
    cfg.seed = ctx.seed;
    cfg.threads = ctx.threads;
    auto det_set =
        build_training_set(manifest, ctx.ds_a_dir, "train", Mechanism::deterministic, cfg);
    auto non_set = build_training_set(manifest, ctx.ds_a_dir, "train",
                                      Mechanism::non_deterministic, cfg);
    ctx.room_det = SurrogateModel::init(cfg, Mechanism::deterministic);
    ctx.room_non = SurrogateModel::init(cfg, Mechanism::non_deterministic);
    fs::path mdir = fs::path(ctx.out) / "models";
    fs::create_directories(mdir);
    train_model(ctx.room_det, det_set, (mdir / "room_det_training_log.csv").string(), 200);
    train_model(ctx.room_non, non_set, (mdir / "room_non_training_log.csv").string(), 200);
    ctx.room_trained = true;
    save_model(ctx.room_det, (mdir / "room_det.ckpt").string());
    save_model(ctx.room_non, (mdir / "room_non.ckpt").string());

    // room-B ground truth and rollout
    TraceConfig truth_cfg = ds_cfg;
    truth_cfg.n_rays = 100000;
    TraceConfig roll_cfg;
    roll_cfg.n_rays = 10000;
    roll_cfg.max_bounces = 3;
    roll_cfg.n_scatter = 4;
    roll_cfg.seed = ctx.seed;
    roll_cfg.threads = ctx.threads;

    Scene room_b = load_scene(suite.room_b_scene);
    fs::path truth_dir = fs::path(ctx.out) / "room_b_truth";
    fs::path pred_dir = fs::path(ctx.out) / "room_b_pred";
    fs::create_directories(truth_dir);
    fs::create_directories(pred_dir);
    std::vector<LinkComparison> rows;
    ctx.truth_b.clear();
    for (const auto& link : suite.links_b) {
        Scene s = room_b;
        s.tx = link.tx;
        s.rx = link.rx;
        TraceConfig tc = truth_cfg;
        tc.seed = sub_seed(ctx.seed, "truthB", hash64(link.id));
        auto truth = trace(s, tc);
        save_channel(truth, (truth_dir / (link.id + ".channel.json")).string());
        auto pred = rollout(s, ctx.room_det, ctx.room_non, roll_cfg, nullptr);
        save_channel(pred, (pred_dir / (link.id + ".channel.json")).string());
        rows.push_back(compare_link(link.id, truth, pred));
        ctx.truth_b.push_back(std::move(truth));
    }
    auto summary = summarize(rows);
    write_eval_csv(rows, summary, (fs::path(ctx.out) / "room_b_links.csv").string(),
                   (fs::path(ctx.out) / "room_b_summary.csv").string());
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.pass = summary.pl_rmse_db <= 3.5 && summary.ds_rmse_ns <= 8.0 && rows.size() >= 20 &&
             elapsed < 1800.0;
    r.detail = fmt("links=%zu PL RMSE=%.3f dB (thr 3.5) DS RMSE=%.3f ns (thr 8)", rows.size(),
                   summary.pl_rmse_db, summary.ds_rmse_ns);
    r.seconds = elapsed;
    return r;
}

// --- criterion 8: material ablation trend -------------------------------------

// Path loss with per-hop amplitudes replaced by network predictions;
// geometry (segments, spreading, phase) stays from the trace.
double amp_substituted_pl(const Scene& scene, const ChannelRealization& truth,
                          const SurrogateModel& det, const SurrogateModel& non) {
    nn::NoGradGuard ng;
    double lambda = scene.lambda();
    std::map<std::size_t, std::vector<double>> det_feat, non_feat;
    auto feat_for = [&](const SurrogateModel& model,
                        std::map<std::size_t, std::vector<double>>& cache,
                        std::size_t anchor) -> const std::vector<double>& {
        auto it = cache.find(anchor);
        if (it == cache.end()) {
            Vec3 center = scene.cloud->positions[anchor];
            CropResult cr = crop(*scene.cloud, scene.index, center, model.cfg.crop_radius,
                                 model.cfg.crop_max_points,
                                 sub_seed(model.cfg.seed, "crop", anchor));
            CropPlan plan = build_crop_plan(cr.cloud, model.cfg);
            ModelView view = make_view(model, false);
            BatchPlan bp = stack_plans({&plan}, model.cfg);
            Tensor f = encode_batch(bp, view);
            it = cache.emplace(anchor, std::vector<double>(f.data(), f.data() + f.size()))
                     .first;
        }
        return it->second;
    };
    double total_power = 0.0;
    if (truth.los) total_power += truth.los->gain.a * truth.los->gain.a;
    for (const auto& path : truth.nlos) {
        std::vector<ChainHop> hops;
        for (const auto& h : path.hops) {
            std::size_t anchor = h.kind == HopKind::diffract
                                     ? scene.index.nearest(h.position)
                                     : h.point_id;
            const SurrogateModel& model =
                h.kind == HopKind::reflect ? det : non;
            const auto& feat = feat_for(model, h.kind == HopKind::reflect ? det_feat : non_feat,
                                        anchor);
            PolAmp amp = predict_amplitude(feat, h.dir_in, h.dir_out,
                                           scene.materials.get(h.material_id), model);
            hops.push_back({amp * propagation_factor(h.seg_len_in, lambda), h.seg_len_in});
        }
        hops.push_back({PolAmp::identity() * propagation_factor(path.final_seg_len, lambda),
                        path.final_seg_len});
        PathGain g = chain(hops, lambda);
        total_power += g.a * g.a;
    }
    return -10.0 * std::log10(total_power);
}

CriterionResult c8_ablation(Ctx& ctx) {
    CriterionResult r{8, "material_ablation_trend"};
    auto manifest = load_manifest(ctx.ds_a_dir);
    Scene room_b = load_scene((fs::path(ctx.suite_dir) / "room_b.scene").string());

    bool trend_ok = true;
    std::string detail;
    for (int k = 0; k < 3; ++k) {
        std::uint64_t seed_k = sub_seed(ctx.seed, "ablation", k);
        double rmse[2];  // [with material, without]
        for (int variant = 0; variant < 2; ++variant) {
            SurrogateConfig cfg = SurrogateConfig::desk();
            cfg.seed = seed_k;
            cfg.threads = ctx.threads;
            cfg.use_material = variant == 0;
            auto det_set = build_training_set(manifest, ctx.ds_a_dir, "train",
                                              Mechanism::deterministic, cfg);
            auto non_set = build_training_set(manifest, ctx.ds_a_dir, "train",
                                              Mechanism::non_deterministic, cfg);
            auto det = SurrogateModel::init(cfg, Mechanism::deterministic);
            auto non = SurrogateModel::init(cfg, Mechanism::non_deterministic);
            train_model(det, det_set, "", 60);
            train_model(non, non_set, "", 60);
            double sq = 0.0;
            for (std::size_t i = 0; i < ctx.links_b.size(); ++i) {
                Scene s = room_b;
                s.tx = ctx.links_b[i].tx;
                s.rx = ctx.links_b[i].rx;
                double pl_true = path_loss_db(ctx.truth_b[i]);
                double pl_pred = amp_substituted_pl(s, ctx.truth_b[i], det, non);
                sq += (pl_pred - pl_true) * (pl_pred - pl_true);
            }
            rmse[variant] = std::sqrt(sq / static_cast<double>(ctx.links_b.size()));
        }
        trend_ok = trend_ok && rmse[0] < rmse[1];
        detail += fmt("seed%d: mat=%.3f nomat=%.3f dB; ", k, rmse[0], rmse[1]);
    }
    r.pass = trend_ok;
    r.detail = detail + (trend_ok ? "material input reduces PL RMSE on every seed"
                                  : "trend violated");
    return r;
}

// --- criterion 9: determinism --------------------------------------------------

CriterionResult c9_determinism(Ctx& ctx) {
    CriterionResult r{9, "determinism"};
    // traced outputs identical across thread counts, byte for byte
    auto cloud = oracles::box_cloud({0, 0, 0}, {6, 4, 3}, 0.1, sub_seed(ctx.seed, "c9"));
    Material wall{"wall", 0.3, 5.0, 0.4, 0.1};
    MaterialTable mats;
    mats.add(0, wall);
    Scene s = make_scene(cloud, {}, mats, {1.5, 1.0, 1.4}, {4.5, 2.8, 1.7}, 28e9);
    TraceConfig cfg;
    cfg.n_rays = 30000;
    cfg.seed = ctx.seed;
    fs::path dir = fs::path(ctx.out) / "determinism";
    fs::create_directories(dir);
    cfg.threads = 1;
    save_channel(trace(s, cfg), (dir / "t1.json").string());
    cfg.threads = std::max(2, ctx.threads);
    save_channel(trace(s, cfg), (dir / "tN.json").string());
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    bool trace_equal = slurp(dir / "t1.json") == slurp(dir / "tN.json");

    // deterministic analytic criteria render to identical report fragments
    Ctx sub = ctx;
    auto a1 = c1_friis(sub), a2 = c1_friis(sub);
    auto b1 = c4_energy(sub), b2 = c4_energy(sub);
    auto i1 = c2_image_method(sub), i2 = c2_image_method(sub);
    bool report_equal = a1.detail == a2.detail && b1.detail == b2.detail &&
                        i1.detail == i2.detail && a1.pass == a2.pass && i1.pass == i2.pass;

    r.pass = trace_equal && report_equal;
    r.detail = fmt("trace bytes equal across threads=%d; repeated criteria identical=%d",
                   trace_equal ? 1 : 0, report_equal ? 1 : 0);
    return r;
}

// --- criterion 10: loss-surface sanity -----------------------------------------

CriterionResult c10_overfit(Ctx& ctx) {
    CriterionResult r{10, "single_sample_overfit"};
    SurrogateConfig cfg = SurrogateConfig::desk();
    cfg.seed = ctx.seed;
    cfg.threads = ctx.threads;
    double mins[2] = {1e300, 1e300};
    const TrainingSet* sets[2] = {&ctx.plane_det_train, &ctx.plane_non_train};
    for (int m = 0; m < 2; ++m) {
        const TrainingSet& src = *sets[m];
        if (src.size() == 0) {
            r.pass = false;
            r.detail = "no sample available for one mechanism";
            return r;
        }
        TrainingSet one;
        one.samples = {src.samples[0]};
        one.plans = {src.plans[src.plan_of_sample[0]]};
        one.plan_of_sample = {0};
        one.mat_of_sample = {src.mat_of_sample[0]};
        auto model = SurrogateModel::init(
            cfg, m == 0 ? Mechanism::deterministic : Mechanism::non_deterministic);
        auto res = train_model(model, one, "", 500, 3e-3);
        for (const auto& e : res.curve) mins[m] = std::min(mins[m], e.total_loss);
    }
    r.pass = mins[0] < 1e-4 && mins[1] < 1e-4;
    r.detail = fmt("min total loss: deterministic=%.2e non_deterministic=%.2e (threshold 1e-4)",
                   mins[0], mins[1]);
    return r;
}

}  // namespace

AcceptReport run_acceptance(const std::string& level, const std::string& out_dir, int threads,
                            std::uint64_t seed) {
    fs::create_directories(out_dir);
    Ctx ctx;
    ctx.out = out_dir;
    ctx.threads = threads;
    ctx.seed = seed;
    AcceptReport report;
    report.level = level;
    report.seed = seed;
    bool full = level == "full";

    auto run = [&](auto&& fn, bool enabled, int id, const char* name) {
        CriterionResult res;
        if (!enabled) {
            res.id = id;
            res.name = name;
            res.skipped = true;
            res.detail = "skipped at level " + level;
        } else {
            auto t0 = std::chrono::steady_clock::now();
            res = fn();
            if (res.seconds == 0.0)
                res.seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
            report.all_pass = report.all_pass && res.pass;
        }
        std::cout << (res.skipped ? "SKIP" : (res.pass ? "PASS" : "FAIL")) << " " << res.id
                  << " " << res.name;
        if (!res.skipped) std::cout << ": " << res.detail << " [" << fmt("%.1f", res.seconds)
                                    << "s]";
        std::cout << "\n" << std::flush;
        report.results.push_back(std::move(res));
    };

    run([&] { return c1_friis(ctx); }, true, 1, "friis_exactness");
    run([&] { return c2_image_method(ctx); }, true, 2, "image_method_equivalence");
    run([&] { return c3_gradients(ctx); }, true, 3, "gradient_suite");
    run([&] { return c4_energy(ctx); }, true, 4, "energy_normalization");

    if (full) {
        auto [r5, r6] = c5_c6_learning(ctx);
        report.all_pass = report.all_pass && r5.pass && r6.pass;
        for (auto* res : {&r5, &r6})
            std::cout << (res->pass ? "PASS" : "FAIL") << " " << res->id << " " << res->name
                      << ": " << res->detail << " [" << fmt("%.1f", res->seconds) << "s]\n"
                      << std::flush;
        report.results.push_back(r5);
        report.results.push_back(r6);
    } else {
        run([&] { return CriterionResult{}; }, false, 5, "direction_learning");
        run([&] { return CriterionResult{}; }, false, 6, "amplitude_learning");
    }
    run([&] { return c7_rollout(ctx); }, full, 7, "rollout_fidelity");
    run([&] { return c8_ablation(ctx); }, full, 8, "material_ablation_trend");
    run([&] { return c9_determinism(ctx); }, true, 9, "determinism");
    run([&] { return c10_overfit(ctx); }, full, 10, "single_sample_overfit");
    return report;
}

std::string render_report(const AcceptReport& report) {
    nlohmann::json j;
    j["version"] = 1;
    j["level"] = report.level;
    j["seed"] = report.seed;
    j["all_pass"] = report.all_pass;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : report.results) {
        nlohmann::json e;
        e["id"] = r.id;
        e["name"] = r.name;
        e["pass"] = r.pass;
        e["skipped"] = r.skipped;
        e["detail"] = r.detail;
        arr.push_back(e);
    }
    j["criteria"] = arr;
    return j.dump(1) + "\n";
}

void write_report(const AcceptReport& report, const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw InputError("cannot write report: " + path);
    out << render_report(report);
}

}  // namespace pcrt
