// SPDX-License-Identifier: Apache-2.0
#include "pcrt/surrogate.hpp"

#include <cmath>

#include <json.hpp>

namespace pcrt {

using nn::Tensor;

const char* mechanism_name(Mechanism m) {
    return m == Mechanism::deterministic ? "deterministic" : "non_deterministic";
}

Mechanism mechanism_from_name(const std::string& s) {
    if (s == "deterministic") return Mechanism::deterministic;
    if (s == "non_deterministic") return Mechanism::non_deterministic;
    throw InputError("unknown mechanism: " + s);
}

SurrogateConfig SurrogateConfig::desk() {
    SurrogateConfig c;
    c.sa = {{128, 0.25, 16, 32}, {32, 0.5, 16, 64}, {8, 1.0, 16, 128}};
    c.d_env = 128;
    c.mat_embed = 16;
    c.ffn_mult = 2;
    return c;
}

SurrogateConfig SurrogateConfig::reference() {
    SurrogateConfig c;
    c.sa = {{256, 0.2, 32, 64}, {64, 0.4, 32, 128}, {16, 0.8, 32, 256}};
    c.d_env = 256;
    c.mat_embed = 32;
    c.ffn_mult = 4;
    return c;
}

std::string SurrogateConfig::to_json() const {
    nlohmann::json j;
    nlohmann::json sa_j = nlohmann::json::array();
    for (const auto& l : sa) sa_j.push_back({l.n_prime, l.radius, l.K, l.width});
    j["sa"] = sa_j;
    j["d_env"] = d_env;
    j["crop_radius"] = crop_radius;
    j["crop_max_points"] = crop_max_points;
    j["posenc_K"] = posenc_K;
    j["dir_lift"] = dir_lift;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["ffn_mult"] = ffn_mult;
    j["max_bounces"] = max_bounces;
    j["mat_embed"] = mat_embed;
    j["amp_widths"] = amp_widths;
    j["use_material"] = use_material;
    j["use_normals"] = use_normals;
    j["lr"] = lr;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["batch"] = batch;
    j["epochs"] = epochs;
    j["weight_decay"] = weight_decay;
    j["wd_mode"] = wd_mode;
    j["decay_epochs"] = decay_epochs;
    j["lambda1_det"] = lambda1_det;
    j["lambda2_det"] = lambda2_det;
    j["lambda1_non"] = lambda1_non;
    j["lambda2_non"] = lambda2_non;
    j["seed"] = seed;
    j["n_shards"] = n_shards;
    return j.dump();
}

SurrogateConfig SurrogateConfig::from_json(const std::string& s) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("bad surrogate config json: " + std::string(e.what()));
    }
    SurrogateConfig c;
    c.sa.clear();
    for (const auto& l : j.at("sa"))
        c.sa.push_back({l.at(0), l.at(1), l.at(2), l.at(3)});
    c.d_env = j.at("d_env");
    c.crop_radius = j.at("crop_radius");
    c.crop_max_points = j.at("crop_max_points");
    c.posenc_K = j.at("posenc_K");
    c.dir_lift = j.value("dir_lift", std::size_t(4));
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.ffn_mult = j.at("ffn_mult");
    c.max_bounces = j.at("max_bounces");
    c.mat_embed = j.at("mat_embed");
    c.amp_widths = j.at("amp_widths").get<std::vector<std::size_t>>();
    c.use_material = j.at("use_material");
    c.use_normals = j.at("use_normals");
    c.lr = j.at("lr");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.batch = j.at("batch");
    c.epochs = j.at("epochs");
    c.weight_decay = j.at("weight_decay");
    c.wd_mode = j.at("wd_mode");
    c.decay_epochs = j.at("decay_epochs");
    c.lambda1_det = j.at("lambda1_det");
    c.lambda2_det = j.at("lambda2_det");
    c.lambda1_non = j.at("lambda1_non");
    c.lambda2_non = j.at("lambda2_non");
    c.seed = j.at("seed");
    c.n_shards = j.at("n_shards");
    return c;
}

std::uint64_t SurrogateConfig::config_hash() const { return hash64(to_json()); }

// ---------------------------------------------------------------------------
// crop plans
// ---------------------------------------------------------------------------

namespace {

// fps selection padded by cycling when the set is smaller than n_prime.
std::vector<std::size_t> fps_padded(const std::vector<Vec3>& pts, std::size_t n_prime,
                                    bool* padded) {
    if (pts.size() >= n_prime) return fps(pts, n_prime);
    *padded = true;
    auto sel = fps(pts, pts.size());
    std::size_t base = sel.size();
    for (std::size_t i = base; i < n_prime; ++i) sel.push_back(sel[i % base]);
    return sel;
}

}  // namespace

CropPlan build_crop_plan(const PointCloud& crop, const SurrogateConfig& cfg) {
    if (crop.empty()) throw InputError("build_crop_plan: empty crop");
    CropPlan plan;
    plan.n_points = crop.size();
    if (cfg.use_normals) {
        if (!crop.has_normals()) throw InputError("build_crop_plan: normals requested but absent");
        auto nd = std::make_shared<std::vector<double>>();
        nd->reserve(crop.size() * 3);
        for (std::size_t i = 0; i < crop.size(); ++i) {
            const Vec3& n = crop.normals[i];
            nd->push_back(n.x);
            nd->push_back(n.y);
            nd->push_back(n.z);
        }
        plan.l1_normals = nd;
    }
    const std::vector<Vec3>* pts = &crop.positions;
    std::vector<Vec3> centroids;
    for (const auto& level : cfg.sa) {
        auto sel = fps_padded(*pts, level.n_prime, &plan.padded);
        std::vector<Vec3> cen(sel.size());
        for (std::size_t i = 0; i < sel.size(); ++i) cen[i] = (*pts)[sel[i]];
        GroupedSets g = group(*pts, cen, level.radius, level.K);
        CropPlan::Level lv;
        lv.n_groups = g.n_centroids;
        lv.K = g.group_size;
        lv.idx = std::make_shared<std::vector<std::uint32_t>>(std::move(g.indices));
        lv.counts = std::make_shared<std::vector<std::uint32_t>>(std::move(g.unique_counts));
        auto rel = std::make_shared<std::vector<double>>();
        rel->reserve(g.rel_coords.size() * 3);
        for (const auto& r : g.rel_coords) {
            rel->push_back(r.x);
            rel->push_back(r.y);
            rel->push_back(r.z);
        }
        lv.rel = rel;
        plan.levels.push_back(std::move(lv));
        centroids = std::move(cen);
        pts = &centroids;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

SurrogateModel SurrogateModel::init(const SurrogateConfig& cfg, Mechanism mech) {
    SurrogateModel m;
    m.cfg = cfg;
    m.mechanism = mech;
    Rng rng(sub_seed(cfg.seed, mechanism_name(mech)));
    auto& p = m.params;
    std::size_t prev = cfg.use_normals ? 3 : 0;
    for (std::size_t l = 0; l < cfg.sa.size(); ++l) {
        p.add("enc.sa" + std::to_string(l) + ".W", {3 + prev, cfg.sa[l].width}, rng);
        p.add("enc.sa" + std::to_string(l) + ".b", {cfg.sa[l].width}, rng);
        prev = cfg.sa[l].width;
    }
    p.add("enc.final.W", {prev, cfg.d_env}, rng);
    p.add("enc.final.b", {cfg.d_env}, rng);

    std::size_t D = cfg.d_model();
    if (cfg.dir_lift > 0) {
        p.add("dir.lift.W", {3, cfg.dir_lift}, rng);
        p.add("dir.lift.b", {cfg.dir_lift}, rng);
        p.add("amp.lift.W", {3, cfg.dir_lift}, rng);
        p.add("amp.lift.b", {cfg.dir_lift}, rng);
    }
    p.add("dir.e_b", {static_cast<std::size_t>(cfg.max_bounces), D}, rng);
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string pre = "dir.layer" + std::to_string(l) + ".";
        p.add_const(pre + "ln1_g", {D}, 1.0);
        p.add_const(pre + "ln1_b", {D}, 0.0);
        p.add_const(pre + "ln2_g", {D}, 1.0);
        p.add_const(pre + "ln2_b", {D}, 0.0);
        for (const char* nm : {"Wq", "Wk", "Wv", "Wo"}) p.add(pre + nm, {D, D}, rng);
        for (const char* nm : {"bq", "bk", "bv", "bo"}) p.add(pre + nm, {D}, rng);
        std::size_t H = D * static_cast<std::size_t>(cfg.ffn_mult);
        p.add(pre + "W_ff1", {D, H}, rng);
        p.add(pre + "b_ff1", {H}, rng);
        p.add(pre + "W_ff2", {H, D}, rng);
        p.add(pre + "b_ff2", {D}, rng);
    }
    p.add("dir.head.W", {D, 3}, rng);
    p.add("dir.head.b", {3}, rng);

    std::size_t amp_in = 12 * static_cast<std::size_t>(cfg.posenc_K) + 2 * cfg.dir_lift + cfg.d_env;
    if (cfg.use_material) {
        p.add("amp.mat.W", {4, cfg.mat_embed}, rng);
        p.add("amp.mat.b", {cfg.mat_embed}, rng);
        amp_in += cfg.mat_embed;
    }
    std::size_t prev_w = amp_in;
    for (std::size_t l = 0; l < cfg.amp_widths.size(); ++l) {
        p.add("amp.l" + std::to_string(l) + ".W", {prev_w, cfg.amp_widths[l]}, rng);
        p.add("amp.l" + std::to_string(l) + ".b", {cfg.amp_widths[l]}, rng);
        prev_w = cfg.amp_widths[l];
    }
    return m;
}

ModelView make_view(const SurrogateModel& model, bool shared_data) {
    auto grab = [&](const std::string& name) {
        Tensor t = model.params.get(name);
        return shared_data ? t.shared_data_leaf() : t;
    };
    ModelView v;
    v.cfg = &model.cfg;
    for (std::size_t l = 0; l < model.cfg.sa.size(); ++l) {
        v.enc_W.push_back(grab("enc.sa" + std::to_string(l) + ".W"));
        v.enc_b.push_back(grab("enc.sa" + std::to_string(l) + ".b"));
    }
    v.final_W = grab("enc.final.W");
    v.final_b = grab("enc.final.b");
    if (model.cfg.dir_lift > 0) {
        v.dir_lift_W = grab("dir.lift.W");
        v.dir_lift_b = grab("dir.lift.b");
        v.amp_lift_W = grab("amp.lift.W");
        v.amp_lift_b = grab("amp.lift.b");
    }
    v.e_b = grab("dir.e_b");
    for (int l = 0; l < model.cfg.n_layers; ++l) {
        std::string pre = "dir.layer" + std::to_string(l) + ".";
        nn::EncoderLayerParams lp;
        lp.ln1_g = grab(pre + "ln1_g");
        lp.ln1_b = grab(pre + "ln1_b");
        lp.ln2_g = grab(pre + "ln2_g");
        lp.ln2_b = grab(pre + "ln2_b");
        lp.attn.Wq = grab(pre + "Wq");
        lp.attn.bq = grab(pre + "bq");
        lp.attn.Wk = grab(pre + "Wk");
        lp.attn.bk = grab(pre + "bk");
        lp.attn.Wv = grab(pre + "Wv");
        lp.attn.bv = grab(pre + "bv");
        lp.attn.Wo = grab(pre + "Wo");
        lp.attn.bo = grab(pre + "bo");
        lp.W_ff1 = grab(pre + "W_ff1");
        lp.b_ff1 = grab(pre + "b_ff1");
        lp.W_ff2 = grab(pre + "W_ff2");
        lp.b_ff2 = grab(pre + "b_ff2");
        v.layers.push_back(std::move(lp));
    }
    v.head_W = grab("dir.head.W");
    v.head_b = grab("dir.head.b");
    if (model.cfg.use_material) {
        v.mat_W = grab("amp.mat.W");
        v.mat_b = grab("amp.mat.b");
    }
    for (std::size_t l = 0; l < model.cfg.amp_widths.size(); ++l) {
        v.amp_W.push_back(grab("amp.l" + std::to_string(l) + ".W"));
        v.amp_b.push_back(grab("amp.l" + std::to_string(l) + ".b"));
    }
    return v;
}

std::vector<Tensor> ModelView::all_tensors() const {
    std::vector<Tensor> out;
    for (const auto& t : enc_W) out.push_back(t);
    for (const auto& t : enc_b) out.push_back(t);
    out.push_back(final_W);
    out.push_back(final_b);
    if (dir_lift_W.defined()) {
        out.push_back(dir_lift_W);
        out.push_back(dir_lift_b);
        out.push_back(amp_lift_W);
        out.push_back(amp_lift_b);
    }
    out.push_back(e_b);
    for (const auto& l : layers) {
        out.insert(out.end(), {l.ln1_g, l.ln1_b, l.ln2_g, l.ln2_b, l.attn.Wq, l.attn.bq,
                               l.attn.Wk, l.attn.bk, l.attn.Wv, l.attn.bv, l.attn.Wo,
                               l.attn.bo, l.W_ff1, l.b_ff1, l.W_ff2, l.b_ff2});
    }
    out.push_back(head_W);
    out.push_back(head_b);
    if (mat_W.defined()) {
        out.push_back(mat_W);
        out.push_back(mat_b);
    }
    for (const auto& t : amp_W) out.push_back(t);
    for (const auto& t : amp_b) out.push_back(t);
    return out;
}

// ---------------------------------------------------------------------------
// batched forward passes
// ---------------------------------------------------------------------------

BatchPlan stack_plans(const std::vector<const CropPlan*>& plans, const SurrogateConfig& cfg) {
    BatchPlan bp;
    bp.batch = plans.size();
    std::size_t n_levels = cfg.sa.size();
    bp.levels.resize(n_levels);
    for (std::size_t l = 0; l < n_levels; ++l) {
        auto& out = bp.levels[l];
        out.K = cfg.sa[l].K;
        out.n_groups = 0;
        auto rel = std::make_shared<std::vector<double>>();
        auto idx = std::make_shared<std::vector<std::uint32_t>>();
        auto counts = std::make_shared<std::vector<std::uint32_t>>();
        std::size_t row_offset = 0;
        for (const auto* p : plans) {
            const auto& lv = p->levels[l];
            rel->insert(rel->end(), lv.rel->begin(), lv.rel->end());
            for (auto i : *lv.idx) idx->push_back(i + static_cast<std::uint32_t>(row_offset));
            counts->insert(counts->end(), lv.counts->begin(), lv.counts->end());
            out.n_groups += lv.n_groups;
            row_offset += (l == 0) ? p->n_points : cfg.sa[l - 1].n_prime;
        }
        out.rel = rel;
        out.idx = idx;
        out.counts = counts;
    }
    if (cfg.use_normals) {
        std::vector<double> feat;
        for (const auto* p : plans)
            feat.insert(feat.end(), p->l1_normals->begin(), p->l1_normals->end());
        std::size_t rows = feat.size() / 3;
        bp.l1_feat = Tensor::from({rows, 3}, std::move(feat));
    }
    return bp;
}

Tensor encode_batch(const BatchPlan& bp, const ModelView& v) {
    const SurrogateConfig& cfg = *v.cfg;
    Tensor feat = bp.l1_feat;  // undefined unless normals are used
    for (std::size_t l = 0; l < cfg.sa.size(); ++l) {
        const auto& lv = bp.levels[l];
        feat = nn::sa_group_reduce(feat, lv.rel, lv.idx, lv.counts, lv.n_groups, lv.K,
                                   v.enc_W[l], v.enc_b[l]);
    }
    // global max over each sample's last-level centroids, then the final MLP
    std::size_t last_n = cfg.sa.back().n_prime;
    std::size_t width = cfg.sa.back().width;
    Tensor pooled = nn::max_axis(nn::reshape(feat, {bp.batch, last_n, width}), 1);
    return nn::relu(nn::linear(pooled, v.final_W, v.final_b));
}

Tensor predict_direction_batch(const Tensor& feat, const Tensor& d_in, int bounce_index,
                               const ModelView& v) {
    const SurrogateConfig& cfg = *v.cfg;
    if (bounce_index < 0 || bounce_index >= cfg.max_bounces)
        bounce_index = cfg.max_bounces - 1;  // deeper bounces share the last embedding
    Tensor emb = nn::posenc(d_in, cfg.posenc_K);
    if (cfg.dir_lift > 0)
        emb = nn::concat_cols({nn::linear(d_in, v.dir_lift_W, v.dir_lift_b), emb});
    Tensor z = nn::concat_cols({emb, feat});
    std::vector<std::uint32_t> rows(z.dim(0), static_cast<std::uint32_t>(bounce_index));
    z = nn::add(z, nn::gather_rows(v.e_b, rows));
    for (const auto& layer : v.layers)
        z = nn::encoder_layer(z, layer, cfg.n_heads, /*seq_as_rows=*/true);
    return nn::normalize_rows(nn::linear(z, v.head_W, v.head_b));
}

Tensor predict_amplitude_batch(const Tensor& feat, const Tensor& d_in, const Tensor& d_out,
                               const Tensor& mat_params, const ModelView& v) {
    const SurrogateConfig& cfg = *v.cfg;
    std::vector<Tensor> parts;
    if (cfg.dir_lift > 0) {
        parts.push_back(nn::linear(d_in, v.amp_lift_W, v.amp_lift_b));
        parts.push_back(nn::linear(d_out, v.amp_lift_W, v.amp_lift_b));
    }
    parts.push_back(nn::posenc(d_in, cfg.posenc_K));
    parts.push_back(nn::posenc(d_out, cfg.posenc_K));
    parts.push_back(feat);
    if (cfg.use_material) parts.push_back(nn::linear(mat_params, v.mat_W, v.mat_b));
    Tensor x = nn::concat_cols(parts);
    for (std::size_t l = 0; l < v.amp_W.size(); ++l) {
        x = nn::linear(x, v.amp_W[l], v.amp_b[l]);
        if (l + 1 < v.amp_W.size()) x = nn::relu(x);
    }
    return x;
}

// ---------------------------------------------------------------------------
// single-sample wrappers
// ---------------------------------------------------------------------------

std::vector<double> encode_scene(const PointCloud& crop, const SurrogateModel& model) {
    nn::NoGradGuard ng;
    CropPlan plan = build_crop_plan(crop, model.cfg);
    ModelView v = make_view(model, false);
    BatchPlan bp = stack_plans({&plan}, model.cfg);
    Tensor f = encode_batch(bp, v);
    return {f.data(), f.data() + f.size()};
}

Vec3 predict_direction(const std::vector<double>& feat, const Vec3& d_in,
                       const SurrogateModel& model, int bounce_index) {
    nn::NoGradGuard ng;
    ModelView v = make_view(model, false);
    Tensor f = Tensor::from({1, feat.size()}, feat);
    Tensor d = Tensor::from({1, 3}, {d_in.x, d_in.y, d_in.z});
    Tensor out = predict_direction_batch(f, d, bounce_index, v);
    return {out.data()[0], out.data()[1], out.data()[2]};
}

PolAmp predict_amplitude(const std::vector<double>& feat, const Vec3& d_in, const Vec3& d_out,
                         const Material& mat, const SurrogateModel& model) {
    nn::NoGradGuard ng;
    ModelView v = make_view(model, false);
    Tensor f = Tensor::from({1, feat.size()}, feat);
    Tensor di = Tensor::from({1, 3}, {d_in.x, d_in.y, d_in.z});
    Tensor dn = Tensor::from({1, 3}, {d_out.x, d_out.y, d_out.z});
    auto mr = material_row(mat);
    Tensor mt = Tensor::from({1, 4}, {mr[0], mr[1], mr[2], mr[3]});
    Tensor out = predict_amplitude_batch(f, di, dn, mt, v);
    std::array<double, 8> r;
    std::copy(out.data(), out.data() + 8, r.begin());
    return amp_from_reals(r);
}

std::array<double, 8> amp_to_reals(const PolAmp& a) {
    std::array<double, 8> r;
    for (int i = 0; i < 4; ++i) {
        r[2 * i] = a.m[i].real();
        r[2 * i + 1] = a.m[i].imag();
    }
    return r;
}

PolAmp amp_from_reals(const std::array<double, 8>& r) {
    PolAmp a;
    for (int i = 0; i < 4; ++i) a.m[i] = cplx(r[2 * i], r[2 * i + 1]);
    return a;
}

std::array<double, 4> material_row(const Material& m) {
    // sigma compressed to a bounded range so metals do not swamp the input
    return {std::log10(1.0 + m.sigma), m.eps_r, m.S, m.K_x};
}

std::pair<double, double> loss_weights(const SurrogateConfig& cfg, Mechanism m) {
    return m == Mechanism::deterministic
               ? std::make_pair(cfg.lambda1_det, cfg.lambda2_det)
               : std::make_pair(cfg.lambda1_non, cfg.lambda2_non);
}

void save_model(const SurrogateModel& model, const std::string& path) {
    nlohmann::json meta;
    meta["config"] = model.cfg.to_json();
    meta["mechanism"] = mechanism_name(model.mechanism);
    nn::save_checkpoint(model.params, path, meta.dump());
}

SurrogateModel load_model(const std::string& path) {
    std::string meta_s;
    nn::ParamStore store = nn::load_checkpoint(path, &meta_s);
    nlohmann::json meta = nlohmann::json::parse(meta_s);
    SurrogateModel m;
    m.cfg = SurrogateConfig::from_json(meta.at("config"));
    m.mechanism = mechanism_from_name(meta.at("mechanism"));
    m.params = std::move(store);
    return m;
}

}  // namespace pcrt
