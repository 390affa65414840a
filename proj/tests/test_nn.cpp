// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pcrt/cloud.hpp"
#include "pcrt/optim.hpp"
#include "pcrt/rng.hpp"
#include "pcrt/tensor.hpp"

using namespace pcrt;
using namespace pcrt::nn;

namespace {

Tensor randn(std::vector<std::size_t> shape, Rng& rng, bool rg = true, double s = 1.0) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> data(n);
    for (auto& v : data) v = s * rng.normal();
    return Tensor::from(std::move(shape), std::move(data), rg);
}

AttentionParams make_attn(std::size_t D, Rng& rng) {
    AttentionParams p;
    p.Wq = randn({D, D}, rng, true, 0.3);
    p.bq = randn({D}, rng, true, 0.1);
    p.Wk = randn({D, D}, rng, true, 0.3);
    p.bk = randn({D}, rng, true, 0.1);
    p.Wv = randn({D, D}, rng, true, 0.3);
    p.bv = randn({D}, rng, true, 0.1);
    p.Wo = randn({D, D}, rng, true, 0.3);
    p.bo = randn({D}, rng, true, 0.1);
    return p;
}

EncoderLayerParams make_layer(std::size_t D, Rng& rng) {
    EncoderLayerParams p;
    p.ln1_g = Tensor::from({D}, std::vector<double>(D, 1.0), true);
    p.ln1_b = Tensor::zeros({D}, true);
    p.ln2_g = Tensor::from({D}, std::vector<double>(D, 1.0), true);
    p.ln2_b = Tensor::zeros({D}, true);
    p.attn = make_attn(D, rng);
    p.W_ff1 = randn({D, 2 * D}, rng, true, 0.3);
    p.b_ff1 = randn({2 * D}, rng, true, 0.1);
    p.W_ff2 = randn({2 * D, D}, rng, true, 0.3);
    p.b_ff2 = randn({D}, rng, true, 0.1);
    return p;
}

std::vector<Tensor> attn_tensors(AttentionParams& p) {
    return {p.Wq, p.bq, p.Wk, p.bk, p.Wv, p.bv, p.Wo, p.bo};
}

std::vector<Tensor> layer_tensors(EncoderLayerParams& p) {
    auto v = attn_tensors(p.attn);
    v.insert(v.end(), {p.ln1_g, p.ln1_b, p.ln2_g, p.ln2_b, p.W_ff1, p.b_ff1, p.W_ff2, p.b_ff2});
    return v;
}

}  // namespace

TEST_CASE("relu anchors; layer_norm of a constant vector is the bias") {
    auto x = Tensor::from({2}, {-1.0, 2.0});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);

    auto c = Tensor::from({1, 4}, {3.0, 3.0, 3.0, 3.0});
    auto g = Tensor::from({4}, std::vector<double>(4, 1.0));
    auto b = Tensor::zeros({4});
    auto ln = layer_norm(c, g, b);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(ln.data()[i]) < 1e-9);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(1);
    auto x = randn({5, 7}, rng, false);
    auto y = softmax(x);
    for (int r = 0; r < 5; ++r) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
        CHECK(std::fabs(s - 1.0) < 1e-9);
    }
}

TEST_CASE("shape mismatches name both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({3, 3});
    CHECK_THROWS_WITH_AS(add(a, b), "add: incompatible shapes (2,3) and (3,3)", ShapeError);
}

TEST_CASE("gradients: every primitive op passes finite differences") {
    Rng rng(2);
    double tol = 1e-4;

    SUBCASE("add/sub/mul/scale") {
        auto a = randn({3, 4}, rng);
        auto b = randn({3, 4}, rng);
        auto rep = grad_check(
            [&] { return mean_all(mul(add(a, b), sub(a, scale(b, 0.7)))); }, {a, b});
        CAPTURE(rep.max_rel_err);
        CHECK(rep.pass);
    }
    SUBCASE("matmul") {
        auto a = randn({4, 6}, rng);
        auto b = randn({6, 5}, rng);
        auto rep = grad_check([&] { return mean_all(matmul(a, b)); }, {a, b});
        CHECK(rep.pass);
    }
    SUBCASE("linear+relu") {
        auto x = randn({5, 4}, rng);
        auto W = randn({4, 3}, rng);
        auto b = randn({3}, rng);
        auto rep = grad_check([&] { return mean_all(relu(linear(x, W, b))); }, {x, W, b});
        CHECK(rep.pass);
    }
    SUBCASE("layer_norm") {
        auto x = randn({4, 8}, rng);
        auto g = randn({8}, rng);
        auto b = randn({8}, rng);
        auto rep =
            grad_check([&] { return mean_all(mul(layer_norm(x, g, b), layer_norm(x, g, b))); },
                       {x, g, b});
        CHECK(rep.max_rel_err < tol);
    }
    SUBCASE("softmax") {
        auto x = randn({3, 6}, rng);
        auto w = randn({3, 6}, rng, false);
        auto rep = grad_check([&] { return mean_all(mul(softmax(x), w)); }, {x});
        CHECK(rep.pass);
    }
    SUBCASE("max_axis 3d middle") {
        auto x = randn({4, 5, 3}, rng);
        auto rep = grad_check([&] { return mean_all(max_axis(x, 1)); }, {x});
        CHECK(rep.pass);
    }
    SUBCASE("concat/slice/transpose/reshape/gather") {
        auto a = randn({3, 2}, rng);
        auto b = randn({3, 4}, rng);
        std::vector<std::uint32_t> idx = {2, 0, 1, 2};
        auto rep = grad_check(
            [&] {
                auto c = concat_cols({a, b});
                auto s = slice_cols(c, 1, 5);
                auto t = transpose2d(s);
                auto r = reshape(t, {2, 6});
                auto gr = gather_rows(transpose2d(r), idx);
                return mean_all(mul(gr, gr));
            },
            {a, b});
        CHECK(rep.pass);
    }
    SUBCASE("normalize_rows") {
        auto x = randn({4, 3}, rng);
        auto w = randn({4, 3}, rng, false);
        auto rep = grad_check([&] { return mean_all(mul(normalize_rows(x), w)); }, {x});
        CHECK(rep.pass);
    }
    SUBCASE("posenc") {
        auto d = randn({3, 3}, rng, true, 0.3);
        auto w = randn({3, 18}, rng, false);
        auto rep = grad_check([&] { return mean_all(mul(posenc(d, 3), w)); }, {d});
        CHECK(rep.pass);
    }
    SUBCASE("losses") {
        auto p = randn({5, 3}, rng);
        auto t = randn({5, 3}, rng, false);
        auto rep = grad_check([&] { return cosine_direction_loss(p, t); }, {p});
        CHECK(rep.pass);

        auto p8 = randn({4, 8}, rng);
        auto t8 = randn({4, 8}, rng, false);
        rep = grad_check([&] { return mse_loss(p8, t8); }, {p8});
        CHECK(rep.pass);

        rep = grad_check([&] { return log_power_loss(p8, t8, nullptr); }, {p8});
        CHECK(rep.pass);
    }
}

TEST_CASE("gradients: sa_group_reduce matches finite differences") {
    Rng rng(3);
    std::size_t G = 4, K = 5, CF = 6, CO = 7;
    auto rel = std::make_shared<std::vector<double>>(G * K * 3);
    for (auto& v : *rel) v = rng.normal();
    auto idx = std::make_shared<std::vector<std::uint32_t>>(G * K);
    for (auto& v : *idx) v = static_cast<std::uint32_t>(rng.uniform_index(10));
    auto counts = std::make_shared<std::vector<std::uint32_t>>(G);
    (*counts)[0] = 5;
    (*counts)[1] = 3;
    (*counts)[2] = 1;
    (*counts)[3] = 4;
    auto feat = randn({10, CF}, rng);
    auto W = randn({3 + CF, CO}, rng);
    auto b = randn({CO}, rng);
    auto w2 = randn({G, CO}, rng, false);
    auto rep = grad_check(
        [&] { return mean_all(mul(sa_group_reduce(feat, rel, idx, counts, G, K, W, b), w2)); },
        {feat, W, b});
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);

    // no-feature variant (level 1)
    auto W1 = randn({3, CO}, rng);
    rep = grad_check(
        [&] {
            return mean_all(mul(sa_group_reduce(Tensor(), rel, idx, counts, G, K, W1, b), w2));
        },
        {W1, b});
    CHECK(rep.pass);
}

TEST_CASE("sa_group_reduce equals unfused max(relu(linear)) rows") {
    Rng rng(4);
    std::size_t G = 3, K = 4, CO = 5;
    auto rel = std::make_shared<std::vector<double>>(G * K * 3);
    for (auto& v : *rel) v = rng.normal();
    auto idx = std::make_shared<std::vector<std::uint32_t>>(G * K, 0);
    auto counts = std::make_shared<std::vector<std::uint32_t>>(G, static_cast<std::uint32_t>(K));
    auto W = randn({3, CO}, rng);
    auto b = randn({CO}, rng);
    auto fused = sa_group_reduce(Tensor(), rel, idx, counts, G, K, W, b);
    auto rows = Tensor::from({G * K, 3}, *rel);
    auto ref = max_axis(reshape(relu(linear(rows, W, b)), {G, K, CO}), 1);
    for (std::size_t i = 0; i < G * CO; ++i)
        CHECK(fused.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention: single token equals value/output projection path") {
    Rng rng(5);
    std::size_t D = 8;
    auto p = make_attn(D, rng);
    auto x = randn({1, D}, rng);
    auto full = self_attention(x, p, 2);
    auto vo = linear(linear(x, p.Wv, p.bv), p.Wo, p.bo);
    for (std::size_t i = 0; i < D; ++i)
        CHECK(full.data()[i] == doctest::Approx(vo.data()[i]).epsilon(1e-12));
}

TEST_CASE("attention: permuting sequence positions permutes outputs") {
    Rng rng(6);
    std::size_t D = 8, S = 5;
    auto p = make_attn(D, rng);
    auto x = randn({S, D}, rng, false);
    auto y = self_attention(x, p, 2);
    std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    std::vector<double> xp(S * D);
    for (std::size_t r = 0; r < S; ++r)
        for (std::size_t c = 0; c < D; ++c) xp[r * D + c] = x.data()[perm[r] * D + c];
    auto y2 = self_attention(Tensor::from({S, D}, xp), p, 2);
    for (std::size_t r = 0; r < S; ++r)
        for (std::size_t c = 0; c < D; ++c)
            CHECK(y2.data()[r * D + c] ==
                  doctest::Approx(y.data()[perm[r] * D + c]).epsilon(1e-10));
}

TEST_CASE("attention: indivisible heads rejected; gradient check") {
    Rng rng(7);
    std::size_t D = 6;
    auto p = make_attn(D, rng);
    auto x = randn({3, D}, rng);
    CHECK_THROWS_AS(self_attention(x, p, 4), ShapeError);

    auto inputs = attn_tensors(p);
    inputs.push_back(x);
    auto rep = grad_check([&] { return mean_all(self_attention(x, p, 2)); }, inputs);
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("encoder layer: gradient check and row-sequence equivalence") {
    Rng rng(8);
    std::size_t D = 8;
    auto p = make_layer(D, rng);
    auto x = randn({1, D}, rng);
    auto a = encoder_layer(x, p, 2, false);
    auto b = encoder_layer(x, p, 2, true);
    for (std::size_t i = 0; i < D; ++i)
        CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));

    auto xb = randn({3, D}, rng);
    auto inputs = layer_tensors(p);
    inputs.push_back(xb);
    auto rep = grad_check([&] { return mean_all(encoder_layer(xb, p, 2, true)); }, inputs);
    CAPTURE(rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("grad_check: corrupted backward fails (negative control)") {
    Rng rng(9);
    auto x = randn({3, 3}, rng);
    auto rep = grad_check(
        [&] {
            auto y = mean_all(mul(x, x));
            // corrupt: replace backward with one that drops the factor of 2
            auto* n = y.node();
            n->backward_fn = [](Tensor::Node& self) {
                auto& g = self.parents[0].grad();
                const double* px = self.parents[0].data();
                for (std::size_t i = 0; i < g.size(); ++i)
                    g[i] += self.grad[0] * px[i] / 9.0;
            };
            return y;
        },
        {x});
    CHECK_FALSE(rep.pass);
}

TEST_CASE("loss value anchors") {
    auto a = Tensor::from({1, 3}, {1, 0, 0});
    auto b = Tensor::from({1, 3}, {0, 1, 0});
    auto c = Tensor::from({1, 3}, {-1, 0, 0});
    CHECK(cosine_direction_loss(a, a).value() == doctest::Approx(0.0));
    CHECK(cosine_direction_loss(a, b).value() == doctest::Approx(1.0));
    CHECK(cosine_direction_loss(a, c).value() == doctest::Approx(2.0));

    auto p = Tensor::from({1, 2}, {std::sqrt(2.0), 0.0});
    auto t = Tensor::from({1, 2}, {1.0, 0.0});
    double expect = std::pow(10.0 * std::log10(2.0), 2);
    CHECK(log_power_loss(p, t, nullptr).value() == doctest::Approx(expect).epsilon(1e-12));

    auto t0 = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 0.0});
    auto p0 = Tensor::from({2, 2}, {1.0, 0.0, 3.0, 0.0});
    std::size_t excl = 0;
    CHECK(log_power_loss(p0, t0, &excl).value() == doctest::Approx(0.0));
    CHECK(excl == 1);

    auto p8 = Tensor::from({1, 8}, {0.1, 0, 0, 0, 0, 0, 0, 0});
    auto t8 = Tensor::zeros({1, 8});
    CHECK(mse_loss(p8, t8).value() == doctest::Approx(0.01 / 8.0));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore store;
    Rng rng(10);
    auto w = store.add("w", {3, 3}, rng);
    std::vector<double> before(w.data(), w.data() + w.size());
    store.zero_grad();
    AdamConfig cfg;
    adam_step(store, cfg);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w.data()[i] == before[i]);
}

TEST_CASE("adam: descent on w^2 and convergence on a 2-D quadratic") {
    ParamStore store;
    store.add_data("w", {2}, {1.0, -1.5});
    auto w = store.get("w");
    AdamConfig cfg;
    cfg.lr = 0.05;
    double first = 0.0;
    for (int it = 0; it < 400; ++it) {
        store.zero_grad();
        auto loss = mean_all(mul(w, w));
        if (it == 0) first = loss.value();
        loss.backward();
        adam_step(store, cfg);
    }
    double n2 = w.data()[0] * w.data()[0] + w.data()[1] * w.data()[1];
    CHECK(std::sqrt(n2) < 1e-3);
    CHECK(first > n2);
}

TEST_CASE("adam: missing gradients are an error") {
    ParamStore store;
    store.add_data("w", {2}, {1.0, 2.0});
    AdamConfig cfg;
    CHECK_THROWS_AS(adam_step(store, cfg), pcrt::InputError);
}

TEST_CASE("lr schedule: 0.8 factor every decay interval") {
    AdamConfig cfg;
    cfg.lr = 1e-4;
    cfg.weight_decay = 0.8;
    cfg.decay_epochs = 100;
    CHECK(scheduled_lr(cfg, 0) == doctest::Approx(1e-4));
    CHECK(scheduled_lr(cfg, 99) == doctest::Approx(1e-4));
    CHECK(scheduled_lr(cfg, 100) == doctest::Approx(0.8e-4));
    CHECK(scheduled_lr(cfg, 250) == doctest::Approx(0.64e-4));
}

TEST_CASE("checkpoint round trip preserves params, moments and config") {
    ParamStore store;
    Rng rng(11);
    store.add("a", {4, 3}, rng);
    store.add("b", {3}, rng);
    store.step = 17;
    for (auto& [name, e] : store.entries())
        for (std::size_t i = 0; i < e.m.size(); ++i) {
            e.m[i] = rng.normal();
            e.v[i] = std::fabs(rng.normal());
        }
    save_checkpoint(store, "tmp_ckpt.bin", "{\"cfg\":1}");
    std::string cfg;
    auto back = load_checkpoint("tmp_ckpt.bin", &cfg);
    CHECK(cfg == "{\"cfg\":1}");
    CHECK(back.step == 17);
    for (auto& [name, e] : store.entries()) {
        auto& f = back.entries().at(name);
        CHECK(f.t.shape() == e.t.shape());
        for (std::size_t i = 0; i < e.t.size(); ++i) {
            CHECK(f.t.data()[i] == e.t.data()[i]);
            CHECK(f.m[i] == e.m[i]);
            CHECK(f.v[i] == e.v[i]);
        }
    }
    std::filesystem::remove("tmp_ckpt.bin");
}

TEST_CASE("forward is bitwise deterministic") {
    Rng rng(12);
    auto x = randn({4, 6}, rng, false);
    auto W = randn({6, 5}, rng, false);
    auto b = randn({5}, rng, false);
    auto y1 = relu(linear(x, W, b));
    auto y2 = relu(linear(x, W, b));
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("no-grad mode produces leaves") {
    Rng rng(13);
    auto x = randn({2, 2}, rng, true);
    NoGradGuard ng;
    auto y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("shared data leaf: same values, private gradient") {
    Rng rng(14);
    auto w = randn({2, 2}, rng, true);
    auto v = w.shared_data_leaf();
    CHECK(v.data() == w.data());
    auto l1 = mean_all(mul(w, w));
    l1.backward();
    auto l2 = mean_all(mul(v, v));
    l2.backward();
    REQUIRE(w.has_grad());
    REQUIRE(v.has_grad());
    for (std::size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == v.grad()[i]);
    // and the buffers are distinct
    CHECK(&w.grad() != &v.grad());
}
