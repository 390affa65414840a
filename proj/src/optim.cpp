// SPDX-License-Identifier: Apache-2.0
#include "pcrt/optim.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "pcrt/cloud.hpp"

namespace pcrt::nn {

Tensor ParamStore::add(const std::string& name, std::vector<std::size_t> shape, Rng& rng) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    double fan_in = static_cast<double>(shape.size() >= 2 ? shape[0] : 1);
    double bound = 1.0 / std::sqrt(fan_in);
    std::vector<double> data(n);
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return add_data(name, std::move(shape), std::move(data));
}

Tensor ParamStore::add_const(const std::string& name, std::vector<std::size_t> shape,
                             double value) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return add_data(name, std::move(shape), std::vector<double>(n, value));
}

Tensor ParamStore::add_data(const std::string& name, std::vector<std::size_t> shape,
                            std::vector<double> data) {
    if (entries_.count(name)) throw InputError("duplicate parameter name: " + name);
    Entry e;
    e.t = Tensor::from(std::move(shape), std::move(data), true);
    e.m.assign(e.t.size(), 0.0);
    e.v.assign(e.t.size(), 0.0);
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown parameter: " + name);
    return it->second.t;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) e.t.zero_grad();
}

std::size_t ParamStore::n_params() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.t.size();
    return n;
}

void adam_step(ParamStore& store, const AdamConfig& cfg) {
    store.step += 1;
    double t = static_cast<double>(store.step);
    double bc1 = 1.0 - std::pow(cfg.beta1, t);
    double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (auto& [name, e] : store.entries()) {
        if (!e.t.has_grad()) throw InputError("adam_step: missing gradients for " + name);
        const auto& g = e.t.grad();
        double* p = e.t.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
            e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            double mhat = e.m[i] / bc1;
            double vhat = e.v[i] / bc2;
            p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (cfg.mode == WeightDecayMode::l2_decoupled)
                p[i] -= cfg.lr * cfg.weight_decay * p[i];
        }
    }
}

double scheduled_lr(const AdamConfig& cfg, int epoch) {
    if (cfg.mode != WeightDecayMode::lr_schedule || cfg.decay_epochs <= 0) return cfg.lr;
    int k = epoch / cfg.decay_epochs;
    return cfg.lr * std::pow(cfg.weight_decay, k);
}

GradCheckReport grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> inputs,
                           double eps, double tol) {
    for (auto& in : inputs) in.zero_grad();
    Tensor loss = fn();
    loss.backward();

    GradCheckReport rep;
    rep.pass = true;
    int input_idx = 0;
    for (auto& in : inputs) {
        std::vector<double> analytic =
            in.has_grad() ? in.grad() : std::vector<double>(in.size(), 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
            double orig = in.data()[i];
            in.data()[i] = orig + eps;
            double fp = fn().value();
            in.data()[i] = orig - eps;
            double fm = fn().value();
            in.data()[i] = orig;
            double fd = (fp - fm) / (2.0 * eps);
            double a = analytic[i];
            double err = std::fabs(a - fd) / std::max({1.0, std::fabs(a), std::fabs(fd)});
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = "input" + std::to_string(input_idx) + "[" +
                                  std::to_string(i) + "]";
            }
        }
        ++input_idx;
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[] = "PCRTCKPT1\n";

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::ifstream& in, std::size_t n) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw InputError("checkpoint truncated");
    return v;
}
}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& config_json) {
    nlohmann::json header;
    header["version"] = 1;
    header["step"] = store.step;
    header["config"] = config_json;
    header["config_hash"] = hash64(config_json);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& [name, e] : store.entries()) {
        nlohmann::json p;
        p["name"] = name;
        p["shape"] = e.t.shape();
        params.push_back(p);
    }
    header["params"] = params;
    std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    std::uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, e] : store.entries()) {
        write_doubles(out, *e.t.node()->data);
        write_doubles(out, e.m);
        write_doubles(out, e.v);
    }
}

ParamStore load_checkpoint(const std::string& path, std::string* config_json) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
        throw InputError("bad checkpoint magic in " + path);
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ull << 30)) throw InputError("bad checkpoint header in " + path);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("bad checkpoint header json: " + std::string(e.what()));
    }
    std::string config = header.at("config");
    if (static_cast<std::uint64_t>(header.at("config_hash")) != hash64(config))
        throw InputError("checkpoint config hash mismatch in " + path);
    if (config_json) *config_json = config;
    ParamStore store;
    store.step = header.at("step");
    for (const auto& p : header.at("params")) {
        std::vector<std::size_t> shape = p.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        std::string name = p.at("name");
        store.add_data(name, shape, read_doubles(in, n));
        auto& e = store.entries().at(name);
        e.m = read_doubles(in, n);
        e.v = read_doubles(in, n);
    }
    return store;
}

}  // namespace pcrt::nn
