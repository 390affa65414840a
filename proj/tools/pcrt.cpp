// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end for the point-cloud channel toolkit: scene
// generation, SBR tracing, dataset construction, surrogate training,
// neural rollout, evaluation, and the acceptance suite.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcrt/accept.hpp"
#include "pcrt/dataset.hpp"
#include "pcrt/evalcmp.hpp"
#include "pcrt/metrics.hpp"
#include "pcrt/rollout.hpp"
#include "pcrt/scenegen.hpp"
#include "pcrt/train.hpp"

namespace fs = std::filesystem;
using namespace pcrt;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

std::string data_root() {
    const char* env = std::getenv("PCRT_DATA_ROOT");
    return env ? env : ".";
}

void write_snapshot(const std::string& out_dir, const nlohmann::json& resolved) {
    fs::create_directories(out_dir);
    std::ofstream out(fs::path(out_dir) / "run_config.json");
    out << resolved.dump(1) << "\n";
}

TraceConfig make_trace_config(std::size_t n_rays, int max_bounces, int n_scatter,
                              double floor_db, std::uint64_t seed, int threads) {
    TraceConfig cfg;
    cfg.n_rays = n_rays;
    cfg.max_bounces = max_bounces;
    cfg.n_scatter = n_scatter;
    cfg.power_floor_db = floor_db;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

SurrogateConfig make_surrogate_config(const std::string& profile, std::uint64_t seed,
                                      int threads, bool use_material, bool use_normals) {
    SurrogateConfig cfg =
        profile == "reference" ? SurrogateConfig::reference() : SurrogateConfig::desk();
    cfg.seed = seed;
    cfg.threads = threads;
    cfg.use_material = use_material;
    cfg.use_normals = use_normals;
    return cfg;
}

struct LinkChannelJob {
    std::string id;
    Scene scene;
};

std::vector<LinkChannelJob> resolve_links(const std::string& scene_path,
                                          const std::string& links_path,
                                          const std::vector<double>& tx,
                                          const std::vector<double>& rx) {
    std::vector<LinkChannelJob> jobs;
    if (!links_path.empty()) {
        auto links = load_links(links_path);
        std::map<std::string, Scene> cache;
        for (const auto& l : links) {
            auto it = cache.find(l.scene_path);
            if (it == cache.end()) it = cache.emplace(l.scene_path, load_scene(l.scene_path)).first;
            LinkChannelJob job;
            job.id = l.id;
            job.scene = it->second;
            job.scene.tx = l.tx;
            job.scene.rx = l.rx;
            jobs.push_back(std::move(job));
        }
    } else {
        if (scene_path.empty()) throw InputError("either --scene or --links is required");
        LinkChannelJob job;
        job.id = "link";
        job.scene = load_scene(scene_path);
        if (tx.size() == 3) job.scene.tx = {tx[0], tx[1], tx[2]};
        if (rx.size() == 3) job.scene.rx = {rx[0], rx[1], rx[2]};
        jobs.push_back(std::move(job));
    }
    return jobs;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-cloud radio channel toolkit: SBR tracer and neural surrogate"};
    app.require_subcommand(1);
    app.fallthrough();  // global --seed/--threads may follow the subcommand
    app.set_config("--config");

    std::uint64_t seed = 1;
    int threads = 2;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_option("--threads", threads, "worker threads")->capture_default_str();

    // --- gen-scene -----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-scene", "generate a room scene from a spec file");
    std::string gen_spec, gen_out = data_root() + "/scene", gen_name = "room";
    gen->add_option("--spec", gen_spec, "room spec json")->required();
    gen->add_option("--out", gen_out, "output directory")->capture_default_str();
    gen->add_option("--name", gen_name, "scene base name")->capture_default_str();

    // --- gen-suite -----------------------------------------------------------
    auto* suite_cmd = app.add_subcommand("gen-suite", "generate the three-room evaluation suite");
    std::string suite_out = data_root() + "/suite";
    suite_cmd->add_option("--out", suite_out, "output directory")->capture_default_str();

    // --- trace ---------------------------------------------------------------
    auto* trace_cmd = app.add_subcommand("trace", "SBR trace one link or a link list");
    std::string tr_scene, tr_links, tr_out = data_root() + "/trace";
    std::vector<double> tr_tx, tr_rx;
    std::size_t tr_rays = 100000;
    int tr_bounces = 3, tr_scatter = 8;
    double tr_floor = 40.0;
    trace_cmd->add_option("--scene", tr_scene, "scene file");
    trace_cmd->add_option("--links", tr_links, "links json (overrides --scene terminals)");
    trace_cmd->add_option("--tx", tr_tx, "tx position x y z")->expected(3);
    trace_cmd->add_option("--rx", tr_rx, "rx position x y z")->expected(3);
    trace_cmd->add_option("--out", tr_out, "output directory")->capture_default_str();
    trace_cmd->add_option("--n-rays", tr_rays, "launch directions")->capture_default_str();
    trace_cmd->add_option("--max-bounces", tr_bounces)->capture_default_str();
    trace_cmd->add_option("--n-scatter", tr_scatter)->capture_default_str();
    trace_cmd->add_option("--power-floor-db", tr_floor)->capture_default_str();

    // --- dataset ---------------------------------------------------------------
    auto* ds_cmd = app.add_subcommand("dataset", "trace links and build the ray-level dataset");
    std::string ds_links, ds_out = data_root() + "/dataset";
    std::size_t ds_rays = 100000;
    int ds_bounces = 3, ds_scatter = 8;
    ds_cmd->add_option("--links", ds_links, "links json")->required();
    ds_cmd->add_option("--out", ds_out, "output directory")->capture_default_str();
    ds_cmd->add_option("--n-rays", ds_rays)->capture_default_str();
    ds_cmd->add_option("--max-bounces", ds_bounces)->capture_default_str();
    ds_cmd->add_option("--n-scatter", ds_scatter)->capture_default_str();

    // --- train -----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a surrogate model on a dataset");
    std::string train_ds, train_out = data_root() + "/model", train_mech = "deterministic";
    std::string train_profile = "desk";
    int train_epochs = -1;
    bool train_no_material = false, train_normals = false;
    tr->add_option("--dataset", train_ds, "dataset directory")->required();
    tr->add_option("--mechanism", train_mech, "deterministic | non_deterministic")
        ->capture_default_str();
    tr->add_option("--out", train_out, "output directory")->capture_default_str();
    tr->add_option("--profile", train_profile, "desk | reference")->capture_default_str();
    tr->add_option("--epochs", train_epochs, "override epoch count");
    tr->add_flag("--no-material", train_no_material, "drop material parameters from inputs");
    tr->add_flag("--normals", train_normals, "feed point normals to the encoder");

    // --- rollout -----------------------------------------------------------------
    auto* ro = app.add_subcommand("rollout", "neural multi-bounce channel reconstruction");
    std::string ro_scene, ro_links, ro_det, ro_non, ro_out = data_root() + "/rollout";
    std::vector<double> ro_tx, ro_rx;
    std::size_t ro_rays = 10000;
    int ro_bounces = 3, ro_scatter = 4;
    ro->add_option("--scene", ro_scene, "scene file");
    ro->add_option("--links", ro_links, "links json");
    ro->add_option("--tx", ro_tx)->expected(3);
    ro->add_option("--rx", ro_rx)->expected(3);
    ro->add_option("--det", ro_det, "deterministic model checkpoint")->required();
    ro->add_option("--non", ro_non, "non-deterministic model checkpoint")->required();
    ro->add_option("--out", ro_out, "output directory")->capture_default_str();
    ro->add_option("--n-rays", ro_rays)->capture_default_str();
    ro->add_option("--max-bounces", ro_bounces)->capture_default_str();
    ro->add_option("--n-scatter", ro_scatter)->capture_default_str();

    // --- eval -----------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "compare predicted channels against truth");
    std::string ev_pred, ev_truth, ev_out = data_root() + "/eval";
    ev->add_option("--pred", ev_pred, "directory of predicted channel files")->required();
    ev->add_option("--truth", ev_truth, "directory of truth channel files")->required();
    ev->add_option("--out", ev_out, "output directory")->capture_default_str();

    // --- accept -----------------------------------------------------------------
    auto* ac = app.add_subcommand("accept", "run the acceptance suite");
    std::string ac_level = "fast", ac_out = data_root() + "/accept";
    ac->add_option("--level", ac_level, "fast | full")->capture_default_str();
    ac->add_option("--out", ac_out, "output directory")->capture_default_str();

    try {
        app.parse(argc, argv);

        if (*gen) {
            RoomSpec spec = load_room_spec(gen_spec);
            auto room = gen_room(spec, sub_seed(seed, "scene"));
            std::string scene_path = save_room(room, gen_out, gen_name);
            nlohmann::json snap{{"cmd", "gen-scene"}, {"spec", gen_spec},
                                {"seed", seed},       {"scene", scene_path}};
            write_snapshot(gen_out, snap);
            std::cout << "scene: " << scene_path << "\n"
                      << "points: " << room.cloud->size() << "\n"
                      << "edges: " << room.edges.size() << "\n";
        } else if (*suite_cmd) {
            auto suite = make_eval_suite(seed, suite_out);
            nlohmann::json snap{{"cmd", "gen-suite"}, {"seed", seed}};
            write_snapshot(suite_out, snap);
            std::cout << "room_a: " << suite.room_a_scene << " (" << suite.links_a.size()
                      << " links)\n"
                      << "room_b: " << suite.room_b_scene << " (" << suite.links_b.size()
                      << " links)\n"
                      << "room_c: " << suite.room_c_scene << " (" << suite.links_c.size()
                      << " links)\n";
        } else if (*trace_cmd) {
            TraceConfig cfg = make_trace_config(tr_rays, tr_bounces, tr_scatter, tr_floor,
                                                sub_seed(seed, "trace"), threads);
            auto jobs = resolve_links(tr_scene, tr_links, tr_tx, tr_rx);
            fs::create_directories(tr_out);
            for (const auto& job : jobs) {
                auto real = trace(job.scene, cfg);
                save_channel(real, (fs::path(tr_out) / (job.id + ".channel.json")).string());
                std::cout << job.id << ": paths=" << real.nlos.size()
                          << (real.los ? " +LOS" : "") << " pl_db=" << path_loss_db(real)
                          << "\n";
            }
            nlohmann::json snap{{"cmd", "trace"},       {"seed", seed},
                                {"n_rays", tr_rays},    {"max_bounces", tr_bounces},
                                {"n_scatter", tr_scatter}, {"links", jobs.size()}};
            write_snapshot(tr_out, snap);
        } else if (*ds_cmd) {
            TraceConfig cfg = make_trace_config(ds_rays, ds_bounces, ds_scatter, 40.0,
                                                seed, threads);
            auto links = load_links(ds_links);
            auto manifest = gen_dataset(links, cfg, ds_out, seed);
            nlohmann::json snap{{"cmd", "dataset"}, {"seed", seed}, {"n_rays", ds_rays},
                                {"links", links.size()}};
            write_snapshot(ds_out, snap);
            std::cout << "links: " << manifest.links.size()
                      << " det samples: " << manifest.total_det
                      << " non samples: " << manifest.total_non << "\n";
        } else if (*tr) {
            SurrogateConfig cfg = make_surrogate_config(train_profile, seed, threads,
                                                        !train_no_material, train_normals);
            Mechanism mech = mechanism_from_name(train_mech);
            auto manifest = load_manifest(train_ds);
            auto set = build_training_set(manifest, train_ds, "train", mech, cfg);
            if (set.size() == 0) throw InputError("no training samples for this mechanism");
            auto model = SurrogateModel::init(cfg, mech);
            fs::create_directories(train_out);
            auto res = train_model(model, set,
                                   (fs::path(train_out) / "training_log.csv").string(),
                                   train_epochs);
            std::string ckpt = (fs::path(train_out) /
                                (std::string(mechanism_name(mech)) + ".ckpt"))
                                   .string();
            save_model(model, ckpt);
            {
                std::ofstream side(fs::path(train_out) /
                                   (std::string(mechanism_name(mech)) + ".config.json"));
                side << cfg.to_json() << "\n";
            }
            nlohmann::json snap{{"cmd", "train"},
                                {"seed", seed},
                                {"mechanism", train_mech},
                                {"profile", train_profile},
                                {"samples", set.size()},
                                {"config", cfg.to_json()}};
            write_snapshot(train_out, snap);
            std::cout << "samples: " << set.size() << "\n"
                      << "final total loss: " << res.curve.back().total_loss << "\n"
                      << "checkpoint: " << ckpt << "\n";
        } else if (*ro) {
            auto det = load_model(ro_det);
            auto non = load_model(ro_non);
            det.cfg.threads = threads;
            non.cfg.threads = threads;
            TraceConfig cfg = make_trace_config(ro_rays, ro_bounces, ro_scatter, 40.0,
                                                sub_seed(seed, "rollout"), threads);
            auto jobs = resolve_links(ro_scene, ro_links, ro_tx, ro_rx);
            fs::create_directories(ro_out);
            RolloutDiag total_diag;
            for (const auto& job : jobs) {
                RolloutDiag diag;
                auto real = rollout(job.scene, det, non, cfg, &diag);
                save_channel(real, (fs::path(ro_out) / (job.id + ".channel.json")).string());
                total_diag.rejected_hops += diag.rejected_hops;
                total_diag.hops_predicted += diag.hops_predicted;
                std::cout << job.id << ": paths=" << real.nlos.size()
                          << (real.los ? " +LOS" : "") << "\n";
            }
            std::cout << "hops predicted: " << total_diag.hops_predicted
                      << " rejected: " << total_diag.rejected_hops << "\n";
            nlohmann::json snap{{"cmd", "rollout"}, {"seed", seed}, {"n_rays", ro_rays},
                                {"links", jobs.size()}};
            write_snapshot(ro_out, snap);
        } else if (*ev) {
            std::vector<LinkComparison> rows;
            for (const auto& entry : fs::directory_iterator(ev_truth)) {
                std::string name = entry.path().filename().string();
                if (name.size() < 13 || name.substr(name.size() - 13) != ".channel.json")
                    continue;
                fs::path pred_file = fs::path(ev_pred) / name;
                if (!fs::exists(pred_file)) continue;
                auto truth = load_channel(entry.path().string());
                auto pred = load_channel(pred_file.string());
                std::string id = name.substr(0, name.find('.'));
                rows.push_back(compare_link(id, truth, pred));
            }
            if (rows.empty()) throw InputError("no matching channel files between directories");
            std::sort(rows.begin(), rows.end(),
                      [](const LinkComparison& a, const LinkComparison& b) { return a.id < b.id; });
            auto summary = summarize(rows);
            fs::create_directories(ev_out);
            write_eval_csv(rows, summary, (fs::path(ev_out) / "eval_links.csv").string(),
                           (fs::path(ev_out) / "eval_summary.csv").string());
            nlohmann::json snap{{"cmd", "eval"}, {"links", rows.size()}};
            write_snapshot(ev_out, snap);
            std::cout << "links: " << summary.n_links << "\n"
                      << "pl_rmse_db: " << summary.pl_rmse_db << "\n"
                      << "ds_rmse_ns: " << summary.ds_rmse_ns << "\n";
        } else if (*ac) {
            if (ac_level != "fast" && ac_level != "full")
                throw InputError("accept level must be fast or full");
            auto report = run_acceptance(ac_level, ac_out, threads, seed);
            write_report(report, (fs::path(ac_out) / "report.json").string());
            for (const auto& r : report.results)
                std::cout << (r.pass ? "PASS" : "FAIL") << " " << r.id << " " << r.name
                          << ": " << r.detail << "\n";
            if (!report.all_pass) {
                std::cout << "acceptance: FAILED\n";
                return 1;
            }
            std::cout << "acceptance: OK\n";
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const nn::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
}
