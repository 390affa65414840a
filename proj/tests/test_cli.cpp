// SPDX-License-Identifier: Apache-2.0
// End-to-end checks of the command-line tool: file outputs, idempotence,
// and the exit-code contract (0 ok, 2 input error, 3 numerical failure).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pcrt/scenegen.hpp"
#include "pcrt/surrogate.hpp"

using namespace pcrt;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, std::string* output = nullptr) {
    fs::path log = fs::temp_directory_path() / "pcrt_cli_out.txt";
    std::string cmd = std::string(PCRT_BIN) + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(log);
        std::stringstream ss;
        ss << in.rdbuf();
        *output = ss.str();
    }
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TmpDir {
    fs::path path;
    explicit TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
};

void write_box_spec(const fs::path& p, int wall_material = 0) {
    RoomSpec spec;
    spec.extents = {4, 3, 2.6};
    spec.spacing = 0.12;
    spec.wall_material = wall_material;
    save_room_spec(spec, p.string());
}

}  // namespace

TEST_CASE("gen-scene: files exist, reload round-trips, seeded idempotence") {
    TmpDir dir("pcrt_cli_gen");
    write_box_spec(dir.path / "box.json");
    std::string out;
    int rc = run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                         (dir.path / "s1").string() + " --seed 5",
                     &out);
    CHECK(rc == 0);
    CHECK(fs::exists(dir.path / "s1" / "room.scene"));
    CHECK(fs::exists(dir.path / "s1" / "room.pts"));
    CHECK(fs::exists(dir.path / "s1" / "room.mat"));
    Scene s = load_scene((dir.path / "s1" / "room.scene").string());
    CHECK(s.cloud->size() > 1000);
    CHECK(s.edges.size() == 12);

    rc = run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                 (dir.path / "s2").string() + " --seed 5");
    CHECK(rc == 0);
    CHECK(slurp(dir.path / "s1" / "room.pts") == slurp(dir.path / "s2" / "room.pts"));
    CHECK(slurp(dir.path / "s1" / "room.scene") == slurp(dir.path / "s2" / "room.scene"));
}

TEST_CASE("gen-scene: missing material id exits 2 and names the id") {
    TmpDir dir("pcrt_cli_badmat");
    write_box_spec(dir.path / "box.json", 77);
    std::string out;
    int rc = run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                         (dir.path / "x").string(),
                     &out);
    CHECK(rc == 2);
    CHECK(out.find("77") != std::string::npos);
}

TEST_CASE("trace: empty room gives a single LOS record at Friis") {
    TmpDir dir("pcrt_cli_trace");
    // free-space scene file
    MaterialTable mats = default_material_table(28e9);
    Scene s = make_scene(nullptr, {}, mats, {0, 0, 0}, {5, 0, 0}, 28e9);
    save_scene(s, (dir.path / "free.scene").string(), "none", "free.mat");
    std::string out;
    int rc = run_cli("trace --scene " + (dir.path / "free.scene").string() +
                         " --n-rays 1000 --out " + (dir.path / "tr").string(),
                     &out);
    CHECK(rc == 0);
    auto real = load_channel((dir.path / "tr" / "link.channel.json").string());
    REQUIRE(real.los.has_value());
    CHECK(real.nlos.empty());
    double friis = 20.0 * std::log10(4.0 * M_PI * 5.0 / (kSpeedOfLight / 28e9));
    CHECK(std::fabs(-20.0 * std::log10(real.los->gain.a) - friis) < 0.01);
}

TEST_CASE("eval with pred == truth reports zero RMSE; bad input exits 2") {
    TmpDir dir("pcrt_cli_eval");
    write_box_spec(dir.path / "box.json");
    REQUIRE(run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                    (dir.path / "sc").string()) == 0);
    REQUIRE(run_cli("trace --scene " + (dir.path / "sc" / "room.scene").string() +
                    " --tx 1 1 1 --rx 3 2 1.5 --n-rays 20000 --out " +
                    (dir.path / "tr").string()) == 0);
    std::string out;
    int rc = run_cli("eval --pred " + (dir.path / "tr").string() + " --truth " +
                         (dir.path / "tr").string() + " --out " + (dir.path / "ev").string(),
                     &out);
    CHECK(rc == 0);
    CHECK(out.find("pl_rmse_db: 0") != std::string::npos);
    CHECK(fs::exists(dir.path / "ev" / "eval_links.csv"));

    rc = run_cli("eval --pred /nonexistent_dir_x --truth /nonexistent_dir_y --out " +
                 (dir.path / "ev2").string());
    CHECK(rc == 2);
}

TEST_CASE("trace idempotence: identical seeds give byte-identical channels") {
    TmpDir dir("pcrt_cli_idem");
    write_box_spec(dir.path / "box.json");
    REQUIRE(run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                    (dir.path / "sc").string()) == 0);
    std::string scene = (dir.path / "sc" / "room.scene").string();
    for (const char* sub : {"a", "b"}) {
        REQUIRE(run_cli("trace --scene " + scene + " --tx 1 1 1 --rx 3 2 1.5 " +
                        "--n-rays 20000 --seed 9 --out " + (dir.path / sub).string()) == 0);
    }
    CHECK(slurp(dir.path / "a" / "link.channel.json") ==
          slurp(dir.path / "b" / "link.channel.json"));
    // threads must not change the bytes either
    REQUIRE(run_cli("trace --scene " + scene + " --tx 1 1 1 --rx 3 2 1.5 " +
                    "--n-rays 20000 --seed 9 --threads 1 --out " +
                    (dir.path / "c").string()) == 0);
    CHECK(slurp(dir.path / "a" / "link.channel.json") ==
          slurp(dir.path / "c" / "link.channel.json"));
}

TEST_CASE("rollout with untrained checkpoints runs and reports diagnostics") {
    TmpDir dir("pcrt_cli_roll");
    write_box_spec(dir.path / "box.json");
    REQUIRE(run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                    (dir.path / "sc").string()) == 0);
    // random-init checkpoints
    SurrogateConfig cfg = SurrogateConfig::desk();
    cfg.seed = 3;
    auto det = SurrogateModel::init(cfg, Mechanism::deterministic);
    auto non = SurrogateModel::init(cfg, Mechanism::non_deterministic);
    save_model(det, (dir.path / "det.ckpt").string());
    save_model(non, (dir.path / "non.ckpt").string());
    std::string out;
    int rc = run_cli("rollout --scene " + (dir.path / "sc" / "room.scene").string() +
                         " --tx 1 1 1 --rx 3 2 1.5 --n-rays 2000 --n-scatter 2 --det " +
                         (dir.path / "det.ckpt").string() + " --non " +
                         (dir.path / "non.ckpt").string() + " --out " +
                         (dir.path / "ro").string(),
                     &out);
    CHECK(rc == 0);
    CHECK(out.find("hops predicted:") != std::string::npos);
    CHECK(fs::exists(dir.path / "ro" / "link.channel.json"));
}

TEST_CASE("corrupted checkpoint is rejected with exit 2") {
    TmpDir dir("pcrt_cli_corrupt");
    SurrogateConfig cfg = SurrogateConfig::desk();
    auto det = SurrogateModel::init(cfg, Mechanism::deterministic);
    save_model(det, (dir.path / "det.ckpt").string());
    // flip a byte in the header region
    {
        std::fstream f(dir.path / "det.ckpt",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char c;
        f.seekg(64);
        f.get(c);
        f.seekp(64);
        f.put(c ^ 0x5a);
    }
    write_box_spec(dir.path / "box.json");
    REQUIRE(run_cli("gen-scene --spec " + (dir.path / "box.json").string() + " --out " +
                    (dir.path / "sc").string()) == 0);
    std::string out;
    int rc = run_cli("rollout --scene " + (dir.path / "sc" / "room.scene").string() +
                         " --tx 1 1 1 --rx 3 2 1.5 --det " + (dir.path / "det.ckpt").string() +
                         " --non " + (dir.path / "det.ckpt").string() + " --out " +
                         (dir.path / "ro").string(),
                     &out);
    CHECK(rc == 2);
}

TEST_CASE("unknown flags and missing subcommand exit 2") {
    CHECK(run_cli("definitely-not-a-subcommand") == 2);
    CHECK(run_cli("trace --no-such-flag 1") == 2);
}
