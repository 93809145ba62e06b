// End-to-end tests of the command-line driver. The binary path is injected
// at compile time (VITLOC_CLI_PATH); each run's stdout/stderr are captured
// to files and artifacts are checked against the library as the oracle.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitloc/checkpoint.hpp"
#include "vitloc/eval.hpp"
#include "vitloc/fingerprint.hpp"
#include "vitloc/json_io.hpp"
#include "vitloc/synthgen.hpp"
#include "vitloc/train.hpp"

using namespace vitloc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// exit codes owned by the tool
constexpr int kOk = 0;
constexpr int kBadConfig = 2;
constexpr int kMissingFile = 3;
constexpr int kFormatError = 4;
constexpr int kDivergence = 5;
// exit codes CLI11 uses for parse-level failures (vendor/CLI11.hpp ExitCodes)
constexpr int kValidationError = 105;
constexpr int kRequiredError = 106;
constexpr int kExtrasError = 109;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: " << path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

const std::string& work_dir() {
    static const std::string dir = [] {
        const std::string d = "/tmp/vitloc_clitest";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args) {
    static int calls = 0;
    const std::string tag = work_dir() + "/.run" + std::to_string(calls++);
    const std::string cmd =
        std::string(VITLOC_CLI_PATH) + " " + args + " >" + tag + ".out 2>" + tag + ".err";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(tag + ".out");
    r.err = slurp(tag + ".err");
    return r;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << v;
    return os.str();
}

// two tiny corridors (6 + 5 grid points), three devices, 33 records
const char* kGenConfig = R"({
  "seed": 7,
  "samples_per_rp_per_device": 2,
  "buildings": [
    {"building_id": 0, "path_length_m": 5.0, "num_aps": 4, "pathloss_exponent": 2.5,
     "shadowing_sigma_db": 2.0, "tx_power_db": -40.0, "ref_distance_m": 1.0},
    {"building_id": 1, "path_length_m": 4.0, "num_aps": 3, "pathloss_exponent": 3.0,
     "shadowing_sigma_db": 1.5, "tx_power_db": -42.0, "ref_distance_m": 1.0}
  ],
  "base_devices": [
    {"device_id": "da", "gain_offset_db": 0.0},
    {"device_id": "db", "gain_offset_db": -6.0}
  ],
  "extended_devices": [
    {"device_id": "dx", "gain_offset_db": 4.0, "scale": 1.05}
  ]
})";

// image_size 0 = derive from the AP count (7 APs, patch 4 -> 8)
const char* kTrainConfig = R"({
  "vit": {"image_size": 0, "patch_size": 4, "embed_dim": 8, "num_heads": 2, "head_dim": 4,
          "num_blocks": 1, "encoder_mlp_dims": [16, 8], "head_hidden_dims": [8]},
  "train": {"epochs": 12, "batch_size": 4, "learning_rate": 0.01,
            "augmented_copies_per_record": 2, "target_train_accuracy": 1.0,
            "dam": {"dropout_prob": 0.1, "infill_sigma": 0.05}}
})";

// dataset + checkpoint shared by the cases below; built once, on first use
struct Workspace {
    std::string dir, gen_cfg, train_cfg, data_csv, model_ckpt;
    RunResult gen_run, train_run;
};

const Workspace& ws() {
    static const Workspace w = [] {
        Workspace x;
        x.dir = work_dir();
        x.gen_cfg = x.dir + "/gen.json";
        x.train_cfg = x.dir + "/train.json";
        x.data_csv = x.dir + "/data.csv";
        x.model_ckpt = x.dir + "/model.ckpt";
        spit(x.gen_cfg, kGenConfig);
        spit(x.train_cfg, kTrainConfig);
        x.gen_run = run_cli("gen --config " + x.gen_cfg + " --out " + x.data_csv);
        x.train_run = run_cli("train --data " + x.data_csv + " --config " + x.train_cfg +
                              " --out " + x.model_ckpt + " --seed 5");
        return x;
    }();
    return w;
}

}  // namespace

TEST_CASE("cli: driver binary exists") {
    CHECK(fs::exists(VITLOC_CLI_PATH));
}

TEST_CASE("cli: gen emits dataset, device profiles, and a run manifest") {
    const Workspace& w = ws();
    REQUIRE_MESSAGE(w.gen_run.code == kOk, w.gen_run.err);
    CHECK(w.gen_run.err.find("wrote 33 records") != std::string::npos);

    const FingerprintDataset ds = load_dataset(w.data_csv);
    CHECK(ds.records.size() == 33);
    CHECK(ds.rps.size() == 11);
    CHECK(ds.ap_index.size() == 7);
    CHECK(ds.devices == std::vector<std::string>{"da", "db", "dx"});
    CHECK(ds.building_ids() == std::vector<int>{0, 1});
    CHECK(ds.samples_per_record == 2);

    const json cfg = json::parse(slurp(w.gen_cfg));
    CHECK(slurp(w.data_csv + ".profiles.json") == describe_generation(parse_gen_config(cfg)));

    const json manifest = json::parse(slurp(w.data_csv + ".manifest.json"));
    CHECK(manifest.at("command") == "gen");
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("config") == cfg);
    CHECK(manifest.at("inputs").empty());
    CHECK(manifest.at("output") == w.data_csv);
}

TEST_CASE("cli: gen reruns are byte-identical; --seed overrides the config") {
    const Workspace& w = ws();
    const std::string again = w.dir + "/data_again.csv";
    REQUIRE(run_cli("gen --config " + w.gen_cfg + " --out " + again).code == kOk);
    CHECK(slurp(again) == slurp(w.data_csv));
    CHECK(slurp(again + ".profiles.json") == slurp(w.data_csv + ".profiles.json"));

    const std::string reseeded = w.dir + "/data_seed9.csv";
    REQUIRE(run_cli("gen --config " + w.gen_cfg + " --seed 9 --out " + reseeded).code == kOk);
    CHECK(slurp(reseeded) != slurp(w.data_csv));
    CHECK(json::parse(slurp(reseeded + ".manifest.json")).at("seed") == 9);
}

TEST_CASE("cli: train writes checkpoint, history, and manifest with input hash") {
    const Workspace& w = ws();
    REQUIRE_MESSAGE(w.train_run.code == kOk, w.train_run.err);
    CHECK(w.train_run.err.find("trained 11 classes") != std::string::npos);

    VitModel<float> model = load_checkpoint(w.model_ckpt);
    CHECK(model.config.image_size == 8);  // 7 APs rounded up to the patch grid
    CHECK(model.config.num_classes == 11);
    CHECK(model.classes.size() == 11);
    CHECK(model.ap_ids.size() == 7);

    const json hist = json::parse(slurp(w.model_ckpt + ".history.json"));
    const std::size_t epochs = hist.at("epochs_run").get<std::size_t>();
    CHECK(epochs >= 1);
    CHECK(epochs <= 12);
    REQUIRE(hist.at("history").size() == epochs);
    const json& first = hist.at("history").at(0);
    CHECK(first.contains("mean_loss"));
    CHECK(first.contains("train_accuracy"));
    CHECK(first.at("devices_seen").size() == 3);

    const json manifest = json::parse(slurp(w.model_ckpt + ".manifest.json"));
    CHECK(manifest.at("command") == "train");
    CHECK(manifest.at("seed") == 5);
    CHECK(manifest.at("inputs").at(w.data_csv) == hex64(fnv1a64(slurp(w.data_csv))));
}

TEST_CASE("cli: train is reproducible per seed and sensitive to it") {
    const Workspace& w = ws();
    const std::string again = w.dir + "/model_again.ckpt";
    REQUIRE(run_cli("train --data " + w.data_csv + " --config " + w.train_cfg + " --out " + again +
                    " --seed 5")
                .code == kOk);
    CHECK(slurp(again) == slurp(w.model_ckpt));
    CHECK(slurp(again + ".history.json") == slurp(w.model_ckpt + ".history.json"));

    const std::string reseeded = w.dir + "/model_seed6.ckpt";
    REQUIRE(run_cli("train --data " + w.data_csv + " --config " + w.train_cfg + " --out " +
                    reseeded + " --seed 6")
                .code == kOk);
    CHECK(slurp(reseeded) != slurp(w.model_ckpt));
}

TEST_CASE("cli: train honors the building filter in the config") {
    const Workspace& w = ws();
    json cfg = json::parse(kTrainConfig);
    cfg["building_id"] = 1;
    const std::string cfg_path = w.dir + "/train_b1.json";
    spit(cfg_path, cfg.dump());

    const std::string out = w.dir + "/model_b1.ckpt";
    const RunResult r =
        run_cli("train --data " + w.data_csv + " --config " + cfg_path + " --out " + out + " --seed 5");
    REQUIRE_MESSAGE(r.code == kOk, r.err);

    VitModel<float> model = load_checkpoint(out);
    CHECK(model.classes.size() == 5);  // building 1 spans 5 grid points
    for (const auto& c : model.classes) CHECK(c.building_id == 1);
}

TEST_CASE("cli: eval artifacts match the library report byte for byte") {
    const Workspace& w = ws();
    const std::string rep = w.dir + "/report.json";
    const RunResult r =
        run_cli("eval --data " + w.data_csv + " --model " + w.model_ckpt + " --out " + rep + " --seed 5");
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    CHECK(r.err.find("mean error") != std::string::npos);

    VitModel<float> model = load_checkpoint(w.model_ckpt);
    EvalReport expect = evaluate(model, load_dataset(w.data_csv), DamConfig{});
    expect.seed = 5;
    expect.config_hash = fnv1a64(vit_config_to_json(model.config).dump());
    CHECK(slurp(rep) == report_to_json(expect));
    CHECK(slurp(rep + ".csv") == report_to_csv(expect));

    CHECK(json::parse(slurp(rep)).at("overall").at("count") == 33);
    const json manifest = json::parse(slurp(rep + ".manifest.json"));
    CHECK(manifest.at("command") == "eval");
    CHECK(manifest.at("inputs").size() == 2);
}

TEST_CASE("cli: predict matches per-record library predictions") {
    const Workspace& w = ws();
    const std::string out = w.dir + "/pred.json";
    REQUIRE(run_cli("predict --data " + w.data_csv + " --model " + w.model_ckpt + " --out " + out)
                .code == kOk);
    const json got = json::parse(slurp(out));
    CHECK(fs::exists(out + ".manifest.json"));

    const FingerprintDataset ds = load_dataset(w.data_csv);
    REQUIRE(got.size() == ds.records.size());
    VitModel<float> model = load_checkpoint(w.model_ckpt);
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const FingerprintRecord& rec = ds.records[i];
        const Prediction p = predict(model, reduce_record(rec), DamConfig{});
        const json& row = got.at(i);
        CHECK(row.at("device_id") == rec.device_id);
        CHECK(row.at("true_building_id") == rec.building_id);
        CHECK(row.at("true_rp_id") == rec.rp_id);
        CHECK(row.at("predicted_building_id") == p.label.building_id);
        CHECK(row.at("predicted_rp_id") == p.label.rp_id);
        CHECK(row.at("x_m").get<double>() == p.label.x_m);
        CHECK(row.at("y_m").get<double>() == p.label.y_m);
    }

    // without --out the same text goes to stdout and nothing is written
    const RunResult piped = run_cli("predict --data " + w.data_csv + " --model " + w.model_ckpt);
    REQUIRE(piped.code == kOk);
    CHECK(piped.out == slurp(out));
}

TEST_CASE("cli: stochastic predict mode is seeded and reproducible") {
    const Workspace& w = ws();
    const std::string args =
        "predict --data " + w.data_csv + " --model " + w.model_ckpt + " --mode train --seed 11";
    const RunResult a = run_cli(args);
    const RunResult b = run_cli(args);
    REQUIRE(a.code == kOk);
    CHECK(a.out == b.out);
    CHECK(json::parse(a.out).size() == 33);
}

TEST_CASE("cli: sweep writes the grid table and is stable across --jobs") {
    const Workspace& w = ws();
    const json cfg = {
        {"vit",
         {{"embed_dim", 8}, {"head_dim", 4}, {"num_blocks", 1}, {"encoder_mlp_dims", {16, 8}}}},
        {"train",
         {{"epochs", 2},
          {"batch_size", 4},
          {"learning_rate", 0.01},
          {"augmented_copies_per_record", 1},
          {"target_train_accuracy", 1.0},
          {"dam", {{"dropout_prob", 0.1}, {"infill_sigma", 0.05}}}}},
        {"grid",
         {{"image_sizes", {8}}, {"patch_sizes", {4}}, {"num_heads", {2}}, {"head_hidden_layers", {0, 1}}}},
        {"split_ratio", 0.8}};
    const std::string cfg_path = w.dir + "/sweep.json";
    spit(cfg_path, cfg.dump());

    const std::string out = w.dir + "/sweep.csv";
    const RunResult r = run_cli("sweep --data " + w.data_csv + " --config " + cfg_path + " --out " +
                                out + " --jobs 2 --seed 3");
    REQUIRE_MESSAGE(r.code == kOk, r.err);

    std::istringstream lines(slurp(out));
    std::string header, row0, row1, extra;
    REQUIRE(std::getline(lines, header));
    REQUIRE(std::getline(lines, row0));
    REQUIRE(std::getline(lines, row1));
    CHECK(!std::getline(lines, extra));
    CHECK(header ==
          "image_size,patch_size,num_heads,head_hidden_layers,status,count,min_error_m,mean_error_m,"
          "max_error_m,accuracy");
    CHECK(row0.rfind("8,4,2,0,ok,", 0) == 0);
    CHECK(row1.rfind("8,4,2,1,ok,", 0) == 0);

    const std::string serial = w.dir + "/sweep_serial.csv";
    REQUIRE(run_cli("sweep --data " + w.data_csv + " --config " + cfg_path + " --out " + serial +
                    " --jobs 1 --seed 3")
                .code == kOk);
    CHECK(slurp(serial) == slurp(out));
}

TEST_CASE("cli: ablate pairs runs over an explicit device split") {
    const Workspace& w = ws();
    json cfg = json::parse(kTrainConfig);
    cfg["train"]["epochs"] = 2;
    cfg["base_devices"] = {"da", "db"};
    cfg["extended_devices"] = {"dx"};
    const std::string cfg_path = w.dir + "/ablate.json";
    spit(cfg_path, cfg.dump());

    const std::string out = w.dir + "/ablate_report.json";
    const RunResult r =
        run_cli("ablate --data " + w.data_csv + " --config " + cfg_path + " --out " + out + " --seed 2");
    REQUIRE_MESSAGE(r.code == kOk, r.err);
    CHECK(r.err.find("mean error with augmentation") != std::string::npos);

    const json rep = json::parse(slurp(out));
    CHECK(rep.at("with_augmentation").at("overall").at("count") == 11);
    CHECK(rep.at("without_augmentation").at("overall").at("count") == 11);

    // the device lists are all-or-nothing
    cfg.erase("extended_devices");
    spit(cfg_path, cfg.dump());
    const RunResult half =
        run_cli("ablate --data " + w.data_csv + " --config " + cfg_path + " --out " + out);
    CHECK(half.code == kBadConfig);
    CHECK(half.err.find("must be given together") != std::string::npos);
}

TEST_CASE("cli: failures map to distinct exit codes") {
    const Workspace& w = ws();

    // unknown config key
    spit(w.dir + "/unknown_key.json", R"({"vit": {}, "mystery": 1})");
    RunResult r = run_cli("train --data " + w.data_csv + " --config " + w.dir +
                          "/unknown_key.json --out " + w.dir + "/x.ckpt");
    CHECK(r.code == kBadConfig);
    CHECK(r.err.find("error: bad-config:") != std::string::npos);
    CHECK(r.err.find("unknown key") != std::string::npos);

    // config file that is not JSON
    spit(w.dir + "/broken.json", "{ nope");
    r = run_cli("gen --config " + w.dir + "/broken.json --out " + w.dir + "/x.csv");
    CHECK(r.code == kBadConfig);
    CHECK(r.err.find("not valid JSON") != std::string::npos);

    // sweep config without a grid
    spit(w.dir + "/gridless.json", R"({"split_ratio": 0.5})");
    r = run_cli("sweep --data " + w.data_csv + " --config " + w.dir + "/gridless.json --out " +
                w.dir + "/x.csv");
    CHECK(r.code == kBadConfig);

    // config path that does not exist (gen leaves --config unchecked by the parser)
    r = run_cli("gen --config " + w.dir + "/absent.json --out " + w.dir + "/x.csv");
    CHECK(r.code == kMissingFile);
    CHECK(r.err.find("error: missing-file:") != std::string::npos);

    // data that is not a fingerprint table
    spit(w.dir + "/bad.csv", "not,a,real,header\n1,2\n");
    r = run_cli("train --data " + w.dir + "/bad.csv --out " + w.dir + "/x.ckpt");
    CHECK(r.code == kFormatError);
    CHECK(r.err.find("error: format-error:") != std::string::npos);

    // checkpoint with the right magic but a bogus version
    spit(w.dir + "/fake.ckpt", std::string("VITL") + std::string("\x63\x00\x00\x00", 4) + "junk");
    r = run_cli("eval --data " + w.data_csv + " --model " + w.dir + "/fake.ckpt --out " + w.dir +
                "/x.json");
    CHECK(r.code == kFormatError);

    // runaway learning rate
    json cfg = json::parse(kTrainConfig);
    cfg["train"]["learning_rate"] = 1e9;
    cfg["train"]["epochs"] = 3;
    spit(w.dir + "/diverge.json", cfg.dump());
    r = run_cli("train --data " + w.data_csv + " --config " + w.dir + "/diverge.json --out " +
                w.dir + "/x.ckpt");
    CHECK(r.code == kDivergence);
    CHECK(r.err.find("error: training-divergence:") != std::string::npos);
}

TEST_CASE("cli: argument errors are caught by the parser") {
    const Workspace& w = ws();

    RunResult r = run_cli("");  // missing subcommand
    CHECK(r.code == kRequiredError);

    r = run_cli("gen");  // missing required --out
    CHECK(r.code == kRequiredError);

    r = run_cli("gen --out " + w.dir + "/x.csv --frobnicate");
    CHECK(r.code == kExtrasError);

    r = run_cli("train --data " + w.dir + "/absent.csv --out " + w.dir + "/x.ckpt");
    CHECK(r.code == kValidationError);  // --data must already exist

    r = run_cli("predict --data " + w.data_csv + " --model " + w.model_ckpt + " --mode sideways");
    CHECK(r.code == kValidationError);

    r = run_cli("sweep --data " + w.data_csv + " --config " + w.dir + "/sweep.json --out " +
                w.dir + "/x.csv --jobs 0");
    CHECK(r.code == kValidationError);
}

TEST_CASE("cli: atomic writes leave no temp files behind") {
    ws();
    std::vector<std::string> stragglers;
    for (const auto& entry : fs::directory_iterator(work_dir())) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 4 && name.rfind(".tmp") == name.size() - 4) stragglers.push_back(name);
    }
    CHECK(stragglers.empty());
}
