// Command-line driver: synthetic data generation, training, evaluation,
// hyperparameter sweeps, augmentation ablations, and single-fingerprint
// prediction, all seeded and reproducible.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vitloc/checkpoint.hpp"
#include "vitloc/common.hpp"
#include "vitloc/eval.hpp"
#include "vitloc/experiments.hpp"
#include "vitloc/json_io.hpp"
#include "vitloc/synthgen.hpp"
#include "vitloc/train.hpp"

namespace {

using nlohmann::json;
using namespace vitloc;

struct MissingFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Temp-file-plus-rename so no partial artifact survives a crash.
void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw MissingFileError("cannot open '" + tmp + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw FormatError("failed writing '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw FormatError("failed to move output into place at '" + path + "'");
    }
}

json load_config(const std::string& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Every run leaves `<out>.manifest.json` recording what produced the
/// artifact. Deterministic: no timestamps.
void write_run_manifest(const std::string& out_path, const std::string& command, const json& config,
                        std::uint64_t seed, const std::vector<std::string>& inputs) {
    json m;
    m["artifact_version"] = kArtifactVersion;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["inputs"] = json::object();
    for (const auto& p : inputs) m["inputs"][p] = hex64(fnv1a64(read_file(p)));
    m["output"] = out_path;
    write_atomic(out_path + ".manifest.json", m.dump(2) + "\n");
}

struct CommonOpts {
    std::string config_path;
    std::string data_path;
    std::string model_path;
    std::string out_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string mode = "eval";
    std::size_t jobs = 1;
};

json config_or_empty(const CommonOpts& opt) {
    return opt.config_path.empty() ? json::object() : load_config(opt.config_path);
}

// ---- subcommands -----------------------------------------------------------

int cmd_gen(const CommonOpts& opt) {
    json cfg_json = config_or_empty(opt);
    GenConfig cfg = parse_gen_config(cfg_json);
    if (opt.seed_set) cfg.seed = opt.seed;
    const FingerprintDataset dataset = generate(cfg);
    save_dataset(dataset, opt.out_path + ".tmp");
    if (std::rename((opt.out_path + ".tmp").c_str(), opt.out_path.c_str()) != 0) {
        std::remove((opt.out_path + ".tmp").c_str());
        throw FormatError("failed to move output into place at '" + opt.out_path + "'");
    }
    write_atomic(opt.out_path + ".profiles.json", describe_generation(cfg));
    write_run_manifest(opt.out_path, "gen", cfg_json, cfg.seed, {});
    std::cerr << "wrote " << dataset.records.size() << " records (" << dataset.rps.size() << " RPs, "
              << dataset.devices.size() << " devices) to " << opt.out_path << "\n";
    return 0;
}

// training scope: one joint class space over everything in --data, or a
// single building when the config says so
struct TrainRunConfig {
    VitConfig vit;
    TrainConfig train;
    std::optional<int> building_id;
};

TrainRunConfig parse_train_run(const json& j) {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "vit" && key != "train" && key != "building_id") {
            throw ConfigError("train config: unknown key '" + key + "'");
        }
    }
    TrainRunConfig cfg;
    cfg.vit = parse_vit_config_user(j.contains("vit") ? j.at("vit") : json::object());
    cfg.train = parse_train_config(j.contains("train") ? j.at("train") : json::object());
    if (j.contains("building_id")) cfg.building_id = j.at("building_id").get<int>();
    return cfg;
}

int cmd_train(const CommonOpts& opt) {
    json cfg_json = config_or_empty(opt);
    TrainRunConfig cfg = parse_train_run(cfg_json);
    if (opt.seed_set) cfg.train.seed = opt.seed;
    cfg.train.log_progress = true;

    FingerprintDataset dataset = load_dataset(opt.data_path);
    if (cfg.building_id) dataset = filter_building(dataset, *cfg.building_id);
    cfg.vit = resolve_image_size(cfg.vit, derive_ap_index(dataset).size());

    const TrainResult result = train(dataset, cfg.vit, cfg.train);
    save_checkpoint(result.to_model(), opt.out_path);
    write_run_manifest(opt.out_path, "train", cfg_json, cfg.train.seed, {opt.data_path});

    json history = json::array();
    for (const auto& e : result.history) {
        history.push_back({{"mean_loss", e.mean_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"devices_seen", e.devices_seen}});
    }
    write_atomic(opt.out_path + ".history.json",
                 json{{"epochs_run", result.epochs_run}, {"history", history}}.dump(2) + "\n");
    std::cerr << "trained " << result.classes.size() << " classes, " << param_count(result.config)
              << " parameters, " << result.epochs_run << " epochs -> " << opt.out_path << "\n";
    return 0;
}

int cmd_eval(const CommonOpts& opt) {
    VitModel<float> model = load_checkpoint(opt.model_path);
    const FingerprintDataset dataset = load_dataset(opt.data_path);
    DamConfig dam;  // eval-mode images ignore the stochastic fields
    EvalReport report = evaluate(model, dataset, dam);
    report.seed = opt.seed;
    report.config_hash = fnv1a64(vit_config_to_json(model.config).dump());
    write_atomic(opt.out_path, report_to_json(report));
    write_atomic(opt.out_path + ".csv", report_to_csv(report));
    write_run_manifest(opt.out_path, "eval", json::object(), opt.seed, {opt.model_path, opt.data_path});
    std::cerr << "mean error " << report.overall.mean_m << " m, accuracy " << report.overall.accuracy
              << " over " << report.overall.count << " records\n";
    return 0;
}

int cmd_sweep(const CommonOpts& opt) {
    json cfg_json = load_config(opt.config_path);
    for (const auto& [key, value] : cfg_json.items()) {
        if (key != "vit" && key != "train" && key != "grid" && key != "split_ratio") {
            throw ConfigError("sweep config: unknown key '" + key + "'");
        }
    }
    if (!cfg_json.contains("grid")) throw ConfigError("sweep config needs a 'grid' object");
    const SweepGrid grid = parse_sweep_grid(cfg_json.at("grid"));
    VitConfig base = parse_vit_config_user(cfg_json.contains("vit") ? cfg_json.at("vit") : json::object());
    TrainConfig tc = parse_train_config(cfg_json.contains("train") ? cfg_json.at("train") : json::object());
    double split_ratio = 0.8;
    if (cfg_json.contains("split_ratio")) split_ratio = cfg_json.at("split_ratio").get<double>();
    if (opt.seed_set) tc.seed = opt.seed;

    const FingerprintDataset dataset = load_dataset(opt.data_path);
    const std::vector<SweepRow> rows = sweep(dataset, grid, base, tc, split_ratio, opt.jobs);
    write_atomic(opt.out_path, sweep_to_csv(rows));
    write_run_manifest(opt.out_path, "sweep", cfg_json, tc.seed, {opt.data_path});
    std::cerr << rows.size() << " grid points -> " << opt.out_path << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& opt) {
    json cfg_json = config_or_empty(opt);
    for (const auto& [key, value] : cfg_json.items()) {
        if (key != "vit" && key != "train" && key != "split_ratio" && key != "base_devices" &&
            key != "extended_devices") {
            throw ConfigError("ablate config: unknown key '" + key + "'");
        }
    }
    VitConfig vit = parse_vit_config_user(cfg_json.contains("vit") ? cfg_json.at("vit") : json::object());
    TrainConfig tc = parse_train_config(cfg_json.contains("train") ? cfg_json.at("train") : json::object());
    if (opt.seed_set) tc.seed = opt.seed;

    const FingerprintDataset dataset = load_dataset(opt.data_path);
    vit = resolve_image_size(vit, derive_ap_index(dataset).size());

    FingerprintDataset train_set, test_set;
    if (cfg_json.contains("base_devices") || cfg_json.contains("extended_devices")) {
        if (!cfg_json.contains("base_devices") || !cfg_json.contains("extended_devices")) {
            throw ConfigError("ablate config: base_devices and extended_devices must be given together");
        }
        train_set = filter_devices(dataset, cfg_json.at("base_devices").get<std::vector<std::string>>());
        test_set = filter_devices(dataset, cfg_json.at("extended_devices").get<std::vector<std::string>>());
        if (train_set.records.empty()) throw ValueError("no records for the base devices");
        if (test_set.records.empty()) throw ValueError("no records for the extended devices");
    } else {
        double ratio = 0.8;
        if (cfg_json.contains("split_ratio")) ratio = cfg_json.at("split_ratio").get<double>();
        std::tie(train_set, test_set) = split(dataset, ratio, tc.seed);
    }

    const AblatePair pair = ablate_dam(train_set, test_set, vit, tc);
    json out;
    out["with_augmentation"] = json::parse(report_to_json(pair.with_augmentation));
    out["without_augmentation"] = json::parse(report_to_json(pair.without_augmentation));
    write_atomic(opt.out_path, out.dump(2) + "\n");
    write_run_manifest(opt.out_path, "ablate", cfg_json, tc.seed, {opt.data_path});
    std::cerr << "mean error with augmentation " << pair.with_augmentation.overall.mean_m
              << " m, without " << pair.without_augmentation.overall.mean_m << " m\n";
    return 0;
}

int cmd_predict(const CommonOpts& opt) {
    VitModel<float> model = load_checkpoint(opt.model_path);
    const FingerprintDataset dataset = load_dataset(opt.data_path);
    DamConfig dam;
    dam.mode = opt.mode == "train" ? DamMode::train : DamMode::eval;
    dam.seed = opt.seed;

    json out = json::array();
    Rng rng = stream_rng(opt.seed, "predict");
    for (const auto& rec : dataset.records) {
        const ReducedFingerprint red = reduce_record(rec);
        Prediction p;
        if (dam.mode == DamMode::train) {
            // stochastic-augmentation prediction, for experimentation
            DamConfig cfg = dam;
            cfg.image_size = model.config.image_size;
            ApIndex index{std::vector<std::string>(model.ap_ids)};
            const RssiImage2d<float> img = dam_apply<float>(to_1d_image(red, index), cfg, rng);
            const Tensor<float> logits = forward(model, img);
            p.class_index = 0;
            for (std::size_t c = 1; c < logits.numel(); ++c)
                if (logits[c] > logits[p.class_index]) p.class_index = c;
            p.label = model.classes[p.class_index];
        } else {
            p = predict(model, red, dam);
        }
        out.push_back({{"device_id", rec.device_id},
                       {"true_building_id", rec.building_id},
                       {"true_rp_id", rec.rp_id},
                       {"predicted_building_id", p.label.building_id},
                       {"predicted_rp_id", p.label.rp_id},
                       {"x_m", p.label.x_m},
                       {"y_m", p.label.y_m}});
    }
    const std::string text = out.dump(2) + "\n";
    if (opt.out_path.empty()) {
        std::cout << text;
    } else {
        write_atomic(opt.out_path, text);
        write_run_manifest(opt.out_path, "predict", json::object(), opt.seed,
                           {opt.model_path, opt.data_path});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RSSI-image transformer localization pipeline"};
    app.require_subcommand(1);

    CommonOpts opt;
    auto add_common = [&](CLI::App* cmd, bool needs_data, bool needs_model, bool needs_out,
                          bool needs_config) {
        auto* c = cmd->add_option("--config", opt.config_path, "JSON config file");
        if (needs_config) c->required()->check(CLI::ExistingFile);
        auto* d = cmd->add_option("--data", opt.data_path, "fingerprint CSV");
        if (needs_data) d->required()->check(CLI::ExistingFile);
        auto* m = cmd->add_option("--model", opt.model_path, "checkpoint file");
        if (needs_model) m->required()->check(CLI::ExistingFile);
        auto* o = cmd->add_option("--out", opt.out_path, "output path");
        if (needs_out) o->required();
        cmd->add_option("--seed", opt.seed, "RNG seed override")->each([&](const std::string&) {
            opt.seed_set = true;
        });
        return cmd;
    };

    auto* gen = add_common(app.add_subcommand("gen", "emit a synthetic fingerprint dataset"), false, false,
                           true, false);
    auto* train_cmd = add_common(app.add_subcommand("train", "train a model from a fingerprint CSV"), true,
                                 false, true, false);
    auto* eval_cmd = add_common(app.add_subcommand("eval", "evaluate a checkpoint on a dataset"), true, true,
                                true, false);
    auto* sweep_cmd = add_common(app.add_subcommand("sweep", "hyperparameter grid -> CSV table"), true,
                                 false, true, true);
    sweep_cmd->add_option("--jobs", opt.jobs, "concurrent grid points")->check(CLI::PositiveNumber);
    auto* ablate_cmd = add_common(app.add_subcommand("ablate", "paired with/without-augmentation runs"),
                                  true, false, true, false);
    auto* predict_cmd = add_common(app.add_subcommand("predict", "classify fingerprints with a checkpoint"),
                                   true, true, false, false);
    predict_cmd->add_option("--mode", opt.mode, "augmentation mode")
        ->check(CLI::IsMember({"train", "eval"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(opt);
        if (train_cmd->parsed()) return cmd_train(opt);
        if (eval_cmd->parsed()) return cmd_eval(opt);
        if (sweep_cmd->parsed()) return cmd_sweep(opt);
        if (ablate_cmd->parsed()) return cmd_ablate(opt);
        if (predict_cmd->parsed()) return cmd_predict(opt);
    } catch (const ConfigError& e) {
        std::cerr << "error: bad-config: " << e.what() << "\n";
        return 2;
    } catch (const MissingFileError& e) {
        std::cerr << "error: missing-file: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: training-divergence: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        // FormatError, ShapeError, ValueError, filesystem oddities
        std::cerr << "error: format-error: " << e.what() << "\n";
        return 4;
    }
    return 1;
}
