#include "vitloc/json_io.hpp"

#include <set>

namespace vitloc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& what) {
    if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(what + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("bad value for '") + key + "'");
    }
}

Pooling pooling_of(const std::string& s) {
    if (s == "mean") return Pooling::mean;
    if (s == "class_token") return Pooling::class_token;
    throw ConfigError("pooling must be 'mean' or 'class_token', got '" + s + "'");
}

Merge merge_of(const std::string& s) {
    if (s == "residual_add") return Merge::residual_add;
    if (s == "concat_project") return Merge::concat_project;
    throw ConfigError("merge must be 'residual_add' or 'concat_project', got '" + s + "'");
}

DropoutGranularity granularity_of(const std::string& s) {
    if (s == "per_pixel") return DropoutGranularity::per_pixel;
    if (s == "per_column") return DropoutGranularity::per_column;
    throw ConfigError("granularity must be 'per_pixel' or 'per_column', got '" + s + "'");
}

OptimizerKind optimizer_of(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("optimizer must be 'adam' or 'sgd', got '" + s + "'");
}

}  // namespace

std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "class_token"; }
std::string to_string(Merge m) { return m == Merge::residual_add ? "residual_add" : "concat_project"; }
std::string to_string(DropoutGranularity g) {
    return g == DropoutGranularity::per_pixel ? "per_pixel" : "per_column";
}
std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

nlohmann::json vit_config_to_json(const VitConfig& cfg) {
    return {{"image_size", cfg.image_size},
            {"patch_size", cfg.patch_size},
            {"embed_dim", cfg.embed_dim},
            {"num_heads", cfg.num_heads},
            {"head_dim", cfg.head_dim},
            {"num_blocks", cfg.num_blocks},
            {"encoder_mlp_dims", cfg.encoder_mlp_dims},
            {"head_dims", cfg.head_dims},
            {"num_classes", cfg.num_classes},
            {"pooling", to_string(cfg.pooling)},
            {"merge", to_string(cfg.merge)}};
}

nlohmann::json dam_config_to_json(const DamConfig& cfg) {
    return {{"image_size", cfg.image_size},
            {"dropout_prob", cfg.dropout_prob},
            {"infill_mean", cfg.infill_mean},
            {"infill_sigma", cfg.infill_sigma},
            {"granularity", to_string(cfg.granularity)}};
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    return {{"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"optimizer", to_string(cfg.optimizer.kind)},
            {"learning_rate", cfg.optimizer.learning_rate},
            {"beta1", cfg.optimizer.beta1},
            {"beta2", cfg.optimizer.beta2},
            {"epsilon", cfg.optimizer.eps},
            {"augmented_copies_per_record", cfg.augmented_copies_per_record},
            {"target_train_accuracy", cfg.target_train_accuracy},
            {"dam", dam_config_to_json(cfg.dam)}};
}

static void parse_vit_common(const json& j, VitConfig& cfg) {
    read(j, "image_size", cfg.image_size);
    read(j, "patch_size", cfg.patch_size);
    read(j, "embed_dim", cfg.embed_dim);
    read(j, "num_heads", cfg.num_heads);
    read(j, "head_dim", cfg.head_dim);
    read(j, "num_blocks", cfg.num_blocks);
    read(j, "encoder_mlp_dims", cfg.encoder_mlp_dims);
    if (j.contains("pooling")) cfg.pooling = pooling_of(j.at("pooling").get<std::string>());
    if (j.contains("merge")) cfg.merge = merge_of(j.at("merge").get<std::string>());
}

VitConfig parse_vit_config_full(const json& j) {
    check_keys(j,
               {"image_size", "patch_size", "embed_dim", "num_heads", "head_dim", "num_blocks",
                "encoder_mlp_dims", "head_dims", "num_classes", "pooling", "merge"},
               "model config");
    VitConfig cfg;
    parse_vit_common(j, cfg);
    read(j, "head_dims", cfg.head_dims);
    read(j, "num_classes", cfg.num_classes);
    cfg.validate();
    return cfg;
}

VitConfig parse_vit_config_user(const json& j) {
    check_keys(j,
               {"image_size", "patch_size", "embed_dim", "num_heads", "head_dim", "num_blocks",
                "encoder_mlp_dims", "head_hidden_dims", "pooling", "merge"},
               "model config");
    VitConfig cfg;
    parse_vit_common(j, cfg);
    std::vector<std::size_t> hidden = {128};
    read(j, "head_hidden_dims", hidden);
    cfg.head_dims = hidden;
    cfg.head_dims.push_back(0);  // class layer resolved from the data
    cfg.num_classes = 0;
    return cfg;  // validated at training time, once classes are known
}

DamConfig parse_dam_config(const json& j) {
    check_keys(j, {"image_size", "dropout_prob", "infill_mean", "infill_sigma", "granularity"},
               "augmentation config");
    DamConfig cfg;
    read(j, "image_size", cfg.image_size);
    read(j, "dropout_prob", cfg.dropout_prob);
    read(j, "infill_mean", cfg.infill_mean);
    read(j, "infill_sigma", cfg.infill_sigma);
    if (j.contains("granularity")) cfg.granularity = granularity_of(j.at("granularity").get<std::string>());
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const json& j) {
    check_keys(j,
               {"epochs", "batch_size", "optimizer", "learning_rate", "beta1", "beta2", "epsilon",
                "augmented_copies_per_record", "target_train_accuracy", "dam"},
               "train config");
    TrainConfig cfg;
    read(j, "epochs", cfg.epochs);
    read(j, "batch_size", cfg.batch_size);
    if (j.contains("optimizer")) cfg.optimizer.kind = optimizer_of(j.at("optimizer").get<std::string>());
    read(j, "learning_rate", cfg.optimizer.learning_rate);
    read(j, "beta1", cfg.optimizer.beta1);
    read(j, "beta2", cfg.optimizer.beta2);
    read(j, "epsilon", cfg.optimizer.eps);
    read(j, "augmented_copies_per_record", cfg.augmented_copies_per_record);
    read(j, "target_train_accuracy", cfg.target_train_accuracy);
    if (j.contains("dam")) cfg.dam = parse_dam_config(j.at("dam"));
    cfg.validate();
    return cfg;
}

GenConfig parse_gen_config(const json& j) {
    check_keys(j, {"buildings", "base_devices", "extended_devices", "samples_per_rp_per_device", "seed"},
               "generator config");
    GenConfig cfg = GenConfig::defaults();
    read(j, "samples_per_rp_per_device", cfg.samples_per_rp_per_device);
    read(j, "seed", cfg.seed);
    if (j.contains("buildings")) {
        cfg.buildings.clear();
        for (const auto& jb : j.at("buildings")) {
            check_keys(jb,
                       {"building_id", "path_length_m", "num_aps", "pathloss_exponent",
                        "shadowing_sigma_db", "tx_power_db", "ref_distance_m"},
                       "building spec");
            BuildingSpec b;
            read(jb, "building_id", b.building_id);
            read(jb, "path_length_m", b.path_length_m);
            read(jb, "num_aps", b.num_aps);
            read(jb, "pathloss_exponent", b.pathloss_exponent);
            read(jb, "shadowing_sigma_db", b.shadowing_sigma_db);
            read(jb, "tx_power_db", b.tx_power_db);
            read(jb, "ref_distance_m", b.ref_distance_m);
            cfg.buildings.push_back(b);
        }
    }
    auto parse_devices = [](const json& arr, const char* what) {
        std::vector<DeviceProfile> out;
        for (const auto& jd : arr) {
            check_keys(jd,
                       {"device_id", "gain_offset_db", "scale", "detection_threshold_db", "extra_miss_prob"},
                       what);
            DeviceProfile d;
            read(jd, "device_id", d.device_id);
            read(jd, "gain_offset_db", d.gain_offset_db);
            read(jd, "scale", d.scale);
            read(jd, "detection_threshold_db", d.detection_threshold_db);
            read(jd, "extra_miss_prob", d.extra_miss_prob);
            out.push_back(d);
        }
        return out;
    };
    if (j.contains("base_devices")) cfg.base_devices = parse_devices(j.at("base_devices"), "device profile");
    if (j.contains("extended_devices")) {
        cfg.extended_devices = parse_devices(j.at("extended_devices"), "device profile");
    }
    cfg.validate();
    return cfg;
}

SweepGrid parse_sweep_grid(const json& j) {
    check_keys(j, {"image_sizes", "patch_sizes", "num_heads", "head_hidden_layers"}, "sweep grid");
    SweepGrid grid;
    read(j, "image_sizes", grid.image_sizes);
    read(j, "patch_sizes", grid.patch_sizes);
    read(j, "num_heads", grid.num_heads);
    read(j, "head_hidden_layers", grid.head_hidden_layers);
    if (grid.image_sizes.empty() || grid.patch_sizes.empty() || grid.num_heads.empty() ||
        grid.head_hidden_layers.empty()) {
        throw ConfigError("sweep grid needs at least one value per axis");
    }
    return grid;
}

VitConfig resolve_image_size(VitConfig cfg, std::size_t ap_count) {
    if (cfg.image_size != 0) return cfg;
    if (cfg.patch_size == 0) throw ConfigError("vit patch_size must be positive");
    const std::size_t tiles = (std::max<std::size_t>(ap_count, 1) + cfg.patch_size - 1) / cfg.patch_size;
    cfg.image_size = tiles * cfg.patch_size;
    return cfg;
}

}  // namespace vitloc
