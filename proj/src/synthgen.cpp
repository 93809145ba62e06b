#include "vitloc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vitloc {

namespace {

// Buildings sit at distinct y offsets so joint multi-building coordinates
// never collide.
double building_y(int building_id) { return 200.0 * building_id; }

std::string padded(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

void GenConfig::validate() const {
    if (buildings.empty()) throw ConfigError("gen config needs at least one building");
    std::set<int> bids;
    for (const auto& b : buildings) {
        b.validate();
        if (!bids.insert(b.building_id).second) {
            throw ConfigError("duplicate building id " + std::to_string(b.building_id));
        }
    }
    if (base_devices.empty()) throw ConfigError("gen config needs at least one base device");
    std::set<std::string> ids;
    for (const auto* group : {&base_devices, &extended_devices}) {
        for (const auto& d : *group) {
            d.validate();
            if (!ids.insert(d.device_id).second) {
                throw ConfigError("duplicate device id '" + d.device_id + "'");
            }
        }
    }
    if (samples_per_rp_per_device == 0) throw ConfigError("samples_per_rp_per_device must be positive");
}

GenConfig GenConfig::defaults() {
    GenConfig cfg;
    const double lengths[] = {62.0, 71.0, 80.0, 88.0};
    const std::size_t aps[] = {120, 150, 180, 206};
    for (int b = 0; b < 4; ++b) {
        BuildingSpec spec;
        spec.building_id = b;
        spec.path_length_m = lengths[b];
        spec.num_aps = aps[b];
        cfg.buildings.push_back(spec);
    }
    // Hand-picked plausible skews: offsets within +/-6 dB, scales 0.9-1.1,
    // detection floors -95..-86 dB, occasional extra misses.
    const struct {
        const char* id;
        double off, scale, thresh, miss;
    } base[] = {
        {"base0", 0.0, 1.00, -95.0, 0.00},
        {"base1", 3.0, 1.05, -92.0, 0.01},
        {"base2", -3.0, 0.95, -90.0, 0.02},
        {"base3", 6.0, 1.10, -88.0, 0.00},
        {"base4", -6.0, 0.90, -94.0, 0.03},
        {"base5", 1.5, 0.98, -86.0, 0.01},
    }, ext[] = {
        {"ext0", -4.5, 1.08, -89.0, 0.02},
        {"ext1", 4.5, 0.93, -91.0, 0.04},
        {"ext2", -1.5, 1.02, -87.0, 0.00},
    };
    for (const auto& d : base) {
        cfg.base_devices.push_back({d.id, d.off, d.scale, d.thresh, d.miss});
    }
    for (const auto& d : ext) {
        cfg.extended_devices.push_back({d.id, d.off, d.scale, d.thresh, d.miss});
    }
    return cfg;
}

BuildingGeometry gen_building(const BuildingSpec& spec, Rng& rng) {
    spec.validate();
    BuildingGeometry geom;
    const double y0 = building_y(spec.building_id);
    const std::size_t num_rps = static_cast<std::size_t>(std::floor(spec.path_length_m)) + 1;
    for (std::size_t i = 0; i < num_rps; ++i) {
        geom.rps.push_back({spec.building_id, static_cast<int>(i), static_cast<double>(i), y0});
    }
    // ap ids are zero-padded so lexicographic column order matches placement
    // order
    for (std::size_t a = 0; a < spec.num_aps; ++a) {
        geom.ap_ids.push_back("b" + std::to_string(spec.building_id) + "_ap" + padded(a, 4));
        const double x = rng.uniform(0.0, spec.path_length_m);
        const double y = y0 + rng.uniform(-10.0, 10.0);
        geom.ap_positions.push_back({x, y});
    }
    return geom;
}

double true_rssi(const std::array<double, 2>& ap_pos, const std::array<double, 2>& rp_pos,
                 const BuildingSpec& spec, Rng& rng) {
    const double dx = ap_pos[0] - rp_pos[0];
    const double dy = ap_pos[1] - rp_pos[1];
    const double d = std::max(std::sqrt(dx * dx + dy * dy), spec.ref_distance_m);
    double v = spec.tx_power_db - 10.0 * spec.pathloss_exponent * std::log10(d / spec.ref_distance_m);
    // one draw regardless of sigma keeps streams aligned across specs
    v += rng.normal(0.0, spec.shadowing_sigma_db);
    return std::clamp(v, kRssiFloorDb, kRssiCeilDb);
}

double apply_device(double rssi_db, const DeviceProfile& profile, Rng& rng) {
    if (!(rssi_db >= kRssiFloorDb && rssi_db <= kRssiCeilDb)) {
        throw ValueError("apply_device: RSSI " + std::to_string(rssi_db) + " outside [-100, 0]");
    }
    const double v = std::clamp(profile.scale * rssi_db + profile.gain_offset_db, kRssiFloorDb, kRssiCeilDb);
    const bool missed = rng.bernoulli(profile.extra_miss_prob);
    if (v < profile.detection_threshold_db || missed) return kRssiFloorDb;
    return v;
}

FingerprintDataset generate(const GenConfig& config) {
    config.validate();
    FingerprintDataset out;
    out.samples_per_record = config.samples_per_rp_per_device;

    std::vector<DeviceProfile> devices = config.base_devices;
    devices.insert(devices.end(), config.extended_devices.begin(), config.extended_devices.end());

    std::vector<std::string> all_ap_ids;
    for (const auto& spec : config.buildings) {
        Rng geom_rng = stream_rng(config.seed, "geometry", static_cast<std::uint64_t>(spec.building_id));
        const BuildingGeometry geom = gen_building(spec, geom_rng);
        out.rps.insert(out.rps.end(), geom.rps.begin(), geom.rps.end());
        all_ap_ids.insert(all_ap_ids.end(), geom.ap_ids.begin(), geom.ap_ids.end());

        for (const auto& dev : devices) {
            // independent stream per (building, device): generation order has
            // no effect on the values
            Rng rng = stream_rng(config.seed,
                                 "measure/b" + std::to_string(spec.building_id) + "/" + dev.device_id);
            for (const auto& rp : geom.rps) {
                FingerprintRecord rec;
                rec.building_id = spec.building_id;
                rec.rp_id = rp.rp_id;
                rec.device_id = dev.device_id;
                rec.ap_ids = geom.ap_ids;
                rec.samples.assign(geom.ap_ids.size(),
                                   std::vector<double>(config.samples_per_rp_per_device, kRssiFloorDb));
                for (std::size_t s = 0; s < config.samples_per_rp_per_device; ++s) {
                    for (std::size_t a = 0; a < geom.ap_ids.size(); ++a) {
                        const double truth =
                            true_rssi(geom.ap_positions[a], {rp.x_m, rp.y_m}, spec, rng);
                        rec.samples[a][s] = apply_device(truth, dev, rng);
                    }
                }
                out.records.push_back(std::move(rec));
            }
        }
    }
    out.ap_index = ApIndex(std::move(all_ap_ids));
    canonicalize(out);
    return out;
}

std::string describe_generation(const GenConfig& config) {
    config.validate();
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["seed"] = config.seed;
    j["samples_per_rp_per_device"] = config.samples_per_rp_per_device;
    for (const auto& b : config.buildings) {
        Rng geom_rng = stream_rng(config.seed, "geometry", static_cast<std::uint64_t>(b.building_id));
        const BuildingGeometry geom = gen_building(b, geom_rng);
        nlohmann::json jb;
        jb["building_id"] = b.building_id;
        jb["path_length_m"] = b.path_length_m;
        jb["num_aps"] = b.num_aps;
        jb["num_rps"] = geom.rps.size();
        jb["pathloss_exponent"] = b.pathloss_exponent;
        jb["shadowing_sigma_db"] = b.shadowing_sigma_db;
        jb["tx_power_db"] = b.tx_power_db;
        jb["ref_distance_m"] = b.ref_distance_m;
        j["buildings"].push_back(jb);
    }
    auto devices_json = [](const std::vector<DeviceProfile>& devs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& d : devs) {
            arr.push_back({{"device_id", d.device_id},
                           {"gain_offset_db", d.gain_offset_db},
                           {"scale", d.scale},
                           {"detection_threshold_db", d.detection_threshold_db},
                           {"extra_miss_prob", d.extra_miss_prob}});
        }
        return arr;
    };
    j["base_devices"] = devices_json(config.base_devices);
    j["extended_devices"] = devices_json(config.extended_devices);
    return j.dump(2) + "\n";
}

}  // namespace vitloc
