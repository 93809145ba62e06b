#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vitloc/common.hpp"
#include "vitloc/fingerprint.hpp"

namespace vitloc {

/// One corridor-shaped building: a straight survey path along x with APs
/// scattered in a band around it.
struct BuildingSpec {
    int building_id = 0;
    double path_length_m = 62.0;
    std::size_t num_aps = 120;
    double pathloss_exponent = 2.5;   // n
    double shadowing_sigma_db = 2.0;
    double tx_power_db = -40.0;       // received power at the reference distance
    double ref_distance_m = 1.0;      // d0

    void validate() const {
        if (path_length_m < 1.0) throw ConfigError("building path_length must be >= 1 m");
        if (num_aps < 1) throw ConfigError("building needs at least one AP");
        if (shadowing_sigma_db < 0.0) throw ConfigError("shadowing sigma must be >= 0");
        if (pathloss_exponent <= 0.0) throw ConfigError("pathloss exponent must be positive");
        if (ref_distance_m <= 0.0) throw ConfigError("reference distance must be positive");
    }
};

/// Per-device measurement skew: affine response plus a detection floor and a
/// chance of dropping a visible AP outright.
struct DeviceProfile {
    std::string device_id;
    double gain_offset_db = 0.0;
    double scale = 1.0;
    double detection_threshold_db = -100.0;
    double extra_miss_prob = 0.0;

    void validate() const {
        if (device_id.empty()) throw ConfigError("device profile needs an id");
        if (!(scale > 0.0)) throw ConfigError("device scale must be positive");
        if (detection_threshold_db < kRssiFloorDb || detection_threshold_db > kRssiCeilDb) {
            throw ConfigError("device detection threshold must lie in [-100, 0]");
        }
        if (!(extra_miss_prob >= 0.0 && extra_miss_prob < 1.0)) {
            throw ConfigError("device extra_miss_prob must be in [0, 1)");
        }
    }
};

struct GenConfig {
    std::vector<BuildingSpec> buildings;
    std::vector<DeviceProfile> base_devices;
    std::vector<DeviceProfile> extended_devices;
    std::size_t samples_per_rp_per_device = 5;
    std::uint64_t seed = 0;

    void validate() const;

    /// 4 buildings (62-88 m paths), 6 base + 3 extended devices,
    /// 5 samples per RP per device.
    static GenConfig defaults();
};

/// Survey geometry for one building: RPs at 1 m spacing along the path and
/// fixed AP placements.
struct BuildingGeometry {
    std::vector<ReferencePoint> rps;
    std::vector<std::string> ap_ids;                 // sorted; parallel to ap_positions
    std::vector<std::array<double, 2>> ap_positions;
};

/// RPs at 1 m spacing (floor(length)+1 of them) along y = 200*building_id,
/// plus seeded uniform AP placements in a 20 m band around the path.
BuildingGeometry gen_building(const BuildingSpec& spec, Rng& rng);

/// Log-distance path loss with Gaussian shadowing, clamped to [-100, 0]:
/// P0 - 10 n log10(max(d, d0)/d0) + Normal(0, sigma).
double true_rssi(const std::array<double, 2>& ap_pos, const std::array<double, 2>& rp_pos,
                 const BuildingSpec& spec, Rng& rng);

/// scale*v + offset clamped to [-100, 0]; below-threshold readings and
/// random misses collapse to the -100 not-visible sentinel. Always consumes
/// exactly one coin draw, so streams stay aligned across profiles.
double apply_device(double rssi_db, const DeviceProfile& profile, Rng& rng);

/// Full synthetic survey. Deterministic per seed; every (building, device)
/// pair draws from its own labeled RNG stream, so output is identical no
/// matter how generation is scheduled.
FingerprintDataset generate(const GenConfig& config);

/// JSON manifest of the generating geometry and device profiles (serialized
/// deterministically; suitable for committing next to the CSV).
std::string describe_generation(const GenConfig& config);

}  // namespace vitloc
