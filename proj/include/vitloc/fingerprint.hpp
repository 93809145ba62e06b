#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vitloc/common.hpp"

namespace vitloc {

/// A surveyed location; classification target.
struct ReferencePoint {
    int building_id = 0;
    int rp_id = 0;
    double x_m = 0.0;
    double y_m = 0.0;
};

/// All scans for one (building, RP, device): per-AP sequences of RSSI in dB.
/// ap_ids is the record's own AP listing; samples is aligned with it.
struct FingerprintRecord {
    int building_id = 0;
    int rp_id = 0;
    std::string device_id;
    std::vector<std::string> ap_ids;
    std::vector<std::vector<double>> samples;
};

/// Per-AP (min, max, mean) channel triple in dB.
struct ReducedFingerprint {
    int building_id = 0;
    int rp_id = 0;
    std::string device_id;
    std::vector<std::string> ap_ids;
    std::vector<std::array<double, 3>> channels;
};

/// One pixel per AP, three channels (min, max, mean), dB domain,
/// layout [pixel][channel].
struct RssiImage1d {
    std::size_t pixels = 0;
    std::vector<double> values;
};

/// Bijection AP identifier -> pixel position, ordered lexicographically.
class ApIndex {
public:
    ApIndex() = default;
    explicit ApIndex(std::vector<std::string> ids);  // sorts, rejects duplicates

    std::size_t size() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }
    std::size_t position(const std::string& ap_id) const;  // throws if absent
    bool contains(const std::string& ap_id) const { return pos_.count(ap_id) != 0; }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> pos_;
};

struct FingerprintDataset {
    std::vector<FingerprintRecord> records;   // canonical (building, rp, device) order
    std::vector<ReferencePoint> rps;          // canonical (building, rp) order
    ApIndex ap_index;
    std::vector<std::string> devices;         // sorted roster
    std::size_t samples_per_record = 0;

    const ReferencePoint& rp(int building_id, int rp_id) const;
    std::vector<int> building_ids() const;
};

// ---- operations ------------------------------------------------------------

/// Shortest decimal form that round-trips the exact double; the one float
/// format used in emitted CSV artifacts.
std::string fmt_double(double v);

/// Collapse one AP's scan sequence to its (min, max, mean) channels.
std::array<double, 3> reduce_samples(const std::vector<double>& samples);

ReducedFingerprint reduce_record(const FingerprintRecord& record);

/// Reduced record -> 1D image over the index's pixel positions. APs absent
/// from the record become (-100, -100, -100); APs absent from the index are
/// an error.
RssiImage1d to_1d_image(const ReducedFingerprint& record, const ApIndex& index);

/// Deterministic stratified split: every (building, RP) class keeps at least
/// one record in training. Throws ValueError when a class is too small for
/// that at the given ratio.
std::pair<FingerprintDataset, FingerprintDataset> split(const FingerprintDataset& dataset,
                                                        double ratio, std::uint64_t seed);

FingerprintDataset load_dataset(const std::string& path);
void save_dataset(const FingerprintDataset& dataset, const std::string& path);

/// Subset with only the given building (full RP/AP/device tables retained).
FingerprintDataset filter_building(const FingerprintDataset& dataset, int building_id);

/// Subset with only records whose device id is in `device_ids`.
FingerprintDataset filter_devices(const FingerprintDataset& dataset,
                                  const std::vector<std::string>& device_ids);

// Canonical ordering + table rebuild after direct record edits (synthgen,
// tests). Keeps the ap index unchanged.
void canonicalize(FingerprintDataset& dataset);

}  // namespace vitloc
