#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitloc/dam.hpp"
#include "vitloc/fingerprint.hpp"
#include "vitloc/vit.hpp"

namespace vitloc {

/// Error of one test record: predicted RP's coordinates vs the true RP's.
struct RecordResult {
    int building_id = 0;
    std::string device_id;
    int rp_id = 0;
    int predicted_building_id = 0;
    int predicted_rp_id = 0;
    double error_m = 0.0;
    bool correct = false;
};

struct ErrorStats {
    std::size_t count = 0;
    double min_m = 0.0;
    double mean_m = 0.0;
    double max_m = 0.0;
    double accuracy = 0.0;
};

/// One (building, device) cell of a report.
struct EvalCell {
    int building_id = 0;
    std::string device_id;
    ErrorStats stats;
};

struct EvalReport {
    std::vector<RecordResult> records;  // canonical record order
    std::vector<EvalCell> cells;        // canonical (building, device) order
    ErrorStats overall;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    double wall_seconds = 0.0;  // run-manifest metadata; never serialized
};

/// Aggregate raw per-record results into cells + overall.
EvalReport make_report(std::vector<RecordResult> records, std::uint64_t seed, std::uint64_t config_hash);

/// Classify every record of `test_set` with the model (deterministic
/// eval-mode images) and report localization errors.
EvalReport evaluate(VitModel<float>& model, const FingerprintDataset& test_set, const DamConfig& dam);

/// k-nearest-neighbor baseline in normalized 1D fingerprint space (Euclidean
/// over min/max/mean channels). Majority RP vote; ties broken by smaller
/// summed neighbor distance, then by canonical class order.
EvalReport knn_baseline(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                        std::size_t k);

/// Deterministic JSON document (excludes wall-clock so re-runs are
/// byte-identical).
std::string report_to_json(const EvalReport& report);

/// Flat CSV, one row per (building, device) cell plus an `overall` row.
std::string report_to_csv(const EvalReport& report);

}  // namespace vitloc
