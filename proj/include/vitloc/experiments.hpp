#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vitloc/eval.hpp"
#include "vitloc/train.hpp"

namespace vitloc {

/// One model per building trained on `train_set`, evaluated on `test_set`'s
/// records of the same building; per-record results merged into one report.
/// Trained models are appended to `out_models` when given (building order).
EvalReport train_eval_per_building(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                                   const VitConfig& vit, const TrainConfig& tc,
                                   std::vector<TrainResult>* out_models = nullptr);

/// Held-out-device protocol: train on base-device records only, evaluate on
/// extended-device records only (per building). The two device sets must be
/// disjoint and the extended set non-empty.
EvalReport extended_device_eval(const FingerprintDataset& dataset,
                                const std::vector<std::string>& base_devices,
                                const std::vector<std::string>& extended_devices, const VitConfig& vit,
                                const TrainConfig& tc);

struct AblatePair {
    EvalReport with_augmentation;
    EvalReport without_augmentation;
};

/// Paired runs differing only in the augmentation content: the second run
/// sets dropout_prob = 0 and infill_sigma = 0 but keeps the same copy count,
/// so both arms take the same number of optimizer steps per epoch. Seeds and
/// splits are shared.
AblatePair ablate_dam(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                      const VitConfig& vit, const TrainConfig& tc);

struct SweepPoint {
    std::size_t image_size = 0;
    std::size_t patch_size = 0;
    std::size_t num_heads = 0;
    std::size_t head_hidden_layers = 0;  // 128-wide hidden layers before the class layer
};

struct SweepGrid {
    std::vector<std::size_t> image_sizes;
    std::vector<std::size_t> patch_sizes;
    std::vector<std::size_t> num_heads;
    std::vector<std::size_t> head_hidden_layers;

    std::vector<SweepPoint> points() const;  // canonical cross-product order
};

struct SweepRow {
    SweepPoint point;
    bool ok = false;
    std::string error;     // single line, set when !ok
    ErrorStats stats;      // overall stats when ok
};

/// Train+evaluate once per grid point with shared seed and split. Invalid
/// points become error rows; the rest continue. `jobs` > 1 runs points
/// concurrently (results are merged in canonical order regardless).
std::vector<SweepRow> sweep(const FingerprintDataset& dataset, const SweepGrid& grid, const VitConfig& base,
                            const TrainConfig& tc, double split_ratio, std::size_t jobs);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace vitloc
