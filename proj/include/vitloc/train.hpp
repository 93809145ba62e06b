#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitloc/dam.hpp"
#include "vitloc/fingerprint.hpp"
#include "vitloc/optimizer.hpp"
#include "vitloc/vit.hpp"

namespace vitloc {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
    DamConfig dam;
    std::size_t augmented_copies_per_record = 4;
    // > 0: stop after the first epoch whose training accuracy reaches this
    double target_train_accuracy = 0.0;
    bool log_progress = false;  // one line per epoch on stderr

    void validate() const {
        if (epochs == 0) throw ConfigError("train epochs must be positive");
        if (batch_size == 0) throw ConfigError("train batch_size must be positive");
        if (augmented_copies_per_record == 0) throw ConfigError("augmented_copies_per_record must be positive");
        if (!(target_train_accuracy >= 0.0 && target_train_accuracy <= 1.0)) {
            throw ConfigError("target_train_accuracy must be in [0, 1]");
        }
        if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        dam.validate();
    }
};

struct EpochLog {
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    std::vector<std::string> devices_seen;  // sorted unique, from actual batches
};

struct TrainResult {
    VitConfig config;  // num_classes/head resolved against the data
    VitWeights<float> weights;
    std::vector<ClassLabel> classes;
    std::vector<std::string> ap_ids;
    std::vector<EpochLog> history;
    std::size_t epochs_run = 0;

    VitModel<float> to_model() const { return {config, weights, classes, ap_ids, nullptr}; }
};

/// Sorted union of AP ids over a dataset's records: the input space a model
/// trained on those records uses.
ApIndex derive_ap_index(const FingerprintDataset& dataset);

/// Distinct (building, rp) pairs over the records, canonical order, with
/// coordinates resolved from the RP table.
std::vector<ClassLabel> derive_classes(const FingerprintDataset& dataset);

/// Device-pooled training. All records (every device) are reduced to 1D
/// images, re-augmented each epoch with fresh train-mode draws, and fed as
/// `augmented_copies_per_record` examples per record in a seeded shuffle.
/// If vit.num_classes is 0 it is resolved from the data (a trailing 0 in
/// head_dims is resolved with it). Throws DivergenceError on non-finite loss.
TrainResult train(const FingerprintDataset& train_set, VitConfig vit, TrainConfig tc);

}  // namespace vitloc
