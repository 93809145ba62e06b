#include "vitloc/train.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <utility>

namespace vitloc {

ApIndex derive_ap_index(const FingerprintDataset& dataset) {
    std::set<std::string> ids;
    for (const auto& r : dataset.records) ids.insert(r.ap_ids.begin(), r.ap_ids.end());
    return ApIndex(std::vector<std::string>(ids.begin(), ids.end()));
}

std::vector<ClassLabel> derive_classes(const FingerprintDataset& dataset) {
    std::set<std::pair<int, int>> seen;
    for (const auto& r : dataset.records) seen.insert({r.building_id, r.rp_id});
    std::vector<ClassLabel> classes;
    for (const auto& [b, rp] : seen) {
        const ReferencePoint& p = dataset.rp(b, rp);  // throws if unknown
        classes.push_back({b, rp, p.x_m, p.y_m});
    }
    return classes;
}

namespace {

std::size_t class_of(const std::vector<ClassLabel>& classes, int building_id, int rp_id) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].building_id == building_id && classes[i].rp_id == rp_id) return i;
    }
    throw ValueError("record's (building " + std::to_string(building_id) + ", rp " + std::to_string(rp_id) +
                     ") is not a training class");
}

}  // namespace

TrainResult train(const FingerprintDataset& train_set, VitConfig vit, TrainConfig tc) {
    tc.validate();
    if (train_set.records.empty()) throw ValueError("training set has no records");

    TrainResult result;
    result.classes = derive_classes(train_set);
    ApIndex ap_index = derive_ap_index(train_set);
    result.ap_ids = ap_index.ids();

    if (vit.num_classes == 0) {
        vit.num_classes = result.classes.size();
        if (!vit.head_dims.empty() && vit.head_dims.back() == 0) vit.head_dims.back() = vit.num_classes;
    } else if (vit.num_classes != result.classes.size()) {
        throw ConfigError("config num_classes " + std::to_string(vit.num_classes) + " but the data has " +
                          std::to_string(result.classes.size()) + " classes");
    }
    vit.validate();
    if (ap_index.size() > vit.image_size) {
        throw ConfigError(std::to_string(ap_index.size()) + " APs do not fit image_size " +
                          std::to_string(vit.image_size));
    }
    result.config = vit;

    DamConfig dam = tc.dam;
    dam.image_size = vit.image_size;
    dam.mode = DamMode::train;
    dam.validate();

    // reduce every record once; augmentation re-runs per epoch from these
    struct Example {
        RssiImage1d image;
        std::size_t label;
        const std::string* device;
    };
    std::vector<Example> base;
    base.reserve(train_set.records.size());
    for (const auto& rec : train_set.records) {
        const ReducedFingerprint red = reduce_record(rec);
        base.push_back({to_1d_image(red, ap_index), class_of(result.classes, rec.building_id, rec.rp_id),
                        &rec.device_id});
    }

    result.weights = init_weights<float>(vit, tc.seed);
    auto patch_idx = patch_indices(vit.image_size, vit.patch_size);

    // flat views over weights/grads in canonical order for the optimizer
    std::vector<Tensor<float>*> params;
    for_each_param(vit, result.weights, [&](const std::string&, Tensor<float>& t) { params.push_back(&t); });
    OptimizerState<float> opt_state;

    const std::size_t copies = tc.augmented_copies_per_record;
    const std::size_t num_examples = base.size() * copies;
    std::vector<std::size_t> order(num_examples);

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = 0; i < num_examples; ++i) order[i] = i;
        Rng shuffle_rng = stream_rng(tc.seed, "shuffle", epoch);
        for (std::size_t i = num_examples; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0;
        std::set<std::string> devices;
        for (std::size_t start = 0; start < num_examples; start += tc.batch_size) {
            const std::size_t count = std::min(tc.batch_size, num_examples - start);
            Tape<float> tape;
            VitParamIds ids = register_params(tape, vit, result.weights, true);
            Tape<float>::Id total = 0;
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t ex = order[start + i];
                const Example& e = base[ex / copies];
                devices.insert(*e.device);
                // augmentation stream is tied to (epoch, example), not to
                // shuffle position, so the images drawn are order-independent
                Rng dam_rng = stream_rng(tc.seed, "augment/" + std::to_string(epoch), ex);
                RssiImage2d<float> img = dam_apply<float>(e.image, dam, dam_rng);
                const std::size_t flat = img.values.size();
                auto img_leaf = tape.leaf(Tensor<float>({flat}, std::move(img.values)), false);
                auto loss = tape.cross_entropy(forward_on_tape(tape, img_leaf, vit, ids, patch_idx), e.label);
                total = i == 0 ? loss : tape.add(total, loss);
            }
            auto mean_loss = tape.scale(total, 1.0f / static_cast<float>(count));
            const double batch_loss = tape.value(mean_loss)[0];
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("non-finite loss " + std::to_string(batch_loss) + " at epoch " +
                                      std::to_string(epoch) + ", batch " + std::to_string(start / tc.batch_size));
            }
            loss_sum += batch_loss * static_cast<double>(count);
            tape.backward(mean_loss);

            std::vector<Tensor<float>> grads;
            grads.reserve(params.size());
            for_each_param(vit, ids, [&](const std::string&, std::size_t& id) { grads.push_back(tape.grad(id)); });
            optimizer_step(params, grads, opt_state, tc.optimizer);
        }

        EpochLog log;
        log.mean_loss = loss_sum / static_cast<double>(num_examples);
        log.devices_seen.assign(devices.begin(), devices.end());

        // accuracy over the un-augmented training records (eval-mode images)
        std::size_t hits = 0;
        for (const Example& e : base) {
            const RssiImage2d<float> img = dam_apply_eval<float>(e.image, dam);
            Tape<float> tape;
            auto img_leaf = tape.leaf(Tensor<float>({img.values.size()}, std::vector<float>(img.values)), false);
            VitParamIds ids = register_params(tape, vit, result.weights, false);
            const Tensor<float>& logits = tape.value(forward_on_tape(tape, img_leaf, vit, ids, patch_idx));
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.numel(); ++c)
                if (logits[c] > logits[best]) best = c;
            hits += best == e.label;
        }
        log.train_accuracy = static_cast<double>(hits) / static_cast<double>(base.size());
        result.history.push_back(log);
        result.epochs_run = epoch + 1;
        if (tc.log_progress) {
            std::cerr << "epoch " << epoch << ": loss " << log.mean_loss << ", train acc "
                      << log.train_accuracy << "\n";
        }
        if (tc.target_train_accuracy > 0.0 && log.train_accuracy >= tc.target_train_accuracy) break;
    }
    return result;
}

}  // namespace vitloc
