#include "vitloc/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <sstream>
#include <thread>

namespace vitloc {

EvalReport train_eval_per_building(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                                   const VitConfig& vit, const TrainConfig& tc,
                                   std::vector<TrainResult>* out_models) {
    std::vector<RecordResult> rows;
    for (int building : train_set.building_ids()) {
        TrainResult trained = train(filter_building(train_set, building), vit, tc);
        VitModel<float> model = trained.to_model();
        const EvalReport part = evaluate(model, filter_building(test_set, building), tc.dam);
        rows.insert(rows.end(), part.records.begin(), part.records.end());
        if (out_models) out_models->push_back(std::move(trained));
    }
    return make_report(std::move(rows), tc.seed, 0);
}

EvalReport extended_device_eval(const FingerprintDataset& dataset,
                                const std::vector<std::string>& base_devices,
                                const std::vector<std::string>& extended_devices, const VitConfig& vit,
                                const TrainConfig& tc) {
    if (extended_devices.empty()) throw ValueError("extended device set is empty; nothing to evaluate");
    if (base_devices.empty()) throw ValueError("base device set is empty; nothing to train on");
    std::set<std::string> base_set(base_devices.begin(), base_devices.end());
    for (const auto& d : extended_devices) {
        if (base_set.count(d)) throw ValueError("device '" + d + "' is in both the base and extended sets");
    }
    const FingerprintDataset train_set = filter_devices(dataset, base_devices);
    const FingerprintDataset test_set = filter_devices(dataset, extended_devices);
    if (train_set.records.empty()) throw ValueError("no records for the base devices");
    if (test_set.records.empty()) throw ValueError("no records for the extended devices");
    return train_eval_per_building(train_set, test_set, vit, tc);
}

AblatePair ablate_dam(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                      const VitConfig& vit, const TrainConfig& tc) {
    TrainConfig off = tc;
    off.dam.dropout_prob = 0.0;
    off.dam.infill_sigma = 0.0;
    AblatePair pair;
    pair.with_augmentation = train_eval_per_building(train_set, test_set, vit, tc);
    pair.without_augmentation = train_eval_per_building(train_set, test_set, vit, off);
    return pair;
}

std::vector<SweepPoint> SweepGrid::points() const {
    std::vector<SweepPoint> out;
    for (std::size_t r : image_sizes)
        for (std::size_t p : patch_sizes)
            for (std::size_t h : num_heads)
                for (std::size_t l : head_hidden_layers) out.push_back({r, p, h, l});
    return out;
}

namespace {

SweepRow run_point(const SweepPoint& pt, const FingerprintDataset& dataset, const VitConfig& base,
                   const TrainConfig& tc, double split_ratio) {
    SweepRow row;
    row.point = pt;
    try {
        VitConfig vit = base;
        vit.image_size = pt.image_size;
        vit.patch_size = pt.patch_size;
        vit.num_heads = pt.num_heads;
        vit.head_dims.assign(pt.head_hidden_layers, 128);
        vit.head_dims.push_back(0);  // resolved from the data per building
        vit.num_classes = 0;
        auto [train_set, test_set] = split(dataset, split_ratio, tc.seed);
        const EvalReport report = train_eval_per_building(train_set, test_set, vit, tc);
        row.stats = report.overall;
        row.ok = true;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        row.error = msg;
    }
    return row;
}

}  // namespace

std::vector<SweepRow> sweep(const FingerprintDataset& dataset, const SweepGrid& grid, const VitConfig& base,
                            const TrainConfig& tc, double split_ratio, std::size_t jobs) {
    const std::vector<SweepPoint> pts = grid.points();
    if (pts.empty()) throw ConfigError("sweep grid is empty");
    std::vector<SweepRow> rows(pts.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, pts.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < pts.size(); ++i) rows[i] = run_point(pts[i], dataset, base, tc, split_ratio);
        return rows;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < pts.size(); i = next.fetch_add(1)) {
                rows[i] = run_point(pts[i], dataset, base, tc, split_ratio);
            }
        });
    }
    for (auto& t : pool) t.join();
    return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "image_size,patch_size,num_heads,head_hidden_layers,status,count,min_error_m,mean_error_m,"
          "max_error_m,accuracy\n";
    for (const auto& r : rows) {
        os << r.point.image_size << ',' << r.point.patch_size << ',' << r.point.num_heads << ','
           << r.point.head_hidden_layers << ',';
        if (r.ok) {
            os << "ok," << r.stats.count << ',' << fmt_double(r.stats.min_m) << ',' << fmt_double(r.stats.mean_m)
               << ',' << fmt_double(r.stats.max_m) << ',' << fmt_double(r.stats.accuracy) << '\n';
        } else {
            std::string msg = r.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            os << "error: " << msg << ",0,,,,\n";
        }
    }
    return os.str();
}

}  // namespace vitloc
