#include "vitloc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "vitloc/train.hpp"

namespace vitloc {

EvalReport make_report(std::vector<RecordResult> records, std::uint64_t seed, std::uint64_t config_hash) {
    if (records.empty()) throw ValueError("evaluation produced no records");
    std::sort(records.begin(), records.end(), [](const RecordResult& a, const RecordResult& b) {
        return std::tie(a.building_id, a.rp_id, a.device_id) < std::tie(b.building_id, b.rp_id, b.device_id);
    });

    auto stats_of = [](const std::vector<const RecordResult*>& rows) {
        ErrorStats s;
        s.count = rows.size();
        s.min_m = rows.front()->error_m;
        s.max_m = rows.front()->error_m;
        double sum = 0.0;
        std::size_t hits = 0;
        for (const RecordResult* r : rows) {
            s.min_m = std::min(s.min_m, r->error_m);
            s.max_m = std::max(s.max_m, r->error_m);
            sum += r->error_m;
            hits += r->correct;
        }
        s.mean_m = sum / static_cast<double>(rows.size());
        s.accuracy = static_cast<double>(hits) / static_cast<double>(rows.size());
        return s;
    };

    EvalReport report;
    std::map<std::pair<int, std::string>, std::vector<const RecordResult*>> by_cell;
    std::vector<const RecordResult*> all;
    for (const RecordResult& r : records) {
        by_cell[{r.building_id, r.device_id}].push_back(&r);
        all.push_back(&r);
    }
    for (const auto& [key, rows] : by_cell) {
        report.cells.push_back({key.first, key.second, stats_of(rows)});
    }
    report.overall = stats_of(all);
    report.records = std::move(records);
    report.seed = seed;
    report.config_hash = config_hash;
    return report;
}

namespace {

double distance_m(double ax, double ay, double bx, double by) {
    return std::hypot(ax - bx, ay - by);
}

}  // namespace

EvalReport evaluate(VitModel<float>& model, const FingerprintDataset& test_set, const DamConfig& dam) {
    if (test_set.records.empty()) throw ValueError("test set has no records");
    if (model.classes.size() != model.config.num_classes) {
        throw ValueError("model class table does not match num_classes");
    }
    DamConfig cfg = dam;
    cfg.image_size = model.config.image_size;
    cfg.mode = DamMode::eval;
    ApIndex index{std::vector<std::string>(model.ap_ids)};
    model.ensure_patch_idx();

    std::vector<RecordResult> rows;
    rows.reserve(test_set.records.size());
    for (const auto& rec : test_set.records) {
        const ReferencePoint& truth = test_set.rp(rec.building_id, rec.rp_id);  // throws on unknown RP
        const RssiImage2d<float> img = dam_apply_eval<float>(to_1d_image(reduce_record(rec), index), cfg);
        const Tensor<float> logits = forward(model, img);
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.numel(); ++c)
            if (logits[c] > logits[best]) best = c;
        const ClassLabel& guess = model.classes[best];
        RecordResult row;
        row.building_id = rec.building_id;
        row.device_id = rec.device_id;
        row.rp_id = rec.rp_id;
        row.predicted_building_id = guess.building_id;
        row.predicted_rp_id = guess.rp_id;
        row.error_m = distance_m(guess.x_m, guess.y_m, truth.x_m, truth.y_m);
        row.correct = guess.building_id == rec.building_id && guess.rp_id == rec.rp_id;
        rows.push_back(row);
    }
    return make_report(std::move(rows), 0, 0);
}

EvalReport knn_baseline(const FingerprintDataset& train_set, const FingerprintDataset& test_set,
                        std::size_t k) {
    if (k == 0) throw ValueError("knn k must be >= 1");
    if (train_set.records.empty()) throw ValueError("knn baseline needs a non-empty training set");
    if (test_set.records.empty()) throw ValueError("test set has no records");

    const ApIndex index = derive_ap_index(train_set);
    const std::vector<ClassLabel> classes = derive_classes(train_set);
    auto class_of = [&](int b, int rp) -> std::size_t {
        for (std::size_t i = 0; i < classes.size(); ++i) {
            if (classes[i].building_id == b && classes[i].rp_id == rp) return i;
        }
        throw ValueError("knn: unseen class (building " + std::to_string(b) + ", rp " + std::to_string(rp) + ")");
    };

    auto features = [&](const FingerprintRecord& rec) {
        const std::vector<double> norm = dam_normalize(to_1d_image(reduce_record(rec), index));
        return norm;
    };

    struct TrainPoint {
        std::vector<double> f;
        std::size_t label;
    };
    std::vector<TrainPoint> points;
    points.reserve(train_set.records.size());
    for (const auto& rec : train_set.records) {
        points.push_back({features(rec), class_of(rec.building_id, rec.rp_id)});
    }

    std::vector<RecordResult> rows;
    rows.reserve(test_set.records.size());
    for (const auto& rec : test_set.records) {
        const ReferencePoint& truth = test_set.rp(rec.building_id, rec.rp_id);
        const std::vector<double> f = features(rec);
        std::vector<std::pair<double, std::size_t>> dist;  // (distance, train index)
        dist.reserve(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < f.size(); ++j) {
                const double d = f[j] - points[i].f[j];
                d2 += d * d;
            }
            dist.emplace_back(std::sqrt(d2), i);
        }
        const std::size_t kk = std::min(k, dist.size());
        std::partial_sort(dist.begin(), dist.begin() + kk, dist.end());

        std::map<std::size_t, std::pair<std::size_t, double>> votes;  // class -> (count, summed distance)
        for (std::size_t i = 0; i < kk; ++i) {
            auto& v = votes[points[dist[i].second].label];
            v.first += 1;
            v.second += dist[i].first;
        }
        std::size_t best_class = votes.begin()->first;
        std::pair<std::size_t, double> best = votes.begin()->second;
        for (const auto& [cls, v] : votes) {
            // more votes wins; equal votes -> smaller summed distance; maps
            // iterate in class order, so remaining ties keep the smallest class
            if (v.first > best.first || (v.first == best.first && v.second < best.second)) {
                best = v;
                best_class = cls;
            }
        }

        const ClassLabel& guess = classes[best_class];
        RecordResult row;
        row.building_id = rec.building_id;
        row.device_id = rec.device_id;
        row.rp_id = rec.rp_id;
        row.predicted_building_id = guess.building_id;
        row.predicted_rp_id = guess.rp_id;
        row.error_m = distance_m(guess.x_m, guess.y_m, truth.x_m, truth.y_m);
        row.correct = guess.building_id == rec.building_id && guess.rp_id == rec.rp_id;
        rows.push_back(row);
    }
    return make_report(std::move(rows), 0, 0);
}

static nlohmann::json stats_json(const ErrorStats& s) {
    return {{"count", s.count}, {"min_m", s.min_m}, {"mean_m", s.mean_m},
            {"max_m", s.max_m}, {"accuracy", s.accuracy}};
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["artifact_version"] = kArtifactVersion;
    j["seed"] = report.seed;
    j["config_hash"] = report.config_hash;
    j["overall"] = stats_json(report.overall);
    j["cells"] = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json jc = stats_json(c.stats);
        jc["building_id"] = c.building_id;
        jc["device_id"] = c.device_id;
        j["cells"].push_back(jc);
    }
    j["records"] = nlohmann::json::array();
    for (const auto& r : report.records) {
        j["records"].push_back({{"building_id", r.building_id},
                                {"device_id", r.device_id},
                                {"rp_id", r.rp_id},
                                {"predicted_building_id", r.predicted_building_id},
                                {"predicted_rp_id", r.predicted_rp_id},
                                {"error_m", r.error_m},
                                {"correct", r.correct}});
    }
    return j.dump(2) + "\n";
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "building_id,device_id,count,min_error_m,mean_error_m,max_error_m,accuracy\n";
    auto emit = [&](const std::string& b, const std::string& d, const ErrorStats& s) {
        os << b << ',' << d << ',' << s.count << ',' << fmt_double(s.min_m) << ',' << fmt_double(s.mean_m)
           << ',' << fmt_double(s.max_m) << ',' << fmt_double(s.accuracy) << '\n';
    };
    for (const auto& c : report.cells) emit(std::to_string(c.building_id), c.device_id, c.stats);
    emit("overall", "all", report.overall);
    return os.str();
}

}  // namespace vitloc
