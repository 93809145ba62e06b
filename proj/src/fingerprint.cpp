#include "vitloc/fingerprint.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vitloc {

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

bool rssi_in_range(double v) { return v >= kRssiFloorDb && v <= kRssiCeilDb; }

double parse_double(const std::string& field, std::size_t line, const char* what) {
    double v = 0.0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw FormatError("line " + std::to_string(line) + ": bad " + what + " value '" + field + "'");
    }
    return v;
}

long parse_int(const std::string& field, std::size_t line, const char* what) {
    long v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        throw FormatError("line " + std::to_string(line) + ": bad " + what + " value '" + field + "'");
    }
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

struct RecordKey {
    int building;
    int rp;
    std::string device;
    bool operator<(const RecordKey& o) const {
        return std::tie(building, rp, device) < std::tie(o.building, o.rp, o.device);
    }
};

}  // namespace

ApIndex::ApIndex(std::vector<std::string> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!pos_.emplace(ids_[i], i).second) {
            throw FormatError("duplicate AP identifier '" + ids_[i] + "'");
        }
    }
}

std::size_t ApIndex::position(const std::string& ap_id) const {
    auto it = pos_.find(ap_id);
    if (it == pos_.end()) throw ValueError("AP '" + ap_id + "' missing from index");
    return it->second;
}

const ReferencePoint& FingerprintDataset::rp(int building_id, int rp_id) const {
    for (const auto& r : rps) {
        if (r.building_id == building_id && r.rp_id == rp_id) return r;
    }
    throw ValueError("unknown RP (" + std::to_string(building_id) + ", " + std::to_string(rp_id) + ")");
}

std::vector<int> FingerprintDataset::building_ids() const {
    std::set<int> seen;
    for (const auto& r : rps) seen.insert(r.building_id);
    return {seen.begin(), seen.end()};
}

std::array<double, 3> reduce_samples(const std::vector<double>& samples) {
    if (samples.empty()) throw ValueError("reduce_samples: empty sample sequence");
    double lo = samples[0], hi = samples[0], sum = 0.0;
    for (double v : samples) {
        if (!rssi_in_range(v)) {
            throw ValueError("reduce_samples: RSSI " + fmt_double(v) + " outside [-100, 0]");
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
    }
    return {lo, hi, sum / static_cast<double>(samples.size())};
}

ReducedFingerprint reduce_record(const FingerprintRecord& record) {
    ReducedFingerprint out;
    out.building_id = record.building_id;
    out.rp_id = record.rp_id;
    out.device_id = record.device_id;
    out.ap_ids = record.ap_ids;
    out.channels.reserve(record.samples.size());
    for (const auto& s : record.samples) out.channels.push_back(reduce_samples(s));
    return out;
}

RssiImage1d to_1d_image(const ReducedFingerprint& record, const ApIndex& index) {
    RssiImage1d img;
    img.pixels = index.size();
    img.values.assign(3 * img.pixels, kRssiFloorDb);
    for (std::size_t i = 0; i < record.ap_ids.size(); ++i) {
        const std::size_t p = index.position(record.ap_ids[i]);
        img.values[3 * p + 0] = record.channels[i][0];
        img.values[3 * p + 1] = record.channels[i][1];
        img.values[3 * p + 2] = record.channels[i][2];
    }
    return img;
}

void canonicalize(FingerprintDataset& dataset) {
    std::sort(dataset.records.begin(), dataset.records.end(),
              [](const FingerprintRecord& a, const FingerprintRecord& b) {
                  return std::tie(a.building_id, a.rp_id, a.device_id) <
                         std::tie(b.building_id, b.rp_id, b.device_id);
              });
    std::sort(dataset.rps.begin(), dataset.rps.end(), [](const ReferencePoint& a, const ReferencePoint& b) {
        return std::tie(a.building_id, a.rp_id) < std::tie(b.building_id, b.rp_id);
    });
    std::set<std::string> devs;
    for (const auto& r : dataset.records) devs.insert(r.device_id);
    dataset.devices.assign(devs.begin(), devs.end());
}

std::pair<FingerprintDataset, FingerprintDataset> split(const FingerprintDataset& dataset, double ratio,
                                                        std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split ratio must be in (0, 1)");
    std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const auto& r = dataset.records[i];
        groups[{r.building_id, r.rp_id}].push_back(i);
    }
    FingerprintDataset train = dataset;
    FingerprintDataset test = dataset;
    train.records.clear();
    test.records.clear();
    for (auto& [key, idxs] : groups) {
        const std::size_t n = idxs.size();
        const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
        if (n_train == 0) {
            throw ValueError("building " + std::to_string(key.first) + " rp " + std::to_string(key.second) +
                             " has too few records (" + std::to_string(n) + ") to stratify at ratio " +
                             fmt_double(ratio));
        }
        Rng rng = stream_rng(seed, "split", fnv1a64_u64(static_cast<std::uint64_t>(key.first) << 32 |
                                                        static_cast<std::uint32_t>(key.second)));
        for (std::size_t i = n; i > 1; --i) std::swap(idxs[i - 1], idxs[rng.below(i)]);
        for (std::size_t i = 0; i < n; ++i) {
            (i < n_train ? train : test).records.push_back(dataset.records[idxs[i]]);
        }
    }
    canonicalize(train);
    canonicalize(test);
    // keep the full device roster so both sides describe the same experiment
    train.devices = dataset.devices;
    test.devices = dataset.devices;
    return {std::move(train), std::move(test)};
}

FingerprintDataset filter_building(const FingerprintDataset& dataset, int building_id) {
    FingerprintDataset out = dataset;
    out.records.clear();
    for (const auto& r : dataset.records) {
        if (r.building_id == building_id) out.records.push_back(r);
    }
    if (out.records.empty()) {
        throw ValueError("no records for building " + std::to_string(building_id));
    }
    return out;
}

FingerprintDataset filter_devices(const FingerprintDataset& dataset,
                                  const std::vector<std::string>& device_ids) {
    const std::set<std::string> keep(device_ids.begin(), device_ids.end());
    FingerprintDataset out = dataset;
    out.records.clear();
    for (const auto& r : dataset.records) {
        if (keep.count(r.device_id)) out.records.push_back(r);
    }
    return out;
}

// ---- CSV -------------------------------------------------------------------

FingerprintDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open dataset file '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset file '" + path + "'");
    const std::vector<std::string> header = split_csv_line(line);
    static const char* fixed[] = {"building_id", "rp_id", "x_m", "y_m", "device_id", "sample_idx"};
    if (header.size() < 7) throw FormatError("header must contain the six fixed columns plus ap_ columns");
    for (std::size_t i = 0; i < 6; ++i) {
        if (header[i] != fixed[i]) {
            throw FormatError("header column " + std::to_string(i + 1) + " must be '" + fixed[i] +
                              "', got '" + header[i] + "'");
        }
    }
    std::vector<std::string> ap_ids;
    for (std::size_t i = 6; i < header.size(); ++i) {
        if (header[i].rfind("ap_", 0) != 0 || header[i].size() == 3) {
            throw FormatError("header column '" + header[i] + "' is not an ap_<ID> column");
        }
        ap_ids.push_back(header[i].substr(3));
    }
    ApIndex index(ap_ids);  // sorts; rejects duplicates

    // column position in file -> pixel position in index
    std::vector<std::size_t> col_to_pixel(ap_ids.size());
    for (std::size_t i = 0; i < ap_ids.size(); ++i) col_to_pixel[i] = index.position(ap_ids[i]);

    struct Group {
        double x = 0.0, y = 0.0;
        std::map<long, std::vector<double>> rows;  // sample_idx -> per-pixel RSSI
    };
    std::map<RecordKey, Group> groups;
    std::map<std::pair<int, int>, std::pair<double, double>> coords;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != header.size()) {
            throw FormatError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        }
        RecordKey key{static_cast<int>(parse_int(f[0], line_no, "building_id")),
                      static_cast<int>(parse_int(f[1], line_no, "rp_id")), f[4]};
        const double x = parse_double(f[2], line_no, "x_m");
        const double y = parse_double(f[3], line_no, "y_m");
        const long sample_idx = parse_int(f[5], line_no, "sample_idx");
        if (key.device.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty device_id");
        if (sample_idx < 0) throw FormatError("line " + std::to_string(line_no) + ": negative sample_idx");

        auto [cit, fresh] = coords.try_emplace({key.building, key.rp}, x, y);
        if (!fresh && (cit->second.first != x || cit->second.second != y)) {
            throw FormatError("line " + std::to_string(line_no) + ": rp (" + std::to_string(key.building) +
                              ", " + std::to_string(key.rp) + ") re-declared with different coordinates");
        }

        std::vector<double> pix(ap_ids.size(), kRssiFloorDb);
        for (std::size_t i = 0; i < ap_ids.size(); ++i) {
            const std::string& cell = f[6 + i];
            const double v = cell.empty() ? kRssiFloorDb : parse_double(cell, line_no, "rssi");
            if (!rssi_in_range(v)) {
                throw FormatError("line " + std::to_string(line_no) + ": RSSI " + cell +
                                  " outside [-100, 0] in column '" + header[6 + i] + "'");
            }
            pix[col_to_pixel[i]] = v;
        }
        Group& g = groups[key];
        g.x = x;
        g.y = y;
        if (!g.rows.emplace(sample_idx, std::move(pix)).second) {
            throw FormatError("line " + std::to_string(line_no) + ": duplicate sample " +
                              std::to_string(sample_idx) + " for (building " + std::to_string(key.building) +
                              ", rp " + std::to_string(key.rp) + ", device " + key.device + ")");
        }
    }
    if (groups.empty()) throw FormatError("dataset file '" + path + "' has no data rows");

    std::size_t k = groups.begin()->second.rows.size();
    FingerprintDataset ds;
    ds.ap_index = index;
    ds.samples_per_record = k;
    for (auto& [key, g] : groups) {
        if (g.rows.size() != k) {
            throw FormatError("record (building " + std::to_string(key.building) + ", rp " +
                              std::to_string(key.rp) + ", device " + key.device + ") has " +
                              std::to_string(g.rows.size()) + " samples, expected " + std::to_string(k));
        }
        long want = 0;
        for (const auto& [idx, _] : g.rows) {
            if (idx != want++) {
                throw FormatError("record (building " + std::to_string(key.building) + ", rp " +
                                  std::to_string(key.rp) + ", device " + key.device +
                                  ") has non-contiguous sample indices");
            }
        }
        FingerprintRecord rec;
        rec.building_id = key.building;
        rec.rp_id = key.rp;
        rec.device_id = key.device;
        rec.ap_ids = index.ids();
        rec.samples.assign(index.size(), std::vector<double>(k));
        std::size_t s = 0;
        for (const auto& [idx, pix] : g.rows) {
            for (std::size_t p = 0; p < index.size(); ++p) rec.samples[p][s] = pix[p];
            ++s;
        }
        ds.records.push_back(std::move(rec));
    }
    for (const auto& [brp, xy] : coords) {
        ds.rps.push_back({brp.first, brp.second, xy.first, xy.second});
    }
    canonicalize(ds);
    return ds;
}

void save_dataset(const FingerprintDataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write dataset file '" + path + "'");
    out << "building_id,rp_id,x_m,y_m,device_id,sample_idx";
    for (const auto& id : dataset.ap_index.ids()) out << ",ap_" << id;
    out << "\n";
    for (const auto& rec : dataset.records) {
        const ReferencePoint& rp = dataset.rp(rec.building_id, rec.rp_id);
        // per-pixel readings in index order regardless of the record's listing
        std::vector<const std::vector<double>*> by_pixel(dataset.ap_index.size(), nullptr);
        for (std::size_t i = 0; i < rec.ap_ids.size(); ++i) {
            by_pixel[dataset.ap_index.position(rec.ap_ids[i])] = &rec.samples[i];
        }
        const std::size_t k = rec.samples.empty() ? 0 : rec.samples[0].size();
        for (std::size_t s = 0; s < k; ++s) {
            out << rec.building_id << ',' << rec.rp_id << ',' << fmt_double(rp.x_m) << ','
                << fmt_double(rp.y_m) << ',' << rec.device_id << ',' << s;
            for (std::size_t p = 0; p < by_pixel.size(); ++p) {
                out << ',' << fmt_double(by_pixel[p] ? (*by_pixel[p])[s] : kRssiFloorDb);
            }
            out << "\n";
        }
    }
    if (!out) throw FormatError("failed writing dataset file '" + path + "'");
}

}  // namespace vitloc
