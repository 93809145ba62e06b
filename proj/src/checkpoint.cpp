#include "vitloc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"

#include "vitloc/json_io.hpp"

namespace vitloc {

namespace {

constexpr char kMagic[4] = {'V', 'I', 'T', 'L'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const VitModel<float>& model, const std::string& path) {
    model.config.validate();
    auto& weights = const_cast<VitWeights<float>&>(model.weights);  // walk only reads

    nlohmann::json manifest;
    manifest["format_version"] = kArtifactVersion;
    manifest["precision"] = "f32";
    manifest["config"] = vit_config_to_json(model.config);
    manifest["weights"] = nlohmann::json::array();
    std::size_t payload_scalars = 0;
    for_each_param(model.config, weights, [&](const std::string& name, Tensor<float>& t) {
        manifest["weights"].push_back({{"name", name}, {"shape", t.shape()}});
        payload_scalars += t.numel();
    });
    // every save re-checks the accounting invariant against the config
    if (payload_scalars != param_count(model.config)) {
        throw ValueError("parameter accounting mismatch: shapes sum to " + std::to_string(payload_scalars) +
                         " but the config implies " + std::to_string(param_count(model.config)));
    }
    manifest["param_count"] = payload_scalars;
    manifest["classes"] = nlohmann::json::array();
    for (const auto& c : model.classes) {
        manifest["classes"].push_back(
            {{"building_id", c.building_id}, {"rp_id", c.rp_id}, {"x_m", c.x_m}, {"y_m", c.y_m}});
    }
    manifest["ap_ids"] = model.ap_ids;
    const std::string manifest_text = manifest.dump();

    std::string blob;
    blob.reserve(16 + manifest_text.size() + 4 * payload_scalars);
    blob.append(kMagic, 4);
    put_u32(blob, static_cast<std::uint32_t>(kArtifactVersion));
    put_u64(blob, manifest_text.size());
    blob += manifest_text;
    for_each_param(model.config, weights, [&](const std::string&, Tensor<float>& t) {
        for (std::size_t i = 0; i < t.numel(); ++i) put_u32(blob, std::bit_cast<std::uint32_t>(t[i]));
    });

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot open '" + tmp + "' for writing");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw FormatError("failed writing '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw FormatError("failed to move checkpoint into place at '" + path + "'");
    }
}

VitModel<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16) throw FormatError("checkpoint truncated: no header");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("bad magic: not a checkpoint file");
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != static_cast<std::uint32_t>(kArtifactVersion)) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kArtifactVersion) + ")");
    }
    const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
    if (16 + manifest_len > bytes.size()) throw FormatError("checkpoint truncated: manifest cut short");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + manifest_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }

    VitModel<float> model;
    try {
        model.config = parse_vit_config_full(manifest.at("config"));
        if (manifest.at("precision").get<std::string>() != "f32") {
            throw FormatError("unsupported weight precision '" +
                              manifest.at("precision").get<std::string>() + "'");
        }
        for (const auto& jc : manifest.at("classes")) {
            model.classes.push_back({jc.at("building_id").get<int>(), jc.at("rp_id").get<int>(),
                                     jc.at("x_m").get<double>(), jc.at("y_m").get<double>()});
        }
        model.ap_ids = manifest.at("ap_ids").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }

    model.weights = zero_weights<float>(model.config);
    if (!manifest.contains("weights") || !manifest.at("weights").is_array()) {
        throw FormatError("malformed checkpoint manifest: missing weight list");
    }
    const auto& jweights = manifest.at("weights");
    std::size_t entry = 0;
    std::size_t offset = 16 + manifest_len;
    try {
        for_each_param(model.config, model.weights, [&](const std::string& name, Tensor<float>& t) {
            if (entry >= jweights.size()) {
                throw FormatError("manifest weight list shorter than the config implies");
            }
            const auto& jw = jweights.at(entry);
            if (jw.at("name").get<std::string>() != name ||
                jw.at("shape").get<std::vector<std::size_t>>() != t.shape()) {
                throw FormatError("manifest weight entry " + std::to_string(entry) +
                                  " does not match the config (expected '" + name + "' " + t.shape_str() +
                                  ")");
            }
            if (offset + 4 * t.numel() > bytes.size()) {
                throw FormatError("checkpoint truncated: payload shorter than the manifest declares");
            }
            for (std::size_t i = 0; i < t.numel(); ++i) {
                t[i] = std::bit_cast<float>(get_u32(bytes.data() + offset));
                offset += 4;
            }
            ++entry;
        });
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    if (entry != jweights.size()) throw FormatError("manifest lists more weights than the config implies");
    if (offset != bytes.size()) {
        throw FormatError("checkpoint length disagreement: " + std::to_string(bytes.size() - offset) +
                          " trailing bytes after the declared payload");
    }
    if (manifest.contains("param_count") &&
        manifest.at("param_count").get<std::size_t>() != param_count(model.config)) {
        throw FormatError("manifest param_count does not match the shape list");
    }
    return model;
}

}  // namespace vitloc
