#include "habitmask/manifest.hpp"

#include <fstream>
#include <sstream>

#include "habitmask/errors.hpp"

namespace habitmask {

nlohmann::json Manifest::to_json() const {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& e : clips) {
        list.push_back({{"path", e.path}, {"annotation_path", e.annotation_path}, {"label", e.label}});
    }
    return {{"format_version", format_version}, {"cfg", cfg}, {"clips", std::move(list)}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw SchemaError("manifest must be a JSON object");
    Manifest m;
    if (!j.contains("format_version") || !j["format_version"].is_number_integer()) {
        throw SchemaError("manifest: missing format_version");
    }
    m.format_version = j["format_version"].get<int>();
    if (m.format_version != kManifestVersion) {
        throw SchemaError("manifest: unsupported format_version " + std::to_string(m.format_version));
    }
    if (j.contains("cfg")) m.cfg = j["cfg"];
    if (!j.contains("clips") || !j["clips"].is_array()) throw SchemaError("manifest: missing clips array");
    for (const auto& c : j["clips"]) {
        if (!c.is_object() || !c.contains("path") || !c.contains("annotation_path") || !c.contains("label") ||
            !c["path"].is_string() || !c["annotation_path"].is_string() || !c["label"].is_string()) {
            throw SchemaError("manifest: clip entry needs string path, annotation_path and label");
        }
        m.clips.push_back({c["path"].get<std::string>(), c["annotation_path"].get<std::string>(),
                           c["label"].get<std::string>()});
    }
    return m;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(1, path.string() + ": " + e.what());
    }
    Manifest m = Manifest::from_json(j);
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << m.to_json().dump(1) << '\n';
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace habitmask
