#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace habitmask {

inline constexpr int kManifestVersion = 1;

struct ManifestEntry {
    std::string path;             // .hclip, relative to the manifest directory
    std::string annotation_path;  // .jsonl, relative to the manifest directory
    std::string label;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    int format_version = kManifestVersion;
    nlohmann::json cfg = nlohmann::json::object();
    std::vector<ManifestEntry> clips;
    // Directory the relative paths resolve against; not serialized.
    std::filesystem::path base_dir;

    std::filesystem::path clip_path(std::size_t i) const { return base_dir / clips.at(i).path; }
    std::filesystem::path annotation_path(std::size_t i) const { return base_dir / clips.at(i).annotation_path; }

    nlohmann::json to_json() const;
    // Throws SchemaError for missing fields or an unknown format_version.
    static Manifest from_json(const nlohmann::json& j);
};

// base_dir is set to the file's directory. IoError / ParseError / SchemaError.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace habitmask
