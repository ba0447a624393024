#pragma once

// Internal helpers for file-backed JSON artifacts. Not installed; the
// public headers stay free of the vendored json dependency.

#include <filesystem>
#include <string>

#include <json.hpp>

namespace mixce::detail {

using json = nlohmann::json;

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Throws listing the offending key when `j` holds keys outside `allowed`.
void reject_unknown_keys(const json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& where);

}  // namespace mixce::detail
