#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

namespace oosdsd {

/// Parses a JSON file; IoError when unreadable, ValidationError when malformed.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Pretty-printed, written through a temporary file and renamed into place.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Writes text the same way.
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace oosdsd
