#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ruleforge/tensor.hpp"

namespace ruleforge {

using Json = nlohmann::ordered_json;

Json read_json(const std::filesystem::path& path);

// Writes `text` to path via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_json(const std::filesystem::path& path, const Json& j);

// Stable 16-hex-digit hash of a JSON document's compact dump.
std::string json_hash(const Json& j);

// Throws ValidationError naming `where` if `obj` has a key outside `allowed`.
void reject_unknown_keys(const Json& obj, const std::vector<std::string>& allowed,
                         const std::string& where);

Json mat_to_json(const Mat& m);
Mat mat_from_json(const Json& j);

}  // namespace ruleforge
