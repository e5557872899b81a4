#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace man {

using json = nlohmann::json;

// Writes to "<path>.tmp" and renames over `path` once the write succeeded.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// Raw IEEE-754 binary64, little-endian, no header.
std::string encode_f64le(std::span<const double> values);
std::vector<double> decode_f64le(std::string_view bytes);
std::vector<double> read_f64le(const std::filesystem::path& path, std::size_t expected_count);

json read_json(const std::filesystem::path& path);
// One JSON object per non-empty line.
std::vector<json> read_jsonl(const std::filesystem::path& path);

// Typed field access that reports the missing/ill-typed key by name.
template <class T>
T require_field(const json& object, const std::string& key, const std::string& context);

}  // namespace man
