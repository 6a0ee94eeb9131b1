#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

namespace ciim {

// Insertion-ordered JSON keeps serialized key order fixed, which trace replay
// relies on for byte-stable output.
using Json = nlohmann::ordered_json;

namespace json_io {

// Field accessors that raise ConfigError with a dotted path on failure.
const Json& require(const Json& obj, std::string_view key, const std::string& path);
double number(const Json& obj, std::string_view key, const std::string& path);
double number_or(const Json& obj, std::string_view key, double fallback, const std::string& path);
double number_in(const Json& obj, std::string_view key, double lo, double hi, const std::string& path);
std::uint64_t unsigned_or(const Json& obj, std::string_view key, std::uint64_t fallback,
                          const std::string& path);
std::string string_or(const Json& obj, std::string_view key, std::string fallback,
                      const std::string& path);
void require_object(const Json& value, const std::string& path);

std::string join(const std::string& path, std::string_view key);

// Whole-file parse; ConfigError (with `label` as the path) when the file is
// missing or not JSON.
Json read_file(const std::string& file, const std::string& label);

}  // namespace json_io
}  // namespace ciim
