#include "ciim/json_io.hpp"

#include <cmath>
#include <fstream>

#include "ciim/errors.hpp"

namespace ciim::json_io {

std::string join(const std::string& path, std::string_view key) {
  if (path.empty()) return std::string(key);
  return path + "." + std::string(key);
}

void require_object(const Json& value, const std::string& path) {
  if (!value.is_object()) throw ConfigError("expected an object", path);
}

const Json& require(const Json& obj, std::string_view key, const std::string& path) {
  require_object(obj, path);
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError("missing field", join(path, key));
  return *it;
}

namespace {

double as_number(const Json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError("expected a number", path);
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError("expected a finite number", path);
  return x;
}

}  // namespace

double number(const Json& obj, std::string_view key, const std::string& path) {
  return as_number(require(obj, key, path), join(path, key));
}

double number_or(const Json& obj, std::string_view key, double fallback, const std::string& path) {
  require_object(obj, path);
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  return as_number(*it, join(path, key));
}

double number_in(const Json& obj, std::string_view key, double lo, double hi,
                 const std::string& path) {
  const double x = number(obj, key, path);
  if (x < lo || x > hi) {
    throw ConfigError("value out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
                      join(path, key));
  }
  return x;
}

std::uint64_t unsigned_or(const Json& obj, std::string_view key, std::uint64_t fallback,
                          const std::string& path) {
  require_object(obj, path);
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
    throw ConfigError("expected a non-negative integer", join(path, key));
  }
  return it->get<std::uint64_t>();
}

std::string string_or(const Json& obj, std::string_view key, std::string fallback,
                      const std::string& path) {
  require_object(obj, path);
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_string()) throw ConfigError("expected a string", join(path, key));
  return it->get<std::string>();
}

Json read_file(const std::string& file, const std::string& label) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open '" + file + "'", label);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON in '") + file + "': " + e.what(), label);
  }
}

}  // namespace ciim::json_io
