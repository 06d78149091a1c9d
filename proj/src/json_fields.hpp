#pragma once

// Checked field access for input documents; every failure is a
// Validation error naming the field.

#include <string>

#include "probefuse/error.hpp"
#include "probefuse/util.hpp"

namespace probefuse::detail {

inline const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::Validation, where + ": expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorKind::Validation, where + ": missing field '" + key + "'");
  return *it;
}

inline std::string string_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_string()) fail(ErrorKind::Validation, where + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline double number_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_number()) fail(ErrorKind::Validation, where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

inline long long integer_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_number_integer())
    fail(ErrorKind::Validation, where + ": field '" + key + "' must be an integer");
  return v.get<long long>();
}

}  // namespace probefuse::detail
