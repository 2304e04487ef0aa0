#pragma once

// Canonical text output for the JSON documents (corpus, model) and helpers
// for reading them back with field-path diagnostics.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <set>
#include <type_traits>

#include "json.hpp"
#include "oti/error.hpp"

namespace oti::json_text {

using nlohmann::json;

// Shortest exact representation is not required; 17 significant digits
// always round-trip an IEEE double.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) throw NumericDomainError("cannot serialize a non-finite value");
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string quote(std::string_view s) { return json(std::string(s)).dump(); }

template <class Range>
void append_array(std::string& out, const Range& values) {
  out += '[';
  bool first = true;
  for (double v : values) {
    if (!first) out += ',';
    first = false;
    out += format_double(v);
  }
  out += ']';
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
  if (!out) throw FormatError("write failed for '" + path + "'");
}

inline json parse(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(source + ": " + e.what());
  }
}

inline const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw FormatError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(path + "." + key + ": missing field");
  return *it;
}

inline double as_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw FormatError(path + ": expected a number");
  return v.get<double>();
}

inline std::int64_t as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) throw FormatError(path + ": expected an integer");
  return v.get<std::int64_t>();
}

inline std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw FormatError(path + ": expected a string");
  return v.get<std::string>();
}

inline std::vector<double> as_doubles(const json& v, const std::string& path,
                                      std::size_t expected_len) {
  if (!v.is_array()) throw FormatError(path + ": expected an array");
  if (expected_len && v.size() != expected_len) {
    throw FormatError(path + ": expected " + std::to_string(expected_len) + " values, got " +
                      std::to_string(v.size()));
  }
  std::vector<double> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_double(v[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

inline void check_version(const json& doc, int expected, const std::string& source) {
  const json& v = field(doc, "version", source);
  if (!v.is_number_integer() || v.get<std::int64_t>() != expected) {
    throw FormatError(source + ": unsupported version " + v.dump() + ", expected version " +
                      std::to_string(expected));
  }
}

// Reads optional keys of one JSON object and rejects any key never asked
// for. Errors name the dotted field path.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw FormatError(path_ + ": expected an object");
  }

  std::string path_of(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const char* key) const { return obj_.contains(key); }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <class T>
  bool read(const char* key, T& dst) {
    const json* v = child(key);
    if (!v) return false;
    const std::string p = path_of(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v->is_boolean()) throw FormatError(p + ": expected true or false");
      dst = v->get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) throw FormatError(p + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v->is_number_unsigned()) {
          dst = v->get<T>();
        } else if (v->get<std::int64_t>() < 0) {
          throw FormatError(p + ": must be non-negative");
        } else {
          dst = static_cast<T>(v->get<std::int64_t>());
        }
      } else {
        dst = v->get<T>();
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v->is_number()) throw FormatError(p + ": expected a number");
      dst = v->get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v->is_string()) throw FormatError(p + ": expected a string");
      dst = v->get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      dst = as_doubles(*v, p, 0);
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
    return true;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw FormatError(path_of(it.key().c_str()) + ": unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace oti::json_text
