#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>

#include "semir/common.hpp"

namespace semir::detail {

using Json = nlohmann::json;

inline std::string child_path(const std::string& path, const std::string& key) {
    return path + "." + key;
}

inline std::string index_path(const std::string& path, std::size_t i) {
    return path + "[" + std::to_string(i) + "]";
}

inline const Json& require_key(const Json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) {
        throw ParseError(path + ": expected object");
    }
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw ParseError(child_path(path, key) + ": missing required key");
    }
    return *it;
}

inline std::string require_string(const Json& obj, const std::string& key, const std::string& path) {
    const Json& v = require_key(obj, key, path);
    if (!v.is_string()) {
        throw ParseError(child_path(path, key) + ": expected string");
    }
    return v.get<std::string>();
}

inline std::int64_t require_int(const Json& obj, const std::string& key, const std::string& path) {
    const Json& v = require_key(obj, key, path);
    if (!v.is_number_integer()) {
        throw ParseError(child_path(path, key) + ": expected integer");
    }
    return v.get<std::int64_t>();
}

inline double require_number(const Json& obj, const std::string& key, const std::string& path) {
    const Json& v = require_key(obj, key, path);
    if (!v.is_number()) {
        throw ParseError(child_path(path, key) + ": expected number");
    }
    return v.get<double>();
}

inline const Json& require_array(const Json& obj, const std::string& key, const std::string& path) {
    const Json& v = require_key(obj, key, path);
    if (!v.is_array()) {
        throw ParseError(child_path(path, key) + ": expected array");
    }
    return v;
}

inline Json parse_json(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParseError(origin + ": " + e.what());
    }
}

}  // namespace semir::detail
