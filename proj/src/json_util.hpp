#pragma once

#include "cascade_match/error.hpp"

#include <nlohmann/json.hpp>

#include <initializer_list>
#include <string>

namespace cascade_match::detail {

inline void require_object(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw ValidationError(where + ": expected a JSON object");
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
    require_object(j, where);
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ValidationError(where + ": unknown key '" + it.key() + "'");
    }
}

/// Reads j[key] into out when present, with a typed error message.
template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(where + "." + key + ": wrong type");
    }
}

}  // namespace cascade_match::detail
