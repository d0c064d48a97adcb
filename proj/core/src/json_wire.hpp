#pragma once

// Private helpers shared by the HTTP client implementations. Tensors travel
// as {"shape": [d0, d1, ...], "data": [row-major scalars]}; every endpoint
// speaks JSON over POST and non-200 responses surface as std::runtime_error
// so the caller's retry wrapper can take over.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "idcompose/array.hpp"
#include "idcompose/attention.hpp"
#include "idcompose/errors.hpp"

namespace idc::wire {

inline nlohmann::json array_to_json(const RealArray& a) {
    nlohmann::json shape = nlohmann::json::array();
    for (std::size_t d : a.shape()) shape.push_back(d);
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t i = 0; i < a.size(); ++i) data.push_back(a[i]);
    return nlohmann::json{{"shape", std::move(shape)}, {"data", std::move(data)}};
}

inline RealArray array_from_json(const nlohmann::json& j, const std::string& what) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
        throw std::runtime_error(what + ": expected {\"shape\", \"data\"} object");
    }
    std::vector<std::size_t> shape;
    for (const auto& d : j.at("shape")) {
        const auto v = d.get<long long>();
        if (v <= 0) throw std::runtime_error(what + ": non-positive dimension in shape");
        shape.push_back(static_cast<std::size_t>(v));
    }
    RealArray out = RealArray::zeros(shape);
    const auto& data = j.at("data");
    if (!data.is_array() || data.size() != out.size()) {
        throw std::runtime_error(what + ": data length does not match shape");
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[i].get<double>();
    return out;
}

// Reads a {"boxes": [[x0,y0,x1,y1], ...]} field into validated BBoxes.
inline std::vector<BBox> boxes_from_json(const nlohmann::json& res, const std::string& what) {
    if (!res.contains("boxes") || !res.at("boxes").is_array()) {
        throw std::runtime_error(what + ": missing \"boxes\" array");
    }
    std::vector<BBox> boxes;
    for (const auto& b : res.at("boxes")) {
        if (!b.is_array() || b.size() != 4) {
            throw std::runtime_error(what + ": each box must be [x0, y0, x1, y1]");
        }
        boxes.emplace_back(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                           b[3].get<double>());
    }
    return boxes;
}

// POSTs `body` to base_url + path and returns the parsed JSON response.
// Transport failures, non-200 statuses and malformed JSON all throw
// std::runtime_error.
inline nlohmann::json post_json(const std::string& base_url, const std::string& path,
                                const nlohmann::json& body, const std::string& api_key) {
    httplib::Client client(base_url);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw std::runtime_error("POST " + path + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw std::runtime_error("POST " + path + ": HTTP " + std::to_string(res->status));
    }
    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded()) {
        throw std::runtime_error("POST " + path + ": response is not valid JSON");
    }
    return parsed;
}

inline std::string need_text(const nlohmann::json& j, const char* key, const std::string& what) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_string()) {
        throw std::runtime_error(what + ": missing string field \"" + key + "\"");
    }
    return j.at(key).get<std::string>();
}

}  // namespace idc::wire
