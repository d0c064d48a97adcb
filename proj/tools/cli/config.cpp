#include "cli/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idcompose/digest.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/remote_backend.hpp"
#include "idcompose/toy_backend.hpp"

namespace idc::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::set<std::string>& endpoint_roles() {
    static const std::set<std::string> roles = {
        "llm",          "t2i",
        "vlm",          "detector",
        "text_encoder", "id_encoder",
        "image_codec",  "depth_estimator",
        "spatial_control", "initial_image_generator",
        "person_detector", "face_embedder",
        "image_embedder",  "clip_t",
        "hpsv2"};
    return roles;
}

[[noreturn]] void bad(const std::string& what) { throw config_error("config: " + what); }

void reject_unknown_keys(const json& object, const std::set<std::string>& known,
                         const std::string& where) {
    for (const auto& [key, value] : object.items()) {
        if (!known.count(key)) bad("unknown key \"" + key + "\" in " + where);
    }
}

std::string need_string(const json& j, const char* key, const std::string& where) {
    if (!j.at(key).is_string()) bad(where + "." + key + " must be a string");
    return j.at(key).get<std::string>();
}

long long need_integer(const json& j, const char* key, const std::string& where) {
    if (!j.at(key).is_number_integer()) bad(where + "." + key + " must be an integer");
    return j.at(key).get<long long>();
}

double need_number(const json& j, const char* key, const std::string& where) {
    if (!j.at(key).is_number()) bad(where + "." + key + " must be a number");
    return j.at(key).get<double>();
}

int need_positive_int(const json& j, const char* key, const std::string& where) {
    const long long v = need_integer(j, key, where);
    if (v < 1 || v > 1'000'000) bad(where + "." + key + " must be in [1, 1000000]");
    return static_cast<int>(v);
}

std::string read_file_or(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error(std::string(what) + " not readable: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

json parse_json_or(const std::string& text, const char* what) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw config_error(std::string(what) + " is not valid JSON");
    return doc;
}

}  // namespace

bool is_known_endpoint_role(const std::string& role) { return endpoint_roles().count(role) > 0; }

RunConfig parse_run_config(const std::string& text) {
    const json doc = parse_json_or(text, "config");
    if (!doc.is_object()) bad("top level must be an object");
    reject_unknown_keys(doc,
                        {"backend", "seed", "steps", "guidance_scale", "depth_control",
                         "images_per_sample", "concurrency", "out_dir", "benchmark_path",
                         "bench", "endpoints"},
                        "config");

    RunConfig config;
    if (doc.contains("backend")) {
        config.backend = need_string(doc, "backend", "config");
        if (config.backend != "toy" && config.backend != "remote") {
            bad("backend must be \"toy\" or \"remote\"");
        }
    }
    if (doc.contains("seed")) {
        if (!doc.at("seed").is_number_unsigned() && !doc.at("seed").is_number_integer()) {
            bad("config.seed must be a non-negative integer");
        }
        const auto v = doc.at("seed").get<long long>();
        if (v < 0) bad("config.seed must be a non-negative integer");
        config.seed = static_cast<std::uint64_t>(v);
    }
    if (doc.contains("steps")) config.steps = need_positive_int(doc, "steps", "config");
    if (doc.contains("guidance_scale")) {
        config.guidance_scale = need_number(doc, "guidance_scale", "config");
        if (config.guidance_scale < 0.0) bad("config.guidance_scale must be >= 0");
    }
    if (doc.contains("depth_control")) {
        const json& dc = doc.at("depth_control");
        if (!dc.is_object()) bad("config.depth_control must be an object");
        reject_unknown_keys(dc, {"enabled", "strength"}, "config.depth_control");
        if (dc.contains("enabled")) {
            if (!dc.at("enabled").is_boolean()) bad("config.depth_control.enabled must be a bool");
            config.depth_control = dc.at("enabled").get<bool>();
        }
        if (dc.contains("strength")) {
            config.depth_strength = need_number(dc, "strength", "config.depth_control");
        }
    }
    if (doc.contains("images_per_sample")) {
        config.images_per_sample = need_positive_int(doc, "images_per_sample", "config");
    }
    if (doc.contains("concurrency")) {
        config.concurrency = need_positive_int(doc, "concurrency", "config");
    }
    if (doc.contains("out_dir")) config.out_dir = need_string(doc, "out_dir", "config");
    if (doc.contains("benchmark_path")) {
        config.benchmark_path = need_string(doc, "benchmark_path", "config");
    }
    if (doc.contains("bench")) {
        const json& bench = doc.at("bench");
        if (!bench.is_object()) bad("config.bench must be an object");
        reject_unknown_keys(
            bench, {"interactions", "prompts_per_interaction", "template_size", "dedup_retries"},
            "config.bench");
        if (bench.contains("interactions")) {
            config.bench.interactions = need_positive_int(bench, "interactions", "config.bench");
        }
        if (bench.contains("prompts_per_interaction")) {
            config.bench.prompts_per_interaction =
                need_positive_int(bench, "prompts_per_interaction", "config.bench");
        }
        if (bench.contains("template_size")) {
            config.bench.template_size = need_positive_int(bench, "template_size", "config.bench");
        }
        if (bench.contains("dedup_retries")) {
            const long long v = need_integer(bench, "dedup_retries", "config.bench");
            if (v < 0 || v > 100) bad("config.bench.dedup_retries must be in [0, 100]");
            config.bench.dedup_retries = static_cast<int>(v);
        }
    }
    if (doc.contains("endpoints")) {
        const json& endpoints = doc.at("endpoints");
        if (!endpoints.is_object()) bad("config.endpoints must be an object");
        for (const auto& [role, ep] : endpoints.items()) {
            if (!is_known_endpoint_role(role)) {
                bad("unknown endpoint role \"" + role + "\" in config.endpoints");
            }
            if (!ep.is_object()) bad("config.endpoints." + role + " must be an object");
            reject_unknown_keys(ep, {"base_url", "api_key"}, "config.endpoints." + role);
            EndpointConfig entry;
            if (!ep.contains("base_url")) {
                bad("config.endpoints." + role + " needs a base_url");
            }
            entry.base_url = need_string(ep, "base_url", "config.endpoints." + role);
            if (ep.contains("api_key")) {
                entry.api_key = need_string(ep, "api_key", "config.endpoints." + role);
            }
            config.endpoints.emplace(role, std::move(entry));
        }
    }
    return config;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(read_file_or(path, "config file"));
}

std::string run_config_digest(const RunConfig& config) {
    json doc;
    doc["backend"] = config.backend;
    doc["seed"] = config.seed;
    doc["steps"] = config.steps;
    doc["guidance_scale"] = config.guidance_scale;
    doc["depth_control"] = {{"enabled", config.depth_control},
                            {"strength", config.depth_strength}};
    doc["images_per_sample"] = config.images_per_sample;
    doc["concurrency"] = config.concurrency;
    // out_dir is deliberately absent: it chooses where results land, never
    // what they contain, so runs into different directories stay comparable.
    doc["benchmark_path"] = config.benchmark_path;
    doc["bench"] = {{"interactions", config.bench.interactions},
                    {"prompts_per_interaction", config.bench.prompts_per_interaction},
                    {"template_size", config.bench.template_size},
                    {"dedup_retries", config.bench.dedup_retries}};
    json endpoints = json::object();
    for (const auto& [role, ep] : config.endpoints) {
        endpoints[role] = {{"base_url", ep.base_url}};  // credentials never enter the digest
    }
    doc["endpoints"] = std::move(endpoints);
    return digest_string(doc.dump());
}

void apply_env_overrides(RunConfig& config) {
    for (auto& [role, ep] : config.endpoints) {
        std::string name = "IDCOMPOSE_" + role + "_API_KEY";
        std::transform(name.begin(), name.end(), name.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        if (const char* value = std::getenv(name.c_str())) ep.api_key = value;
    }
}

namespace {

const EndpointConfig* find_endpoint(const RunConfig& config, const std::string& role) {
    const auto it = config.endpoints.find(role);
    return it == config.endpoints.end() ? nullptr : &it->second;
}

}  // namespace

BackendBundle make_backend_bundle(const RunConfig& config) {
    if (config.backend == "toy") return make_toy_backend();

    BackendBundle bundle;
    if (const auto* ep = find_endpoint(config, "text_encoder")) {
        bundle.text_encoder = make_http_text_encoder(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "id_encoder")) {
        bundle.id_encoder = make_http_id_encoder(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "image_codec")) {
        bundle.image_codec = make_http_image_codec(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "depth_estimator")) {
        bundle.depth_estimator = make_http_depth_estimator(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "spatial_control")) {
        bundle.spatial_control = make_http_spatial_control(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "initial_image_generator")) {
        bundle.initial_image_generator =
            make_http_initial_image_generator(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "person_detector")) {
        bundle.person_detector = make_http_person_detector(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "face_embedder")) {
        bundle.face_embedder = make_http_face_embedder(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "image_embedder")) {
        bundle.image_embedder = make_http_image_embedder(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "clip_t")) {
        bundle.text_image_scorer = make_http_text_image_scorer(ep->base_url, ep->api_key, {},
                                                               "clip-t");
    }
    if (const auto* ep = find_endpoint(config, "hpsv2")) {
        bundle.hps_scorer = make_http_text_image_scorer(ep->base_url, ep->api_key, {}, "hpsv2");
    }
    return bundle;
}

BenchClients make_bench_clients(const RunConfig& config) {
    BenchClients clients;
    if (const auto* ep = find_endpoint(config, "llm")) {
        clients.llm = make_http_llm_client(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "t2i")) {
        clients.t2i = make_http_t2i_client(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "vlm")) {
        clients.vlm = make_http_vlm_client(ep->base_url, ep->api_key);
    }
    if (const auto* ep = find_endpoint(config, "detector")) {
        clients.detector = make_http_detector_client(ep->base_url, ep->api_key);
    }
    return clients;
}

GenerationRequest load_generation_request(const std::string& path) {
    const json doc = parse_json_or(read_file_or(path, "request file"), "request");
    if (!doc.is_object()) throw validation_error("request: top level must be an object");
    for (const auto& [key, value] : doc.items()) {
        if (key != "global_prompt" && key != "ids") {
            throw validation_error("request: unknown key \"" + key + "\"");
        }
    }
    if (!doc.contains("global_prompt") || !doc.at("global_prompt").is_string()) {
        throw validation_error("request: global_prompt must be a string");
    }
    if (!doc.contains("ids") || !doc.at("ids").is_array() || doc.at("ids").empty()) {
        throw validation_error("request: ids must be a non-empty array");
    }

    const fs::path base = fs::path(path).parent_path();
    GenerationRequest request;
    request.global_prompt = doc.at("global_prompt").get<std::string>();
    int index = 0;
    for (const json& id : doc.at("ids")) {
        const std::string where = "request.ids[" + std::to_string(index) + "]";
        if (!id.is_object()) throw validation_error(where + " must be an object");
        for (const auto& [key, value] : id.items()) {
            if (key != "reference_image" && key != "local_prompt" && key != "box") {
                throw validation_error(where + ": unknown key \"" + key + "\"");
            }
        }
        if (!id.contains("reference_image") || !id.at("reference_image").is_string()) {
            throw validation_error(where + ".reference_image must be a string");
        }
        if (!id.contains("local_prompt") || !id.at("local_prompt").is_string()) {
            throw validation_error(where + ".local_prompt must be a string");
        }
        if (!id.contains("box") || !id.at("box").is_array() || id.at("box").size() != 4) {
            throw validation_error(where + ".box must be [x0, y0, x1, y1]");
        }
        const json& box = id.at("box");
        for (const json& v : box) {
            if (!v.is_number()) throw validation_error(where + ".box entries must be numbers");
        }
        IDReference ref;
        const std::string rel = id.at("reference_image").get<std::string>();
        const fs::path resolved = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
        ref.image = read_ppm(resolved);
        ref.local_prompt = id.at("local_prompt").get<std::string>();
        ref.box = BBox(box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                       box[3].get<double>());
        ref.identity_index = index;
        request.ids.push_back(std::move(ref));
        ++index;
    }
    return request;
}

}  // namespace idc::cli
