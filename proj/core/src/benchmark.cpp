#include "idcompose/benchmark.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idcompose/errors.hpp"

namespace idc {

namespace {

using nlohmann::json;

json box_to_json(const BBox& b) {
    return json{{"x0", b.x0}, {"y0", b.y0}, {"x1", b.x1}, {"y1", b.y1}};
}

bool box_valid(const BBox& b) {
    const auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    return in_unit(b.x0) && in_unit(b.y0) && in_unit(b.x1) && in_unit(b.y1) && b.x0 <= b.x1 &&
           b.y0 <= b.y1;
}

std::string loc(std::size_t sample, const std::string& rest = "") {
    std::string out = "/samples/" + std::to_string(sample);
    if (!rest.empty())
        out += "/" + rest;
    return out;
}

std::string id_loc(std::size_t sample, std::size_t id, const std::string& field) {
    return loc(sample, "ids/" + std::to_string(id) + "/" + field);
}

const json& need(const json& j, const char* key, const std::string& location) {
    const auto it = j.find(key);
    if (it == j.end())
        throw validation_error(std::string(bench_code::kBadJson) + " at " + location +
                               ": missing key \"" + key + "\"");
    return *it;
}

std::string need_string(const json& j, const char* key, const std::string& location) {
    const json& v = need(j, key, location);
    if (!v.is_string())
        throw validation_error(std::string(bench_code::kBadJson) + " at " + location + "/" + key +
                               ": expected a string");
    return v.get<std::string>();
}

double need_number(const json& j, const char* key, const std::string& location) {
    const json& v = need(j, key, location);
    if (!v.is_number())
        throw validation_error(std::string(bench_code::kBadJson) + " at " + location + "/" + key +
                               ": expected a number");
    return v.get<double>();
}

}  // namespace

std::vector<ValidationIssue> validate_samples(const std::vector<BenchmarkSample>& samples,
                                              const std::string& base_dir) {
    std::vector<ValidationIssue> issues;
    std::set<std::string> seen_ids;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        const BenchmarkSample& sample = samples[s];
        if (sample.sample_id.empty())
            issues.push_back({bench_code::kSampleIdEmpty, loc(s, "sample_id"), "sample_id is empty"});
        else if (!seen_ids.insert(sample.sample_id).second)
            issues.push_back({bench_code::kSampleIdDuplicate, loc(s, "sample_id"),
                              "sample_id \"" + sample.sample_id + "\" appears more than once"});
        if (sample.global_prompt.empty())
            issues.push_back(
                {bench_code::kGlobalPromptEmpty, loc(s, "global_prompt"), "global_prompt is empty"});
        if (sample.ids.empty())
            issues.push_back({bench_code::kIdsEmpty, loc(s, "ids"), "sample has no ids"});

        for (std::size_t i = 0; i < sample.ids.size(); ++i) {
            const BenchmarkId& id = sample.ids[i];
            if (id.category_label.empty())
                issues.push_back({bench_code::kCategoryEmpty, id_loc(s, i, "category_label"),
                                  "category_label is empty"});
            if (!box_valid(id.box))
                issues.push_back({bench_code::kBoxInvalid, id_loc(s, i, "box"),
                                  "box corners must lie in [0, 1] with x0 <= x1 and y0 <= y1"});
            if (id.posture_description.empty()) {
                issues.push_back({bench_code::kPostureEmpty, id_loc(s, i, "posture_description"),
                                  "posture_description is empty"});
            } else if (id.full_description.find(id.posture_description) == std::string::npos) {
                issues.push_back({bench_code::kFullMissingPosture,
                                  id_loc(s, i, "full_description"),
                                  "full_description does not contain the posture_description"});
            } else {
                // the appearance complement: full with the posture removed
                std::string rest = id.full_description;
                rest.erase(rest.find(id.posture_description), id.posture_description.size());
                const auto non_space = rest.find_first_not_of(" \t\n\r");
                if (non_space == std::string::npos)
                    issues.push_back({bench_code::kAppearanceEmpty,
                                      id_loc(s, i, "full_description"),
                                      "full_description adds no appearance text beyond the posture"});
            }
            if (id.reference_image.empty()) {
                issues.push_back({bench_code::kReferenceMissing, id_loc(s, i, "reference_image"),
                                  "reference_image path is empty"});
            } else if (!base_dir.empty()) {
                const std::string resolved = resolve_reference_path(base_dir, id.reference_image);
                if (!std::filesystem::exists(resolved))
                    issues.push_back({bench_code::kReferenceMissing,
                                      id_loc(s, i, "reference_image"),
                                      "reference image not found: " + resolved});
            }
        }
    }
    return issues;
}

std::string benchmark_to_json(const std::vector<BenchmarkSample>& samples) {
    json doc;
    doc["samples"] = json::array();
    for (const BenchmarkSample& s : samples) {
        json ids = json::array();
        for (const BenchmarkId& id : s.ids)
            ids.push_back(json{{"category_label", id.category_label},
                               {"reference_image", id.reference_image},
                               {"posture_description", id.posture_description},
                               {"full_description", id.full_description},
                               {"box", box_to_json(id.box)}});
        doc["samples"].push_back(json{{"sample_id", s.sample_id},
                                      {"global_prompt", s.global_prompt},
                                      {"interaction_tag", s.interaction_tag},
                                      {"ids", std::move(ids)}});
    }
    return doc.dump(2) + "\n";
}

std::vector<BenchmarkSample> benchmark_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw validation_error(std::string(bench_code::kBadJson) + ": " + e.what());
    }
    const json& arr = need(doc, "samples", "/");
    if (!arr.is_array())
        throw validation_error(std::string(bench_code::kBadJson) + " at /samples: expected an array");

    std::vector<BenchmarkSample> samples;
    for (std::size_t s = 0; s < arr.size(); ++s) {
        const json& js = arr[s];
        if (!js.is_object())
            throw validation_error(std::string(bench_code::kBadJson) + " at " + loc(s) +
                                   ": expected an object");
        BenchmarkSample sample;
        sample.sample_id = need_string(js, "sample_id", loc(s));
        sample.global_prompt = need_string(js, "global_prompt", loc(s));
        sample.interaction_tag = need_string(js, "interaction_tag", loc(s));
        const json& ids = need(js, "ids", loc(s));
        if (!ids.is_array())
            throw validation_error(std::string(bench_code::kBadJson) + " at " + loc(s, "ids") +
                                   ": expected an array");
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const json& ji = ids[i];
            const std::string at = loc(s, "ids/" + std::to_string(i));
            if (!ji.is_object())
                throw validation_error(std::string(bench_code::kBadJson) + " at " + at +
                                       ": expected an object");
            BenchmarkId id;
            id.category_label = need_string(ji, "category_label", at);
            id.reference_image = need_string(ji, "reference_image", at);
            id.posture_description = need_string(ji, "posture_description", at);
            id.full_description = need_string(ji, "full_description", at);
            const json& jb = need(ji, "box", at);
            if (!jb.is_object())
                throw validation_error(std::string(bench_code::kBadJson) + " at " + at +
                                       "/box: expected an object");
            // corner order is validated later; parse raw to keep invalid
            // boxes reportable by code instead of a parse abort
            id.box.x0 = need_number(jb, "x0", at + "/box");
            id.box.y0 = need_number(jb, "y0", at + "/box");
            id.box.x1 = need_number(jb, "x1", at + "/box");
            id.box.y1 = need_number(jb, "y1", at + "/box");
            sample.ids.push_back(std::move(id));
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

void save_benchmark(const std::string& path, const std::vector<BenchmarkSample>& samples) {
    const std::vector<ValidationIssue> issues = validate_samples(samples);
    if (!issues.empty())
        throw validation_error("benchmark rejected before save: " + issues.front().code + " at " +
                               issues.front().location + " (" + issues.front().message + ")" +
                               (issues.size() > 1
                                    ? " and " + std::to_string(issues.size() - 1) + " more"
                                    : ""));
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw validation_error("cannot open " + path + " for writing");
    out << benchmark_to_json(samples);
}

std::vector<BenchmarkSample> load_benchmark(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw validation_error("cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    std::vector<BenchmarkSample> samples = benchmark_from_json(buf.str());
    const std::string base = std::filesystem::path(path).parent_path().string();
    const std::vector<ValidationIssue> issues =
        validate_samples(samples, base.empty() ? "." : base);
    if (!issues.empty())
        throw validation_error("benchmark " + path + " is invalid: " + issues.front().code +
                               " at " + issues.front().location + " (" + issues.front().message +
                               ")" +
                               (issues.size() > 1
                                    ? " and " + std::to_string(issues.size() - 1) + " more"
                                    : ""));
    return samples;
}

std::vector<ValidationIssue> validate_benchmark_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return {{bench_code::kBadJson, "/", "cannot open " + path}};
    std::stringstream buf;
    buf << in.rdbuf();
    std::vector<BenchmarkSample> samples;
    try {
        samples = benchmark_from_json(buf.str());
    } catch (const validation_error& e) {
        return {{bench_code::kBadJson, "/", e.what()}};
    }
    const std::string base = std::filesystem::path(path).parent_path().string();
    return validate_samples(samples, base.empty() ? "." : base);
}

std::string resolve_reference_path(const std::string& base_dir, const std::string& reference_image) {
    const std::filesystem::path p(reference_image);
    if (p.is_absolute() || base_dir.empty())
        return reference_image;
    return (std::filesystem::path(base_dir) / p).string();
}

}  // namespace idc
