#pragma once

#include <string>
#include <vector>

#include "idcompose/attention.hpp"

namespace idc {

// One identity inside a benchmark sample. `reference_image` is stored
// verbatim (relative paths resolve against the benchmark file's directory).
// `full_description` is the posture description followed by the appearance
// description of the assigned reference.
struct BenchmarkId {
    std::string category_label;
    std::string reference_image;
    std::string posture_description;
    std::string full_description;
    BBox box;
};

struct BenchmarkSample {
    std::string sample_id;
    std::string global_prompt;
    std::string interaction_tag;
    std::vector<BenchmarkId> ids;
};

// Scale of the released benchmark; reconstructions built with other clients
// are not held to the post-exclusion count.
inline constexpr int kBenchmarkInteractions = 40;
inline constexpr int kPromptsPerInteraction = 10;
inline constexpr int kReleasedBenchmarkSampleCount = 393;

// Distinct validator codes, one per schema invariant.
namespace bench_code {
inline constexpr const char* kBadJson = "E_BAD_JSON";
inline constexpr const char* kSampleIdEmpty = "E_SAMPLE_ID_EMPTY";
inline constexpr const char* kSampleIdDuplicate = "E_SAMPLE_ID_DUP";
inline constexpr const char* kGlobalPromptEmpty = "E_GLOBAL_PROMPT_EMPTY";
inline constexpr const char* kIdsEmpty = "E_IDS_EMPTY";
inline constexpr const char* kCategoryEmpty = "E_CATEGORY_EMPTY";
inline constexpr const char* kBoxInvalid = "E_BOX_INVALID";
inline constexpr const char* kPostureEmpty = "E_POSTURE_EMPTY";
inline constexpr const char* kFullMissingPosture = "E_FULL_MISSING_POSTURE";
inline constexpr const char* kAppearanceEmpty = "E_APPEARANCE_EMPTY";
inline constexpr const char* kReferenceMissing = "E_REF_MISSING";
}  // namespace bench_code

struct ValidationIssue {
    std::string code;      // one of bench_code::*
    std::string location;  // JSON-pointer-style path into the document
    std::string message;
};

// Schema checks on in-memory samples. When `base_dir` is non-empty,
// reference image paths are additionally checked for existence (relative
// paths resolve against base_dir).
std::vector<ValidationIssue> validate_samples(const std::vector<BenchmarkSample>& samples,
                                              const std::string& base_dir = "");

// Deterministic serialization: sorted keys, two-space indent, trailing
// newline — save/load round-trips are byte-stable.
std::string benchmark_to_json(const std::vector<BenchmarkSample>& samples);
std::vector<BenchmarkSample> benchmark_from_json(const std::string& text);

// save validates the schema first (no file-existence checks); load parses,
// then validates including reference existence, and throws on any issue.
void save_benchmark(const std::string& path, const std::vector<BenchmarkSample>& samples);
std::vector<BenchmarkSample> load_benchmark(const std::string& path);

// Parse + validate without throwing: returns every issue found in the file
// (existence checks against the file's own directory).
std::vector<ValidationIssue> validate_benchmark_file(const std::string& path);

// Path of `sample.reference_image` resolved against the benchmark directory.
std::string resolve_reference_path(const std::string& base_dir, const std::string& reference_image);

}  // namespace idc
