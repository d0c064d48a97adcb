#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "idcompose/bench_clients.hpp"
#include "idcompose/benchmark.hpp"

namespace idc {

// ---------------------------------------------------------------------------
// Prompt templates driving the six construction stages. These strings are
// part of the external contract: transcripts are audited against them.
// ---------------------------------------------------------------------------
namespace bench_templates {

inline constexpr const char* kInteractions =
    "Please help me generate interactions between two people, such as 'Back-to-back stand'";

// the per-interaction prompt-expansion request; count and interaction are
// substituted into the fixed phrasing
std::string prompt_expansion(const std::string& interaction, int count);

inline constexpr const char* kTemplatePrefix = "A portrait of 2 people";

inline constexpr const char* kConceptExtraction =
    "Please list the types of objects or concepts in this image. Each concept only needs to be "
    "listed once, and the essential components in the image should be listed as much as possible. "
    "Examine the provided image and identify the main components within it. Please extract a list "
    "of relevant nouns, ensuring the focus is on people and the most significant elements present "
    "in the image. Aim to identify no more than ten objects or individuals. Ensure that the "
    "selected nouns accurately represent the key components, such as: Individuals (e.g., 'man', "
    "'woman', 'child'), Main objects (e.g., 'car', 'tree', 'building'). Return the list in a "
    "concise format. Focus on significant elements like people (without details on clothing, "
    "accessories, or expressions), and main objects or concepts of the environment. Exclude any "
    "minor details that are not central to the composition. Please separate each concept with a "
    "comma, e.g.: \"table, man, apple\". Try not to exceed ten concepts.";

// conversational yes/no probe deciding whether a word names a category of
// people; %s is replaced by the queried word
std::string human_filter(const std::string& concept_label);

inline constexpr const char* kAnnotation =
    "This is an image of a person. Please describe this image in detail. Generate detailed "
    "descriptions, organize your observations into two distinct sections: 'State' and "
    "'Appearance'. 'State': Describe the actions, expressions, and poses of any individuals in "
    "the image, as well as the positions, angles, and conditions of objects. 'Consider aspects "
    "such as: Actions or motions (e.g., 'running', 'sitting'), Facial expressions (e.g., "
    "'smiling', 'frowning'), Postures (e.g., 'standing upright', 'slouched'), Object status "
    "(e.g., 'broken', 'new') and orientation (e.g., 'tilted', 'upright'). 'Appearance': Detail "
    "the physical characteristics of individuals and objects, including: Human features (e.g., "
    "'hair color', 'gender', 'age'), Clothing details (e.g., 'color', 'style', 'fit'), Object "
    "characteristics (e.g., 'color', 'texture', 'size'). Provide a comprehensive description "
    "with two parts of the 'State' and 'Appearance' of the mentioned concept in the image. Both "
    "parts should not be longer than 50 words. Please provide only the descriptions directly, "
    "the description should be as detailed as possible";

}  // namespace bench_templates

// "A portrait of 2 people, <prompt>"
std::string prefixed_prompt(const std::string& prompt);

struct TranscriptEntry {
    std::string prompt;
    std::string response;
};
using Transcript = std::vector<TranscriptEntry>;

// ---------------------------------------------------------------------------
// Stage functions. Each is independently callable; the orchestrator below
// wires them together with checkpoints, transcripts and retries.
// ---------------------------------------------------------------------------

// Stage 1a: distinct interaction phrases. Responses are parsed as lines
// (bullets and numbering stripped), deduplicated order-preserving; short
// results re-query up to dedup_retries times before failing.
std::vector<std::string> nominate_interactions(const LlmClient& llm, int count,
                                               int dedup_retries = 3,
                                               Transcript* transcript = nullptr);

// Stage 1b: per-interaction prompt expansion, same parsing rules.
std::vector<std::string> expand_prompts(const LlmClient& llm, const std::string& interaction,
                                        int count, int dedup_retries = 3,
                                        Transcript* transcript = nullptr);

// Stage 3 parsing: comma-separated concepts; trimmed, lowercased,
// deduplicated, trailing period dropped; >10 entries truncated with a
// warning. An empty parse is an error carrying the raw response.
std::vector<std::string> parse_concept_list(const std::string& response,
                                            std::vector<std::string>* warnings = nullptr);

std::vector<std::string> extract_concepts(const VlmClient& vlm, const RealArray& image,
                                          std::vector<std::string>* warnings = nullptr,
                                          Transcript* transcript = nullptr);

// Stage 3b: keeps concepts the client confirms as people categories, in
// input order.
std::vector<std::string> filter_human_concepts(const VlmClient& vlm,
                                               const std::vector<std::string>& concepts,
                                               Transcript* transcript = nullptr);

// Stage 4: detection + crops written under crop_dir with the given stem.
struct DetectedConcept {
    std::string concept_label;
    BBox box;
    std::string crop_path;
};
std::vector<DetectedConcept> detect_concepts(const DetectorClient& detector,
                                             const RealArray& image,
                                             const std::vector<std::string>& concepts,
                                             const std::string& crop_dir, const std::string& stem,
                                             std::vector<std::string>* warnings = nullptr);

// Stage 5: two-section annotation. Section headers are matched
// case-insensitively, with optional quotes and colon; a missing section is
// a stage failure carrying the raw response.
struct AnnotationResult {
    std::string state;       // posture description (crops)
    std::string appearance;  // appearance description (references)
};
AnnotationResult parse_annotation(const std::string& response);
AnnotationResult annotate(const VlmClient& vlm, const RealArray& image,
                          Transcript* transcript = nullptr);

// Stage 6 inputs: everything known about one template image and one
// reference-pool entry.
struct TemplateRecord {
    int interaction_index = 0;
    int prompt_index = 0;
    std::string interaction;
    std::string prompt;  // prefixed global prompt
    std::string image_path;
    std::vector<DetectedConcept> humans;
    std::vector<std::string> postures;  // parallel to humans
};
struct ReferenceRecord {
    std::string path;
    std::string category_label;
    std::string appearance;
};

// Stage 6: seeded assignment of category-consistent references; templates
// without usable IDs are flagged in `warnings`, never silently assigned.
// full_description = posture + " " + appearance.
std::vector<BenchmarkSample> structure_samples(const std::vector<TemplateRecord>& templates,
                                               const std::vector<ReferenceRecord>& references,
                                               std::uint64_t seed,
                                               const std::vector<std::string>& category_vocabulary,
                                               std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Orchestrator.
// ---------------------------------------------------------------------------

struct BuildConfig {
    int interaction_count = kBenchmarkInteractions;
    int prompts_per_interaction = kPromptsPerInteraction;
    std::uint64_t seed = 0;
    int concurrency = 4;  // fan-out bound inside a stage
    int dedup_retries = 3;
    std::vector<std::string> category_vocabulary{"man", "woman", "boy", "girl"};
    std::string work_dir;  // receives templates/, crops/, checkpoints/, transcripts/
    std::size_t template_height = 32;
    std::size_t template_width = 32;
};

struct ReferenceEntry {
    std::string path;  // PPM image
    std::string category_label;
};

struct StageRecord {
    std::string stage;  // INTERACTIONS, PROMPTS, TEMPLATES, CONCEPTS,
                        // DETECTION, ANNOTATION, STRUCTURE
    std::string input_digest;
    std::string output_digest;
    std::string transcript_path;  // empty when a stage makes no client calls
};

struct BuildResult {
    std::vector<BenchmarkSample> samples;
    std::vector<StageRecord> stages;
    std::vector<std::string> warnings;
    std::string benchmark_path;      // work_dir/benchmark.json
    std::string review_report_path;  // work_dir/review_report.txt
};

// Runs the six stages over the clients, checkpointing each stage under
// work_dir/checkpoints so a rerun with unchanged inputs replays from disk
// instead of re-querying. Deterministic for fixed seed and fixed clients.
BuildResult build_benchmark(const BenchClients& clients,
                            const std::vector<ReferenceEntry>& references,
                            const BuildConfig& config);

}  // namespace idc
