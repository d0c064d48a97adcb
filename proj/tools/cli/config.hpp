#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "idcompose/backends.hpp"
#include "idcompose/bench_clients.hpp"
#include "idcompose/benchmark.hpp"
#include "idcompose/pipeline.hpp"

namespace idc::cli {

// One remote model endpoint. The api_key may be overridden from the
// environment; nothing else may be (runs stay reproducible from the digest).
struct EndpointConfig {
    std::string base_url;
    std::string api_key;
};

// Scale knobs for `bench build`. Defaults are the benchmark's protocol
// shape; tests shrink them.
struct BenchBuildKnobs {
    int interactions = kBenchmarkInteractions;
    int prompts_per_interaction = kPromptsPerInteraction;
    int template_size = 32;
    int dedup_retries = 3;
};

struct RunConfig {
    std::string backend = "toy";  // "toy" | "remote"
    std::uint64_t seed = 0;
    int steps = 10;
    double guidance_scale = 1.0;
    bool depth_control = false;
    double depth_strength = 1.0;
    int images_per_sample = 4;
    int concurrency = 4;
    std::string out_dir = "out";
    std::string benchmark_path;
    BenchBuildKnobs bench;
    std::map<std::string, EndpointConfig> endpoints;  // role -> endpoint
};

// Endpoint roles accepted under "endpoints". Bench-construction clients:
// llm, t2i, vlm, detector. Remote backend adapters: text_encoder,
// id_encoder, image_codec, depth_estimator, spatial_control,
// initial_image_generator, person_detector, face_embedder, image_embedder,
// clip_t, hpsv2.
bool is_known_endpoint_role(const std::string& role);

// Strict parse: every key must be known (recursively), every value typed
// and in range. Violations throw config_error.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// 16-hex digest of the canonical config serialization, excluding the two
// fields that never influence output bytes: credentials and out_dir. Two
// configs that can produce different outputs always digest differently.
std::string run_config_digest(const RunConfig& config);

// Credentials only: IDCOMPOSE_<ROLE>_API_KEY (role upper-cased) replaces
// endpoints[role].api_key when the variable is set. Algorithmic parameters
// are never read from the environment.
void apply_env_overrides(RunConfig& config);

// Adapter bundle for the selected backend. "toy" is the full in-process
// deterministic stack; "remote" wires HTTP adapters for the endpoint roles
// present (the denoiser stays empty — it cannot cross a JSON wire, so
// generation requires the toy backend).
BackendBundle make_backend_bundle(const RunConfig& config);

// Benchmark-construction clients from the endpoint table (independent of
// the backend selection). Missing roles stay null; build_benchmark reports
// them.
BenchClients make_bench_clients(const RunConfig& config);

// Request file for `generate`: {"global_prompt", "ids": [{"reference_image",
// "local_prompt", "box": [x0,y0,x1,y1]}, ...]}. Reference images are PPM
// paths resolved against the request file's directory. Unknown keys are
// rejected. Seed/steps/guidance arrive from the RunConfig, not the request.
GenerationRequest load_generation_request(const std::string& path);

}  // namespace idc::cli
