#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "idcompose/array.hpp"
#include "idcompose/attention.hpp"
#include "idcompose/errors.hpp"

namespace idc {

// ---------------------------------------------------------------------------
// External-service clients used by the benchmark construction pipeline:
// a text LLM, a text-to-image generator, a vision-language model, and a
// grounded detector. All are pluggable; stubs drive the tests, HTTP
// implementations talk JSON to configured endpoints.
// ---------------------------------------------------------------------------

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string& prompt) const = 0;
};

class T2iClient {
public:
    virtual ~T2iClient() = default;
    virtual RealArray generate_image(const std::string& prompt, std::size_t height,
                                     std::size_t width, std::uint64_t seed) const = 0;
};

class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual std::string query(const RealArray& image, const std::string& prompt) const = 0;
};

class DetectorClient {
public:
    virtual ~DetectorClient() = default;
    // normalized boxes for every instance of `concept_label` found in the image
    virtual std::vector<BBox> detect(const RealArray& image, const std::string& concept_label) const = 0;
};

struct BenchClients {
    std::shared_ptr<LlmClient> llm;
    std::shared_ptr<T2iClient> t2i;
    std::shared_ptr<VlmClient> vlm;
    std::shared_ptr<DetectorClient> detector;
};

// ---------------------------------------------------------------------------
// Retry with exponential backoff: attempt k sleeps base_delay * 2^(k-1)
// before retrying. After the final attempt the failure surfaces as an
// adapter_error carrying the stage name.
// ---------------------------------------------------------------------------

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{100};
};

template <typename F>
auto with_retry(const RetryPolicy& policy, const std::string& stage, F&& fn)
    -> decltype(fn()) {
    std::string last_error = "no attempts made";
    for (int attempt = 0; attempt < std::max(1, policy.attempts); ++attempt) {
        if (attempt > 0 && policy.base_delay.count() > 0)
            std::this_thread::sleep_for(policy.base_delay * (1 << (attempt - 1)));
        try {
            return fn();
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw adapter_error(stage, "failed after " + std::to_string(std::max(1, policy.attempts)) +
                                   " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// HTTP clients. Wire protocol (JSON POST against base_url):
//   /complete {"prompt"}                          -> {"text"}
//   /generate {"prompt","height","width","seed"}  -> {"image": IMG}
//   /query    {"image": IMG, "prompt"}            -> {"text"}
//   /detect   {"image": IMG, "concept"}           -> {"boxes": [[x0,y0,x1,y1], ...]}
// IMG = {"shape": [3,H,W], "data": [row-major doubles]}. A non-empty
// api_key is sent as "Authorization: Bearer <key>".
// ---------------------------------------------------------------------------

std::shared_ptr<LlmClient> make_http_llm_client(const std::string& base_url,
                                                const std::string& api_key = "",
                                                RetryPolicy policy = {});
std::shared_ptr<T2iClient> make_http_t2i_client(const std::string& base_url,
                                                const std::string& api_key = "",
                                                RetryPolicy policy = {});
std::shared_ptr<VlmClient> make_http_vlm_client(const std::string& base_url,
                                                const std::string& api_key = "",
                                                RetryPolicy policy = {});
std::shared_ptr<DetectorClient> make_http_detector_client(const std::string& base_url,
                                                          const std::string& api_key = "",
                                                          RetryPolicy policy = {});

}  // namespace idc
