#include "idcompose/bench_clients.hpp"

#include <utility>

#include "json_wire.hpp"

namespace idc {
namespace {

struct Endpoint {
    std::string base_url;
    std::string api_key;
    RetryPolicy policy;
};

class HttpLlmClient final : public LlmClient {
public:
    explicit HttpLlmClient(Endpoint ep) : ep_(std::move(ep)) {}

    std::string complete(const std::string& prompt) const override {
        return with_retry(ep_.policy, "llm", [&] {
            const auto res =
                wire::post_json(ep_.base_url, "/complete", {{"prompt", prompt}}, ep_.api_key);
            return wire::need_text(res, "text", "/complete");
        });
    }

private:
    Endpoint ep_;
};

class HttpT2iClient final : public T2iClient {
public:
    explicit HttpT2iClient(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray generate_image(const std::string& prompt, std::size_t height, std::size_t width,
                             std::uint64_t seed) const override {
        return with_retry(ep_.policy, "t2i", [&] {
            const nlohmann::json body{
                {"prompt", prompt}, {"height", height}, {"width", width}, {"seed", seed}};
            const auto res = wire::post_json(ep_.base_url, "/generate", body, ep_.api_key);
            if (!res.contains("image")) {
                throw std::runtime_error("/generate: missing \"image\" field");
            }
            RealArray image = wire::array_from_json(res.at("image"), "/generate image");
            if (image.shape().size() != 3 || image.shape()[0] != 3) {
                throw std::runtime_error("/generate: image is not a 3 x H x W tensor");
            }
            return image;
        });
    }

private:
    Endpoint ep_;
};

class HttpVlmClient final : public VlmClient {
public:
    explicit HttpVlmClient(Endpoint ep) : ep_(std::move(ep)) {}

    std::string query(const RealArray& image, const std::string& prompt) const override {
        return with_retry(ep_.policy, "vlm", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}, {"prompt", prompt}};
            const auto res = wire::post_json(ep_.base_url, "/query", body, ep_.api_key);
            return wire::need_text(res, "text", "/query");
        });
    }

private:
    Endpoint ep_;
};

class HttpDetectorClient final : public DetectorClient {
public:
    explicit HttpDetectorClient(Endpoint ep) : ep_(std::move(ep)) {}

    std::vector<BBox> detect(const RealArray& image, const std::string& concept_label) const override {
        return with_retry(ep_.policy, "detector", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)},
                                      {"concept", concept_label}};
            const auto res = wire::post_json(ep_.base_url, "/detect", body, ep_.api_key);
            return wire::boxes_from_json(res, "/detect");
        });
    }

private:
    Endpoint ep_;
};

}  // namespace

std::shared_ptr<LlmClient> make_http_llm_client(const std::string& base_url,
                                                const std::string& api_key, RetryPolicy policy) {
    return std::make_shared<HttpLlmClient>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<T2iClient> make_http_t2i_client(const std::string& base_url,
                                                const std::string& api_key, RetryPolicy policy) {
    return std::make_shared<HttpT2iClient>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<VlmClient> make_http_vlm_client(const std::string& base_url,
                                                const std::string& api_key, RetryPolicy policy) {
    return std::make_shared<HttpVlmClient>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<DetectorClient> make_http_detector_client(const std::string& base_url,
                                                          const std::string& api_key,
                                                          RetryPolicy policy) {
    return std::make_shared<HttpDetectorClient>(Endpoint{base_url, api_key, policy});
}

}  // namespace idc
