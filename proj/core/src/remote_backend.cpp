#include "idcompose/remote_backend.hpp"

#include <cmath>
#include <utility>

#include "json_wire.hpp"

namespace idc {
namespace {

struct Endpoint {
    std::string base_url;
    std::string api_key;
    RetryPolicy policy;
};

RealArray need_array(const nlohmann::json& res, const char* key, const std::string& what) {
    if (!res.contains(key)) {
        throw std::runtime_error(what + ": missing \"" + key + "\" field");
    }
    return wire::array_from_json(res.at(key), what + " " + key);
}

void need_rank(const RealArray& a, std::size_t rank, const std::string& what) {
    if (a.rank() != rank) {
        throw std::runtime_error(what + ": expected a rank-" + std::to_string(rank) +
                                 " tensor, got " + a.shape_string());
    }
}

void need_image_shape(const RealArray& a, const std::string& what) {
    if (a.rank() != 3 || a.extent(0) != 3) {
        throw std::runtime_error(what + ": expected a 3 x H x W image, got " + a.shape_string());
    }
}

class HttpTextEncoder final : public TextEncoder {
public:
    explicit HttpTextEncoder(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray encode(const std::string& text) const override {
        return with_retry(ep_.policy, "text-encoder", [&] {
            const auto res =
                wire::post_json(ep_.base_url, "/encode_text", {{"text", text}}, ep_.api_key);
            RealArray tokens = need_array(res, "tokens", "/encode_text");
            need_rank(tokens, 2, "/encode_text");
            return tokens;
        });
    }

private:
    Endpoint ep_;
};

class HttpIdEncoder final : public IdEncoder {
public:
    explicit HttpIdEncoder(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray encode(const RealArray& image) const override {
        return with_retry(ep_.policy, "id-encoder", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}};
            const auto res = wire::post_json(ep_.base_url, "/encode_id", body, ep_.api_key);
            RealArray tokens = need_array(res, "tokens", "/encode_id");
            need_rank(tokens, 2, "/encode_id");
            return tokens;
        });
    }

private:
    Endpoint ep_;
};

class HttpImageCodec final : public ImageCodec {
public:
    explicit HttpImageCodec(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray encode(const RealArray& image) const override {
        return with_retry(ep_.policy, "image-codec", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}};
            const auto res = wire::post_json(ep_.base_url, "/encode_image", body, ep_.api_key);
            RealArray latent = need_array(res, "latent", "/encode_image");
            need_rank(latent, 3, "/encode_image");
            return latent;
        });
    }

    RealArray decode(const RealArray& latent) const override {
        return with_retry(ep_.policy, "image-codec", [&] {
            const nlohmann::json body{{"latent", wire::array_to_json(latent)}};
            const auto res = wire::post_json(ep_.base_url, "/decode_latent", body, ep_.api_key);
            RealArray image = need_array(res, "image", "/decode_latent");
            need_image_shape(image, "/decode_latent");
            return image;
        });
    }

private:
    Endpoint ep_;
};

class HttpDepthEstimator final : public DepthEstimator {
public:
    explicit HttpDepthEstimator(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray estimate(const RealArray& image) const override {
        return with_retry(ep_.policy, "depth-estimator", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}};
            const auto res = wire::post_json(ep_.base_url, "/depth", body, ep_.api_key);
            RealArray depth = need_array(res, "depth", "/depth");
            need_rank(depth, 2, "/depth");
            return depth;
        });
    }

private:
    Endpoint ep_;
};

class HttpSpatialControl final : public SpatialControl {
public:
    explicit HttpSpatialControl(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray residual(const RealArray& depth, const std::vector<std::size_t>& latent_shape,
                       int timestep_index) const override {
        return with_retry(ep_.policy, "spatial-control", [&] {
            nlohmann::json shape = nlohmann::json::array();
            for (std::size_t d : latent_shape) shape.push_back(d);
            const nlohmann::json body{{"depth", wire::array_to_json(depth)},
                                      {"latent_shape", std::move(shape)},
                                      {"timestep", timestep_index}};
            const auto res = wire::post_json(ep_.base_url, "/control", body, ep_.api_key);
            RealArray out = need_array(res, "residual", "/control");
            if (out.shape() != latent_shape) {
                throw std::runtime_error("/control: residual shape " + out.shape_string() +
                                         " does not match the requested latent shape");
            }
            return out;
        });
    }

private:
    Endpoint ep_;
};

class HttpInitialImageGenerator final : public InitialImageGenerator {
public:
    explicit HttpInitialImageGenerator(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray generate(const std::string& prompt, std::size_t height, std::size_t width,
                       std::uint64_t seed) const override {
        return with_retry(ep_.policy, "initial-image-generator", [&] {
            const nlohmann::json body{
                {"prompt", prompt}, {"height", height}, {"width", width}, {"seed", seed}};
            const auto res = wire::post_json(ep_.base_url, "/initial", body, ep_.api_key);
            RealArray image = need_array(res, "image", "/initial");
            need_image_shape(image, "/initial");
            return image;
        });
    }

private:
    Endpoint ep_;
};

class HttpPersonDetector final : public PersonDetector {
public:
    explicit HttpPersonDetector(Endpoint ep) : ep_(std::move(ep)) {}

    std::vector<BBox> detect(const RealArray& image) const override {
        return with_retry(ep_.policy, "person-detector", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)},
                                      {"concept", "person"}};
            const auto res = wire::post_json(ep_.base_url, "/detect", body, ep_.api_key);
            return wire::boxes_from_json(res, "/detect");
        });
    }

private:
    Endpoint ep_;
};

class HttpFaceEmbedder final : public FaceEmbedder {
public:
    explicit HttpFaceEmbedder(Endpoint ep) : ep_(std::move(ep)) {}

    std::optional<RealArray> embed_face(const RealArray& crop) const override {
        return with_retry(ep_.policy, "face-embedder", [&]() -> std::optional<RealArray> {
            const nlohmann::json body{{"image", wire::array_to_json(crop)}};
            const auto res = wire::post_json(ep_.base_url, "/embed_face", body, ep_.api_key);
            if (!res.contains("embedding")) {
                throw std::runtime_error("/embed_face: missing \"embedding\" field");
            }
            if (res.at("embedding").is_null()) return std::nullopt;  // no face found
            RealArray embedding = wire::array_from_json(res.at("embedding"), "/embed_face embedding");
            need_rank(embedding, 1, "/embed_face");
            return embedding;
        });
    }

private:
    Endpoint ep_;
};

class HttpImageEmbedder final : public ImageEmbedder {
public:
    explicit HttpImageEmbedder(Endpoint ep) : ep_(std::move(ep)) {}

    RealArray embed(const RealArray& image) const override {
        return with_retry(ep_.policy, "image-embedder", [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}};
            const auto res = wire::post_json(ep_.base_url, "/embed_image", body, ep_.api_key);
            RealArray embedding = need_array(res, "embedding", "/embed_image");
            need_rank(embedding, 1, "/embed_image");
            return embedding;
        });
    }

private:
    Endpoint ep_;
};

class HttpTextImageScorer final : public TextImageScorer {
public:
    HttpTextImageScorer(Endpoint ep, std::string stage)
        : ep_(std::move(ep)), stage_(std::move(stage)) {}

    double score(const RealArray& image, const std::string& text) const override {
        return with_retry(ep_.policy, stage_, [&] {
            const nlohmann::json body{{"image", wire::array_to_json(image)}, {"text", text}};
            const auto res = wire::post_json(ep_.base_url, "/score", body, ep_.api_key);
            if (!res.contains("score") || !res.at("score").is_number()) {
                throw std::runtime_error("/score: missing numeric \"score\" field");
            }
            const double value = res.at("score").get<double>();
            if (std::isnan(value) || value < 0.0 || value > 100.0) {
                throw std::runtime_error("/score: score must lie in [0, 100]");
            }
            return value;
        });
    }

private:
    Endpoint ep_;
    std::string stage_;
};

}  // namespace

std::shared_ptr<TextEncoder> make_http_text_encoder(const std::string& base_url,
                                                    const std::string& api_key,
                                                    RetryPolicy policy) {
    return std::make_shared<HttpTextEncoder>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<IdEncoder> make_http_id_encoder(const std::string& base_url,
                                                const std::string& api_key, RetryPolicy policy) {
    return std::make_shared<HttpIdEncoder>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<ImageCodec> make_http_image_codec(const std::string& base_url,
                                                  const std::string& api_key,
                                                  RetryPolicy policy) {
    return std::make_shared<HttpImageCodec>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<DepthEstimator> make_http_depth_estimator(const std::string& base_url,
                                                          const std::string& api_key,
                                                          RetryPolicy policy) {
    return std::make_shared<HttpDepthEstimator>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<SpatialControl> make_http_spatial_control(const std::string& base_url,
                                                          const std::string& api_key,
                                                          RetryPolicy policy) {
    return std::make_shared<HttpSpatialControl>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<InitialImageGenerator> make_http_initial_image_generator(
    const std::string& base_url, const std::string& api_key, RetryPolicy policy) {
    return std::make_shared<HttpInitialImageGenerator>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<PersonDetector> make_http_person_detector(const std::string& base_url,
                                                          const std::string& api_key,
                                                          RetryPolicy policy) {
    return std::make_shared<HttpPersonDetector>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<FaceEmbedder> make_http_face_embedder(const std::string& base_url,
                                                      const std::string& api_key,
                                                      RetryPolicy policy) {
    return std::make_shared<HttpFaceEmbedder>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<ImageEmbedder> make_http_image_embedder(const std::string& base_url,
                                                        const std::string& api_key,
                                                        RetryPolicy policy) {
    return std::make_shared<HttpImageEmbedder>(Endpoint{base_url, api_key, policy});
}

std::shared_ptr<TextImageScorer> make_http_text_image_scorer(const std::string& base_url,
                                                             const std::string& api_key,
                                                             RetryPolicy policy,
                                                             const std::string& stage) {
    return std::make_shared<HttpTextImageScorer>(Endpoint{base_url, api_key, policy}, stage);
}

}  // namespace idc
