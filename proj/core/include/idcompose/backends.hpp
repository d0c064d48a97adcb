#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "idcompose/array.hpp"
#include "idcompose/attention.hpp"

namespace idc {

// ---------------------------------------------------------------------------
// Attention hooks: the single seam between the pipeline and any denoiser.
// A denoiser exposes every attention site; the pipeline installs masked or
// capturing variants there. When a hook is absent the denoiser runs the
// plain form (unmasked self-attention / all-token cross-attention).
// ---------------------------------------------------------------------------

struct AttentionContext {
    std::string layer_id;
    int timestep_index = 0;
    std::size_t grid_h = 0, grid_w = 0;  // query-token grid at this site
};

using SelfAttentionFn = std::function<RealArray(const AttentionContext&, const RealArray& x,
                                                const ProjectionSet& p, int heads)>;
using CrossAttentionFn = std::function<RealArray(const AttentionContext&, const RealArray& x,
                                                 const BlockSet& cond, const ProjectionSet& p,
                                                 int heads)>;

struct AttentionHooks {
    SelfAttentionFn self_attention;    // empty -> plain self-attention
    CrossAttentionFn cross_attention;  // empty -> unmasked attention over all cond tokens
};

struct AttentionSite {
    enum class Kind { kSelf, kCross };
    std::string layer_id;
    Kind kind = Kind::kSelf;
    std::size_t grid_h = 0, grid_w = 0;
};

// ---------------------------------------------------------------------------
// Adapter contracts. Every adapter must be deterministic for fixed inputs;
// thread_safe() declares whether concurrent calls are allowed (the pipeline
// serializes calls to adapters that decline).
// ---------------------------------------------------------------------------

class Adapter {
public:
    virtual ~Adapter() = default;
    virtual bool thread_safe() const { return true; }
};

class Denoiser : public Adapter {
public:
    // Predicts eps shaped like `latent`. Conditioning arrives as the block
    // set assembled by the pipeline (global first, then per-ID blocks).
    virtual RealArray predict(const RealArray& latent, int timestep_index, const BlockSet& cond,
                              const AttentionHooks& hooks) const = 0;
    virtual std::vector<AttentionSite> attention_sites() const = 0;
    virtual std::vector<std::size_t> latent_shape() const = 0;  // (C, H_lat, W_lat)
    virtual std::size_t model_dim() const = 0;
    virtual int head_count() const = 0;
};

class TextEncoder : public Adapter {
public:
    virtual RealArray encode(const std::string& text) const = 0;  // (T x model_dim)
};

class IdEncoder : public Adapter {
public:
    virtual RealArray encode(const RealArray& image) const = 0;  // (T_e x model_dim)
};

class ImageCodec : public Adapter {
public:
    virtual RealArray encode(const RealArray& image) const = 0;  // image -> latent
    virtual RealArray decode(const RealArray& latent) const = 0;  // latent -> image
};

class DepthEstimator : public Adapter {
public:
    virtual RealArray estimate(const RealArray& image) const = 0;  // (H x W) raw depth
};

class SpatialControl : public Adapter {
public:
    // Residual added to the eps prediction, shaped like the latent.
    virtual RealArray residual(const RealArray& depth, const std::vector<std::size_t>& latent_shape,
                               int timestep_index) const = 0;
};

class InitialImageGenerator : public Adapter {
public:
    virtual RealArray generate(const std::string& prompt, std::size_t height, std::size_t width,
                               std::uint64_t seed) const = 0;
};

class PersonDetector : public Adapter {
public:
    virtual std::vector<BBox> detect(const RealArray& image) const = 0;
};

class FaceEmbedder : public Adapter {
public:
    // nullopt when no face is found in the crop.
    virtual std::optional<RealArray> embed_face(const RealArray& crop) const = 0;
};

class ImageEmbedder : public Adapter {
public:
    virtual RealArray embed(const RealArray& image) const = 0;  // flat feature vector
};

class TextImageScorer : public Adapter {
public:
    virtual double score(const RealArray& image, const std::string& text) const = 0;  // [0, 100]
};

// ---------------------------------------------------------------------------
// Bundle of adapters a run needs. Generation and evaluation require
// different subsets; the require_* checks fail fast with the missing role.
// ---------------------------------------------------------------------------

struct BackendBundle {
    std::shared_ptr<Denoiser> denoiser;
    std::shared_ptr<TextEncoder> text_encoder;
    std::shared_ptr<IdEncoder> id_encoder;
    std::shared_ptr<ImageCodec> image_codec;
    std::shared_ptr<DepthEstimator> depth_estimator;
    std::shared_ptr<SpatialControl> spatial_control;
    std::shared_ptr<InitialImageGenerator> initial_image_generator;
    std::shared_ptr<PersonDetector> person_detector;
    std::shared_ptr<FaceEmbedder> face_embedder;
    std::shared_ptr<ImageEmbedder> image_embedder;
    std::shared_ptr<TextImageScorer> text_image_scorer;  // CLIP-T style
    std::shared_ptr<TextImageScorer> hps_scorer;         // HPSv2 style

    void require_generation(bool depth_control) const;
    void require_evaluation() const;
};

}  // namespace idc
