#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "idcompose/backends.hpp"
#include "idcompose/schedule.hpp"

namespace idc {

struct IDReference {
    RealArray image;  // (3 x H x W) pixels in [0, 1]
    std::string local_prompt;
    BBox box;
    int identity_index = 0;
};

struct DepthControlSpec {
    bool enabled = false;
    double strength = 1.0;
};

struct BackgroundSpec {
    RealArray image;           // (3 x H x W) reference background
    SpatialMask foreground_mask;  // at latent resolution; 1 = generate, 0 = preserve
};

struct GenerationRequest {
    std::string global_prompt;
    std::vector<IDReference> ids;
    std::uint64_t seed = 0;
    int steps = 10;
    double guidance_scale = 1.0;
    DepthControlSpec depth_control;
    std::optional<BackgroundSpec> background;
};

// Self-attention input features captured while replaying an inverted ID
// latent forward; at most one entry per (layer_id, timestep_index).
class FeatureCache {
public:
    void insert(FeatureCacheEntry entry);
    const FeatureCacheEntry* find(const std::string& layer_id, int timestep_index) const;
    std::size_t size() const { return entries_.size(); }
    const std::vector<FeatureCacheEntry>& entries() const { return entries_; }

private:
    std::vector<FeatureCacheEntry> entries_;
};

struct InversionResult {
    LatentState inverted;
    FeatureCache cache;
    RealArray reconstruction;  // forward replay endpoint; near image_latent
};

// Inverts a clean latent 0 -> S, then replays S -> 0 with capture hooks
// caching every self-attention layer's input features per timestep (layers
// subsampled by cache_layer_stride). The replay endpoint is returned so
// callers can check the roundtrip.
InversionResult ddim_invert(const RealArray& image_latent, const DDIMSchedule& s,
                            const Denoiser& denoiser, const BlockSet& conditioning, int owner_id,
                            int cache_layer_stride = 1);

// Per-cell selection: foreground keeps pred, background cells are copied
// from forward_noise(background_x0, t) through the identical arithmetic
// path, so conservation is bitwise.
LatentState repaint_blend(const LatentState& pred, const RealArray& background_x0,
                          const SpatialMask& fg_mask, const RealArray& noise,
                          const DDIMSchedule& s);

// Initial image from global + local prompts joined with "; ", then a depth
// map normalized to [0, 1] (min-max; constant maps become zeros) at the
// requested resolution.
RealArray prepare_depth_control(const GenerationRequest& req, const InitialImageGenerator& gen,
                                const DepthEstimator& estimator, std::size_t target_h,
                                std::size_t target_w);

struct PipelineOptions {
    bool masked_cross_attention = true;
    bool extended_self_attention = true;
    // Gates the self block of extended self-attention by region membership:
    // key j is visible to query q iff j's region set is contained in q's.
    // The ungated form lets ID features reach outside queries within two
    // layers; gating keeps ID influence inside its box. Off = ungated.
    bool region_gated_self_block = true;
    int cache_layer_stride = 1;
    // Conditioning used while inverting ID references: the fused local
    // block when set, a null (zero) embedding otherwise.
    bool invert_with_local_prompt = false;
    std::vector<std::size_t> fusion_placeholders;
    bool parallel_inversions = true;
    double alpha_final = 0.3;
    std::size_t initial_image_size = 16;
};

struct StepObserver {
    // called after each DDIM update (and repaint, if any) with the new state
    std::function<void(const LatentState&)> on_step;
    // the per-step noise draw consumed by repaint blending
    std::function<void(int timestep_index, const RealArray& noise)> on_repaint_noise;
    // pre-decode terminal latent
    std::function<void(const RealArray&)> on_final_latent;
};

// Full generation: encode prompts and IDs, rasterize masks, invert
// references with feature caching, run the DDIM loop with masked
// cross-attention / extended self-attention hooks (and depth residuals,
// repaint blending when requested), decode. Deterministic for fixed seed
// and backends.
RealArray generate(const GenerationRequest& req, const BackendBundle& backends,
                   const PipelineOptions& options = {}, const StepObserver& observer = {});

}  // namespace idc
