#include "idcompose/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <thread>
#include <utility>

#include "idcompose/errors.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/rng.hpp"

namespace idc {

void FeatureCache::insert(FeatureCacheEntry entry) {
    if (find(entry.layer_id, entry.timestep_index))
        throw config_error("duplicate feature-cache entry for layer " + entry.layer_id +
                           " at timestep " + std::to_string(entry.timestep_index));
    entries_.push_back(std::move(entry));
}

const FeatureCacheEntry* FeatureCache::find(const std::string& layer_id, int timestep_index) const {
    for (const FeatureCacheEntry& e : entries_)
        if (e.timestep_index == timestep_index && e.layer_id == layer_id)
            return &e;
    return nullptr;
}

namespace {

// Index of each self site within attention_sites() order, for the layer
// stride. The stride keeps layer 0, k, 2k, ...
std::map<std::string, std::size_t> self_layer_ordinals(const Denoiser& d) {
    std::map<std::string, std::size_t> ordinals;
    std::size_t n = 0;
    for (const AttentionSite& s : d.attention_sites())
        if (s.kind == AttentionSite::Kind::kSelf)
            ordinals[s.layer_id] = n++;
    return ordinals;
}

RealArray predict_or_rethrow(const Denoiser& denoiser, const RealArray& latent, int t,
                             const BlockSet& cond, const AttentionHooks& hooks, int identity) {
    try {
        return denoiser.predict(latent, t, cond, hooks);
    } catch (const adapter_error&) {
        throw;
    } catch (const std::exception& e) {
        throw adapter_error("denoiser", e.what(), t, identity);
    }
}

}  // namespace

InversionResult ddim_invert(const RealArray& image_latent, const DDIMSchedule& s,
                            const Denoiser& denoiser, const BlockSet& conditioning, int owner_id,
                            int cache_layer_stride) {
    if (cache_layer_stride < 1)
        throw config_error("cache_layer_stride must be >= 1");
    const std::map<std::string, std::size_t> ordinals = self_layer_ordinals(denoiser);

    // invert 0 -> S, eps evaluated at the current state
    LatentState state{image_latent, 0};
    for (int t = 0; t < s.steps(); ++t) {
        RealArray eps = predict_or_rethrow(denoiser, state.latent, t, conditioning, {}, owner_id);
        state = ddim_step(state, eps, s, StepDirection::kInvert);
    }

    InversionResult result{state, {}, {}};

    // replay S -> 0 with capture hooks; the replay endpoint approximates the
    // input latent, which the roundtrip contracts check
    FeatureCache& cache = result.cache;
    AttentionHooks capture;
    capture.self_attention = [&cache, &ordinals, cache_layer_stride, owner_id](
                                 const AttentionContext& ctx, const RealArray& x,
                                 const ProjectionSet& p, int heads) {
        const auto it = ordinals.find(ctx.layer_id);
        if (it != ordinals.end() && it->second % static_cast<std::size_t>(cache_layer_stride) == 0)
            cache.insert(FeatureCacheEntry{ctx.layer_id, ctx.timestep_index, x, owner_id});
        return extended_self_attention(x, {}, {}, p, heads);
    };

    LatentState replay = state;
    for (int t = s.steps(); t > 0; --t) {
        RealArray eps = predict_or_rethrow(denoiser, replay.latent, t, conditioning, capture, owner_id);
        replay = ddim_step(replay, eps, s, StepDirection::kDenoise);
    }
    result.reconstruction = std::move(replay.latent);
    return result;
}

LatentState repaint_blend(const LatentState& pred, const RealArray& background_x0,
                          const SpatialMask& fg_mask, const RealArray& noise,
                          const DDIMSchedule& s) {
    const RealArray& lat = pred.latent;
    if (lat.rank() != 3)
        throw shape_error("repaint expects a (C x H x W) latent, got " + lat.shape_string());
    if (!lat.same_shape(background_x0))
        throw shape_error("repaint background " + background_x0.shape_string() +
                          " does not match latent " + lat.shape_string());
    if (fg_mask.height() != lat.extent(1) || fg_mask.width() != lat.extent(2))
        throw shape_error("repaint mask " + std::to_string(fg_mask.height()) + "x" +
                          std::to_string(fg_mask.width()) + " does not match latent " +
                          lat.shape_string());

    const RealArray noised = forward_noise(background_x0, pred.timestep_index, noise, s);
    RealArray out = lat;
    for (std::size_t c = 0; c < lat.extent(0); ++c)
        for (std::size_t r = 0; r < lat.extent(1); ++r)
            for (std::size_t x = 0; x < lat.extent(2); ++x)
                if (fg_mask.at(r, x) == 0.0)
                    out.at(c, r, x) = noised.at(c, r, x);
    return LatentState{std::move(out), pred.timestep_index};
}

RealArray prepare_depth_control(const GenerationRequest& req, const InitialImageGenerator& gen,
                                const DepthEstimator& estimator, std::size_t target_h,
                                std::size_t target_w) {
    if (!req.depth_control.enabled)
        throw config_error("prepare_depth_control called with depth control disabled");

    std::string prompt = req.global_prompt;
    for (const IDReference& id : req.ids)
        if (!id.local_prompt.empty())
            prompt += "; " + id.local_prompt;

    RealArray initial;
    try {
        initial = gen.generate(prompt, target_h, target_w, req.seed);
    } catch (const std::exception& e) {
        throw adapter_error("initial-image", e.what());
    }
    RealArray depth;
    try {
        depth = estimator.estimate(initial);
    } catch (const std::exception& e) {
        throw adapter_error("depth", e.what());
    }
    if (depth.rank() != 2)
        throw adapter_error("depth", "estimator returned a non-2D map " + depth.shape_string());

    double lo = depth[0], hi = depth[0];
    for (std::size_t i = 0; i < depth.size(); ++i) {
        lo = std::min(lo, depth[i]);
        hi = std::max(hi, depth[i]);
    }
    RealArray norm = RealArray::zeros(depth.shape());
    if (hi > lo)
        for (std::size_t i = 0; i < depth.size(); ++i)
            norm[i] = (depth[i] - lo) / (hi - lo);
    // constant maps normalize to zeros
    return resize_bilinear(norm, target_h, target_w);
}

namespace {

struct ResolutionKey {
    std::size_t h, w;
    bool operator<(const ResolutionKey& o) const { return h != o.h ? h < o.h : w < o.w; }
};

// Region-membership bitmasks per query cell: word-packed id sets, so the
// visibility rule "keys from R(j) subset of R(q)" is a masked AND.
struct RegionIndex {
    std::size_t words = 0;
    std::vector<std::uint64_t> bits;  // cell-major, `words` per cell

    static RegionIndex build(const std::vector<SpatialMask>& masks) {
        RegionIndex idx;
        if (masks.empty())
            return idx;
        const std::size_t cells = masks.front().cell_count();
        idx.words = (masks.size() + 63) / 64;
        idx.bits.assign(cells * idx.words, 0);
        for (std::size_t i = 0; i < masks.size(); ++i)
            for (std::size_t q = 0; q < cells; ++q)
                if (masks[i].flat(q) == 1.0)
                    idx.bits[q * idx.words + i / 64] |= (1ull << (i % 64));
        return idx;
    }

    bool subset(std::size_t j, std::size_t q) const {
        for (std::size_t w = 0; w < words; ++w)
            if (bits[j * words + w] & ~bits[q * words + w])
                return false;
        return true;
    }
};

// Extended self-attention with the self block gated by region membership.
RealArray region_gated_self_attention(const RealArray& x,
                                      const std::vector<const FeatureCacheEntry*>& caches,
                                      const std::vector<SpatialMask>& masks,
                                      const RegionIndex& regions, const ProjectionSet& p,
                                      int heads) {
    const std::size_t tq = x.rows();
    std::vector<RealArray> parts{x};
    for (const FeatureCacheEntry* e : caches)
        parts.push_back(e->features);
    const RealArray keys_src = RealArray::vconcat(parts);

    RealArray bias = RealArray::zeros({tq, keys_src.rows()});
    for (std::size_t q = 0; q < tq; ++q)
        for (std::size_t j = 0; j < tq; ++j)
            if (j != q && !regions.subset(j, q))
                bias.at(q, j) = kNegLarge;
    std::size_t col = tq;
    for (std::size_t i = 0; i < caches.size(); ++i) {
        const std::size_t n = caches[i]->features.rows();
        for (std::size_t q = 0; q < tq; ++q)
            if (masks[i].flat(q) == 0.0)
                for (std::size_t c = 0; c < n; ++c)
                    bias.at(q, col + c) = kNegLarge;
        col += n;
    }
    return multi_head_attention(x.matmul(p.w_q), keys_src.matmul(p.w_k), keys_src.matmul(p.w_v),
                                bias, heads);
}

void validate_request(const GenerationRequest& req) {
    if (req.ids.empty())
        throw validation_error("generation request needs at least one ID reference");
    if (req.steps < 1)
        throw validation_error("generation request needs steps >= 1");
    if (req.global_prompt.empty())
        throw validation_error("generation request needs a global prompt");
    if (req.guidance_scale < 0.0)
        throw validation_error("guidance scale must be non-negative");
}

}  // namespace

RealArray generate(const GenerationRequest& req, const BackendBundle& backends,
                   const PipelineOptions& options, const StepObserver& observer) {
    validate_request(req);
    backends.require_generation(req.depth_control.enabled);
    const Denoiser& den = *backends.denoiser;
    const DDIMSchedule sched = DDIMSchedule::linear(req.steps, options.alpha_final);
    const std::vector<std::size_t> latent_shape = den.latent_shape();
    const std::size_t model_dim = den.model_dim();
    const int heads = den.head_count();

    // (1) prompt embeddings
    RealArray global_tokens;
    try {
        global_tokens = backends.text_encoder->encode(req.global_prompt);
    } catch (const std::exception& e) {
        throw adapter_error("text-encoder", e.what());
    }
    if (global_tokens.rank() != 2 || global_tokens.cols() != model_dim)
        throw adapter_error("text-encoder", "global tokens " + global_tokens.shape_string() +
                                                " do not match model_dim " +
                                                std::to_string(model_dim));

    // (2) fused per-ID blocks
    std::vector<RealArray> fused(req.ids.size());
    for (std::size_t i = 0; i < req.ids.size(); ++i) {
        const IDReference& id = req.ids[i];
        RealArray id_tokens;
        try {
            id_tokens = backends.id_encoder->encode(id.image);
        } catch (const std::exception& e) {
            throw adapter_error("id-encoder", e.what(), -1, id.identity_index);
        }
        if (id.local_prompt.empty()) {
            fused[i] = fuse_id_embedding(RealArray(), id_tokens, {});
        } else {
            RealArray text_tokens;
            try {
                text_tokens = backends.text_encoder->encode(id.local_prompt);
            } catch (const std::exception& e) {
                throw adapter_error("text-encoder", e.what(), -1, id.identity_index);
            }
            fused[i] = fuse_id_embedding(text_tokens, id_tokens, options.fusion_placeholders);
        }
    }

    // (3) masks once per distinct attention resolution
    const std::vector<AttentionSite> sites = den.attention_sites();
    if (sites.empty())
        throw config_error("denoiser exposes no attention sites");
    std::map<ResolutionKey, std::vector<SpatialMask>> masks_at;
    for (const AttentionSite& site : sites) {
        const ResolutionKey key{site.grid_h, site.grid_w};
        if (masks_at.count(key))
            continue;
        std::vector<SpatialMask> ms;
        for (const IDReference& id : req.ids)
            ms.push_back(rasterize_mask(id.box, key.h, key.w));
        masks_at.emplace(key, std::move(ms));
    }
    std::map<ResolutionKey, RegionIndex> regions_at;
    for (const auto& [key, ms] : masks_at)
        regions_at.emplace(key, RegionIndex::build(ms));

    // conditioned and unconditioned block sets per resolution; the
    // unconditional branch swaps the global block for a null embedding but
    // keeps every local block and gate
    const auto build_blocks = [&](const RealArray& global_rows) {
        std::map<ResolutionKey, BlockSet> out;
        for (const auto& [key, ms] : masks_at) {
            std::vector<EmbeddingBlock> locals;
            for (std::size_t i = 0; i < req.ids.size(); ++i)
                locals.push_back(
                    EmbeddingBlock::local(fused[i], ms[i], req.ids[i].identity_index));
            out.emplace(key, BlockSet(EmbeddingBlock::global(global_rows), std::move(locals)));
        }
        return out;
    };
    const RealArray null_global = RealArray::zeros({1, model_dim});
    const std::map<ResolutionKey, BlockSet> cond_blocks = build_blocks(global_tokens);
    const std::map<ResolutionKey, BlockSet> uncond_blocks = build_blocks(null_global);

    // (4) invert each reference, caching self-attention features
    std::vector<FeatureCache> caches(req.ids.size());
    const auto invert_one = [&](std::size_t i) {
        const IDReference& id = req.ids[i];
        RealArray latent;
        try {
            latent = backends.image_codec->encode(id.image);
        } catch (const std::exception& e) {
            throw adapter_error("image-codec", e.what(), -1, id.identity_index);
        }
        BlockSet inv_cond = options.invert_with_local_prompt
                                ? BlockSet(EmbeddingBlock::global(fused[i]))
                                : BlockSet(EmbeddingBlock::global(null_global));
        caches[i] = ddim_invert(latent, sched, den, inv_cond, id.identity_index,
                                options.cache_layer_stride)
                        .cache;
    };
    if (options.parallel_inversions && den.thread_safe() && req.ids.size() > 1) {
        std::vector<std::exception_ptr> errors(req.ids.size());
        std::vector<std::thread> workers;
        workers.reserve(req.ids.size());
        for (std::size_t i = 0; i < req.ids.size(); ++i)
            workers.emplace_back([&, i] {
                try {
                    invert_one(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            });
        for (std::thread& w : workers)
            w.join();
        for (const std::exception_ptr& e : errors)
            if (e)
                std::rethrow_exception(e);
    } else {
        for (std::size_t i = 0; i < req.ids.size(); ++i)
            invert_one(i);
    }

    // (5) depth map, fixed for the whole run
    RealArray depth;
    if (req.depth_control.enabled)
        depth = prepare_depth_control(req, *backends.initial_image_generator,
                                      *backends.depth_estimator, options.initial_image_size,
                                      options.initial_image_size);

    // (6) hooks: masked cross-attention per resolution, extended
    // self-attention over the caches
    const auto make_cross_hook = [&](const std::map<ResolutionKey, BlockSet>& blocks) {
        return [&blocks](const AttentionContext& ctx, const RealArray& x, const BlockSet&,
                         const ProjectionSet& p, int heads_) {
            const auto it = blocks.find(ResolutionKey{ctx.grid_h, ctx.grid_w});
            if (it == blocks.end())
                throw config_error("no mask set prepared for attention resolution " +
                                   std::to_string(ctx.grid_h) + "x" + std::to_string(ctx.grid_w));
            return masked_cross_attention(x, it->second, p, heads_);
        };
    };
    const SelfAttentionFn self_hook = [&](const AttentionContext& ctx, const RealArray& x,
                                          const ProjectionSet& p, int heads_) {
        const ResolutionKey key{ctx.grid_h, ctx.grid_w};
        const auto mit = masks_at.find(key);
        if (mit == masks_at.end())
            throw config_error("no mask set prepared for attention resolution " +
                               std::to_string(ctx.grid_h) + "x" + std::to_string(ctx.grid_w));
        std::vector<const FeatureCacheEntry*> found;
        std::vector<SpatialMask> found_masks;
        for (std::size_t i = 0; i < caches.size(); ++i) {
            const FeatureCacheEntry* e = caches[i].find(ctx.layer_id, ctx.timestep_index);
            if (e) {
                found.push_back(e);
                found_masks.push_back(mit->second[i]);
            }
        }
        if (options.region_gated_self_block)
            return region_gated_self_attention(x, found, found_masks, regions_at.at(key), p,
                                               heads_);
        std::vector<FeatureCacheEntry> copies;
        copies.reserve(found.size());
        for (const FeatureCacheEntry* e : found)
            copies.push_back(*e);
        return extended_self_attention(x, copies, found_masks, p, heads_);
    };

    AttentionHooks hooks_cond, hooks_uncond;
    if (options.masked_cross_attention) {
        hooks_cond.cross_attention = make_cross_hook(cond_blocks);
        hooks_uncond.cross_attention = make_cross_hook(uncond_blocks);
    }
    if (options.extended_self_attention) {
        hooks_cond.self_attention = self_hook;
        hooks_uncond.self_attention = self_hook;
    }

    // primary resolution: the first cross site (used for the denoiser's
    // default, hook-free path)
    ResolutionKey primary{sites.front().grid_h, sites.front().grid_w};
    for (const AttentionSite& site : sites)
        if (site.kind == AttentionSite::Kind::kCross) {
            primary = ResolutionKey{site.grid_h, site.grid_w};
            break;
        }
    const BlockSet& cond_primary = cond_blocks.at(primary);
    const BlockSet& uncond_primary = uncond_blocks.at(primary);

    // background, encoded once
    RealArray bg_latent;
    if (req.background.has_value()) {
        const BackgroundSpec& bg = *req.background;
        if (bg.foreground_mask.height() != latent_shape[1] ||
            bg.foreground_mask.width() != latent_shape[2])
            throw validation_error("background mask " + std::to_string(bg.foreground_mask.height()) +
                                   "x" + std::to_string(bg.foreground_mask.width()) +
                                   " does not match the latent grid");
        try {
            bg_latent = backends.image_codec->encode(bg.image);
        } catch (const std::exception& e) {
            throw adapter_error("image-codec", e.what());
        }
    }

    // (7) the DDIM loop
    SeededRng rng(req.seed);
    LatentState state{rng.gaussian_array(latent_shape), sched.steps()};
    for (int t = sched.steps(); t > 0; --t) {
        RealArray eps = predict_or_rethrow(den, state.latent, t, cond_primary, hooks_cond, -1);
        if (req.guidance_scale != 1.0) {
            RealArray eps_u =
                predict_or_rethrow(den, state.latent, t, uncond_primary, hooks_uncond, -1);
            // eps_u + g (eps_c - eps_u)
            eps -= eps_u;
            eps *= req.guidance_scale;
            eps += eps_u;
        }
        if (req.depth_control.enabled) {
            RealArray residual;
            try {
                residual = backends.spatial_control->residual(depth, latent_shape, t);
            } catch (const std::exception& e) {
                throw adapter_error("spatial-control", e.what(), t);
            }
            residual *= req.depth_control.strength;
            eps += residual;
        }
        state = ddim_step(state, eps, sched, StepDirection::kDenoise);
        if (req.background.has_value()) {
            RealArray noise = rng.gaussian_array(latent_shape);
            if (observer.on_repaint_noise)
                observer.on_repaint_noise(state.timestep_index, noise);
            state = repaint_blend(state, bg_latent, req.background->foreground_mask, noise, sched);
        }
        if (observer.on_step)
            observer.on_step(state);
    }

    // (8) decode
    if (observer.on_final_latent)
        observer.on_final_latent(state.latent);
    try {
        return backends.image_codec->decode(state.latent);
    } catch (const std::exception& e) {
        throw adapter_error("image-codec", e.what(), 0);
    }
}

}  // namespace idc
