#include "idcompose/toy_backend.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "idcompose/digest.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/rng.hpp"

namespace idc {

namespace {

constexpr std::size_t kDim = 4;
constexpr std::size_t kGrid = 8;
constexpr std::size_t kTokens = kGrid * kGrid;
constexpr int kHeads = 2;
constexpr int kBlocks = 2;

// 12 pooled image statistics: per channel, mean plus row/column/checker
// weighted means. Smooth in the pixels, so perturbing an image moves them.
std::vector<double> image_moments(const RealArray& image) {
    if (image.rank() != 3 || image.extent(0) != 3)
        throw shape_error("toy moments expect a (3 x H x W) image, got " + image.shape_string());
    const std::size_t h = image.extent(1), w = image.extent(2);
    std::vector<double> m(12, 0.0);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0, rowm = 0, colm = 0, chk = 0;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t x = 0; x < w; ++x) {
                const double v = image.at(c, r, x);
                mean += v;
                rowm += v * (static_cast<double>(r) + 0.5) / static_cast<double>(h);
                colm += v * (static_cast<double>(x) + 0.5) / static_cast<double>(w);
                chk += v * (((r + x) % 2 == 0) ? 1.0 : -1.0);
            }
        const double n = static_cast<double>(h * w);
        m[4 * c + 0] = mean / n;
        m[4 * c + 1] = rowm / n;
        m[4 * c + 2] = colm / n;
        m[4 * c + 3] = chk / n;
    }
    return m;
}

RealArray project_moments(const std::vector<double>& m, std::size_t rows, std::size_t cols,
                          std::uint64_t seed) {
    SeededRng rng(seed);
    RealArray w = rng.gaussian_array({m.size(), rows * cols});
    RealArray out = RealArray::zeros({rows, cols});
    for (std::size_t j = 0; j < rows * cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i)
            s += m[i] * w.at(i, j);
        out[j] = s;
    }
    return out;
}

class ToyDenoiser final : public Denoiser {
public:
    explicit ToyDenoiser(bool with_bias) : with_bias_(with_bias) {
        SeededRng rng(0);
        const double proj_scale = 0.5 / std::sqrt(static_cast<double>(kDim));
        const double mix_scale = 0.1 / std::sqrt(static_cast<double>(kDim));
        for (int b = 0; b < kBlocks; ++b) {
            self_proj_.emplace_back(rng.gaussian_array({kDim, kDim}) * proj_scale,
                                    rng.gaussian_array({kDim, kDim}) * proj_scale,
                                    rng.gaussian_array({kDim, kDim}) * proj_scale);
            cross_proj_.emplace_back(rng.gaussian_array({kDim, kDim}) * proj_scale,
                                     rng.gaussian_array({kDim, kDim}) * proj_scale,
                                     rng.gaussian_array({kDim, kDim}) * proj_scale);
            mix_.push_back(rng.gaussian_array({kDim, kDim}) * mix_scale);
            bias_.push_back(rng.gaussian_array({1, kDim}) * (with_bias ? 0.02 : 0.0));
            time_.push_back(rng.gaussian_array({1, kDim}) * (with_bias ? 0.01 : 0.0));
        }
    }

    RealArray predict(const RealArray& latent, int timestep_index, const BlockSet& cond,
                      const AttentionHooks& hooks) const override {
        if (latent.shape() != latent_shape())
            throw shape_error("toy denoiser expects a 4x8x8 latent, got " + latent.shape_string());
        if (cond.model_dim() != kDim)
            throw shape_error("conditioning dim " + std::to_string(cond.model_dim()) +
                              " does not match toy model_dim 4");

        // tokens: one row per latent cell, channels as features
        RealArray x = RealArray::zeros({kTokens, kDim});
        for (std::size_t c = 0; c < kDim; ++c)
            for (std::size_t i = 0; i < kTokens; ++i)
                x.at(i, c) = latent.at(c, i / kGrid, i % kGrid);

        for (int b = 0; b < kBlocks; ++b) {
            AttentionContext self_ctx{"self" + std::to_string(b), timestep_index, kGrid, kGrid};
            if (hooks.self_attention) {
                x = hooks.self_attention(self_ctx, x, self_proj_[static_cast<std::size_t>(b)], kHeads);
            } else {
                x = extended_self_attention(x, {}, {}, self_proj_[static_cast<std::size_t>(b)], kHeads);
            }

            AttentionContext cross_ctx{"cross" + std::to_string(b), timestep_index, kGrid, kGrid};
            if (hooks.cross_attention) {
                x = hooks.cross_attention(cross_ctx, x, cond,
                                          cross_proj_[static_cast<std::size_t>(b)], kHeads);
            } else {
                // plain form: attend to the full token concatenation, ungated
                std::vector<RealArray> parts;
                for (const EmbeddingBlock& blk : cond.blocks())
                    parts.push_back(blk.tokens);
                RealArray tokens = RealArray::vconcat(parts);
                const ProjectionSet& p = cross_proj_[static_cast<std::size_t>(b)];
                x = multi_head_attention(x.matmul(p.w_q), tokens.matmul(p.w_k),
                                         tokens.matmul(p.w_v),
                                         RealArray::zeros({kTokens, tokens.rows()}), kHeads);
            }

            x = x.matmul(mix_[static_cast<std::size_t>(b)]);
            if (with_bias_) {
                const RealArray& bias = bias_[static_cast<std::size_t>(b)];
                const RealArray& time = time_[static_cast<std::size_t>(b)];
                const double tau = 0.02 * static_cast<double>(timestep_index);
                for (std::size_t i = 0; i < kTokens; ++i)
                    for (std::size_t c = 0; c < kDim; ++c)
                        x.at(i, c) += bias.at(0, c) + tau * time.at(0, c);
            }
        }

        RealArray eps = RealArray::zeros({kDim, kGrid, kGrid});
        for (std::size_t c = 0; c < kDim; ++c)
            for (std::size_t i = 0; i < kTokens; ++i)
                eps.at(c, i / kGrid, i % kGrid) = x.at(i, c);
        return eps;
    }

    std::vector<AttentionSite> attention_sites() const override {
        std::vector<AttentionSite> sites;
        for (int b = 0; b < kBlocks; ++b) {
            sites.push_back({"self" + std::to_string(b), AttentionSite::Kind::kSelf, kGrid, kGrid});
            sites.push_back({"cross" + std::to_string(b), AttentionSite::Kind::kCross, kGrid, kGrid});
        }
        return sites;
    }

    std::vector<std::size_t> latent_shape() const override { return {kDim, kGrid, kGrid}; }
    std::size_t model_dim() const override { return kDim; }
    int head_count() const override { return kHeads; }

private:
    bool with_bias_;
    std::vector<ProjectionSet> self_proj_, cross_proj_;
    std::vector<RealArray> mix_, bias_, time_;
};

class ToyTextEncoder final : public TextEncoder {
public:
    RealArray encode(const std::string& text) const override {
        if (text.empty())
            throw validation_error("toy text encoder: empty input");
        RealArray out = RealArray::zeros({text.size(), kDim});
        for (std::size_t i = 0; i < text.size(); ++i) {
            // one hashed row per character; position folded into the hash
            std::uint64_t h = fnv1a64(std::string_view(&text[i], 1), 0x9e3779b97f4a7c15ull + i);
            for (std::size_t c = 0; c < kDim; ++c) {
                h = h * 6364136223846793005ull + 1442695040888963407ull;
                out.at(i, c) = (static_cast<double>(h >> 11) * 0x1.0p-53 - 0.5) * 2.0;
            }
        }
        return out;
    }
};

class ToyIdEncoder final : public IdEncoder {
public:
    RealArray encode(const RealArray& image) const override {
        if (image.size() == 0)
            throw validation_error("toy id encoder: empty input");
        return project_moments(image_moments(image), 2, kDim, 0x1dc0de);
    }
};

class ToyImageCodec final : public ImageCodec {
public:
    RealArray encode(const RealArray& image) const override {
        if (image.rank() != 3 || image.extent(0) != 3)
            throw shape_error("toy codec expects a (3 x H x W) image, got " + image.shape_string());
        RealArray latent = RealArray::zeros({kDim, kGrid, kGrid});
        for (std::size_t c = 0; c < 3; ++c) {
            RealArray chan = RealArray::zeros({image.extent(1), image.extent(2)});
            for (std::size_t r = 0; r < image.extent(1); ++r)
                for (std::size_t x = 0; x < image.extent(2); ++x)
                    chan.at(r, x) = image.at(c, r, x);
            RealArray small = resize_bilinear(chan, kGrid, kGrid);
            for (std::size_t r = 0; r < kGrid; ++r)
                for (std::size_t x = 0; x < kGrid; ++x)
                    latent.at(c, r, x) = small.at(r, x) * 2.0 - 1.0;
        }
        RealArray lum = resize_bilinear(luminance(image), kGrid, kGrid);
        for (std::size_t r = 0; r < kGrid; ++r)
            for (std::size_t x = 0; x < kGrid; ++x)
                latent.at(3, r, x) = lum.at(r, x) * 2.0 - 1.0;
        return latent;
    }

    RealArray decode(const RealArray& latent) const override {
        if (latent.rank() != 3 || latent.extent(0) != kDim)
            throw shape_error("toy codec expects a 4x8x8 latent, got " + latent.shape_string());
        const std::size_t out_hw = 2 * kGrid;
        RealArray image = RealArray::zeros({3, out_hw, out_hw});
        for (std::size_t c = 0; c < 3; ++c) {
            RealArray chan = RealArray::zeros({kGrid, kGrid});
            for (std::size_t r = 0; r < kGrid; ++r)
                for (std::size_t x = 0; x < kGrid; ++x)
                    chan.at(r, x) = (latent.at(c, r, x) + 1.0) * 0.5;
            RealArray big = resize_bilinear(chan, out_hw, out_hw);
            for (std::size_t r = 0; r < out_hw; ++r)
                for (std::size_t x = 0; x < out_hw; ++x)
                    image.at(c, r, x) = std::min(1.0, std::max(0.0, big.at(r, x)));
        }
        return image;
    }
};

class ToyDepthEstimator final : public DepthEstimator {
public:
    RealArray estimate(const RealArray& image) const override { return luminance(image); }
};

class ToySpatialControl final : public SpatialControl {
public:
    RealArray residual(const RealArray& depth, const std::vector<std::size_t>& latent_shape,
                       int timestep_index) const override {
        if (depth.rank() != 2)
            throw shape_error("spatial control expects a 2D depth map, got " + depth.shape_string());
        if (latent_shape.size() != 3)
            throw shape_error("spatial control expects a (C, H, W) latent shape");
        RealArray d = resize_bilinear(depth, latent_shape[1], latent_shape[2]);
        RealArray out = RealArray::zeros(latent_shape);
        const double t_scale = 1.0 / (1.0 + static_cast<double>(timestep_index));
        for (std::size_t c = 0; c < latent_shape[0]; ++c) {
            const double cw = 0.05 * (static_cast<double>(c) + 1.0);
            for (std::size_t r = 0; r < latent_shape[1]; ++r)
                for (std::size_t x = 0; x < latent_shape[2]; ++x)
                    out.at(c, r, x) = cw * t_scale * (d.at(r, x) - 0.5);
        }
        return out;
    }
};

class ToyInitialImageGenerator final : public InitialImageGenerator {
public:
    RealArray generate(const std::string& prompt, std::size_t height, std::size_t width,
                       std::uint64_t seed) const override {
        if (prompt.empty())
            throw validation_error("toy initial-image generator: empty prompt");
        const std::uint64_t h0 = fnv1a64(prompt, seed);
        RealArray image = RealArray::zeros({3, height, width});
        for (std::size_t c = 0; c < 3; ++c) {
            const double fx = 1.0 + static_cast<double>((h0 >> (8 * c)) & 7);
            const double fy = 1.0 + static_cast<double>((h0 >> (8 * c + 3)) & 7);
            const double ph = static_cast<double>((h0 >> (16 + c)) & 63) / 10.0;
            for (std::size_t r = 0; r < height; ++r)
                for (std::size_t x = 0; x < width; ++x) {
                    const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
                    const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
                    image.at(c, r, x) =
                        0.5 + 0.25 * std::sin(fx * 6.283185307179586 * u + ph) *
                                  std::cos(fy * 6.283185307179586 * v);
                }
        }
        return image;
    }
};

class ToyPersonDetector final : public PersonDetector {
public:
    std::vector<BBox> detect(const RealArray& image) const override {
        (void)image;
        // fixed two-person layout: left and right halves
        return {BBox(0.0, 0.0, 0.5, 1.0), BBox(0.5, 0.0, 1.0, 1.0)};
    }
};

class ToyFaceEmbedder final : public FaceEmbedder {
public:
    std::optional<RealArray> embed_face(const RealArray& crop) const override {
        RealArray m = project_moments(image_moments(crop), 1, 8, 0xface);
        return m.reshape({8});
    }
};

class ToyImageEmbedder final : public ImageEmbedder {
public:
    RealArray embed(const RealArray& image) const override {
        return project_moments(image_moments(image), 1, 8, 0xc11b).reshape({8});
    }
};

class ToyTextImageScorer final : public TextImageScorer {
public:
    explicit ToyTextImageScorer(std::uint64_t variant_seed) : seed_(variant_seed) {}

    double score(const RealArray& image, const std::string& text) const override {
        if (text.empty())
            throw validation_error("toy scorer: empty text");
        RealArray iv = project_moments(image_moments(image), 1, 8, seed_);
        SeededRng rng(fnv1a64(text, seed_));
        RealArray tv = rng.gaussian_array({1, 8});
        double dot = 0, ni = 0, nt = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            dot += iv[i] * tv[i];
            ni += iv[i] * iv[i];
            nt += tv[i] * tv[i];
        }
        if (ni == 0.0 || nt == 0.0)
            return 50.0;
        const double cos = dot / std::sqrt(ni * nt);
        return 50.0 * (1.0 + cos);
    }

private:
    std::uint64_t seed_;
};

}  // namespace

std::shared_ptr<Denoiser> make_toy_denoiser(bool with_bias) {
    return std::make_shared<ToyDenoiser>(with_bias);
}
std::shared_ptr<TextEncoder> make_toy_text_encoder() { return std::make_shared<ToyTextEncoder>(); }
std::shared_ptr<IdEncoder> make_toy_id_encoder() { return std::make_shared<ToyIdEncoder>(); }
std::shared_ptr<ImageCodec> make_toy_image_codec() { return std::make_shared<ToyImageCodec>(); }
std::shared_ptr<DepthEstimator> make_toy_depth_estimator() {
    return std::make_shared<ToyDepthEstimator>();
}
std::shared_ptr<SpatialControl> make_toy_spatial_control() {
    return std::make_shared<ToySpatialControl>();
}
std::shared_ptr<InitialImageGenerator> make_toy_initial_image_generator() {
    return std::make_shared<ToyInitialImageGenerator>();
}
std::shared_ptr<PersonDetector> make_toy_person_detector() {
    return std::make_shared<ToyPersonDetector>();
}
std::shared_ptr<FaceEmbedder> make_toy_face_embedder() { return std::make_shared<ToyFaceEmbedder>(); }
std::shared_ptr<ImageEmbedder> make_toy_image_embedder() {
    return std::make_shared<ToyImageEmbedder>();
}
std::shared_ptr<TextImageScorer> make_toy_text_image_scorer(std::uint64_t variant_seed) {
    return std::make_shared<ToyTextImageScorer>(variant_seed);
}

BackendBundle make_toy_backend() {
    BackendBundle b;
    b.denoiser = make_toy_denoiser();
    b.text_encoder = make_toy_text_encoder();
    b.id_encoder = make_toy_id_encoder();
    b.image_codec = make_toy_image_codec();
    b.depth_estimator = make_toy_depth_estimator();
    b.spatial_control = make_toy_spatial_control();
    b.initial_image_generator = make_toy_initial_image_generator();
    b.person_detector = make_toy_person_detector();
    b.face_embedder = make_toy_face_embedder();
    b.image_embedder = make_toy_image_embedder();
    b.text_image_scorer = make_toy_text_image_scorer(0x5c01e);
    b.hps_scorer = make_toy_text_image_scorer(0x4b5);
    return b;
}

}  // namespace idc
