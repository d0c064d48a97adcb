#include "idcompose/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "idcompose/errors.hpp"

namespace idc {

ProjectionSet::ProjectionSet(RealArray q, RealArray k, RealArray v)
    : w_q(std::move(q)), w_k(std::move(k)), w_v(std::move(v)) {
    if (w_q.rank() != 2 || w_k.rank() != 2 || w_v.rank() != 2)
        throw shape_error("projection matrices must be 2D");
    if (w_q.rows() != w_k.rows() || w_q.rows() != w_v.rows())
        throw shape_error("projection matrices disagree on model_dim: " + w_q.shape_string() + ", " +
                          w_k.shape_string() + ", " + w_v.shape_string());
}

BBox::BBox(double x0_, double y0_, double x1_, double y1_) : x0(x0_), y0(y0_), x1(x1_), y1(y1_) {
    if (!(x0 <= x1) || !(y0 <= y1))
        throw validation_error("invalid box: corners must satisfy x0 <= x1 and y0 <= y1");
    if (x0 < 0.0 || y0 < 0.0 || x1 > 1.0 || y1 > 1.0)
        throw validation_error("invalid box: coordinates must be normalized to [0, 1]");
}

SpatialMask::SpatialMask(RealArray values, std::optional<BBox> source_box)
    : values_(std::move(values)), source_box_(std::move(source_box)) {
    if (values_.rank() != 2)
        throw shape_error("spatial mask must be 2D, got " + values_.shape_string());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const double v = values_[i];
        if (v != 0.0 && v != 1.0)
            throw validation_error("spatial mask entries must be 0 or 1");
    }
}

SpatialMask SpatialMask::all_ones(std::size_t h, std::size_t w) {
    return SpatialMask(RealArray::full({h, w}, 1.0));
}

bool SpatialMask::all_one() const {
    for (std::size_t i = 0; i < values_.size(); ++i)
        if (values_[i] != 1.0)
            return false;
    return true;
}

EmbeddingBlock EmbeddingBlock::global(RealArray tokens) {
    EmbeddingBlock b;
    b.tokens = std::move(tokens);
    b.label = BlockLabel::kGlobal;
    return b;
}

EmbeddingBlock EmbeddingBlock::local(RealArray tokens, SpatialMask gate, int identity) {
    EmbeddingBlock b;
    b.tokens = std::move(tokens);
    b.gate = std::move(gate);
    b.label = BlockLabel::kLocal;
    b.identity = identity;
    return b;
}

BlockSet::BlockSet(EmbeddingBlock global_block, std::vector<EmbeddingBlock> local_blocks) {
    if (global_block.label != BlockLabel::kGlobal)
        throw config_error("block set requires a global block first");
    if (global_block.gate.has_value() && !global_block.gate->all_one())
        throw config_error("the global block must carry an all-ones gate");
    if (global_block.tokens.rank() != 2)
        throw shape_error("block tokens must be 2D, got " + global_block.tokens.shape_string());
    const std::size_t dim = global_block.tokens.cols();
    blocks_.push_back(std::move(global_block));
    for (EmbeddingBlock& b : local_blocks) {
        if (b.label == BlockLabel::kGlobal)
            throw config_error("block set must contain exactly one global block");
        if (b.tokens.rank() != 2 || b.tokens.cols() != dim)
            throw shape_error("local block token dim " + b.tokens.shape_string() +
                              " does not match global block dim " + std::to_string(dim));
        blocks_.push_back(std::move(b));
    }
}

std::size_t BlockSet::total_tokens() const {
    std::size_t n = 0;
    for (const EmbeddingBlock& b : blocks_)
        n += b.tokens.rows();
    return n;
}

std::tuple<RealArray, RealArray, RealArray> project_qkv(const RealArray& x, const ProjectionSet& p) {
    if (x.rank() != 2)
        throw shape_error("project_qkv expects 2D input, got " + x.shape_string());
    if (x.cols() != p.model_dim())
        throw shape_error("input shape " + x.shape_string() + " does not match projection shape " +
                          p.w_q.shape_string());
    return {x.matmul(p.w_q), x.matmul(p.w_k), x.matmul(p.w_v)};
}

RealArray biased_softmax_attention(const RealArray& q, const RealArray& k, const RealArray& v,
                                   const RealArray& bias) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || bias.rank() != 2)
        throw shape_error("attention operands must be 2D");
    if (q.cols() != k.cols())
        throw shape_error("query/key dim mismatch: " + q.shape_string() + " vs " + k.shape_string());
    if (k.rows() != v.rows())
        throw shape_error("key/value count mismatch: " + k.shape_string() + " vs " + v.shape_string());
    if (bias.rows() != q.rows() || bias.cols() != k.rows())
        throw shape_error("bias shape " + bias.shape_string() + " must be (queries x keys) = (" +
                          std::to_string(q.rows()) + "x" + std::to_string(k.rows()) + ")");

    const std::size_t tq = q.rows(), tk = k.rows(), d = q.cols();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    for (std::size_t r = 0; r < tq; ++r) {
        bool open = false;
        for (std::size_t c = 0; c < tk; ++c)
            open |= (bias.at(r, c) > kNegLarge);
        if (!open)
            throw validation_error("attention query " + std::to_string(r) +
                                   " has every key excluded by its bias row");
    }

    RealArray out = RealArray::zeros({tq, v.cols()});
    std::vector<double> scores(tk);
    for (std::size_t r = 0; r < tq; ++r) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < tk; ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j)
                s += q.at(r, j) * k.at(c, j);
            s = s * inv_sqrt_d + bias.at(r, c);
            scores[c] = s;
            // Excluded keys never set the row max; otherwise a row of
            // mostly-excluded keys would renormalize around kNegLarge.
            if (bias.at(r, c) > kNegLarge)
                row_max = std::max(row_max, s);
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < tk; ++c) {
            scores[c] = std::exp(scores[c] - row_max);
            denom += scores[c];
        }
        for (std::size_t c = 0; c < tk; ++c) {
            const double w = scores[c] / denom;
            if (w == 0.0)
                continue;
            for (std::size_t j = 0; j < v.cols(); ++j)
                out.at(r, j) += w * v.at(c, j);
        }
    }
    return out;
}

RealArray multi_head_attention(const RealArray& q, const RealArray& k, const RealArray& v,
                               const RealArray& bias, int heads) {
    if (heads <= 0)
        throw config_error("head count must be positive");
    if (heads == 1)
        return biased_softmax_attention(q, k, v, bias);
    if (q.cols() % static_cast<std::size_t>(heads) != 0 || k.cols() % static_cast<std::size_t>(heads) != 0 ||
        v.cols() % static_cast<std::size_t>(heads) != 0)
        throw shape_error("feature dim not divisible by " + std::to_string(heads) + " heads: q" +
                          q.shape_string() + " k" + k.shape_string() + " v" + v.shape_string());
    const std::size_t dq = q.cols() / static_cast<std::size_t>(heads);
    const std::size_t dv = v.cols() / static_cast<std::size_t>(heads);
    std::vector<RealArray> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        outs.push_back(biased_softmax_attention(q.col_block(static_cast<std::size_t>(h) * dq, dq),
                                                k.col_block(static_cast<std::size_t>(h) * dq, dq),
                                                v.col_block(static_cast<std::size_t>(h) * dv, dv), bias));
    }
    return RealArray::hconcat(outs);
}

namespace {

// Gate bias for one block relative to T_q queries: column run [col0, col0+n).
void fill_block_bias(RealArray& bias, std::size_t col0, std::size_t n,
                     const std::optional<SpatialMask>& gate, std::size_t tq) {
    if (!gate.has_value())
        return;  // all-ones: bias stays 0
    for (std::size_t r = 0; r < tq; ++r) {
        const double b = gate->flat(r) == 1.0 ? 0.0 : kNegLarge;
        if (b == 0.0)
            continue;
        for (std::size_t c = 0; c < n; ++c)
            bias.at(r, col0 + c) = b;
    }
}

}  // namespace

RealArray masked_cross_attention(const RealArray& x, const BlockSet& blocks, const ProjectionSet& p,
                                 int heads) {
    if (x.rank() != 2)
        throw shape_error("masked_cross_attention expects 2D input, got " + x.shape_string());
    const std::size_t tq = x.rows();
    for (const EmbeddingBlock& b : blocks.blocks()) {
        if (b.gate.has_value() && b.gate->cell_count() != tq)
            throw shape_error("gate resolution " + std::to_string(b.gate->height()) + "x" +
                              std::to_string(b.gate->width()) + " does not match the " +
                              std::to_string(tq) + "-token query grid");
    }

    std::vector<RealArray> token_parts;
    token_parts.reserve(blocks.blocks().size());
    for (const EmbeddingBlock& b : blocks.blocks())
        token_parts.push_back(b.tokens);
    const RealArray all_tokens = RealArray::vconcat(token_parts);

    const RealArray q = x.matmul(p.w_q);
    const RealArray k = all_tokens.matmul(p.w_k);
    const RealArray v = all_tokens.matmul(p.w_v);

    RealArray bias = RealArray::zeros({tq, all_tokens.rows()});
    std::size_t col = 0;
    for (const EmbeddingBlock& b : blocks.blocks()) {
        fill_block_bias(bias, col, b.tokens.rows(), b.gate, tq);
        col += b.tokens.rows();
    }
    return multi_head_attention(q, k, v, bias, heads);
}

RealArray extended_self_attention(const RealArray& x, std::span<const FeatureCacheEntry> caches,
                                  std::span<const SpatialMask> masks, const ProjectionSet& p,
                                  int heads) {
    if (x.rank() != 2)
        throw shape_error("extended_self_attention expects 2D input, got " + x.shape_string());
    if (caches.size() != masks.size())
        throw config_error("cache/mask misalignment: " + std::to_string(caches.size()) + " caches vs " +
                           std::to_string(masks.size()) + " masks");
    const std::size_t tq = x.rows();
    for (std::size_t i = 0; i < caches.size(); ++i) {
        if (caches[i].features.rank() != 2 || caches[i].features.cols() != x.cols())
            throw shape_error("cached features " + caches[i].features.shape_string() +
                              " do not share model_dim with input " + x.shape_string());
        if (masks[i].cell_count() != tq)
            throw shape_error("mask resolution " + std::to_string(masks[i].height()) + "x" +
                              std::to_string(masks[i].width()) + " does not match the " +
                              std::to_string(tq) + "-token query grid");
        for (std::size_t j = i + 1; j < caches.size(); ++j)
            if (caches[i].owner_id == caches[j].owner_id)
                throw config_error("duplicate cache owner " + std::to_string(caches[i].owner_id) +
                                   " in extended self-attention");
    }

    std::vector<RealArray> parts;
    parts.reserve(caches.size() + 1);
    parts.push_back(x);
    for (const FeatureCacheEntry& e : caches)
        parts.push_back(e.features);
    const RealArray keys_src = RealArray::vconcat(parts);

    const RealArray q = x.matmul(p.w_q);
    const RealArray k = keys_src.matmul(p.w_k);
    const RealArray v = keys_src.matmul(p.w_v);

    RealArray bias = RealArray::zeros({tq, keys_src.rows()});
    std::size_t col = tq;  // self run keeps zero bias
    for (std::size_t i = 0; i < caches.size(); ++i) {
        const std::size_t n = caches[i].features.rows();
        for (std::size_t r = 0; r < tq; ++r) {
            if (masks[i].flat(r) == 1.0)
                continue;
            for (std::size_t c = 0; c < n; ++c)
                bias.at(r, col + c) = kNegLarge;
        }
        col += n;
    }
    return multi_head_attention(q, k, v, bias, heads);
}

RealArray fuse_id_embedding(const RealArray& text_tokens, const RealArray& id_embedding,
                            const std::vector<std::size_t>& placeholder_positions) {
    if (id_embedding.rank() != 2)
        throw shape_error("id embedding must be 2D, got " + id_embedding.shape_string());
    if (text_tokens.size() != 0 && text_tokens.rank() != 2)
        throw shape_error("text tokens must be 2D, got " + text_tokens.shape_string());
    if (text_tokens.size() != 0 && text_tokens.cols() != id_embedding.cols())
        throw shape_error("text tokens " + text_tokens.shape_string() + " and id embedding " +
                          id_embedding.shape_string() + " disagree on model_dim");

    if (placeholder_positions.empty()) {
        if (text_tokens.size() == 0)
            return id_embedding;
        const RealArray parts[] = {text_tokens, id_embedding};
        return RealArray::vconcat(parts);
    }

    if (placeholder_positions.size() != id_embedding.rows())
        throw config_error("placeholder count " + std::to_string(placeholder_positions.size()) +
                           " does not match id embedding row count " + std::to_string(id_embedding.rows()));
    RealArray out = text_tokens;
    std::vector<bool> seen(text_tokens.rows(), false);
    for (std::size_t i = 0; i < placeholder_positions.size(); ++i) {
        const std::size_t pos = placeholder_positions[i];
        if (pos >= text_tokens.rows())
            throw config_error("placeholder position " + std::to_string(pos) + " out of range for " +
                               std::to_string(text_tokens.rows()) + " text rows");
        if (seen[pos])
            throw config_error("duplicate placeholder position " + std::to_string(pos));
        seen[pos] = true;
        for (std::size_t c = 0; c < out.cols(); ++c)
            out.at(pos, c) = id_embedding.at(i, c);
    }
    return out;
}

SpatialMask rasterize_mask(const BBox& box, std::size_t h, std::size_t w) {
    if (h == 0 || w == 0)
        throw validation_error("mask grid extents must be positive");
    RealArray values = RealArray::zeros({h, w});
    bool any = false;
    for (std::size_t r = 0; r < h; ++r) {
        const double cy = (static_cast<double>(r) + 0.5) / static_cast<double>(h);
        if (cy < box.y0 || cy >= box.y1)
            continue;
        for (std::size_t c = 0; c < w; ++c) {
            const double cx = (static_cast<double>(c) + 0.5) / static_cast<double>(w);
            if (cx >= box.x0 && cx < box.x1) {
                values.at(r, c) = 1.0;
                any = true;
            }
        }
    }
    if (!any) {
        // Degenerate box: claim the single cell containing the box center.
        const auto clamp_idx = [](double v, std::size_t n) {
            const double scaled = v * static_cast<double>(n);
            auto idx = static_cast<long long>(std::floor(scaled));
            idx = std::max(0ll, std::min(idx, static_cast<long long>(n) - 1));
            return static_cast<std::size_t>(idx);
        };
        values.at(clamp_idx(box.center_y(), h), clamp_idx(box.center_x(), w)) = 1.0;
    }
    return SpatialMask(std::move(values), box);
}

}  // namespace idc
