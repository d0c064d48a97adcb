#pragma once

#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "idcompose/array.hpp"

namespace idc {

// Bias value standing in for log(0) in masked attention. Large and finite
// instead of -inf so 0 * (-inf) products cannot surface NaN; exclusion is
// checked by perturbation properties, not by exact zero weights.
inline constexpr double kNegLarge = -1e9;

// Query/key/value projection weights, each shaped (model_dim x out_dim).
struct ProjectionSet {
    RealArray w_q, w_k, w_v;

    ProjectionSet(RealArray q, RealArray k, RealArray v);

    std::size_t model_dim() const { return w_q.rows(); }
};

// Normalized image-space box, corners in [0, 1].
struct BBox {
    double x0 = 0.0, y0 = 0.0, x1 = 1.0, y1 = 1.0;

    BBox() = default;
    BBox(double x0_, double y0_, double x1_, double y1_);

    double center_x() const { return 0.5 * (x0 + x1); }
    double center_y() const { return 0.5 * (y0 + y1); }
};

// Binary gate over a latent token grid. An all-zero mask expresses full
// exclusion of the gated block; rasterized masks always contain a 1.
class SpatialMask {
public:
    SpatialMask(RealArray values, std::optional<BBox> source_box = std::nullopt);

    static SpatialMask all_ones(std::size_t h, std::size_t w);

    std::size_t height() const { return values_.rows(); }
    std::size_t width() const { return values_.cols(); }
    std::size_t cell_count() const { return values_.size(); }
    double at(std::size_t r, std::size_t c) const { return values_.at(r, c); }
    double flat(std::size_t i) const { return values_[i]; }
    const RealArray& values() const { return values_; }
    const std::optional<BBox>& source_box() const { return source_box_; }

    bool all_one() const;

private:
    RealArray values_;
    std::optional<BBox> source_box_;
};

enum class BlockLabel { kGlobal, kLocal };

// A labeled run of key/value tokens plus its spatial gate. The global block
// carries no gate (every query sees it); local blocks are gated per query.
struct EmbeddingBlock {
    RealArray tokens;                 // (T_i x model_dim)
    std::optional<SpatialMask> gate;  // nullopt means all-ones
    BlockLabel label = BlockLabel::kLocal;
    int identity = -1;  // meaningful for local blocks

    static EmbeddingBlock global(RealArray tokens);
    static EmbeddingBlock local(RealArray tokens, SpatialMask gate, int identity);
};

// Ordered set of blocks: exactly one global block first, then local blocks.
class BlockSet {
public:
    BlockSet(EmbeddingBlock global_block, std::vector<EmbeddingBlock> local_blocks = {});

    const EmbeddingBlock& global_block() const { return blocks_.front(); }
    std::span<const EmbeddingBlock> blocks() const { return blocks_; }
    std::size_t local_count() const { return blocks_.size() - 1; }
    std::size_t total_tokens() const;
    std::size_t model_dim() const { return blocks_.front().tokens.cols(); }

private:
    std::vector<EmbeddingBlock> blocks_;
};

// Self-attention input features captured while replaying an inverted
// reference latent; keyed by layer and timestep, owned by one identity.
struct FeatureCacheEntry {
    std::string layer_id;
    int timestep_index = 0;
    RealArray features;  // (T_ref x model_dim)
    int owner_id = 0;
};

// x (T x model_dim) -> q, k, v each (T x out_dim).
std::tuple<RealArray, RealArray, RealArray> project_qkv(const RealArray& x, const ProjectionSet& p);

// H = softmax(q k^T / sqrt(d) + bias) v, with d the key dimension. Each bias
// row must keep at least one key above kNegLarge; a fully excluded query row
// is reported by index rather than silently producing NaN.
RealArray biased_softmax_attention(const RealArray& q, const RealArray& k, const RealArray& v,
                                   const RealArray& bias);

// Splits q/k/v into `heads` equal slices along the feature dimension, runs
// biased attention per head with the shared bias, and re-concatenates.
RealArray multi_head_attention(const RealArray& q, const RealArray& k, const RealArray& v,
                               const RealArray& bias, int heads);

// Cross-attention over the concatenated block tokens. Keys belonging to
// block i are gated per query by log(gate_i): gate 1 -> bias 0, gate 0 ->
// kNegLarge. The global block is visible to every query.
RealArray masked_cross_attention(const RealArray& x, const BlockSet& blocks, const ProjectionSet& p,
                                 int heads = 1);

// Self-attention whose keys/values are computed from [x ; X_1 ; ... ; X_N].
// The self run carries zero bias; cached block i is gated by masks[i].
RealArray extended_self_attention(const RealArray& x, std::span<const FeatureCacheEntry> caches,
                                  std::span<const SpatialMask> masks, const ProjectionSet& p,
                                  int heads = 1);

// Injects identity-embedding rows into a text token block: replacement at
// the given placeholder positions when provided, append otherwise.
RealArray fuse_id_embedding(const RealArray& text_tokens, const RealArray& id_embedding,
                            const std::vector<std::size_t>& placeholder_positions = {});

// Cell-center rasterization of a normalized box onto an (h x w) grid, with
// half-open intervals. A box too thin to cover any cell center claims the
// single cell containing its center.
SpatialMask rasterize_mask(const BBox& box, std::size_t h, std::size_t w);

}  // namespace idc
