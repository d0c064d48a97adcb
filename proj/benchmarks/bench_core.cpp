// Microbenchmarks for the hot paths: the two attention variants, mask
// rasterization, greedy matching, and an end-to-end toy generation.

#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "idcompose/attention.hpp"
#include "idcompose/eval.hpp"
#include "idcompose/pipeline.hpp"
#include "idcompose/rng.hpp"
#include "idcompose/toy_backend.hpp"

namespace {

using namespace idc;

ProjectionSet random_projection(std::size_t model_dim, std::size_t out_dim, std::uint64_t seed) {
    SeededRng rng(seed);
    return ProjectionSet(rng.uniform_array({model_dim, out_dim}),
                         rng.uniform_array({model_dim, out_dim}),
                         rng.uniform_array({model_dim, out_dim}));
}

// Token grid sized like the toy latent (8x8 -> 64 queries), two gated IDs.
BlockSet two_id_blocks(std::size_t model_dim, std::size_t grid, std::uint64_t seed) {
    SeededRng rng(seed);
    RealArray global_tokens = rng.uniform_array({4, model_dim});
    RealArray left_tokens = rng.uniform_array({3, model_dim});
    RealArray right_tokens = rng.uniform_array({3, model_dim});
    SpatialMask left = rasterize_mask(BBox(0.0, 0.0, 0.5, 1.0), grid, grid);
    SpatialMask right = rasterize_mask(BBox(0.5, 0.0, 1.0, 1.0), grid, grid);
    return BlockSet(EmbeddingBlock::global(std::move(global_tokens)),
                    {EmbeddingBlock::local(std::move(left_tokens), std::move(left), 0),
                     EmbeddingBlock::local(std::move(right_tokens), std::move(right), 1)});
}

void BM_MaskedCrossAttention(benchmark::State& state) {
    const std::size_t grid = static_cast<std::size_t>(state.range(0));
    const std::size_t model_dim = 16;
    SeededRng rng(7);
    RealArray x = rng.uniform_array({grid * grid, model_dim});
    BlockSet blocks = two_id_blocks(model_dim, grid, 11);
    ProjectionSet p = random_projection(model_dim, model_dim, 13);
    for (auto _ : state) {
        RealArray h = masked_cross_attention(x, blocks, p, 2);
        benchmark::DoNotOptimize(h.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid * grid));
}

void BM_ExtendedSelfAttention(benchmark::State& state) {
    const std::size_t grid = static_cast<std::size_t>(state.range(0));
    const std::size_t model_dim = 16;
    SeededRng rng(17);
    RealArray x = rng.uniform_array({grid * grid, model_dim});
    std::vector<FeatureCacheEntry> caches;
    caches.push_back({"mid.0", 3, rng.uniform_array({grid * grid, model_dim}), 0});
    caches.push_back({"mid.0", 3, rng.uniform_array({grid * grid, model_dim}), 1});
    std::vector<SpatialMask> masks = {rasterize_mask(BBox(0.0, 0.0, 0.5, 1.0), grid, grid),
                                      rasterize_mask(BBox(0.5, 0.0, 1.0, 1.0), grid, grid)};
    ProjectionSet p = random_projection(model_dim, model_dim, 19);
    for (auto _ : state) {
        RealArray h = extended_self_attention(x, caches, masks, p, 2);
        benchmark::DoNotOptimize(h.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(grid * grid));
}

void BM_RasterizeMask(benchmark::State& state) {
    const std::size_t grid = static_cast<std::size_t>(state.range(0));
    BBox box(0.12, 0.3, 0.57, 0.95);
    for (auto _ : state) {
        SpatialMask mask = rasterize_mask(box, grid, grid);
        benchmark::DoNotOptimize(mask.values().data());
    }
}

void BM_GreedyMatch(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    SeededRng rng(23);
    RealArray similarity = rng.uniform_array({n, n});
    for (auto _ : state) {
        MatchResult result = greedy_match(similarity);
        benchmark::DoNotOptimize(result.pairs.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

void BM_ToyGenerate(benchmark::State& state) {
    BackendBundle backends = make_toy_backend();
    SeededRng rng(29);
    GenerationRequest req;
    req.global_prompt = "two people standing in a park.";
    req.seed = 5;
    req.steps = static_cast<int>(state.range(0));
    req.ids.push_back({rng.uniform_array({3, 16, 16}), "a man standing on the left.",
                       BBox(0.0, 0.0, 0.5, 1.0), 0});
    req.ids.push_back({rng.uniform_array({3, 16, 16}), "a woman standing on the right.",
                       BBox(0.5, 0.0, 1.0, 1.0), 1});
    for (auto _ : state) {
        RealArray image = generate(req, backends);
        benchmark::DoNotOptimize(image.data());
    }
}

BENCHMARK(BM_MaskedCrossAttention)->Arg(8)->Arg(16);
BENCHMARK(BM_ExtendedSelfAttention)->Arg(8)->Arg(16);
BENCHMARK(BM_RasterizeMask)->Arg(8)->Arg(64);
BENCHMARK(BM_GreedyMatch)->Arg(4)->Arg(16)->Arg(64);
BENCHMARK(BM_ToyGenerate)->Arg(4)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
