#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "idcompose/array.hpp"
#include "idcompose/backends.hpp"
#include "idcompose/benchmark.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/eval.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/rng.hpp"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

using namespace idc;

namespace {

RealArray matrix(std::size_t n, std::size_t m, const std::vector<double>& values) {
    return RealArray({n, m}, values);
}

// Independent formulation of the same greedy rule: sort every entry by
// (value desc, row asc, col asc) once, then sweep the list taking entries
// whose row and column are both still free. Selecting the global maximum
// among free rows/columns step by step visits entries in exactly this
// order, so the two constructions must agree — including tie handling.
MatchResult sorted_scan_greedy(const RealArray& sim) {
    struct Entry {
        double value;
        std::size_t i, j;
    };
    const std::size_t n = sim.extent(0), m = sim.extent(1);
    std::vector<Entry> entries;
    entries.reserve(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) entries.push_back({sim.at(i, j), i, j});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.value != b.value) return a.value > b.value;
        if (a.i != b.i) return a.i < b.i;
        return a.j < b.j;
    });
    std::vector<bool> row_used(n, false), col_used(m, false);
    MatchResult out;
    for (const Entry& e : entries) {
        if (row_used[e.i] || col_used[e.j]) continue;
        row_used[e.i] = true;
        col_used[e.j] = true;
        out.pairs.emplace_back(e.i, e.j);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!row_used[i]) out.unmatched_crops.push_back(i);
    for (std::size_t j = 0; j < m; ++j)
        if (!col_used[j]) out.unmatched_refs.push_back(j);
    return out;
}

bool same_match(const MatchResult& a, const MatchResult& b) {
    return a.pairs == b.pairs && a.unmatched_crops == b.unmatched_crops &&
           a.unmatched_refs == b.unmatched_refs;
}

// ---------------------------------------------------------------------------
// Stub adapters. Embeddings are simple functions of channel means so every
// cosine in the hand-computed cases is known analytically.
// ---------------------------------------------------------------------------

double channel_mean(const RealArray& image, std::size_t channel) {
    const std::size_t hw = image.extent(1) * image.extent(2);
    double sum = 0.0;
    for (std::size_t h = 0; h < image.extent(1); ++h)
        for (std::size_t w = 0; w < image.extent(2); ++w) sum += image.at(channel, h, w);
    return sum / static_cast<double>(hw);
}

class FixedDetector : public PersonDetector {
public:
    explicit FixedDetector(std::vector<BBox> boxes) : boxes_(std::move(boxes)) {}
    std::vector<BBox> detect(const RealArray&) const override { return boxes_; }

private:
    std::vector<BBox> boxes_;
};

// embed = (mean of channel 0, mean of channel 1)
class ChannelEmbedder : public ImageEmbedder {
public:
    RealArray embed(const RealArray& image) const override {
        return RealArray({2}, {channel_mean(image, 0), channel_mean(image, 1)});
    }
};

// Face found iff channel 2 has any signal; embedding = (1, mean of channel 2).
class ThresholdFaceEmbedder : public FaceEmbedder {
public:
    std::optional<RealArray> embed_face(const RealArray& crop) const override {
        const double c2 = channel_mean(crop, 2);
        if (c2 == 0.0) return std::nullopt;
        return RealArray({2}, {1.0, c2});
    }
};

// Scores by exact text lookup; unknown text scores 0.
class TextTableScorer : public TextImageScorer {
public:
    explicit TextTableScorer(std::map<std::string, double> table) : table_(std::move(table)) {}
    double score(const RealArray&, const std::string& text) const override {
        const auto it = table_.find(text);
        return it == table_.end() ? 0.0 : it->second;
    }

private:
    std::map<std::string, double> table_;
};

// Fills (channel 0, channel 1, channel 2) of a solid image.
RealArray solid_image(std::size_t h, std::size_t w, double c0, double c1, double c2) {
    RealArray image = RealArray::zeros({3, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            image.at(std::size_t{0}, y, x) = c0;
            image.at(std::size_t{1}, y, x) = c1;
            image.at(std::size_t{2}, y, x) = c2;
        }
    }
    return image;
}

// Left half / right half of an 8x8 canvas.
const BBox kLeftBox{0.0, 0.0, 0.5, 1.0};
const BBox kRightBox{0.5, 0.0, 1.0, 1.0};

// Two-person canvas: left half solid (1, 0, face), right half solid (0, 1, 0).
RealArray two_person_image(double left_face) {
    RealArray image = RealArray::zeros({3, 8, 8});
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
            if (x < 4) {
                image.at(std::size_t{0}, y, x) = 1.0;
                image.at(std::size_t{2}, y, x) = left_face;
            } else {
                image.at(std::size_t{1}, y, x) = 1.0;
            }
        }
    }
    return image;
}

BenchmarkSample two_id_sample() {
    BenchmarkSample sample;
    sample.sample_id = "i00_p00";
    sample.global_prompt = "A portrait of 2 people, arm in arm";
    sample.interaction_tag = "arm in arm";
    BenchmarkId left;
    left.category_label = "man";
    left.reference_image = "ref_left";
    left.posture_description = "standing on the left.";
    left.full_description = "standing on the left. wearing a red coat.";
    left.box = kLeftBox;
    BenchmarkId right;
    right.category_label = "woman";
    right.reference_image = "ref_right";
    right.posture_description = "standing on the right.";
    right.full_description = "standing on the right. wearing a blue coat.";
    right.box = kRightBox;
    sample.ids = {left, right};
    return sample;
}

// In-memory loader: reference name -> pixels.
ImageLoader map_loader(std::map<std::string, RealArray> images) {
    return [images = std::move(images)](const std::string& name) {
        const auto it = images.find(name);
        if (it == images.end()) throw validation_error("unknown reference: " + name);
        return it->second;
    };
}

BackendBundle eval_bundle(std::vector<BBox> boxes, std::map<std::string, double> clip_table,
                          std::map<std::string, double> hps_table) {
    BackendBundle bundle;
    bundle.person_detector = std::make_shared<FixedDetector>(std::move(boxes));
    bundle.face_embedder = std::make_shared<ThresholdFaceEmbedder>();
    bundle.image_embedder = std::make_shared<ChannelEmbedder>();
    bundle.text_image_scorer = std::make_shared<TextTableScorer>(std::move(clip_table));
    bundle.hps_scorer = std::make_shared<TextTableScorer>(std::move(hps_table));
    return bundle;
}

SampleMetrics image_metrics(double clip_t, double hpsv2, std::optional<double> body,
                            std::optional<double> face, std::optional<double> full,
                            std::optional<double> pose, std::size_t pairs, std::size_t faces) {
    SampleMetrics m;
    m.clip_t = clip_t;
    m.hpsv2 = hpsv2;
    m.body = body;
    m.face = face;
    m.full_local = full;
    m.pose = pose;
    m.persons_detected = pairs;
    m.pairs_matched = pairs;
    m.faces_matched = faces;
    return m;
}

}  // namespace

TEST_SUITE("eval.match") {
    TEST_CASE("identity matrix matches the diagonal") {
        const MatchResult r = greedy_match(matrix(2, 2, {1.0, 0.0, 0.0, 1.0}));
        REQUIRE(r.pairs.size() == 2);
        CHECK(r.pairs[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
        CHECK(r.pairs[1] == std::make_pair(std::size_t{1}, std::size_t{1}));
        CHECK(r.unmatched_crops.empty());
        CHECK(r.unmatched_refs.empty());
    }

    TEST_CASE("greedy semantics are the contract, not optimality") {
        // Taking the global max 0.9 first forfeits the 0.8 + 0.85 assignment:
        // the greedy total is 1.0 even though the optimal total is 1.65.
        const MatchResult r = greedy_match(matrix(2, 2, {0.9, 0.8, 0.85, 0.1}));
        REQUIRE(r.pairs.size() == 2);
        CHECK(r.pairs[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
        CHECK(r.pairs[1] == std::make_pair(std::size_t{1}, std::size_t{1}));
        const double total = 0.9 + 0.1;
        CHECK(total == doctest::Approx(1.0));
    }

    TEST_CASE("three crops and two refs yield two pairs and one unmatched crop") {
        const MatchResult r = greedy_match(matrix(3, 2, {0.1, 0.2, 0.9, 0.3, 0.4, 0.8}));
        CHECK(r.pairs.size() == 2);
        REQUIRE(r.unmatched_crops.size() == 1);
        CHECK(r.unmatched_refs.empty());
        // 0.9 at (1,0), then 0.8 at (2,1); crop 0 is left over.
        CHECK(r.unmatched_crops[0] == 0);
    }

    TEST_CASE("two crops and three refs leave one unmatched ref") {
        const MatchResult r = greedy_match(matrix(2, 3, {0.1, 0.9, 0.2, 0.8, 0.3, 0.4}));
        CHECK(r.pairs.size() == 2);
        CHECK(r.unmatched_crops.empty());
        REQUIRE(r.unmatched_refs.size() == 1);
        CHECK(r.unmatched_refs[0] == 2);
    }

    TEST_CASE("single entry matrix") {
        const MatchResult r = greedy_match(matrix(1, 1, {-0.5}));
        REQUIRE(r.pairs.size() == 1);
        CHECK(r.pairs[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
    }

    TEST_CASE("ties break toward the smallest crop then ref index") {
        const MatchResult flat = greedy_match(matrix(2, 2, {0.5, 0.5, 0.5, 0.5}));
        REQUIRE(flat.pairs.size() == 2);
        CHECK(flat.pairs[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
        CHECK(flat.pairs[1] == std::make_pair(std::size_t{1}, std::size_t{1}));

        // Tie inside one row: the smaller column wins.
        const MatchResult row = greedy_match(matrix(1, 3, {0.7, 0.7, 0.7}));
        REQUIRE(row.pairs.size() == 1);
        CHECK(row.pairs[0] == std::make_pair(std::size_t{0}, std::size_t{0}));
    }

    TEST_CASE("agrees with the sorted-scan formulation on random matrices") {
        SeededRng rng(20260819);
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(5);
            const std::size_t m = 1 + rng.uniform_index(5);
            RealArray sim = RealArray::zeros({n, m});
            const bool quantize = trial % 2 == 1;  // force heavy ties half the time
            for (std::size_t i = 0; i < sim.size(); ++i) {
                sim[i] = quantize ? 0.25 * static_cast<double>(rng.uniform_index(5)) - 0.5
                                  : 2.0 * rng.uniform() - 1.0;
            }
            const MatchResult got = greedy_match(sim);
            const MatchResult want = sorted_scan_greedy(sim);
            REQUIRE(same_match(got, want));
            REQUIRE(got.pairs.size() == std::min(n, m));
        }
    }

    TEST_CASE("pairs are injective and each choice dominates the remaining entries") {
        SeededRng rng(99);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(5);
            const std::size_t m = 1 + rng.uniform_index(5);
            RealArray sim = RealArray::zeros({n, m});
            for (std::size_t i = 0; i < sim.size(); ++i) sim[i] = 2.0 * rng.uniform() - 1.0;
            const MatchResult r = greedy_match(sim);

            std::set<std::size_t> crops_seen, refs_seen;
            for (const auto& [i, j] : r.pairs) {
                REQUIRE(crops_seen.insert(i).second);
                REQUIRE(refs_seen.insert(j).second);
            }

            // Replay: the k-th selection must dominate everything feasible then.
            std::vector<bool> row_used(n, false), col_used(m, false);
            for (const auto& [pi, pj] : r.pairs) {
                for (std::size_t i = 0; i < n; ++i) {
                    if (row_used[i]) continue;
                    for (std::size_t j = 0; j < m; ++j) {
                        if (col_used[j]) continue;
                        REQUIRE(sim.at(pi, pj) >= sim.at(i, j));
                    }
                }
                row_used[pi] = true;
                col_used[pj] = true;
            }
        }
    }

    TEST_CASE("permuting crop rows permutes pair crop indices identically") {
        SeededRng rng(4242);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 2 + rng.uniform_index(4);
            const std::size_t m = 1 + rng.uniform_index(5);
            // Distinct values so the tie-break never enters the comparison.
            std::vector<double> values(n * m);
            for (std::size_t i = 0; i < values.size(); ++i)
                values[i] = static_cast<double>(i) / static_cast<double>(values.size());
            for (std::size_t i = values.size(); i > 1; --i)
                std::swap(values[i - 1], values[rng.uniform_index(i)]);
            RealArray sim({n, m}, values);

            std::vector<std::size_t> perm(n);
            for (std::size_t i = 0; i < n; ++i) perm[i] = i;
            for (std::size_t i = n; i > 1; --i)
                std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

            RealArray permuted = RealArray::zeros({n, m});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) permuted.at(perm[i], j) = sim.at(i, j);

            const MatchResult base = greedy_match(sim);
            const MatchResult moved = greedy_match(permuted);
            REQUIRE(moved.pairs.size() == base.pairs.size());
            for (std::size_t k = 0; k < base.pairs.size(); ++k) {
                CHECK(moved.pairs[k].first == perm[base.pairs[k].first]);
                CHECK(moved.pairs[k].second == base.pairs[k].second);
            }
        }
    }

    TEST_CASE("rejects NaN entries and non-matrix shapes") {
        RealArray poisoned = matrix(2, 2, {0.1, 0.2, 0.3, 0.4});
        poisoned[3] = std::nan("");
        CHECK(throws_with<validation_error>([&] { greedy_match(poisoned); }, "NaN"));
        CHECK(throws_with<shape_error>([] { greedy_match(RealArray({4}, {1, 2, 3, 4})); },
                                       "2D"));
        CHECK(throws_with<shape_error>(
            [] { greedy_match(RealArray::zeros({2, 2, 2})); }, "2D"));
    }

}

TEST_SUITE("eval.cosine") {
    TEST_CASE("parallel, anti-parallel, orthogonal") {
        const RealArray a({3}, {1.0, 0.0, 0.0});
        const RealArray b({3}, {0.0, 1.0, 0.0});
        CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
        const RealArray neg({3}, {-2.0, 0.0, 0.0});
        CHECK(cosine_similarity(a, neg) == doctest::Approx(-1.0));
        CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    }

    TEST_CASE("scale invariance") {
        const RealArray a({4}, {0.3, -1.2, 2.0, 0.7});
        const RealArray scaled({4}, {0.3 * 7.5, -1.2 * 7.5, 2.0 * 7.5, 0.7 * 7.5});
        CHECK(cosine_similarity(a, scaled) == doctest::Approx(1.0));
    }

    TEST_CASE("zero-norm input yields zero") {
        const RealArray zero = RealArray::zeros({3});
        const RealArray a({3}, {1.0, 2.0, 3.0});
        CHECK(cosine_similarity(zero, a) == 0.0);
        CHECK(cosine_similarity(a, zero) == 0.0);
        CHECK(cosine_similarity(zero, zero) == 0.0);
    }

    TEST_CASE("shape-agnostic over equal sizes, strict on mismatches") {
        const RealArray flat({4}, {1.0, 2.0, 3.0, 4.0});
        const RealArray square({2, 2}, {1.0, 2.0, 3.0, 4.0});
        CHECK(cosine_similarity(flat, square) == doctest::Approx(1.0));
        CHECK(throws_with<shape_error>(
            [&] { cosine_similarity(flat, RealArray::zeros({3})); }, "equal sizes"));
    }

    TEST_CASE("always lands in [-1, 1], including adversarial magnitudes") {
        SeededRng rng(7);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t dim = 1 + rng.uniform_index(8);
            RealArray a = RealArray::zeros({dim}), b = RealArray::zeros({dim});
            const double scale_a = std::pow(10.0, double(rng.uniform_index(21)) - 10.0);
            const double scale_b = std::pow(10.0, double(rng.uniform_index(21)) - 10.0);
            for (std::size_t i = 0; i < dim; ++i) {
                a[i] = (2.0 * rng.uniform() - 1.0) * scale_a;
                b[i] = trial % 3 == 0 ? a[i] * scale_b : (2.0 * rng.uniform() - 1.0) * scale_b;
            }
            const double cos = cosine_similarity(a, b);
            REQUIRE(cos >= -1.0);
            REQUIRE(cos <= 1.0);
        }
    }
}

TEST_SUITE("eval.sample") {
    TEST_CASE("hand-computed two-person image") {
        // Crops: left embeds to (1,0), right to (0,1). References: left is an
        // exact stand-in (1,0); right embeds to (0.6,0.8). Similarities:
        //   [[1.0, 0.6], [0.0, 0.8]]  ->  pairs (0,0) and (1,1)
        // Body = 100 * (1.0 + 0.8)/2 = 90. The right crop has no channel-2
        // signal, so its face is a planted miss: Face covers only the left
        // pair, where crop and reference face embeddings are both (1,1).
        const RealArray image = two_person_image(1.0);
        const BenchmarkSample sample = two_id_sample();
        const auto loader = map_loader({
            {"ref_left", solid_image(8, 4, 1.0, 0.0, 1.0)},
            {"ref_right", solid_image(8, 4, 0.6, 0.8, 0.5)},
        });
        const BackendBundle bundle = eval_bundle(
            {kLeftBox, kRightBox},
            {{sample.global_prompt, 31.0},
             {"standing on the left. wearing a red coat.", 30.0},
             {"standing on the right. wearing a blue coat.", 50.0},
             {"standing on the left.", 20.0},
             {"standing on the right.", 40.0}},
            {{sample.global_prompt, 65.0}});

        const SampleMetrics m = evaluate_sample(image, sample, bundle, loader);
        CHECK(m.clip_t == doctest::Approx(31.0));
        CHECK(m.hpsv2 == doctest::Approx(65.0));
        CHECK(m.persons_detected == 2);
        CHECK(m.pairs_matched == 2);
        REQUIRE(m.body.has_value());
        CHECK(*m.body == doctest::Approx(90.0).epsilon(1e-12));
        REQUIRE(m.full_local.has_value());
        CHECK(*m.full_local == doctest::Approx(40.0));
        REQUIRE(m.pose.has_value());
        CHECK(*m.pose == doctest::Approx(30.0));
        CHECK(m.faces_matched == 1);
        REQUIRE(m.face.has_value());
        CHECK(*m.face == doctest::Approx(100.0).epsilon(1e-12));
    }

    TEST_CASE("crop identical to its reference scores a body of 100") {
        const RealArray image = two_person_image(1.0);
        BenchmarkSample sample = two_id_sample();
        // Both references mirror their crops exactly.
        const auto loader = map_loader({
            {"ref_left", crop_image(image, kLeftBox)},
            {"ref_right", crop_image(image, kRightBox)},
        });
        const BackendBundle bundle = eval_bundle({kLeftBox, kRightBox}, {}, {});
        const SampleMetrics m = evaluate_sample(image, sample, bundle, loader);
        REQUIRE(m.body.has_value());
        CHECK(*m.body == doctest::Approx(100.0).epsilon(1e-12));
    }

    TEST_CASE("a face miss drops the pair from the face mean only") {
        const RealArray image = two_person_image(0.0);  // no face signal anywhere
        const BenchmarkSample sample = two_id_sample();
        const auto loader = map_loader({
            {"ref_left", solid_image(8, 4, 1.0, 0.0, 1.0)},
            {"ref_right", solid_image(8, 4, 0.0, 1.0, 1.0)},
        });
        const BackendBundle bundle = eval_bundle({kLeftBox, kRightBox}, {}, {});
        const SampleMetrics m = evaluate_sample(image, sample, bundle, loader);
        CHECK(m.pairs_matched == 2);
        CHECK(m.faces_matched == 0);
        CHECK_FALSE(m.face.has_value());  // no pair had both faces
        CHECK(m.body.has_value());        // body still covers both pairs
        CHECK(m.full_local.has_value());
        CHECK(m.pose.has_value());
    }

    TEST_CASE("zero detections keep global scores and mark locals missing") {
        const RealArray image = two_person_image(1.0);
        const BenchmarkSample sample = two_id_sample();
        const auto loader = map_loader({});
        const BackendBundle bundle =
            eval_bundle({}, {{sample.global_prompt, 28.0}}, {{sample.global_prompt, 29.0}});
        const SampleMetrics m = evaluate_sample(image, sample, bundle, loader);
        CHECK(m.clip_t == doctest::Approx(28.0));
        CHECK(m.hpsv2 == doctest::Approx(29.0));
        CHECK(m.persons_detected == 0);
        CHECK(m.pairs_matched == 0);
        CHECK_FALSE(m.body.has_value());
        CHECK_FALSE(m.face.has_value());
        CHECK_FALSE(m.full_local.has_value());
        CHECK_FALSE(m.pose.has_value());
    }

    TEST_CASE("surplus detections still pair against every reference") {
        const RealArray image = two_person_image(1.0);
        const BenchmarkSample sample = two_id_sample();
        const auto loader = map_loader({
            {"ref_left", solid_image(8, 4, 1.0, 0.0, 0.0)},
            {"ref_right", solid_image(8, 4, 0.0, 1.0, 0.0)},
        });
        // Three boxes over two ids: exactly two pairs must come out.
        const BackendBundle bundle =
            eval_bundle({kLeftBox, kRightBox, BBox{0.25, 0.0, 0.75, 1.0}}, {}, {});
        const SampleMetrics m = evaluate_sample(image, sample, bundle, loader);
        CHECK(m.persons_detected == 3);
        CHECK(m.pairs_matched == 2);

        // One box over two ids: a single pair.
        const BackendBundle narrow = eval_bundle({kLeftBox}, {}, {});
        const SampleMetrics single = evaluate_sample(image, sample, narrow, loader);
        CHECK(single.persons_detected == 1);
        CHECK(single.pairs_matched == 1);
    }

    TEST_CASE("input validation") {
        const RealArray image = two_person_image(1.0);
        const BenchmarkSample sample = two_id_sample();
        const auto loader = map_loader({
            {"ref_left", solid_image(8, 4, 1.0, 0.0, 0.0)},
            {"ref_right", solid_image(8, 4, 0.0, 1.0, 0.0)},
        });
        const BackendBundle bundle = eval_bundle({kLeftBox}, {}, {});

        BackendBundle missing = bundle;
        missing.face_embedder.reset();
        CHECK(throws_with<config_error>(
            [&] { evaluate_sample(image, sample, missing, loader); }, "face-embedder"));

        CHECK(throws_with<shape_error>(
            [&] { evaluate_sample(RealArray::zeros({8, 8}), sample, bundle, loader); },
            "(3 x H x W)"));
        CHECK(throws_with<shape_error>(
            [&] { evaluate_sample(RealArray::zeros({4, 8, 8}), sample, bundle, loader); },
            "(3 x H x W)"));

        BenchmarkSample empty = sample;
        empty.ids.clear();
        CHECK(throws_with<validation_error>(
            [&] { evaluate_sample(image, empty, bundle, loader); }, "no ID references"));

        CHECK(throws_with<config_error>(
            [&] { evaluate_sample(image, sample, bundle, ImageLoader{}); }, "loader"));
    }
}

TEST_SUITE("eval.aggregate") {
    TEST_CASE("aggregating identical entries reproduces the entry") {
        const SampleMetrics entry =
            image_metrics(28.4, 29.3, 64.1, 21.2, 29.6, 26.6, 2, 3);
        const MetricReport one = aggregate({entry}, 4);
        for (int k : {2, 5, 9}) {
            const MetricReport many =
                aggregate(std::vector<SampleMetrics>(std::size_t(k), entry), 4);
            CHECK(std::abs(many.clip_t_global - one.clip_t_global) <= 1e-9);
            CHECK(std::abs(many.hpsv2 - one.hpsv2) <= 1e-9);
            CHECK(std::abs(*many.body - *one.body) <= 1e-9);
            CHECK(std::abs(*many.face - *one.face) <= 1e-9);
            CHECK(std::abs(*many.full_local - *one.full_local) <= 1e-9);
            CHECK(std::abs(*many.pose - *one.pose) <= 1e-9);
            CHECK(many.coverage == doctest::Approx(one.coverage));
            CHECK(many.sample_count == std::size_t(k));
            CHECK(many.matched_face_pairs == std::size_t(k) * 3);
        }
        CHECK(one.clip_t_global == doctest::Approx(28.4));
        CHECK(*one.face == doctest::Approx(21.2));
        CHECK(one.coverage == doctest::Approx(1.0));
    }

    TEST_CASE("hand-computed means with a zero-detection image") {
        const SampleMetrics covered =
            image_metrics(20.0, 30.0, 40.0, 60.0, 50.0, 10.0, 2, 1);
        const SampleMetrics bare =
            image_metrics(40.0, 50.0, std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                          0, 0);
        const MetricReport r = aggregate({covered, bare}, 4);
        CHECK(r.clip_t_global == doctest::Approx(30.0));
        CHECK(r.hpsv2 == doctest::Approx(40.0));
        REQUIRE(r.body.has_value());
        CHECK(*r.body == doctest::Approx(40.0));  // only the covered image counts
        REQUIRE(r.face.has_value());
        CHECK(*r.face == doctest::Approx(60.0));
        REQUIRE(r.full_local.has_value());
        CHECK(*r.full_local == doctest::Approx(50.0));
        REQUIRE(r.pose.has_value());
        CHECK(*r.pose == doctest::Approx(10.0));
        CHECK(r.coverage == doctest::Approx(0.5));
        CHECK(r.sample_count == 2);
        CHECK(r.images_per_sample == 4);
        CHECK(r.matched_face_pairs == 1);
        CHECK(r.images_with_faces == 1);
    }

    TEST_CASE("face pools over matched face pairs, not over images") {
        const SampleMetrics one_pair =
            image_metrics(0.0, 0.0, 50.0, 100.0, 50.0, 50.0, 1, 1);
        const SampleMetrics three_pairs =
            image_metrics(0.0, 0.0, 50.0, 0.0, 50.0, 50.0, 3, 3);
        const MetricReport r = aggregate({one_pair, three_pairs}, 4);
        REQUIRE(r.face.has_value());
        // Pair-pooled: (100*1 + 0*3) / 4 = 25. A per-image mean would say 50.
        CHECK(*r.face == doctest::Approx(25.0));
        CHECK(r.matched_face_pairs == 4);
        CHECK(r.images_with_faces == 2);
    }

    TEST_CASE("missing metrics stay missing when no image has them") {
        const SampleMetrics bare = image_metrics(
            10.0, 20.0, std::nullopt, std::nullopt, std::nullopt, std::nullopt, 0, 0);
        const MetricReport r = aggregate({bare, bare}, 4);
        CHECK_FALSE(r.body.has_value());
        CHECK_FALSE(r.face.has_value());
        CHECK_FALSE(r.full_local.has_value());
        CHECK_FALSE(r.pose.has_value());
        CHECK(r.coverage == doctest::Approx(0.0));
        CHECK(r.matched_face_pairs == 0);
    }

    TEST_CASE("argument validation") {
        CHECK(throws_with<validation_error>([] { aggregate({}, 4); }, "zero"));
        const SampleMetrics entry =
            image_metrics(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 1, 1);
        CHECK(throws_with<config_error>([&] { aggregate({entry}, 0); },
                                        "images_per_sample"));
    }
}

TEST_SUITE("eval.report") {
    MetricReport published_row() {
        MetricReport r;
        r.clip_t_global = 28.4;
        r.hpsv2 = 29.3;
        r.body = 64.1;
        r.face = 21.2;
        r.full_local = 29.6;
        r.pose = 26.6;
        r.sample_count = 1572;
        r.images_per_sample = 4;
        r.coverage = 1.0;
        r.matched_face_pairs = 2801;
        r.images_with_faces = 1490;
        return r;
    }

    TEST_CASE("column names are fixed and ordered") {
        CHECK(std::string(kReportColumns[0]) == "CLIP-T (%)");
        CHECK(std::string(kReportColumns[1]) == "HPSv2 (%)");
        CHECK(std::string(kReportColumns[2]) == "Body (%)");
        CHECK(std::string(kReportColumns[3]) == "Face (%)");
        CHECK(std::string(kReportColumns[4]) == "Full (%)");
        CHECK(std::string(kReportColumns[5]) == "Pose (%)");
    }

    TEST_CASE("csv emits the exact header and row") {
        const std::string csv = report_to_csv(published_row());
        CHECK(csv ==
              "CLIP-T (%),HPSv2 (%),Body (%),Face (%),Full (%),Pose (%),"
              "samples,images_per_sample,coverage,face_pairs,face_images\n"
              "28.4,29.3,64.1,21.2,29.6,26.6,1572,4,1,2801,1490\n");
    }

    TEST_CASE("csv leaves missing metrics as empty cells") {
        MetricReport r = published_row();
        r.body.reset();
        r.face.reset();
        r.full_local.reset();
        r.pose.reset();
        r.coverage = 0.0;
        r.matched_face_pairs = 0;
        r.images_with_faces = 0;
        const std::string csv = report_to_csv(r);
        CHECK(csv.find("28.4,29.3,,,,,1572,4,0,0,0\n") != std::string::npos);
    }

    TEST_CASE("json carries every column, with null for missing") {
        MetricReport r = published_row();
        r.face.reset();
        const auto doc = nlohmann::json::parse(report_to_json(r));
        CHECK(doc.at("CLIP-T (%)").get<double>() == doctest::Approx(28.4));
        CHECK(doc.at("HPSv2 (%)").get<double>() == doctest::Approx(29.3));
        CHECK(doc.at("Body (%)").get<double>() == doctest::Approx(64.1));
        CHECK(doc.at("Face (%)").is_null());
        CHECK(doc.at("Full (%)").get<double>() == doctest::Approx(29.6));
        CHECK(doc.at("Pose (%)").get<double>() == doctest::Approx(26.6));
        CHECK(doc.at("samples").get<std::size_t>() == 1572);
        CHECK(doc.at("images_per_sample").get<int>() == 4);
        CHECK(doc.at("coverage").get<double>() == doctest::Approx(1.0));
        CHECK(doc.at("face_pairs").get<std::size_t>() == 2801);
        CHECK(doc.at("face_images").get<std::size_t>() == 1490);
    }

    TEST_CASE("table aligns every column and dashes out missing metrics") {
        MetricReport r = published_row();
        r.pose.reset();
        r.coverage = 0.5;
        r.sample_count = 8;
        const std::string table = report_table(r);
        for (const char* column : kReportColumns) {
            CHECK(table.find(column) != std::string::npos);
        }
        CHECK(table.find("28.4") != std::string::npos);
        CHECK(table.find("-") != std::string::npos);
        CHECK(table.find("images: 8 (4 per sample)  coverage: 50%") != std::string::npos);
    }
}
