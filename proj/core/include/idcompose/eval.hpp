#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idcompose/array.hpp"
#include "idcompose/backends.hpp"
#include "idcompose/benchmark.hpp"

namespace idc {

// ---------------------------------------------------------------------------
// Greedy crop-to-reference matching over a similarity matrix.
// ---------------------------------------------------------------------------

struct MatchResult {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (crop_index, ref_index)
    std::vector<std::size_t> unmatched_crops;
    std::vector<std::size_t> unmatched_refs;
};

// Repeatedly selects the globally maximal entry among still-unmatched rows
// and columns until min(n_crops, n_refs) pairs exist. Ties break toward the
// smallest (crop_index, ref_index). The input must be a 2D matrix with at
// least one row and column; NaN entries are rejected. Greedy is the
// contract: the result is not necessarily the optimal assignment.
MatchResult greedy_match(const RealArray& similarity);

// Cosine of the angle between two equally-sized vectors (any shape, compared
// flat). Unit-normalizes both sides; a zero-norm input yields 0.
double cosine_similarity(const RealArray& a, const RealArray& b);

// ---------------------------------------------------------------------------
// Per-image evaluation.
// ---------------------------------------------------------------------------

// Metrics for one generated image. The local metrics are absent when no
// person was detected; such images still carry the global scores and are
// counted in the report's coverage.
struct SampleMetrics {
    double clip_t = 0.0;  // [0, 100]
    double hpsv2 = 0.0;   // [0, 100]
    std::optional<double> body;        // [0, 100]
    std::optional<double> face;        // [-100, 100]
    std::optional<double> full_local;  // [0, 100]
    std::optional<double> pose;        // [0, 100]
    std::size_t persons_detected = 0;
    std::size_t pairs_matched = 0;
    std::size_t faces_matched = 0;  // pairs where both crop and reference faces were found
};

// Maps a sample's reference_image string to pixels. Lets callers control
// path resolution and caching; ppm_loader is the on-disk implementation.
using ImageLoader = std::function<RealArray(const std::string&)>;
ImageLoader ppm_loader(const std::string& base_dir);

// Detects persons, embeds crops and references, greedy-matches them, and
// scores: Body = mean matched-pair image-embedding cosine; Face = mean
// face-embedding cosine over pairs where both faces were found; Full/Pose =
// text-image score of each matched crop against its ID's full / posture
// description; CLIP-T and HPSv2 = whole image against the global prompt.
// Cosines are clamped to [-1, 1] before averaging and Body to [0, 100] at
// the report boundary.
SampleMetrics evaluate_sample(const RealArray& generated_image, const BenchmarkSample& sample,
                              const BackendBundle& backends, const ImageLoader& load_reference);

// ---------------------------------------------------------------------------
// Aggregation and reporting.
// ---------------------------------------------------------------------------

struct MetricReport {
    double clip_t_global = 0.0;
    double hpsv2 = 0.0;
    std::optional<double> body;
    std::optional<double> face;
    std::optional<double> full_local;
    std::optional<double> pose;
    std::size_t sample_count = 0;  // images aggregated
    int images_per_sample = 4;
    double coverage = 1.0;  // fraction of images with at least one matched pair
    std::size_t matched_face_pairs = 0;  // Face denominator actually used
    std::size_t images_with_faces = 0;   // per-image denominator, recorded alongside
};

// Arithmetic mean over images; images missing a metric are excluded from
// that metric only. Face pools over matched face pairs (not per image), and
// both denominators are recorded. Aggregating k identical entries
// reproduces the entry.
MetricReport aggregate(const std::vector<SampleMetrics>& per_image, int images_per_sample);

// Exact column names of the emitted reports, in order.
inline constexpr const char* kReportColumns[] = {"CLIP-T (%)", "HPSv2 (%)", "Body (%)",
                                                 "Face (%)",   "Full (%)",  "Pose (%)"};

std::string report_to_csv(const MetricReport& report);
std::string report_to_json(const MetricReport& report);
std::string report_table(const MetricReport& report);  // aligned for terminals

}  // namespace idc
