#include "idcompose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "idcompose/errors.hpp"
#include "idcompose/image_io.hpp"

namespace idc {

MatchResult greedy_match(const RealArray& similarity) {
    if (similarity.rank() != 2) {
        throw shape_error("similarity must be a 2D matrix, got " + similarity.shape_string());
    }
    const std::size_t n = similarity.extent(0);
    const std::size_t m = similarity.extent(1);
    if (n == 0 || m == 0) throw validation_error("similarity matrix must be at least 1x1");
    for (std::size_t i = 0; i < similarity.size(); ++i) {
        if (std::isnan(similarity[i])) throw validation_error("similarity contains NaN");
    }

    std::vector<bool> row_used(n, false), col_used(m, false);
    MatchResult out;
    const std::size_t target = std::min(n, m);
    while (out.pairs.size() < target) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t bi = n, bj = m;
        for (std::size_t i = 0; i < n; ++i) {
            if (row_used[i]) continue;
            for (std::size_t j = 0; j < m; ++j) {
                if (col_used[j]) continue;
                // strict > keeps the first (smallest (i, j)) among ties
                if (similarity.at(i, j) > best) {
                    best = similarity.at(i, j);
                    bi = i;
                    bj = j;
                }
            }
        }
        row_used[bi] = true;
        col_used[bj] = true;
        out.pairs.emplace_back(bi, bj);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!row_used[i]) out.unmatched_crops.push_back(i);
    }
    for (std::size_t j = 0; j < m; ++j) {
        if (!col_used[j]) out.unmatched_refs.push_back(j);
    }
    return out;
}

double cosine_similarity(const RealArray& a, const RealArray& b) {
    if (a.size() != b.size()) {
        throw shape_error("cosine similarity needs equal sizes, got " + a.shape_string() +
                          " vs " + b.shape_string());
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::clamp(cos, -1.0, 1.0);
}

ImageLoader ppm_loader(const std::string& base_dir) {
    return [base_dir](const std::string& reference_image) {
        return read_ppm(resolve_reference_path(base_dir, reference_image));
    };
}

SampleMetrics evaluate_sample(const RealArray& generated_image, const BenchmarkSample& sample,
                              const BackendBundle& backends, const ImageLoader& load_reference) {
    backends.require_evaluation();
    if (generated_image.rank() != 3 || generated_image.extent(0) != 3) {
        throw shape_error("generated image must be (3 x H x W), got " +
                          generated_image.shape_string());
    }
    if (sample.ids.empty()) throw validation_error("sample has no ID references");
    if (!load_reference) throw config_error("evaluation requires a reference image loader");

    SampleMetrics metrics;
    metrics.clip_t = backends.text_image_scorer->score(generated_image, sample.global_prompt);
    metrics.hpsv2 = backends.hps_scorer->score(generated_image, sample.global_prompt);

    const std::vector<BBox> boxes = backends.person_detector->detect(generated_image);
    metrics.persons_detected = boxes.size();
    if (boxes.empty()) return metrics;  // global metrics only; counted via coverage

    std::vector<RealArray> crops;
    crops.reserve(boxes.size());
    for (const BBox& box : boxes) crops.push_back(crop_image(generated_image, box));

    std::vector<RealArray> references;
    references.reserve(sample.ids.size());
    for (const BenchmarkId& id : sample.ids) references.push_back(load_reference(id.reference_image));

    std::vector<RealArray> crop_embeddings, ref_embeddings;
    for (const RealArray& crop : crops) crop_embeddings.push_back(backends.image_embedder->embed(crop));
    for (const RealArray& ref : references) ref_embeddings.push_back(backends.image_embedder->embed(ref));

    RealArray similarity = RealArray::zeros({crops.size(), references.size()});
    for (std::size_t i = 0; i < crops.size(); ++i) {
        for (std::size_t j = 0; j < references.size(); ++j) {
            similarity.at(i, j) = cosine_similarity(crop_embeddings[i], ref_embeddings[j]);
        }
    }
    const MatchResult match = greedy_match(similarity);
    metrics.pairs_matched = match.pairs.size();

    double body_sum = 0.0, full_sum = 0.0, pose_sum = 0.0, face_sum = 0.0;
    std::size_t faces = 0;
    for (const auto& [crop_index, ref_index] : match.pairs) {
        const BenchmarkId& id = sample.ids[ref_index];
        body_sum += similarity.at(crop_index, ref_index);
        full_sum += backends.text_image_scorer->score(crops[crop_index], id.full_description);
        pose_sum += backends.text_image_scorer->score(crops[crop_index], id.posture_description);
        const auto crop_face = backends.face_embedder->embed_face(crops[crop_index]);
        const auto ref_face = backends.face_embedder->embed_face(references[ref_index]);
        if (crop_face && ref_face) {
            face_sum += cosine_similarity(*crop_face, *ref_face);
            ++faces;
        }
    }
    const double pair_count = static_cast<double>(match.pairs.size());
    metrics.body = 100.0 * std::clamp(body_sum / pair_count, 0.0, 1.0);
    metrics.full_local = std::clamp(full_sum / pair_count, 0.0, 100.0);
    metrics.pose = std::clamp(pose_sum / pair_count, 0.0, 100.0);
    metrics.faces_matched = faces;
    if (faces > 0) {
        metrics.face = 100.0 * std::clamp(face_sum / static_cast<double>(faces), -1.0, 1.0);
    }
    return metrics;
}

MetricReport aggregate(const std::vector<SampleMetrics>& per_image, int images_per_sample) {
    if (per_image.empty()) throw validation_error("cannot aggregate zero evaluations");
    if (images_per_sample < 1) throw config_error("images_per_sample must be >= 1");

    MetricReport report;
    report.sample_count = per_image.size();
    report.images_per_sample = images_per_sample;

    double clip_sum = 0.0, hps_sum = 0.0;
    double body_sum = 0.0, full_sum = 0.0, pose_sum = 0.0;
    std::size_t body_n = 0, full_n = 0, pose_n = 0;
    double face_pair_sum = 0.0;  // pooled over matched face pairs
    std::size_t face_pairs = 0, face_images = 0, covered = 0;

    for (const SampleMetrics& m : per_image) {
        clip_sum += m.clip_t;
        hps_sum += m.hpsv2;
        if (m.body) {
            body_sum += *m.body;
            ++body_n;
        }
        if (m.full_local) {
            full_sum += *m.full_local;
            ++full_n;
        }
        if (m.pose) {
            pose_sum += *m.pose;
            ++pose_n;
        }
        if (m.face) {
            face_pair_sum += *m.face * static_cast<double>(m.faces_matched);
            face_pairs += m.faces_matched;
            ++face_images;
        }
        if (m.pairs_matched > 0) ++covered;
    }

    const double count = static_cast<double>(per_image.size());
    report.clip_t_global = clip_sum / count;
    report.hpsv2 = hps_sum / count;
    if (body_n > 0) report.body = body_sum / static_cast<double>(body_n);
    if (full_n > 0) report.full_local = full_sum / static_cast<double>(full_n);
    if (pose_n > 0) report.pose = pose_sum / static_cast<double>(pose_n);
    if (face_pairs > 0) report.face = face_pair_sum / static_cast<double>(face_pairs);
    report.matched_face_pairs = face_pairs;
    report.images_with_faces = face_images;
    report.coverage = static_cast<double>(covered) / count;
    return report;
}

namespace {

std::string format_metric(double value) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", value);
    return buf;
}

std::string format_optional(const std::optional<double>& value) {
    return value ? format_metric(*value) : std::string();
}

std::vector<std::optional<double>> column_values(const MetricReport& r) {
    return {r.clip_t_global, r.hpsv2, r.body, r.face, r.full_local, r.pose};
}

}  // namespace

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream out;
    for (std::size_t c = 0; c < 6; ++c) {
        if (c > 0) out << ",";
        out << kReportColumns[c];
    }
    out << ",samples,images_per_sample,coverage,face_pairs,face_images\n";
    const auto values = column_values(report);
    for (std::size_t c = 0; c < 6; ++c) {
        if (c > 0) out << ",";
        out << format_optional(values[c]);
    }
    out << "," << report.sample_count << "," << report.images_per_sample << ","
        << format_metric(report.coverage) << "," << report.matched_face_pairs << ","
        << report.images_with_faces << "\n";
    return out.str();
}

std::string report_to_json(const MetricReport& report) {
    nlohmann::json doc;
    const auto values = column_values(report);
    for (std::size_t c = 0; c < 6; ++c) {
        if (values[c]) {
            doc[kReportColumns[c]] = *values[c];
        } else {
            doc[kReportColumns[c]] = nullptr;
        }
    }
    doc["samples"] = report.sample_count;
    doc["images_per_sample"] = report.images_per_sample;
    doc["coverage"] = report.coverage;
    doc["face_pairs"] = report.matched_face_pairs;
    doc["face_images"] = report.images_with_faces;
    return doc.dump(2) + "\n";
}

std::string report_table(const MetricReport& report) {
    const auto values = column_values(report);
    std::vector<std::string> cells;
    for (const auto& v : values) cells.push_back(v ? format_metric(*v) : std::string("-"));

    std::ostringstream header, row;
    for (std::size_t c = 0; c < 6; ++c) {
        const std::size_t width = std::max(std::string(kReportColumns[c]).size(), cells[c].size());
        if (c > 0) {
            header << "  ";
            row << "  ";
        }
        header << std::string(width - std::string(kReportColumns[c]).size(), ' ')
               << kReportColumns[c];
        row << std::string(width - cells[c].size(), ' ') << cells[c];
    }
    std::ostringstream out;
    out << header.str() << "\n" << row.str() << "\n";
    out << "images: " << report.sample_count << " (" << report.images_per_sample
        << " per sample)  coverage: " << format_metric(100.0 * report.coverage) << "%\n";
    return out.str();
}

}  // namespace idc
