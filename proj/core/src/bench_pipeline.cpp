#include "idcompose/bench_pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <nlohmann/json.hpp>

#include "idcompose/digest.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace idc {

namespace bench_templates {

std::string prompt_expansion(const std::string& interaction, int count) {
    return "Please generate " + std::to_string(count) + " prompts about two '" + interaction +
           "' people, which will be used as conditions for text-to-image generation";
}

std::string human_filter(const std::string& concept_label) {
    return "Question: \"Does this word \"man\" correspond to a category of people?\" Answer: "
           "Yes. Question: \"Does this word \"" +
           concept_label + "\" correspond to a category of people?\" Answer: ";
}

}  // namespace bench_templates

std::string prefixed_prompt(const std::string& prompt) {
    if (prompt.empty()) return bench_templates::kTemplatePrefix;
    return std::string(bench_templates::kTemplatePrefix) + ", " + prompt;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// strips list decoration from one response line: leading numbering
// ("3.", "12)"), bullets, and one matching pair of surrounding quotes
std::string clean_line(const std::string& raw) {
    std::string s = trim(raw);
    std::size_t p = 0;
    while (p < s.size() && std::isdigit(static_cast<unsigned char>(s[p]))) ++p;
    if (p > 0 && p < s.size() && (s[p] == '.' || s[p] == ')' || s[p] == ':')) {
        s = trim(s.substr(p + 1));
    }
    while (!s.empty() && (s.front() == '-' || s.front() == '*' || s.front() == '+')) {
        s = trim(s.substr(1));
    }
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        s = trim(s.substr(1, s.size() - 2));
    }
    return s;
}

std::vector<std::string> parse_response_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::string cleaned = clean_line(line);
        if (!cleaned.empty()) out.push_back(std::move(cleaned));
    }
    return out;
}

// queries until `count` distinct lines are accumulated, re-asking up to
// dedup_retries extra times when a response comes up short after
// deduplication
std::vector<std::string> collect_distinct(const LlmClient& llm, const std::string& prompt,
                                          int count, int dedup_retries, const std::string& stage,
                                          Transcript* transcript) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    const int max_queries = 1 + std::max(0, dedup_retries);
    for (int q = 0; q < max_queries && static_cast<int>(out.size()) < count; ++q) {
        const std::string response = llm.complete(prompt);
        if (transcript) transcript->push_back({prompt, response});
        for (const std::string& line : parse_response_lines(response)) {
            if (seen.insert(to_lower(line)).second) out.push_back(line);
        }
    }
    if (static_cast<int>(out.size()) < count) {
        throw adapter_error(stage, "client produced only " + std::to_string(out.size()) + " of " +
                                       std::to_string(count) + " distinct entries after " +
                                       std::to_string(max_queries) + " queries");
    }
    out.resize(static_cast<std::size_t>(count));
    return out;
}

std::string sanitize_token(const std::string& s) {
    std::string out;
    for (char c : s) {
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    }
    return out.empty() ? std::string("x") : out;
}

std::string template_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%04zu", index);
    return buf;
}

}  // namespace

std::vector<std::string> nominate_interactions(const LlmClient& llm, int count, int dedup_retries,
                                               Transcript* transcript) {
    if (count < 1) throw config_error("interaction count must be >= 1");
    return collect_distinct(llm, bench_templates::kInteractions, count, dedup_retries,
                            "interactions", transcript);
}

std::vector<std::string> expand_prompts(const LlmClient& llm, const std::string& interaction,
                                        int count, int dedup_retries, Transcript* transcript) {
    if (count < 1) throw config_error("prompt count must be >= 1");
    if (interaction.empty()) throw validation_error("interaction phrase is empty");
    return collect_distinct(llm, bench_templates::prompt_expansion(interaction, count), count,
                            dedup_retries, "prompts", transcript);
}

std::vector<std::string> parse_concept_list(const std::string& response,
                                            std::vector<std::string>* warnings) {
    std::string text = response;
    std::replace(text.begin(), text.end(), '\n', ',');
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string piece;
    while (std::getline(in, piece, ',')) {
        std::string c = clean_line(piece);
        while (!c.empty() && (c.back() == '.' || c.back() == ';')) c = trim(c.substr(0, c.size() - 1));
        c = to_lower(c);
        if (c.empty()) continue;
        if (seen.insert(c).second) out.push_back(std::move(c));
    }
    if (out.size() > 10) {
        if (warnings) {
            warnings->push_back("concept list had " + std::to_string(out.size()) +
                                " entries; truncated to ten");
        }
        out.resize(10);
    }
    return out;
}

std::vector<std::string> extract_concepts(const VlmClient& vlm, const RealArray& image,
                                          std::vector<std::string>* warnings,
                                          Transcript* transcript) {
    const std::string response = vlm.query(image, bench_templates::kConceptExtraction);
    if (transcript) transcript->push_back({bench_templates::kConceptExtraction, response});
    std::vector<std::string> concepts = parse_concept_list(response, warnings);
    if (concepts.empty()) {
        throw adapter_error("concepts", "unparseable concept list: \"" + response + "\"");
    }
    return concepts;
}

std::vector<std::string> filter_human_concepts(const VlmClient& vlm,
                                               const std::vector<std::string>& concepts,
                                               Transcript* transcript) {
    std::vector<std::string> kept;
    for (const std::string& concept_label : concepts) {
        const std::string prompt = bench_templates::human_filter(concept_label);
        const std::string answer = vlm.query(RealArray(), prompt);
        if (transcript) transcript->push_back({prompt, answer});
        std::string verdict = to_lower(clean_line(answer));
        if (verdict.rfind("yes", 0) == 0) kept.push_back(concept_label);
    }
    return kept;
}

std::vector<DetectedConcept> detect_concepts(const DetectorClient& detector,
                                             const RealArray& image,
                                             const std::vector<std::string>& concepts,
                                             const std::string& crop_dir, const std::string& stem,
                                             std::vector<std::string>* warnings) {
    fs::create_directories(crop_dir);
    std::vector<DetectedConcept> out;
    for (const std::string& concept_label : concepts) {
        const std::vector<BBox> boxes = detector.detect(image, concept_label);
        if (boxes.empty()) {
            if (warnings) warnings->push_back("no detections for '" + concept_label + "' in " + stem);
            continue;
        }
        for (std::size_t k = 0; k < boxes.size(); ++k) {
            const fs::path path = fs::path(crop_dir) / (stem + "_" + sanitize_token(concept_label) +
                                                        "_" + std::to_string(k) + ".ppm");
            write_ppm(path, crop_image(image, boxes[k]));
            out.push_back({concept_label, boxes[k], path.string()});
        }
    }
    return out;
}

namespace {

// locates a section header: the word, case-insensitive at a word boundary,
// optionally wrapped in quotes/asterisks, followed by a colon
std::size_t find_header(const std::string& lower, const std::string& word, std::size_t from) {
    std::size_t pos = from;
    while ((pos = lower.find(word, pos)) != std::string::npos) {
        const bool boundary = pos == 0 || !std::isalpha(static_cast<unsigned char>(lower[pos - 1]));
        std::size_t after = pos + word.size();
        while (after < lower.size() &&
               (lower[after] == '\'' || lower[after] == '"' || lower[after] == '*' ||
                lower[after] == ' '))
            ++after;
        if (boundary && after < lower.size() && lower[after] == ':') return pos;
        pos += word.size();
    }
    return std::string::npos;
}

std::size_t content_start(const std::string& lower, std::size_t header_pos,
                          const std::string& word) {
    std::size_t after = header_pos + word.size();
    while (after < lower.size() &&
           (lower[after] == '\'' || lower[after] == '"' || lower[after] == '*' ||
            lower[after] == ' '))
        ++after;
    return after + 1;  // past the colon
}

std::string tidy_section(const std::string& s) {
    std::string t = trim(s);
    while (!t.empty() && (t.front() == '-' || t.front() == '*')) t = trim(t.substr(1));
    // the following header's opening decoration ('Appearance, **Appearance)
    // lands at this section's tail when the response runs sections together
    while (!t.empty() && (t.back() == '\'' || t.back() == '"' || t.back() == '*' ||
                          t.back() == '`')) {
        t = trim(t.substr(0, t.size() - 1));
    }
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = trim(t.substr(1, t.size() - 2));
    return t;
}

}  // namespace

AnnotationResult parse_annotation(const std::string& response) {
    const std::string lower = to_lower(response);
    const std::size_t spos = find_header(lower, "state", 0);
    const std::size_t apos = find_header(lower, "appearance", 0);
    if (spos == std::string::npos || apos == std::string::npos) {
        throw validation_error("annotation response missing 'State'/'Appearance' sections: \"" +
                               response + "\"");
    }
    const std::size_t s_begin = content_start(lower, spos, "state");
    const std::size_t a_begin = content_start(lower, apos, "appearance");
    const std::size_t s_end = apos > spos ? apos : response.size();
    const std::size_t a_end = spos > apos ? spos : response.size();
    AnnotationResult out;
    out.state = tidy_section(response.substr(s_begin, s_end - s_begin));
    out.appearance = tidy_section(response.substr(a_begin, a_end - a_begin));
    if (out.state.empty() || out.appearance.empty()) {
        throw validation_error("annotation response has an empty section: \"" + response + "\"");
    }
    return out;
}

AnnotationResult annotate(const VlmClient& vlm, const RealArray& image, Transcript* transcript) {
    const std::string response = vlm.query(image, bench_templates::kAnnotation);
    if (transcript) transcript->push_back({bench_templates::kAnnotation, response});
    try {
        return parse_annotation(response);
    } catch (const validation_error& e) {
        throw adapter_error("annotation", e.what());
    }
}

std::vector<BenchmarkSample> structure_samples(const std::vector<TemplateRecord>& templates,
                                               const std::vector<ReferenceRecord>& references,
                                               std::uint64_t seed,
                                               const std::vector<std::string>& category_vocabulary,
                                               std::vector<std::string>* warnings) {
    SeededRng rng(seed);
    const auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    std::vector<BenchmarkSample> samples;
    for (const TemplateRecord& t : templates) {
        char id[16];
        std::snprintf(id, sizeof(id), "i%02d_p%02d", t.interaction_index, t.prompt_index);
        if (t.humans.empty()) {
            warn(std::string(id) + ": no human IDs detected; sample skipped");
            continue;
        }
        if (t.postures.size() != t.humans.size()) {
            throw validation_error(std::string(id) + ": posture list does not match detections");
        }
        BenchmarkSample s;
        s.sample_id = id;
        s.global_prompt = t.prompt;
        s.interaction_tag = t.interaction;
        bool flagged = false;
        for (std::size_t i = 0; i < t.humans.size(); ++i) {
            const DetectedConcept& h = t.humans[i];
            if (std::find(category_vocabulary.begin(), category_vocabulary.end(), h.concept_label) ==
                category_vocabulary.end()) {
                warn(std::string(id) + ": concept '" + h.concept_label +
                     "' is outside the category vocabulary; sample flagged");
                flagged = true;
                break;
            }
            std::vector<std::size_t> candidates;
            for (std::size_t r = 0; r < references.size(); ++r) {
                if (references[r].category_label == h.concept_label) candidates.push_back(r);
            }
            if (candidates.empty()) {
                warn(std::string(id) + ": no category-compatible reference for '" + h.concept_label +
                     "'; sample flagged");
                flagged = true;
                break;
            }
            const ReferenceRecord& ref = references[candidates[rng.uniform_index(candidates.size())]];
            BenchmarkId bid;
            bid.category_label = h.concept_label;
            bid.reference_image = ref.path;
            bid.posture_description = t.postures[i];
            bid.full_description = t.postures[i] + " " + ref.appearance;
            bid.box = h.box;
            s.ids.push_back(std::move(bid));
        }
        if (flagged || s.ids.empty()) continue;
        samples.push_back(std::move(s));
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Orchestrator plumbing.
// ---------------------------------------------------------------------------

namespace {

// runs fn(0..n-1) on at most `bound` worker threads; the failure at the
// smallest index is rethrown so errors are deterministic
void parallel_for(std::size_t n, int bound, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, bound)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::size_t err_index = n;
    std::exception_ptr error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (i < err_index) {
                        err_index = i;
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

void write_transcript(const fs::path& file, const Transcript& transcript) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw validation_error("cannot write transcript: " + file.string());
    for (std::size_t i = 0; i < transcript.size(); ++i) {
        out << json{{"index", i},
                    {"prompt", transcript[i].prompt},
                    {"response", transcript[i].response}}
                   .dump()
            << "\n";
    }
}

Transcript concat(const std::vector<Transcript>& parts) {
    Transcript all;
    for (const Transcript& p : parts) all.insert(all.end(), p.begin(), p.end());
    return all;
}

std::string array_digest(const RealArray& a) {
    const auto span = a.data();
    std::string bytes(span.size() * sizeof(double), '\0');
    if (!span.empty()) std::memcpy(bytes.data(), span.data(), bytes.size());
    return digest_string(bytes);
}

struct StageContext {
    fs::path checkpoints;
    fs::path transcripts;
    std::vector<StageRecord>* records;
    std::vector<std::string>* warnings;
};

std::optional<json> load_checkpoint(const fs::path& file, const std::string& input_digest) {
    if (!fs::exists(file)) return std::nullopt;
    std::ifstream in(file);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
    if (!doc.contains("input_digest") || doc.at("input_digest") != input_digest) return std::nullopt;
    if (!doc.contains("payload")) return std::nullopt;
    return doc.at("payload");
}

void store_checkpoint(const fs::path& file, const std::string& input_digest, const json& payload) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw validation_error("cannot write checkpoint: " + file.string());
    out << json{{"input_digest", input_digest}, {"payload", payload}}.dump(2) << "\n";
}

// Runs one stage under checkpointing: a matching checkpoint replays the
// stored payload without touching the clients; otherwise `run` executes and
// its payload ({"data": ..., "warnings": [...]}) is persisted. The stage
// record and accumulated warnings are appended either way.
json run_stage(const StageContext& ctx, const std::string& stage, const std::string& input_digest,
               const std::function<json()>& run) {
    const fs::path file = ctx.checkpoints / (stage + ".json");
    json payload;
    if (auto cached = load_checkpoint(file, input_digest)) {
        payload = std::move(*cached);
    } else {
        try {
            payload = run();
        } catch (const error&) {
            throw;  // already carries a stage or validation context
        } catch (const std::exception& e) {
            throw adapter_error(to_lower(stage), e.what());
        }
        store_checkpoint(file, input_digest, payload);
    }
    const fs::path transcript = ctx.transcripts / (stage + ".jsonl");
    StageRecord record;
    record.stage = stage;
    record.input_digest = input_digest;
    record.output_digest = digest_string(payload.dump());
    record.transcript_path = fs::exists(transcript) ? transcript.string() : std::string();
    ctx.records->push_back(std::move(record));
    if (payload.contains("warnings")) {
        for (const auto& w : payload.at("warnings")) {
            ctx.warnings->push_back(w.get<std::string>());
        }
    }
    return payload.at("data");
}

void write_review_report(const fs::path& path, const std::vector<BenchmarkSample>& samples,
                         const json& references, const std::vector<std::string>& warnings,
                         std::size_t template_count) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw validation_error("cannot write review report: " + path.string());
    out << "benchmark construction review\n";
    out << "=============================\n";
    out << "templates generated: " << template_count << "\n";
    out << "samples accepted:    " << samples.size() << "\n";
    out << "warnings:            " << warnings.size() << "\n\n";

    out << "-- descriptions for manual check (CSV) --\n";
    out << "sample_id,id_index,category,reference_image,posture_description,full_description\n";
    const auto csv = [](const std::string& s) {
        std::string quoted = "\"";
        for (char c : s) {
            quoted.push_back(c);
            if (c == '"') quoted.push_back('"');
        }
        quoted.push_back('"');
        return quoted;
    };
    for (const BenchmarkSample& s : samples) {
        for (std::size_t i = 0; i < s.ids.size(); ++i) {
            const BenchmarkId& id = s.ids[i];
            out << csv(s.sample_id) << "," << i << "," << csv(id.category_label) << ","
                << csv(id.reference_image) << "," << csv(id.posture_description) << ","
                << csv(id.full_description) << "\n";
        }
    }

    out << "\n-- reference appearances --\n";
    for (const auto& r : references) {
        out << r.at("path").get<std::string>() << " [" << r.at("category_label").get<std::string>()
            << "]: " << r.at("appearance").get<std::string>() << "\n";
    }

    out << "\n-- warnings --\n";
    for (const std::string& w : warnings) out << w << "\n";
}

}  // namespace

BuildResult build_benchmark(const BenchClients& clients,
                            const std::vector<ReferenceEntry>& references,
                            const BuildConfig& config) {
    if (!clients.llm || !clients.t2i || !clients.vlm || !clients.detector) {
        throw config_error("benchmark build requires llm, t2i, vlm and detector clients");
    }
    if (config.work_dir.empty()) throw config_error("benchmark build requires a work_dir");
    if (config.interaction_count < 1 || config.prompts_per_interaction < 1) {
        throw config_error("interaction_count and prompts_per_interaction must be >= 1");
    }
    if (config.concurrency < 1) throw config_error("concurrency bound must be >= 1");
    if (config.template_height == 0 || config.template_width == 0) {
        throw config_error("template dimensions must be non-zero");
    }
    for (const ReferenceEntry& r : references) {
        if (r.category_label.empty()) {
            throw validation_error("reference entry with empty category label: " + r.path);
        }
        if (!fs::exists(r.path)) throw validation_error("reference image not found: " + r.path);
    }

    const fs::path work(config.work_dir);
    fs::create_directories(work / "checkpoints");
    fs::create_directories(work / "transcripts");
    fs::create_directories(work / "templates");
    fs::create_directories(work / "crops");

    BuildResult result;
    StageContext ctx{work / "checkpoints", work / "transcripts", &result.stages, &result.warnings};

    // -- INTERACTIONS --------------------------------------------------------
    const json interactions_fp{{"count", config.interaction_count},
                               {"dedup_retries", config.dedup_retries},
                               {"template", bench_templates::kInteractions}};
    const std::string d_interactions = digest_string("INTERACTIONS|" + interactions_fp.dump());
    const json interactions = run_stage(ctx, "INTERACTIONS", d_interactions, [&] {
        Transcript transcript;
        const auto list = nominate_interactions(*clients.llm, config.interaction_count,
                                                config.dedup_retries, &transcript);
        write_transcript(ctx.transcripts / "INTERACTIONS.jsonl", transcript);
        return json{{"data", list}, {"warnings", json::array()}};
    });

    // -- PROMPTS -------------------------------------------------------------
    const std::string d_prompts =
        digest_string("PROMPTS|" + digest_string(interactions.dump()) + "|" +
                      std::to_string(config.prompts_per_interaction));
    const json prompts = run_stage(ctx, "PROMPTS", d_prompts, [&] {
        const auto list = interactions.get<std::vector<std::string>>();
        std::vector<std::vector<std::string>> per(list.size());
        std::vector<Transcript> transcripts(list.size());
        parallel_for(list.size(), config.concurrency, [&](std::size_t i) {
            per[i] = expand_prompts(*clients.llm, list[i], config.prompts_per_interaction,
                                    config.dedup_retries, &transcripts[i]);
        });
        write_transcript(ctx.transcripts / "PROMPTS.jsonl", concat(transcripts));
        json data = json::array();
        for (std::size_t i = 0; i < list.size(); ++i) {
            data.push_back({{"interaction_index", i}, {"interaction", list[i]}, {"prompts", per[i]}});
        }
        return json{{"data", std::move(data)}, {"warnings", json::array()}};
    });

    // -- TEMPLATES -----------------------------------------------------------
    const json templates_fp{{"seed", config.seed},
                            {"height", config.template_height},
                            {"width", config.template_width}};
    const std::string d_templates = digest_string(
        "TEMPLATES|" + digest_string(prompts.dump()) + "|" + templates_fp.dump());
    const json templates = run_stage(ctx, "TEMPLATES", d_templates, [&] {
        struct Item {
            int interaction_index;
            int prompt_index;
            std::string interaction;
            std::string prompt;
        };
        std::vector<Item> items;
        for (const auto& block : prompts) {
            const auto& list = block.at("prompts");
            for (std::size_t j = 0; j < list.size(); ++j) {
                items.push_back({block.at("interaction_index").get<int>(), static_cast<int>(j),
                                 block.at("interaction").get<std::string>(),
                                 prefixed_prompt(list[j].get<std::string>())});
            }
        }
        std::vector<json> records(items.size());
        std::vector<Transcript> transcripts(items.size());
        parallel_for(items.size(), config.concurrency, [&](std::size_t k) {
            const Item& it = items[k];
            const RealArray image = clients.t2i->generate_image(
                it.prompt, config.template_height, config.template_width,
                config.seed + static_cast<std::uint64_t>(k));
            const fs::path path = work / "templates" / (template_stem(k) + ".ppm");
            write_ppm(path, image);
            transcripts[k].push_back({it.prompt, path.string()});
            records[k] = json{{"interaction_index", it.interaction_index},
                              {"prompt_index", it.prompt_index},
                              {"interaction", it.interaction},
                              {"prompt", it.prompt},
                              {"path", path.string()},
                              {"pixels_digest", array_digest(image)}};
        });
        write_transcript(ctx.transcripts / "TEMPLATES.jsonl", concat(transcripts));
        return json{{"data", records}, {"warnings", json::array()}};
    });

    // -- CONCEPTS ------------------------------------------------------------
    const std::string d_concepts = digest_string("CONCEPTS|" + digest_string(templates.dump()));
    const json concepts = run_stage(ctx, "CONCEPTS", d_concepts, [&] {
        const std::size_t n = templates.size();
        std::vector<json> records(n);
        std::vector<Transcript> transcripts(n);
        std::vector<std::vector<std::string>> warns(n);
        parallel_for(n, config.concurrency, [&](std::size_t k) {
            const RealArray image = read_ppm(templates[k].at("path").get<std::string>());
            const auto all = extract_concepts(*clients.vlm, image, &warns[k], &transcripts[k]);
            const auto humans = filter_human_concepts(*clients.vlm, all, &transcripts[k]);
            if (humans.empty()) {
                warns[k].push_back("no human concepts identified");
            }
            records[k] = json{{"all_concepts", all}, {"human_concepts", humans}};
        });
        write_transcript(ctx.transcripts / "CONCEPTS.jsonl", concat(transcripts));
        json warnings = json::array();
        for (std::size_t k = 0; k < n; ++k) {
            for (const std::string& w : warns[k]) warnings.push_back(template_stem(k) + ": " + w);
        }
        return json{{"data", records}, {"warnings", std::move(warnings)}};
    });

    // -- DETECTION -----------------------------------------------------------
    const std::string d_detection = digest_string("DETECTION|" + digest_string(concepts.dump()));
    const json detection = run_stage(ctx, "DETECTION", d_detection, [&] {
        const std::size_t n = templates.size();
        std::vector<json> records(n);
        std::vector<Transcript> transcripts(n);
        std::vector<std::vector<std::string>> warns(n);
        parallel_for(n, config.concurrency, [&](std::size_t k) {
            const RealArray image = read_ppm(templates[k].at("path").get<std::string>());
            const auto humans = concepts[k].at("human_concepts").get<std::vector<std::string>>();
            const auto found = detect_concepts(*clients.detector, image, humans,
                                               (work / "crops").string(), template_stem(k),
                                               &warns[k]);
            json dets = json::array();
            for (const DetectedConcept& d : found) {
                dets.push_back({{"concept", d.concept_label},
                                {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
                                {"crop_path", d.crop_path}});
            }
            for (const std::string& concept_label : humans) {
                json boxes = json::array();
                for (const DetectedConcept& d : found) {
                    if (d.concept_label == concept_label) {
                        boxes.push_back({d.box.x0, d.box.y0, d.box.x1, d.box.y1});
                    }
                }
                transcripts[k].push_back({template_stem(k) + ":" + concept_label, boxes.dump()});
            }
            records[k] = json{{"detections", std::move(dets)}};
        });
        write_transcript(ctx.transcripts / "DETECTION.jsonl", concat(transcripts));
        json warnings = json::array();
        for (std::size_t k = 0; k < n; ++k) {
            for (const std::string& w : warns[k]) warnings.push_back(w);
        }
        return json{{"data", records}, {"warnings", std::move(warnings)}};
    });

    // -- ANNOTATION ----------------------------------------------------------
    json reference_fp = json::array();
    for (const ReferenceEntry& r : references) {
        reference_fp.push_back({{"path", r.path}, {"category_label", r.category_label}});
    }
    const std::string d_annotation = digest_string(
        "ANNOTATION|" + digest_string(detection.dump()) + "|" + reference_fp.dump());
    const json annotation = run_stage(ctx, "ANNOTATION", d_annotation, [&] {
        // each reference is annotated exactly once, regardless of how many
        // samples it ends up assigned to
        std::vector<json> ref_records(references.size());
        std::vector<Transcript> ref_transcripts(references.size());
        parallel_for(references.size(), config.concurrency, [&](std::size_t r) {
            const RealArray image = read_ppm(references[r].path);
            const AnnotationResult ann = annotate(*clients.vlm, image, &ref_transcripts[r]);
            ref_records[r] = json{{"path", references[r].path},
                                  {"category_label", references[r].category_label},
                                  {"appearance", ann.appearance}};
        });

        struct CropRef {
            std::size_t template_index;
            std::string crop_path;
        };
        std::vector<CropRef> crops;
        for (std::size_t k = 0; k < detection.size(); ++k) {
            for (const auto& d : detection[k].at("detections")) {
                crops.push_back({k, d.at("crop_path").get<std::string>()});
            }
        }
        std::vector<std::string> postures(crops.size());
        std::vector<Transcript> crop_transcripts(crops.size());
        parallel_for(crops.size(), config.concurrency, [&](std::size_t c) {
            const RealArray image = read_ppm(crops[c].crop_path);
            postures[c] = annotate(*clients.vlm, image, &crop_transcripts[c]).state;
        });

        json crop_records = json::array();
        for (std::size_t k = 0; k < detection.size(); ++k) crop_records.push_back(json::array());
        for (std::size_t c = 0; c < crops.size(); ++c) {
            crop_records[crops[c].template_index].push_back(postures[c]);
        }

        Transcript all = concat(ref_transcripts);
        const Transcript crop_all = concat(crop_transcripts);
        all.insert(all.end(), crop_all.begin(), crop_all.end());
        write_transcript(ctx.transcripts / "ANNOTATION.jsonl", all);
        return json{{"data", json{{"references", ref_records}, {"crops", crop_records}}},
                    {"warnings", json::array()}};
    });

    // -- STRUCTURE -----------------------------------------------------------
    const json structure_fp{{"seed", config.seed}, {"vocabulary", config.category_vocabulary}};
    const std::string d_structure = digest_string(
        "STRUCTURE|" + digest_string(annotation.dump()) + "|" + structure_fp.dump());
    const json structured = run_stage(ctx, "STRUCTURE", d_structure, [&] {
        std::vector<TemplateRecord> template_records;
        for (std::size_t k = 0; k < templates.size(); ++k) {
            TemplateRecord rec;
            rec.interaction_index = templates[k].at("interaction_index").get<int>();
            rec.prompt_index = templates[k].at("prompt_index").get<int>();
            rec.interaction = templates[k].at("interaction").get<std::string>();
            rec.prompt = templates[k].at("prompt").get<std::string>();
            rec.image_path = templates[k].at("path").get<std::string>();
            const auto& dets = detection[k].at("detections");
            const auto& postures = annotation.at("crops")[k];
            for (std::size_t d = 0; d < dets.size(); ++d) {
                const auto& box = dets[d].at("box");
                rec.humans.push_back({dets[d].at("concept").get<std::string>(),
                                      BBox(box[0].get<double>(), box[1].get<double>(),
                                           box[2].get<double>(), box[3].get<double>()),
                                      dets[d].at("crop_path").get<std::string>()});
                rec.postures.push_back(postures[d].get<std::string>());
            }
            template_records.push_back(std::move(rec));
        }
        std::vector<ReferenceRecord> reference_records;
        for (const auto& r : annotation.at("references")) {
            reference_records.push_back({r.at("path").get<std::string>(),
                                         r.at("category_label").get<std::string>(),
                                         r.at("appearance").get<std::string>()});
        }
        std::vector<std::string> warns;
        const auto samples = structure_samples(template_records, reference_records, config.seed,
                                               config.category_vocabulary, &warns);
        return json{{"data", json::parse(benchmark_to_json(samples))}, {"warnings", warns}};
    });

    result.samples = benchmark_from_json(structured.dump());
    result.benchmark_path = (work / "benchmark.json").string();
    save_benchmark(result.benchmark_path, result.samples);

    result.review_report_path = (work / "review_report.txt").string();
    write_review_report(result.review_report_path, result.samples, annotation.at("references"),
                        result.warnings, templates.size());
    return result;
}

}  // namespace idc
