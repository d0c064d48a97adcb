#include "cli/commands.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "cli/config.hpp"
#include "idcompose/bench_pipeline.hpp"
#include "idcompose/benchmark.hpp"
#include "idcompose/digest.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/eval.hpp"
#include "idcompose/image_io.hpp"
#include "idcompose/pipeline.hpp"

namespace idc::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small file/manifest plumbing shared by every command.
// ---------------------------------------------------------------------------

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw validation_error("cannot write " + path.string());
    out << text;
}

struct OutputRecord {
    std::string path;  // relative to the output directory
    std::string digest;
};

OutputRecord record_output(const fs::path& out_dir, const std::string& rel) {
    return {rel, digest_string(read_bytes(out_dir / rel))};
}

// The manifest is part of the deterministic output set: identical config +
// seed must reproduce it byte for byte, which is why wall-clock timings live
// in a separate sidecar (write_timings) instead.
void write_manifest(const fs::path& out_dir, const std::string& command,
                    const std::string& config_digest, std::uint64_t seed,
                    const std::vector<OutputRecord>& outputs, const json& extras = json::object()) {
    json doc;
    doc["command"] = command;
    doc["config_digest"] = config_digest;
    doc["seed"] = seed;
    json outs = json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"digest", o.digest}});
    doc["outputs"] = std::move(outs);
    doc.update(extras);
    write_text(out_dir / "manifest.json", doc.dump(2) + "\n");
}

class StageTimer {
public:
    void finish(const std::string& name) {
        const auto now = clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - mark_).count();
        stages_.push_back({name, ms});
        mark_ = now;
    }

    // Diagnostics only — never listed in the manifest, so reruns stay
    // byte-comparable over the deterministic outputs.
    void write(const fs::path& out_dir, const std::string& command) const {
        json doc;
        doc["command"] = command;
        json stages = json::array();
        for (const auto& [name, ms] : stages_) {
            stages.push_back({{"name", name}, {"milliseconds", ms}});
        }
        doc["stages"] = std::move(stages);
        write_text(out_dir / "timings.json", doc.dump(2) + "\n");
    }

private:
    using clock = std::chrono::steady_clock;
    clock::time_point mark_ = clock::now();
    std::vector<std::pair<std::string, double>> stages_;
};

std::string zero_pad(std::size_t value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
    return buf;
}

// Index-addressed parallel map: results land by index, so the outcome is
// identical to the sequential order regardless of scheduling. The smallest
// failing index wins, matching sequential error behavior.
void parallel_for(std::size_t count, int bound, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers =
        std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, bound)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::size_t error_index = count;
    std::exception_ptr error;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    const std::lock_guard<std::mutex> lock(error_mutex);
                    if (i < error_index) {
                        error_index = i;
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int do_generate(const RunConfig& config, const std::string& request_path, std::ostream& out) {
    const std::string config_digest = run_config_digest(config);
    if (config.backend != "toy") {
        throw config_error(
            "generate requires the toy backend: the remote backend exposes no denoiser");
    }
    const BackendBundle bundle = make_backend_bundle(config);
    GenerationRequest request = load_generation_request(request_path);
    request.steps = config.steps;
    request.guidance_scale = config.guidance_scale;
    request.depth_control = {config.depth_control, config.depth_strength};

    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir);
    StageTimer timer;
    std::vector<OutputRecord> outputs;
    for (int k = 0; k < config.images_per_sample; ++k) {
        request.seed = config.seed + static_cast<std::uint64_t>(k);
        const RealArray image = generate(request, bundle);
        const std::string name = "image_" + zero_pad(static_cast<std::size_t>(k), 2) + ".ppm";
        write_ppm(out_dir / name, image);
        outputs.push_back(record_output(out_dir, name));
        timer.finish(name);
    }
    write_manifest(out_dir, "generate", config_digest, config.seed, outputs);
    timer.write(out_dir, "generate");
    out << "generate: wrote " << outputs.size() << " images to " << out_dir.string()
        << " (config " << config_digest << ")\n";
    return 0;
}

int do_invert(const RunConfig& config, const std::string& input_path, std::ostream& out) {
    const std::string config_digest = run_config_digest(config);
    if (config.backend != "toy") {
        throw config_error(
            "invert requires the toy backend: the remote backend exposes no denoiser");
    }
    const BackendBundle bundle = make_backend_bundle(config);
    const RealArray image = read_ppm(input_path);
    const RealArray latent = bundle.image_codec->encode(image);
    const DDIMSchedule schedule = DDIMSchedule::linear(config.steps, 0.3);
    const BlockSet conditioning(
        EmbeddingBlock::global(RealArray::zeros({1, bundle.denoiser->model_dim()})));
    const InversionResult inversion =
        ddim_invert(latent, schedule, *bundle.denoiser, conditioning, 0);

    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir);
    StageTimer timer;
    json latent_doc;
    json shape = json::array();
    for (std::size_t d : inversion.inverted.latent.shape()) shape.push_back(d);
    json data = json::array();
    for (std::size_t i = 0; i < inversion.inverted.latent.size(); ++i) {
        data.push_back(inversion.inverted.latent[i]);
    }
    latent_doc["shape"] = std::move(shape);
    latent_doc["data"] = std::move(data);
    write_text(out_dir / "inverted_latent.json", latent_doc.dump(2) + "\n");
    timer.finish("invert");

    const double roundtrip = max_abs_diff(inversion.reconstruction, latent);
    write_manifest(out_dir, "invert", config_digest, config.seed,
                   {record_output(out_dir, "inverted_latent.json")},
                   {{"roundtrip_max_abs_error", roundtrip},
                    {"cache_entries", inversion.cache.size()}});
    timer.write(out_dir, "invert");
    out << "invert: roundtrip max abs error " << roundtrip << ", cached "
        << inversion.cache.size() << " feature entries\n";
    return 0;
}

int do_eval(const RunConfig& config, const std::string& benchmark_path,
            const std::string& images_dir, std::ostream& out) {
    const std::string config_digest = run_config_digest(config);
    if (benchmark_path.empty()) {
        throw config_error("eval needs a benchmark path (config benchmark_path or --benchmark)");
    }
    const std::vector<BenchmarkSample> samples = load_benchmark(benchmark_path);
    if (samples.empty()) throw validation_error("benchmark has no samples: " + benchmark_path);
    const BackendBundle bundle = make_backend_bundle(config);
    bundle.require_evaluation();
    const ImageLoader loader = ppm_loader(fs::path(benchmark_path).parent_path().string());

    // Resolve every expected image up front so a hole in the sweep fails
    // before any scoring work starts.
    const std::size_t per_sample = static_cast<std::size_t>(config.images_per_sample);
    std::vector<fs::path> image_paths;
    image_paths.reserve(samples.size() * per_sample);
    for (const BenchmarkSample& sample : samples) {
        for (std::size_t k = 0; k < per_sample; ++k) {
            fs::path path = fs::path(images_dir) / (sample.sample_id + "_" + zero_pad(k, 2) + ".ppm");
            if (!fs::exists(path)) {
                throw validation_error("missing generated image: " + path.string());
            }
            image_paths.push_back(std::move(path));
        }
    }

    const bool adapters_concurrent =
        bundle.person_detector->thread_safe() && bundle.face_embedder->thread_safe() &&
        bundle.image_embedder->thread_safe() && bundle.text_image_scorer->thread_safe() &&
        bundle.hps_scorer->thread_safe();
    const int bound = adapters_concurrent ? config.concurrency : 1;

    StageTimer timer;
    std::vector<SampleMetrics> per_image(image_paths.size());
    parallel_for(image_paths.size(), bound, [&](std::size_t i) {
        const BenchmarkSample& sample = samples[i / per_sample];
        per_image[i] = evaluate_sample(read_ppm(image_paths[i]), sample, bundle, loader);
    });
    timer.finish("evaluate");

    const MetricReport report = aggregate(per_image, config.images_per_sample);
    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir);
    write_text(out_dir / "report.csv", report_to_csv(report));
    write_text(out_dir / "report.json", report_to_json(report));
    const std::string table = report_table(report);
    write_text(out_dir / "report.txt", table);
    timer.finish("report");
    write_manifest(out_dir, "eval", config_digest, config.seed,
                   {record_output(out_dir, "report.csv"), record_output(out_dir, "report.json"),
                    record_output(out_dir, "report.txt")});
    timer.write(out_dir, "eval");
    out << table;
    return 0;
}

std::vector<ReferenceEntry> load_reference_list(const std::string& path) {
    json doc = json::parse(read_bytes(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_array() || doc.empty()) {
        throw validation_error("references file must be a non-empty JSON array: " + path);
    }
    const fs::path base = fs::path(path).parent_path();
    std::vector<ReferenceEntry> references;
    int index = 0;
    for (const json& entry : doc) {
        const std::string where = "references[" + std::to_string(index) + "]";
        if (!entry.is_object()) throw validation_error(where + " must be an object");
        for (const auto& [key, value] : entry.items()) {
            if (key != "path" && key != "category") {
                throw validation_error(where + ": unknown key \"" + key + "\"");
            }
        }
        if (!entry.contains("path") || !entry.at("path").is_string() ||
            !entry.contains("category") || !entry.at("category").is_string()) {
            throw validation_error(where + " needs string \"path\" and \"category\"");
        }
        // Stored verbatim in the built benchmark, so resolve to an absolute
        // path here: the artifact must stay loadable from any directory.
        const std::string rel = entry.at("path").get<std::string>();
        const fs::path resolved = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
        references.push_back({fs::absolute(resolved).lexically_normal().string(),
                              entry.at("category").get<std::string>()});
        ++index;
    }
    return references;
}

int do_bench_build(const RunConfig& config, const std::string& references_path,
                   std::ostream& out) {
    const std::string config_digest = run_config_digest(config);
    const BenchClients clients = make_bench_clients(config);
    const std::vector<ReferenceEntry> references = load_reference_list(references_path);

    const fs::path out_dir(config.out_dir);
    fs::create_directories(out_dir);
    BuildConfig build;
    build.interaction_count = config.bench.interactions;
    build.prompts_per_interaction = config.bench.prompts_per_interaction;
    build.seed = config.seed;
    build.concurrency = config.concurrency;
    build.dedup_retries = config.bench.dedup_retries;
    build.work_dir = (out_dir / "bench").string();
    build.template_height = static_cast<std::size_t>(config.bench.template_size);
    build.template_width = static_cast<std::size_t>(config.bench.template_size);

    StageTimer timer;
    const BuildResult result = build_benchmark(clients, references, build);
    timer.finish("build");
    for (const std::string& warning : result.warnings) out << "warning: " << warning << "\n";

    const std::string bench_rel =
        fs::relative(result.benchmark_path, out_dir).generic_string();
    const std::string review_rel =
        fs::relative(result.review_report_path, out_dir).generic_string();
    write_manifest(out_dir, "bench build", config_digest, config.seed,
                   {record_output(out_dir, bench_rel), record_output(out_dir, review_rel)},
                   {{"samples", result.samples.size()},
                    {"stages", result.stages.size()},
                    {"warnings", result.warnings.size()}});
    timer.write(out_dir, "bench_build");
    out << "bench build: " << result.samples.size() << " samples -> " << result.benchmark_path
        << " (" << result.warnings.size() << " warnings)\n";
    return 0;
}

int do_bench_validate(const std::string& benchmark_path, std::ostream& out) {
    const std::vector<ValidationIssue> issues = validate_benchmark_file(benchmark_path);
    for (const ValidationIssue& issue : issues) {
        out << issue.code << " " << issue.location << ": " << issue.message << "\n";
    }
    if (issues.empty()) {
        out << "bench validate: ok\n";
        return 0;
    }
    out << "bench validate: " << issues.size() << " issues\n";
    return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"identity-composition toolkit"};
    app.require_subcommand(1);

    std::string config_path, request_path, input_path, benchmark_path, images_dir,
        references_path;
    std::string backend_flag, depth_flag;
    std::uint64_t seed_flag = 0;
    int steps_flag = 0, images_per_sample_flag = 0;
    std::string out_flag;

    const auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* config_opt = cmd->add_option("--config", config_path, "run config JSON");
        if (needs_config) config_opt->required();
        cmd->add_option("--seed", seed_flag, "override config seed");
        cmd->add_option("--out", out_flag, "override output directory");
        cmd->add_option("--backend", backend_flag, "override backend (toy|remote)")
            ->check(CLI::IsMember({"toy", "remote"}));
    };

    CLI::App* generate_cmd = app.add_subcommand("generate", "generate images for a request");
    add_common(generate_cmd, true);
    generate_cmd->add_option("--request", request_path, "generation request JSON")->required();
    generate_cmd->add_option("--steps", steps_flag, "override DDIM step count")
        ->check(CLI::PositiveNumber);
    generate_cmd->add_option("--depth-control", depth_flag, "depth control on|off")
        ->check(CLI::IsMember({"on", "off"}));
    generate_cmd->add_option("--images-per-sample", images_per_sample_flag,
                             "images generated per request")
        ->check(CLI::PositiveNumber);

    CLI::App* invert_cmd = app.add_subcommand("invert", "DDIM-invert an image");
    add_common(invert_cmd, true);
    invert_cmd->add_option("--in", input_path, "PPM image to invert")->required();
    invert_cmd->add_option("--steps", steps_flag, "override DDIM step count")
        ->check(CLI::PositiveNumber);

    CLI::App* eval_cmd = app.add_subcommand("eval", "score generated images against a benchmark");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--benchmark", benchmark_path, "benchmark JSON (default: config)");
    eval_cmd->add_option("--images", images_dir, "directory of <sample_id>_<k>.ppm images")
        ->required();
    eval_cmd->add_option("--images-per-sample", images_per_sample_flag,
                         "images expected per sample")
        ->check(CLI::PositiveNumber);

    CLI::App* bench_cmd = app.add_subcommand("bench", "benchmark construction and validation");
    bench_cmd->require_subcommand(1);
    CLI::App* build_cmd = bench_cmd->add_subcommand("build", "build a benchmark from clients");
    add_common(build_cmd, true);
    build_cmd->add_option("--references", references_path, "reference pool JSON")->required();
    CLI::App* validate_cmd =
        bench_cmd->add_subcommand("validate", "validate a benchmark file");
    validate_cmd->add_option("--benchmark", benchmark_path, "benchmark JSON")->required();

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("idcompose");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 4;
    }

    try {
        if (*validate_cmd) return do_bench_validate(benchmark_path, out);

        RunConfig config = load_run_config(config_path);
        const auto apply_overrides = [&](CLI::App* cmd) {
            if (cmd->count("--seed")) config.seed = seed_flag;
            if (cmd->count("--out")) config.out_dir = out_flag;
            if (cmd->count("--backend")) config.backend = backend_flag;
            if (cmd->get_option_no_throw("--steps") && cmd->count("--steps")) {
                config.steps = steps_flag;
            }
            if (cmd->get_option_no_throw("--depth-control") && cmd->count("--depth-control")) {
                config.depth_control = depth_flag == "on";
            }
            if (cmd->get_option_no_throw("--images-per-sample") &&
                cmd->count("--images-per-sample")) {
                config.images_per_sample = images_per_sample_flag;
            }
        };

        if (*generate_cmd) {
            apply_overrides(generate_cmd);
            apply_env_overrides(config);
            return do_generate(config, request_path, out);
        }
        if (*invert_cmd) {
            apply_overrides(invert_cmd);
            apply_env_overrides(config);
            return do_invert(config, input_path, out);
        }
        if (*eval_cmd) {
            apply_overrides(eval_cmd);
            apply_env_overrides(config);
            const std::string bench_path =
                eval_cmd->count("--benchmark") ? benchmark_path : config.benchmark_path;
            return do_eval(config, bench_path, images_dir, out);
        }
        if (*bench_cmd && *build_cmd) {
            apply_overrides(build_cmd);
            apply_env_overrides(config);
            return do_bench_build(config, references_path, out);
        }
        err << "error: no command selected\n";
        return 4;
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return 4;
    } catch (const adapter_error& e) {
        err << "adapter error: " << e.what() << "\n";
        return 3;
    } catch (const validation_error& e) {
        err << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const shape_error& e) {
        err << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace idc::cli
