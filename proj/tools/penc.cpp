// Command-line front end wiring dataset generation, training, inference,
// denoising, evaluation, and artifact export into seeded, reproducible runs.
//
// Every command reads one JSON config; --set section.key=value overrides
// scalar keys. Outputs are written atomically, and each output file gains a
// sibling <name>.manifest.json recording the config hash, seed, library and
// format versions, wall time, and a timestamp.
//
// Exit codes: 0 success, 1 bad config, 2 I/O or file-format error,
// 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "penc/penc.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kStreamCliNoise = 0x71;

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string iso_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Shared state for one command invocation.
struct Run {
    std::string command;
    json config;
    std::uint64_t seed = 0;
    int threads = 1;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }

    void write_manifest(const fs::path& target) const {
        const json m{{"command", command},
                     {"config_hash", fnv1a_hex(config.dump())},
                     {"seed", seed},
                     {"library_version", penc::kLibraryVersion},
                     {"checkpoint_format_version", penc::kCheckpointFormatVersion},
                     {"dataset_format_version", penc::kDatasetFormatVersion},
                     {"wall_seconds", elapsed()},
                     {"timestamp", iso_timestamp()}};
        penc::atomic_write_file(target.string() + ".manifest.json", m.dump(2) + "\n");
    }
};

json parse_config_file(const std::string& path) {
    const std::string bytes = penc::read_file_bytes(path);
    try {
        return json::parse(bytes);
    } catch (const json::exception& e) {
        throw penc::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

/// Applies one section.key=value override. Values parse as JSON scalars when
/// possible (numbers, booleans, null) and fall back to plain strings.
void apply_overrides(json& config, const std::vector<std::string>& sets) {
    for (const std::string& item : sets) {
        const std::size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw penc::ConfigError("--set expects section.key=value, got: " + item);
        const std::string path = item.substr(0, eq);
        const std::string raw = item.substr(eq + 1);

        json value;
        try {
            value = json::parse(raw);
            if (value.is_object() || value.is_array()) value = raw;
        } catch (const json::exception&) {
            value = raw;
        }

        json* node = &config;
        std::size_t begin = 0;
        while (true) {
            const std::size_t dot = path.find('.', begin);
            const std::string key = path.substr(begin, dot - begin);
            if (key.empty()) throw penc::ConfigError("--set has an empty key segment: " + item);
            if (dot == std::string::npos) {
                (*node)[key] = value;
                break;
            }
            node = &(*node)[key];
            if (!node->is_object() && !node->is_null())
                throw penc::ConfigError("--set path crosses a scalar key: " + path);
            begin = dot + 1;
        }
    }
}

void check_keys(const json& obj, const std::string& prefix, const std::set<std::string>& allowed) {
    if (!obj.is_object())
        throw penc::ConfigError("config section must be a JSON object: " +
                                (prefix.empty() ? std::string("<top level>") : prefix));
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw penc::ConfigError("unknown config key: " + prefix + key);
    }
}

template <typename T>
T get_or(const json& sec, const std::string& prefix, const std::string& key, T fallback) {
    if (!sec.contains(key)) return fallback;
    try {
        return sec.at(key).get<T>();
    } catch (const json::exception&) {
        throw penc::ConfigError("bad value for config key: " + prefix + key);
    }
}

std::string require_path(const json& sec, const std::string& prefix, const std::string& key) {
    const std::string value = get_or<std::string>(sec, prefix, key, "");
    if (value.empty()) throw penc::ConfigError("missing required config key: " + prefix + key);
    return value;
}

std::optional<double> optional_double(const json& sec, const std::string& prefix,
                                      const std::string& key) {
    if (!sec.contains(key)) return std::nullopt;
    return get_or<double>(sec, prefix, key, 0.0);
}

const json& section(const json& config, const std::string& name) {
    static const json empty = json::object();
    // One config file may carry sections for several commands; only the
    // running command's section is read.
    check_keys(config, "",
               {"seed", "generate", "train", "infer", "denoise", "eval", "export"});
    if (!config.contains(name)) return empty;
    if (!config.at(name).is_object())
        throw penc::ConfigError("config section must be a JSON object: " + name);
    return config.at(name);
}

/// Re-raises config-derived validation failures as ConfigError so they map to
/// exit code 1 regardless of which validate() caught them.
template <typename F>
auto config_phase(F&& fn) {
    try {
        return fn();
    } catch (const penc::ConfigError&) {
        throw;
    } catch (const penc::Error& e) {
        throw penc::ConfigError(e.what());
    } catch (const json::exception& e) {
        throw penc::ConfigError(std::string("bad config value: ") + e.what());
    }
}

penc::NeighborhoodSpec neighborhood_from_config(const json& sec, const std::string& prefix,
                                                int num_frames) {
    const std::string kind = get_or<std::string>(sec, prefix, "neighborhood", "full");
    if (kind == "full") return penc::NeighborhoodSpec::full(num_frames);
    if (kind == "radius")
        return penc::NeighborhoodSpec::radius(num_frames, get_or<int>(sec, prefix, "radius", 1));
    if (kind == "causal")
        return penc::NeighborhoodSpec::causal(num_frames,
                                              get_or<int>(sec, prefix, "causal_depth", 1));
    throw penc::ConfigError("bad value for config key: " + prefix +
                            "neighborhood (expected full, radius, or causal)");
}

std::string kind_of(const json& label) { return label.value("kind", std::string()); }

// ---------------------------------------------------------------------------
// generate

int cmd_generate(Run& run) {
    const std::string prefix = "generate.";
    const json& sec = section(run.config, "generate");
    check_keys(sec, prefix,
               {"kind", "count", "output", "patch_size", "num_frames", "integer_shifts",
                "border", "texture_size", "dx_min", "dx_max", "dy_min", "dy_max",
                "rotation_step_deg", "rotation_max_deg", "scale_min", "scale_max", "image_dir"});

    struct Parsed {
        std::string kind;
        std::string output;
        std::string image_dir;
        int count = 0;
        penc::MovieSpec spec;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.kind = get_or<std::string>(sec, prefix, "kind", "translation");
        out.output = require_path(sec, prefix, "output");
        out.image_dir = get_or<std::string>(sec, prefix, "image_dir", "");
        out.count = get_or<int>(sec, prefix, "count", 100);

        penc::MovieSpec& spec = out.spec;
        if (out.kind == "translation") spec.kind = penc::MovieSpec::Kind::translation;
        else if (out.kind == "rotation") spec.kind = penc::MovieSpec::Kind::rotation;
        else if (out.kind == "scaling") spec.kind = penc::MovieSpec::Kind::scaling;
        else if (out.kind == "mixture") spec.kind = penc::MovieSpec::Kind::mixture;
        else if (out.kind != "chirp")
            throw penc::ConfigError("bad value for config key: " + prefix + "kind");
        spec.patch_size = get_or<int>(sec, prefix, "patch_size", 13);
        spec.num_frames = get_or<int>(sec, prefix, "num_frames", 3);
        spec.count = out.count;
        spec.seed = run.seed;
        spec.integer_shifts = get_or<bool>(sec, prefix, "integer_shifts", false);
        const std::string border = get_or<std::string>(sec, prefix, "border", "reflect");
        if (border == "reflect") spec.border = penc::BorderMode::reflect;
        else if (border == "circular") spec.border = penc::BorderMode::circular;
        else throw penc::ConfigError("bad value for config key: " + prefix + "border");
        spec.texture_size = get_or<int>(sec, prefix, "texture_size", 64);
        spec.dx_min = get_or<double>(sec, prefix, "dx_min", spec.dx_min);
        spec.dx_max = get_or<double>(sec, prefix, "dx_max", spec.dx_max);
        spec.dy_min = get_or<double>(sec, prefix, "dy_min", spec.dy_min);
        spec.dy_max = get_or<double>(sec, prefix, "dy_max", spec.dy_max);
        spec.rotation_step_deg = get_or<double>(sec, prefix, "rotation_step_deg", spec.rotation_step_deg);
        spec.rotation_max_deg = get_or<double>(sec, prefix, "rotation_max_deg", spec.rotation_max_deg);
        spec.scale_min = get_or<double>(sec, prefix, "scale_min", spec.scale_min);
        spec.scale_max = get_or<double>(sec, prefix, "scale_max", spec.scale_max);
        if (out.kind != "chirp") spec.validate();
        if (out.count < 1) throw penc::ConfigError("bad value for config key: " + prefix + "count");
        return out;
    });

    penc::StoredDataset ds;
    if (p.kind == "chirp") {
        ds.schema = "chirp";
        for (const auto& chirp : penc::make_chirp_dataset(p.count, run.seed)) {
            ds.sequences.push_back(chirp.seq);
            ds.labels.push_back(penc::to_label_json(chirp));
        }
    } else {
        ds.schema = "transform";
        std::vector<penc::Image> bank;
        if (!p.image_dir.empty()) bank = penc::load_image_bank(p.image_dir);
        for (const auto& item : penc::sample_movie_dataset(p.spec, bank)) {
            ds.sequences.push_back(item.seq);
            ds.labels.push_back(penc::to_label_json(item.label));
        }
    }
    penc::save_dataset(p.output, ds);
    run.write_manifest(p.output);
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(Run& run) {
    const std::string prefix = "train.";
    const json& sec = section(run.config, "train");
    check_keys(sec, prefix,
               {"dataset", "checkpoint", "history", "codes", "hidden", "context", "neighborhood",
                "radius", "causal_depth", "learning_rate", "momentum", "batch_size", "epochs",
                "z_steps", "lambda", "l1_eps", "corruption", "sigma", "probability"});

    struct Parsed {
        std::string dataset, checkpoint, history, codes;
        penc::ModelShape shape;
        penc::TrainConfig cfg;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.dataset = require_path(sec, prefix, "dataset");
        out.checkpoint = require_path(sec, prefix, "checkpoint");
        out.history = get_or<std::string>(sec, prefix, "history", "");
        out.codes = get_or<std::string>(sec, prefix, "codes", "");
        out.shape.hidden = get_or<int>(sec, prefix, "hidden", 32);
        out.shape.context = get_or<int>(sec, prefix, "context", 9);

        penc::TrainConfig& cfg = out.cfg;
        cfg.learning_rate = get_or<double>(sec, prefix, "learning_rate", cfg.learning_rate);
        cfg.momentum = get_or<double>(sec, prefix, "momentum", cfg.momentum);
        cfg.batch_size = get_or<int>(sec, prefix, "batch_size", cfg.batch_size);
        cfg.epochs = get_or<int>(sec, prefix, "epochs", cfg.epochs);
        cfg.z_lbfgs_steps = get_or<int>(sec, prefix, "z_steps", cfg.z_lbfgs_steps);
        cfg.lambda = get_or<double>(sec, prefix, "lambda", cfg.lambda);
        cfg.l1_eps = get_or<double>(sec, prefix, "l1_eps", cfg.l1_eps);
        const std::string corruption = get_or<std::string>(sec, prefix, "corruption", "none");
        if (corruption == "none") cfg.corruption.kind = penc::CorruptionSpec::Kind::none;
        else if (corruption == "gaussian") cfg.corruption.kind = penc::CorruptionSpec::Kind::gaussian;
        else if (corruption == "mask") cfg.corruption.kind = penc::CorruptionSpec::Kind::mask;
        else throw penc::ConfigError("bad value for config key: " + prefix + "corruption");
        cfg.corruption.sigma = get_or<double>(sec, prefix, "sigma", cfg.corruption.sigma);
        cfg.corruption.probability =
            get_or<double>(sec, prefix, "probability", cfg.corruption.probability);
        cfg.seed = run.seed;
        cfg.threads = run.threads;
        cfg.validate();
        if (out.shape.hidden < 1)
            throw penc::ConfigError("bad value for config key: " + prefix + "hidden");
        if (out.shape.context < 1)
            throw penc::ConfigError("bad value for config key: " + prefix + "context");
        return out;
    });

    const penc::StoredDataset ds = penc::load_dataset(p.dataset);
    if (ds.sequences.empty()) throw penc::EmptyDataset("dataset has no sequences: " + p.dataset);
    const int num_frames = ds.sequences.front().size();
    const penc::NeighborhoodSpec nb =
        config_phase([&] { return neighborhood_from_config(sec, prefix, num_frames); });

    const penc::TrainResult result = penc::train(ds.sequences, p.shape, nb, p.cfg);

    penc::Checkpoint ckpt;
    ckpt.params = result.params;
    ckpt.neighborhood = nb;
    ckpt.energy = p.cfg.energy_config();
    penc::save_checkpoint(p.checkpoint, ckpt);
    run.write_manifest(p.checkpoint);

    if (!p.history.empty()) {
        penc::write_history_csv(p.history, result.history);
        run.write_manifest(p.history);
    }
    if (!p.codes.empty()) {
        penc::atomic_write_file(p.codes, penc::export_codes(result.codes, ds.labels));
        run.write_manifest(p.codes);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// infer

int cmd_infer(Run& run) {
    const std::string prefix = "infer.";
    const json& sec = section(run.config, "infer");
    check_keys(sec, prefix,
               {"mode", "checkpoint", "dataset", "output", "report", "limit", "horizon", "hole",
                "outer_iterations", "z_budget", "tolerance", "lambda", "l1_eps"});

    struct Parsed {
        std::string mode, checkpoint, dataset, output, report;
        int limit = 0, horizon = 4, hole = -1;
        penc::InferConfig cfg;
        std::optional<double> lambda, l1_eps;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.mode = get_or<std::string>(sec, prefix, "mode", "predict");
        if (out.mode != "predict" && out.mode != "interpolate" && out.mode != "rollout")
            throw penc::ConfigError("bad value for config key: " + prefix + "mode");
        out.checkpoint = require_path(sec, prefix, "checkpoint");
        out.dataset = require_path(sec, prefix, "dataset");
        out.output = require_path(sec, prefix, "output");
        out.report = get_or<std::string>(sec, prefix, "report", "");
        out.limit = get_or<int>(sec, prefix, "limit", 0);
        out.horizon = get_or<int>(sec, prefix, "horizon", 4);
        out.hole = get_or<int>(sec, prefix, "hole", -1);
        out.cfg.outer_iterations =
            get_or<int>(sec, prefix, "outer_iterations", out.cfg.outer_iterations);
        out.cfg.z_budget = get_or<int>(sec, prefix, "z_budget", out.cfg.z_budget);
        out.cfg.tolerance = get_or<double>(sec, prefix, "tolerance", out.cfg.tolerance);
        out.lambda = optional_double(sec, prefix, "lambda");
        out.l1_eps = optional_double(sec, prefix, "l1_eps");
        if (out.limit < 0) throw penc::ConfigError("bad value for config key: " + prefix + "limit");
        if (out.mode == "rollout" && out.horizon < 1)
            throw penc::ConfigError("bad value for config key: " + prefix + "horizon");
        return out;
    });

    const penc::Checkpoint ckpt = penc::load_checkpoint(p.checkpoint);
    const penc::StoredDataset ds = penc::load_dataset(p.dataset);
    const int n = ckpt.params.num_frames();

    penc::InferConfig cfg = p.cfg;
    cfg.lambda = p.lambda.value_or(ckpt.energy.lambda);
    cfg.l1_eps = p.l1_eps.value_or(ckpt.energy.l1_eps);
    try {
        cfg.validate();
    } catch (const penc::Error& e) {
        throw penc::ConfigError(e.what());
    }
    const int hole = p.hole < 0 ? n / 2 : p.hole;
    if (p.mode == "interpolate" && (hole < 1 || hole > n - 2))
        throw penc::ConfigError("bad value for config key: " + prefix +
                                "hole (must be interior for interpolate)");

    const std::size_t total =
        p.limit > 0 ? std::min<std::size_t>(ds.sequences.size(), static_cast<std::size_t>(p.limit))
                    : ds.sequences.size();

    penc::StoredDataset out;
    out.schema = p.mode == "rollout" ? "rollout" : "inferred";
    std::vector<std::vector<std::string>> report;
    report.push_back({"index", "mode", "final_energy", "rmse"});

    for (std::size_t i = 0; i < total; ++i) {
        const penc::FrameSequence& seq = ds.sequences[i];
        std::string rmse_cell;
        double final_energy = 0.0;
        penc::FrameSequence produced;

        if (p.mode == "rollout") {
            if (seq.size() < n - 1)
                throw penc::InconsistentShapes("sequence " + std::to_string(i) +
                                               " is shorter than N-1 frames");
            const std::vector<penc::Vector> seeds(seq.frames.begin(), seq.frames.begin() + (n - 1));
            const std::vector<penc::Vector> rolled =
                penc::rollout(ckpt.params, seeds, ckpt.neighborhood, cfg, p.horizon);
            produced.frames = rolled;
            produced.observed.assign(rolled.size(), 1);
            const int have = std::min<int>(p.horizon, seq.size() - (n - 1));
            if (have > 0) {
                double ss = 0.0;
                for (int h = 0; h < have; ++h)
                    ss += (rolled[static_cast<std::size_t>(h)] -
                           seq.frames[static_cast<std::size_t>(n - 1 + h)])
                              .squaredNorm();
                rmse_cell = penc::format_double(
                    std::sqrt(ss / static_cast<double>(have) / static_cast<double>(seq.dim())));
            }
        } else {
            if (seq.size() < n)
                throw penc::InconsistentShapes("sequence " + std::to_string(i) +
                                               " is shorter than the model's N frames");
            penc::FrameSequence window;
            window.frames.assign(seq.frames.begin(), seq.frames.begin() + n);
            window.observed.assign(static_cast<std::size_t>(n), 1);
            const int u = p.mode == "predict" ? n - 1 : hole;
            window.observed[static_cast<std::size_t>(u)] = 0;
            const penc::InferResult res =
                penc::infer_missing_frame(ckpt.params, window, ckpt.neighborhood, cfg);
            final_energy = res.final_energy;
            rmse_cell = penc::format_double(
                penc::rmse(res.frame, seq.frames[static_cast<std::size_t>(u)]));
            window.frames[static_cast<std::size_t>(u)] = res.frame;
            window.observed[static_cast<std::size_t>(u)] = 1;
            produced = window;
        }
        out.sequences.push_back(std::move(produced));
        out.labels.push_back(i < ds.labels.size() ? ds.labels[i] : json::object());
        report.push_back(
            {std::to_string(i), p.mode, penc::format_double(final_energy), rmse_cell});
    }

    penc::save_dataset(p.output, out);
    run.write_manifest(p.output);
    if (!p.report.empty()) {
        penc::write_csv(p.report, report);
        run.write_manifest(p.report);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// denoise

int cmd_denoise(Run& run) {
    const std::string prefix = "denoise.";
    const json& sec = section(run.config, "denoise");
    check_keys(sec, prefix,
               {"checkpoint", "dataset", "output", "report", "sigma", "mu", "outer_iterations",
                "z_budget", "tolerance", "lambda", "l1_eps", "limit"});

    struct Parsed {
        std::string checkpoint, dataset, output, report;
        double sigma = 0.0;
        int limit = 0;
        penc::DenoiseConfig cfg;
        std::optional<double> lambda, l1_eps;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.checkpoint = require_path(sec, prefix, "checkpoint");
        out.dataset = require_path(sec, prefix, "dataset");
        out.output = require_path(sec, prefix, "output");
        out.report = get_or<std::string>(sec, prefix, "report", "");
        out.sigma = get_or<double>(sec, prefix, "sigma", 0.0);
        out.limit = get_or<int>(sec, prefix, "limit", 0);
        out.cfg.mu = get_or<double>(sec, prefix, "mu", out.cfg.mu);
        out.cfg.outer_iterations =
            get_or<int>(sec, prefix, "outer_iterations", out.cfg.outer_iterations);
        out.cfg.z_budget = get_or<int>(sec, prefix, "z_budget", out.cfg.z_budget);
        out.cfg.tolerance = get_or<double>(sec, prefix, "tolerance", out.cfg.tolerance);
        out.lambda = optional_double(sec, prefix, "lambda");
        out.l1_eps = optional_double(sec, prefix, "l1_eps");
        if (out.sigma < 0) throw penc::ConfigError("bad value for config key: " + prefix + "sigma");
        if (out.limit < 0) throw penc::ConfigError("bad value for config key: " + prefix + "limit");
        return out;
    });

    const penc::Checkpoint ckpt = penc::load_checkpoint(p.checkpoint);
    const penc::StoredDataset ds = penc::load_dataset(p.dataset);

    penc::DenoiseConfig cfg = p.cfg;
    cfg.lambda = p.lambda.value_or(ckpt.energy.lambda);
    cfg.l1_eps = p.l1_eps.value_or(ckpt.energy.l1_eps);
    try {
        cfg.validate();
    } catch (const penc::Error& e) {
        throw penc::ConfigError(e.what());
    }

    const std::size_t total =
        p.limit > 0 ? std::min<std::size_t>(ds.sequences.size(), static_cast<std::size_t>(p.limit))
                    : ds.sequences.size();

    penc::StoredDataset out;
    out.schema = "denoised";
    std::vector<std::vector<std::string>> report;
    report.push_back({"index", "final_objective", "rmse_noisy", "rmse_cleaned"});

    for (std::size_t i = 0; i < total; ++i) {
        const penc::FrameSequence& clean = ds.sequences[i];
        const penc::FrameSequence noisy =
            p.sigma > 0
                ? penc::add_gaussian_noise(clean, p.sigma,
                                           penc::derive_seed(run.seed, kStreamCliNoise,
                                                             static_cast<std::uint64_t>(i)))
                : clean;
        const penc::DenoiseResult res =
            penc::denoise_sequence(ckpt.params, noisy, ckpt.neighborhood, cfg);
        std::string rmse_in, rmse_out;
        if (p.sigma > 0) {
            rmse_in = penc::format_double(penc::rmse(noisy, clean));
            rmse_out = penc::format_double(penc::rmse(res.cleaned, clean));
        }
        out.sequences.push_back(res.cleaned);
        out.labels.push_back(i < ds.labels.size() ? ds.labels[i] : json::object());
        report.push_back({std::to_string(i), penc::format_double(res.final_objective), rmse_in,
                          rmse_out});
    }

    penc::save_dataset(p.output, out);
    run.write_manifest(p.output);
    if (!p.report.empty()) {
        penc::write_csv(p.report, report);
        run.write_manifest(p.report);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(Run& run) {
    const std::string prefix = "eval.";
    const json& sec = section(run.config, "eval");
    check_keys(sec, prefix,
               {"checkpoint", "dataset", "report_json", "report_csv", "z_budget", "lambda",
                "l1_eps", "train_fraction"});

    struct Parsed {
        std::string checkpoint, dataset, report_json, report_csv;
        int z_budget = 25;
        double train_fraction = 0.7;
        std::optional<double> lambda, l1_eps;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.checkpoint = require_path(sec, prefix, "checkpoint");
        out.dataset = require_path(sec, prefix, "dataset");
        out.report_json = require_path(sec, prefix, "report_json");
        out.report_csv = get_or<std::string>(sec, prefix, "report_csv", "");
        out.z_budget = get_or<int>(sec, prefix, "z_budget", 25);
        out.train_fraction = get_or<double>(sec, prefix, "train_fraction", 0.7);
        out.lambda = optional_double(sec, prefix, "lambda");
        out.l1_eps = optional_double(sec, prefix, "l1_eps");
        if (out.z_budget < 1)
            throw penc::ConfigError("bad value for config key: " + prefix + "z_budget");
        if (!(out.train_fraction > 0.0) || !(out.train_fraction < 1.0))
            throw penc::ConfigError("bad value for config key: " + prefix + "train_fraction");
        return out;
    });

    const penc::Checkpoint ckpt = penc::load_checkpoint(p.checkpoint);
    const penc::StoredDataset ds = penc::load_dataset(p.dataset);
    const std::size_t m = ds.sequences.size();
    if (m < 4) throw penc::EmptyDataset("eval needs at least 4 sequences");

    penc::EnergyConfig ecfg = ckpt.energy;
    if (p.lambda) ecfg.lambda = *p.lambda;
    if (p.l1_eps) ecfg.l1_eps = *p.l1_eps;

    std::vector<penc::ContextCode> codes(m);
    for (std::size_t i = 0; i < m; ++i)
        codes[i] = penc::estimate_context(ckpt.params, ds.sequences[i], ckpt.neighborhood, ecfg,
                                          p.z_budget);

    // Deterministic shuffled split.
    const std::vector<int> order = penc::shuffled_indices(
        static_cast<int>(m), penc::derive_seed(run.seed, penc::detail::kStreamShuffle));
    const std::size_t train_count = std::max<std::size_t>(
        1, std::min(m - 1, static_cast<std::size_t>(p.train_fraction * static_cast<double>(m))));

    std::vector<std::string> classes;
    for (std::size_t i = 0; i < m; ++i) {
        const std::string kind = kind_of(ds.labels[i]);
        if (std::find(classes.begin(), classes.end(), kind) == classes.end())
            classes.push_back(kind);
    }
    std::sort(classes.begin(), classes.end());
    auto class_id = [&classes](const std::string& kind) {
        return static_cast<int>(std::find(classes.begin(), classes.end(), kind) - classes.begin());
    };

    json report;
    report["sequences"] = m;
    report["classes"] = classes;
    report["accuracy"] = nullptr;
    report["confusion"] = nullptr;

    if (classes.size() >= 2) {
        std::vector<penc::ContextCode> train_codes, test_codes;
        std::vector<int> train_labels, test_labels;
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t i = static_cast<std::size_t>(order[r]);
            const int label = class_id(kind_of(ds.labels[i]));
            if (r < train_count) {
                train_codes.push_back(codes[i]);
                train_labels.push_back(label);
            } else {
                test_codes.push_back(codes[i]);
                test_labels.push_back(label);
            }
        }
        const penc::ClassifierModel model = penc::train_decoder_classify(
            train_codes, train_labels, static_cast<int>(classes.size()));
        report["accuracy"] = penc::classification_accuracy(model, test_codes, test_labels);
        const Eigen::MatrixXi cm = penc::confusion_matrix(model, test_codes, test_labels);
        json cm_rows = json::array();
        for (Eigen::Index r = 0; r < cm.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < cm.cols(); ++c) row.push_back(cm(r, c));
            cm_rows.push_back(row);
        }
        report["confusion"] = cm_rows;
    }

    // Per-kind regression of the primary transformation parameter.
    json regression = json::object();
    std::vector<std::vector<std::string>> cdf_rows;
    cdf_rows.push_back({"kind", "relative_error"});
    for (const std::string& kind : classes) {
        if (kind != "translation" && kind != "rotation" && kind != "scaling") continue;
        std::vector<penc::ContextCode> train_codes, test_codes;
        std::vector<double> train_targets, test_targets;
        int skipped = 0;
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t i = static_cast<std::size_t>(order[r]);
            if (kind_of(ds.labels[i]) != kind) continue;
            const double target =
                penc::transform_label_from_json(ds.labels[i]).primary_parameter();
            if (r < train_count) {
                train_codes.push_back(codes[i]);
                train_targets.push_back(target);
            } else if (target == 0.0) {
                ++skipped; // relative error undefined at zero ground truth
            } else {
                test_codes.push_back(codes[i]);
                test_targets.push_back(target);
            }
        }
        if (train_codes.size() < 2 || test_codes.empty()) continue;
        const penc::RegressorModel model =
            penc::train_decoder_regress(train_codes, train_targets);
        const std::vector<double> cdf =
            penc::relative_error_cdf(model, test_codes, test_targets);
        for (double e : cdf) cdf_rows.push_back({kind, penc::format_double(e)});
        json entry;
        entry["count_train"] = train_codes.size();
        entry["count_test"] = test_codes.size();
        entry["skipped_zero_truth"] = skipped;
        entry["median_relative_error"] = cdf[cdf.size() / 2];
        entry["mean_relative_error"] =
            std::accumulate(cdf.begin(), cdf.end(), 0.0) / static_cast<double>(cdf.size());
        regression[kind] = entry;
    }
    report["regression"] = regression;

    penc::atomic_write_file(p.report_json, report.dump(2) + "\n");
    run.write_manifest(p.report_json);
    if (!p.report_csv.empty()) {
        penc::write_csv(p.report_csv, cdf_rows);
        run.write_manifest(p.report_csv);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// export

int cmd_export(Run& run) {
    const std::string prefix = "export.";
    const json& sec = section(run.config, "export");
    check_keys(sec, prefix,
               {"checkpoint", "filters", "codes", "dataset", "patch_h", "patch_w", "z_budget",
                "lambda", "l1_eps"});

    struct Parsed {
        std::string checkpoint, filters, codes, dataset;
        int patch_h = 0, patch_w = 0, z_budget = 25;
        std::optional<double> lambda, l1_eps;
    };
    const Parsed p = config_phase([&] {
        Parsed out;
        out.checkpoint = require_path(sec, prefix, "checkpoint");
        out.filters = get_or<std::string>(sec, prefix, "filters", "");
        out.codes = get_or<std::string>(sec, prefix, "codes", "");
        out.dataset = get_or<std::string>(sec, prefix, "dataset", "");
        out.patch_h = get_or<int>(sec, prefix, "patch_h", 0);
        out.patch_w = get_or<int>(sec, prefix, "patch_w", 0);
        out.z_budget = get_or<int>(sec, prefix, "z_budget", 25);
        out.lambda = optional_double(sec, prefix, "lambda");
        out.l1_eps = optional_double(sec, prefix, "l1_eps");
        if (out.filters.empty() && out.codes.empty())
            throw penc::ConfigError("export needs at least one of: " + prefix + "filters, " +
                                    prefix + "codes");
        if (!out.codes.empty() && out.dataset.empty())
            throw penc::ConfigError("missing required config key: " + prefix +
                                    "dataset (needed for codes export)");
        if (out.z_budget < 1)
            throw penc::ConfigError("bad value for config key: " + prefix + "z_budget");
        return out;
    });

    const penc::Checkpoint ckpt = penc::load_checkpoint(p.checkpoint);

    if (!p.filters.empty()) {
        int h = p.patch_h, w = p.patch_w;
        if (h == 0 && w == 0) {
            const double side = std::sqrt(static_cast<double>(ckpt.params.frame_dim()));
            if (side != std::floor(side))
                throw penc::ConfigError("frame dim is not square; set " + prefix + "patch_h and " +
                                        prefix + "patch_w");
            h = w = static_cast<int>(side);
        }
        penc::write_pgm(p.filters, penc::export_filters(ckpt.params, h, w));
        run.write_manifest(p.filters);
    }

    if (!p.codes.empty()) {
        const penc::StoredDataset ds = penc::load_dataset(p.dataset);
        penc::EnergyConfig ecfg = ckpt.energy;
        if (p.lambda) ecfg.lambda = *p.lambda;
        if (p.l1_eps) ecfg.l1_eps = *p.l1_eps;
        std::vector<penc::ContextCode> codes(ds.sequences.size());
        for (std::size_t i = 0; i < ds.sequences.size(); ++i)
            codes[i] = penc::estimate_context(ckpt.params, ds.sequences[i], ckpt.neighborhood,
                                              ecfg, p.z_budget);
        penc::atomic_write_file(p.codes, penc::export_codes(codes, ds.labels));
        run.write_manifest(p.codes);
    }
    return 0;
}

// ---------------------------------------------------------------------------

void print_error(const std::string& what) {
    std::string line = what;
    std::replace(line.begin(), line.end(), '\n', ' ');
    std::fprintf(stderr, "error: %s\n", line.c_str());
}

int dispatch(const std::string& command, const std::string& config_path,
             const std::vector<std::string>& overrides, int threads) {
    try {
        Run run;
        run.command = command;
        run.threads = threads;
        run.config = parse_config_file(config_path);
        apply_overrides(run.config, overrides);
        run.seed = config_phase(
            [&] { return get_or<std::uint64_t>(run.config, "", "seed", 0); });

        if (command == "generate") return cmd_generate(run);
        if (command == "train") return cmd_train(run);
        if (command == "infer") return cmd_infer(run);
        if (command == "denoise") return cmd_denoise(run);
        if (command == "eval") return cmd_eval(run);
        if (command == "export") return cmd_export(run);
        throw penc::ConfigError("unknown command: " + command);
    } catch (const penc::ConfigError& e) {
        print_error(e.what());
        return 1;
    } catch (const penc::NonFiniteObjective& e) {
        print_error(e.what());
        return 3;
    } catch (const penc::Error& e) {
        print_error(e.what());
        return 2;
    } catch (const std::exception& e) {
        print_error(e.what());
        return 2;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-gated predictive encoder pipelines"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 1;

    const struct {
        const char* name;
        const char* help;
    } commands[] = {
        {"generate", "synthesize a labeled dataset (movies or chirps)"},
        {"train", "fit filters and gating weights on a dataset"},
        {"infer", "predict, interpolate, or roll out missing frames"},
        {"denoise", "clean noisy sequences by energy minimization"},
        {"eval", "decode transformation type and parameters from codes"},
        {"export", "write filter mosaics and code tables"},
    };
    for (const auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_path, "JSON run configuration")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--set", overrides,
                        "override a scalar config key: section.key=value (repeatable)");
        if (std::string(c.name) == "train")
            sub->add_option("--threads", threads, "context estimation worker threads")
                ->check(CLI::PositiveNumber);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error(e.what());
        return 1;
    }
    return dispatch(app.get_subcommands().front()->get_name(), config_path, overrides, threads);
}
