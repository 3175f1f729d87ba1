#pragma once

// Unsupervised training: EM-like alternation of minibatch SGD-with-momentum
// parameter updates and per-sequence context estimation by bounded L-BFGS.
// Context estimates persist across epochs (warm start). With corruption
// enabled, corrupted frames drive the hidden activations while residual
// targets stay clean.

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "penc/io_util.hpp"
#include "penc/model.hpp"
#include "penc/numerics.hpp"
#include "penc/rng.hpp"

namespace penc {

struct CorruptionSpec {
    enum class Kind { none, gaussian, mask };
    Kind kind = Kind::none;
    double sigma = 0.0;       // gaussian
    double probability = 0.0; // mask

    void validate() const {
        if (kind == Kind::gaussian && sigma < 0)
            throw InvalidArgument("CorruptionSpec: sigma must be >= 0");
        if (kind == Kind::mask && (probability < 0 || probability > 1))
            throw InvalidArgument("CorruptionSpec: probability must be in [0,1]");
    }
};

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.5;
    int batch_size = 10;
    int epochs = 1;
    int z_lbfgs_steps = 5;
    double lambda = 0.1;
    double l1_eps = 1e-6;
    CorruptionSpec corruption;
    std::uint64_t seed = 0;
    int threads = 1; // parallel context estimation; results identical to serial

    void validate() const {
        // learning_rate 0 and epochs 0 are degenerate but well-defined modes
        // (frozen parameters, initialization-only checkpoint).
        if (learning_rate < 0) throw InvalidArgument("TrainConfig: learning_rate must be >= 0");
        if (momentum < 0 || momentum >= 1)
            throw InvalidArgument("TrainConfig: momentum must be in [0,1)");
        if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
        if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
        if (z_lbfgs_steps < 1) throw InvalidArgument("TrainConfig: z_lbfgs_steps must be >= 1");
        if (lambda < 0) throw InvalidArgument("TrainConfig: lambda must be >= 0");
        if (!(l1_eps > 0)) throw InvalidArgument("TrainConfig: l1_eps must be > 0");
        if (threads < 1) throw InvalidArgument("TrainConfig: threads must be >= 1");
        corruption.validate();
    }

    EnergyConfig energy_config() const { return EnergyConfig{lambda, l1_eps}; }
};

struct TrainHistory {
    std::vector<double> energy; // per-epoch mean over dataset
    std::vector<double> data_term;
    std::vector<double> sparsity_term;
    std::vector<double> seconds; // wall clock, excluded from determinism contracts

    std::size_t size() const { return energy.size(); }
};

namespace detail {

/// Energy in z with hidden activations precomputed (frames fixed during the
/// z-subproblem). Term order and arithmetic mirror Forward exactly so the
/// closure value agrees bitwise with energy() at the same point.
struct ContextObjective {
    const ModelParams& params;
    const FrameSequence& target;
    std::vector<int> terms;
    std::vector<Vector> y;
    EnergyConfig cfg;

    ContextObjective(const ModelParams& p, const FrameSequence& analysis,
                     const FrameSequence& tgt, const NeighborhoodSpec& nb, const EnergyConfig& c)
        : params(p), target(tgt), cfg(c) {
        terms = residual_frames(analysis, tgt, nb);
        y.resize(static_cast<std::size_t>(analysis.size()));
        for (int t : terms)
            y[static_cast<std::size_t>(t)] = hidden_from_frames(p, analysis.frames, nb, t);
    }

    double value_grad(const Vector& z, Vector& grad) const {
        const Vector gain = params.Wz * z;
        double data = 0.0;
        grad = Vector::Zero(params.context_dim());
        for (int t : terms) {
            const std::size_t ti = static_cast<std::size_t>(t);
            Vector xhat = params.W[ti].transpose() * y[ti].cwiseProduct(gain);
            Vector r = target.frames[ti] - xhat;
            data += r.squaredNorm();
            grad.noalias() += -2.0 * params.Wz.transpose() * y[ti].cwiseProduct(params.W[ti] * r);
        }
        if (cfg.lambda > 0) {
            auto [sv, sg] = smoothed_l1(z, cfg.l1_eps);
            grad += cfg.lambda * sg;
            return data + cfg.lambda * sv;
        }
        return data;
    }
};

inline ContextCode estimate_context_pair(const ModelParams& params, const FrameSequence& analysis,
                                         const FrameSequence& target, const NeighborhoodSpec& nb,
                                         const EnergyConfig& cfg, int budget,
                                         const ContextCode& z0) {
    ContextObjective obj(params, analysis, target, nb, cfg);
    MinimizeOptions opts;
    opts.max_iterations = budget;
    auto f = [&obj](const Vector& z, Vector& grad) { return obj.value_grad(z, grad); };
    return lbfgs_minimize(f, z0, opts).x;
}

} // namespace detail

/// Minimizes the energy over z with parameters and frames held fixed, for at
/// most `budget` L-BFGS iterations. Starts from `z0` when given (warm start),
/// else from zero. The returned code never has higher energy than the start.
inline ContextCode estimate_context(const ModelParams& params, const FrameSequence& seq,
                                    const NeighborhoodSpec& nb, const EnergyConfig& cfg, int budget,
                                    const ContextCode* z0 = nullptr) {
    if (budget < 1) throw InvalidArgument("estimate_context: budget must be >= 1");
    const Vector start = z0 ? *z0 : Vector(Vector::Zero(params.context_dim()));
    if (start.size() != params.context_dim())
        throw DimensionMismatch("estimate_context: warm-start dim must equal cols(Wz)");
    return detail::estimate_context_pair(params, seq, seq, nb, cfg, budget, start);
}

/// One minibatch entry: `analysis` drives y_t, residuals are taken against
/// `target`. The two coincide unless corruption is active.
struct BatchItem {
    FrameSequence analysis;
    FrameSequence target;
    ContextCode code;

    BatchItem(const FrameSequence& seq, ContextCode z)
        : analysis(seq), target(seq), code(std::move(z)) {}
    BatchItem(FrameSequence corrupted, FrameSequence clean, ContextCode z)
        : analysis(std::move(corrupted)), target(std::move(clean)), code(std::move(z)) {}
};

/// velocity <- -eta * sum_batch grad + nu * velocity; params <- params + velocity.
/// The batch gradient is the sum (not mean) of per-sequence gradients.
inline void sgd_step(ModelParams& params, const std::vector<BatchItem>& batch,
                     const NeighborhoodSpec& nb, ModelParams& velocity, const TrainConfig& cfg) {
    cfg.validate();
    if (velocity.W.size() != params.W.size() || velocity.Wz.rows() != params.Wz.rows() ||
        velocity.Wz.cols() != params.Wz.cols())
        throw ShapeMismatch("sgd_step: velocity shape must match params");
    for (std::size_t t = 0; t < params.W.size(); ++t)
        if (velocity.W[t].rows() != params.W[t].rows() || velocity.W[t].cols() != params.W[t].cols())
            throw ShapeMismatch("sgd_step: velocity shape must match params");
    ModelParams grad = zeros_like(params);
    for (const auto& item : batch) {
        detail::Forward fwd(params, item.analysis, item.target, nb, item.code);
        add_scaled(grad, detail::grad_params_from_forward(params, item.analysis, fwd, item.code, nb),
                   1.0);
    }
    for (std::size_t t = 0; t < velocity.W.size(); ++t)
        velocity.W[t] = -cfg.learning_rate * grad.W[t] + cfg.momentum * velocity.W[t];
    velocity.Wz = -cfg.learning_rate * grad.Wz + cfg.momentum * velocity.Wz;
    add_scaled(params, velocity, 1.0);
}

/// Applies input corruption to every observed frame. Gaussian mode adds
/// i.i.d. N(0, sigma^2) per pixel; mask mode zeroes each pixel independently
/// with the given probability.
inline FrameSequence corrupt(const FrameSequence& seq, const CorruptionSpec& mode,
                             std::mt19937_64& rng) {
    mode.validate();
    FrameSequence out = seq;
    if (mode.kind == CorruptionSpec::Kind::none) return out;
    if (mode.kind == CorruptionSpec::Kind::gaussian) {
        if (mode.sigma == 0) return out;
        std::normal_distribution<double> noise(0.0, mode.sigma);
        for (std::size_t t = 0; t < out.frames.size(); ++t) {
            if (!out.observed[t]) continue;
            for (Eigen::Index i = 0; i < out.frames[t].size(); ++i) out.frames[t](i) += noise(rng);
        }
        return out;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t t = 0; t < out.frames.size(); ++t) {
        if (!out.observed[t]) continue;
        for (Eigen::Index i = 0; i < out.frames[t].size(); ++i)
            if (u(rng) < mode.probability) out.frames[t](i) = 0.0;
    }
    return out;
}

struct ModelShape {
    Eigen::Index hidden;  // B
    Eigen::Index context; // K

    void validate() const {
        if (hidden < 1) throw InvalidArgument("ModelShape: hidden must be >= 1");
        if (context < 1) throw InvalidArgument("ModelShape: context must be >= 1");
    }
};

struct TrainResult {
    ModelParams params;
    TrainHistory history;
    std::vector<ContextCode> codes; // final per-sequence context estimates
};

/// Called after each completed epoch; epoch is 1-based.
using EpochCallback = std::function<void(int epoch, const ModelParams&, const TrainHistory&)>;

namespace detail {

// Seed-stream tags so corruption, shuffling, and initialization draw from
// disjoint RNG streams.
inline constexpr std::uint64_t kStreamInit = 0x11;
inline constexpr std::uint64_t kStreamShuffle = 0x22;
inline constexpr std::uint64_t kStreamCorrupt = 0x33;

/// Runs fn(i) for i in [0, n) on `threads` workers with a static block
/// partition. Each index is processed exactly once, so results are identical
/// to the serial loop as long as fn(i) touches only slot i.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Full training loop. Per minibatch: one sgd_step with the current context
/// codes, then re-estimate each sequence's code (warm-started) against the
/// updated parameters. Minibatch order reshuffles every epoch from the seed.
inline TrainResult train(const std::vector<FrameSequence>& dataset, const ModelShape& shape,
                         const NeighborhoodSpec& nb, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
    cfg.validate();
    shape.validate();
    if (dataset.empty()) throw EmptyDataset("train: dataset is empty");
    const int n_frames = dataset.front().size();
    const Eigen::Index dim = dataset.front().dim();
    for (const auto& seq : dataset) {
        seq.validate();
        if (seq.size() != n_frames || seq.dim() != dim)
            throw InconsistentShapes("train: sequences must share frame count and dim");
    }
    if (nb.num_frames() != n_frames)
        throw InconsistentShapes("train: neighborhood frame count must match sequences");

    const EnergyConfig ecfg = cfg.energy_config();
    const int m = static_cast<int>(dataset.size());

    TrainResult out;
    out.params = init_params(n_frames, shape.hidden, dim, shape.context,
                             derive_seed(cfg.seed, detail::kStreamInit));
    out.codes.assign(static_cast<std::size_t>(m), Vector::Zero(shape.context));
    ModelParams velocity = zeros_like(out.params);

    const bool corrupting = cfg.corruption.kind != CorruptionSpec::Kind::none;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        const std::vector<int> order =
            shuffled_indices(m, derive_seed(cfg.seed, detail::kStreamShuffle, static_cast<std::uint64_t>(epoch)));

        for (int begin = 0; begin < m; begin += cfg.batch_size) {
            const int end = std::min(m, begin + cfg.batch_size);
            std::vector<BatchItem> batch;
            batch.reserve(static_cast<std::size_t>(end - begin));
            for (int k = begin; k < end; ++k) {
                const int i = order[static_cast<std::size_t>(k)];
                const auto& clean = dataset[static_cast<std::size_t>(i)];
                if (corrupting) {
                    std::mt19937_64 rng(derive_seed(
                        cfg.seed, detail::kStreamCorrupt,
                        static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(m) +
                            static_cast<std::uint64_t>(i)));
                    batch.emplace_back(corrupt(clean, cfg.corruption, rng), clean,
                                       out.codes[static_cast<std::size_t>(i)]);
                } else {
                    batch.emplace_back(clean, out.codes[static_cast<std::size_t>(i)]);
                }
            }

            sgd_step(out.params, batch, nb, velocity, cfg);

            detail::parallel_for(end - begin, cfg.threads, [&](int slot) {
                const int i = order[static_cast<std::size_t>(begin + slot)];
                const auto& item = batch[static_cast<std::size_t>(slot)];
                out.codes[static_cast<std::size_t>(i)] = detail::estimate_context_pair(
                    out.params, item.analysis, item.target, nb, ecfg, cfg.z_lbfgs_steps,
                    out.codes[static_cast<std::size_t>(i)]);
            });
        }

        // Epoch metrics on clean data with the current codes, so epochs are
        // comparable whether or not corruption is active.
        double sum_data = 0.0, sum_sparse = 0.0;
        for (int i = 0; i < m; ++i) {
            const EnergyBreakdown eb = energy_terms(out.params, dataset[static_cast<std::size_t>(i)],
                                                    nb, out.codes[static_cast<std::size_t>(i)], ecfg);
            sum_data += eb.data_term;
            sum_sparse += eb.sparsity_term;
        }
        if (!std::isfinite(sum_data))
            throw NonFiniteObjective("train: non-finite energy at epoch " + std::to_string(epoch + 1));
        out.history.data_term.push_back(sum_data / m);
        out.history.sparsity_term.push_back(sum_sparse / m);
        out.history.energy.push_back((sum_data + sum_sparse) / m);
        out.history.seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());
        if (on_epoch) on_epoch(epoch + 1, out.params, out.history);
    }
    return out;
}

/// History CSV: epoch,energy,data_term,sparsity_term,seconds. The seconds
/// column is wall clock and is the one column exempt from byte-identity
/// across reruns.
inline std::string history_to_csv(const TrainHistory& history) {
    std::ostringstream out;
    out.precision(17);
    out << "epoch,energy,data_term,sparsity_term,seconds\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
        out << (e + 1) << ',' << history.energy[e] << ',' << history.data_term[e] << ','
            << history.sparsity_term[e] << ',' << history.seconds[e] << '\n';
    }
    return out.str();
}

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    atomic_write_file(path, history_to_csv(history));
}

} // namespace penc
