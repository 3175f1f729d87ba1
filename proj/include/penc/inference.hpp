#pragma once

// Partial-observation inference. A missing frame x_u and the context z are
// estimated by alternating two exact subproblem solves: bounded L-BFGS in z,
// and a closed-form quadratic solve in x_u. Prediction (hole at the end),
// interpolation (interior hole), autoregressive rollout, and sequence
// denoising all reduce to this alternation.
//
// The tracked objective is the full energy with the current x_u estimate
// treated as observed (plus the mu-weighted data term when denoising). Both
// half-steps minimize it over their own block, so it never increases; every
// result carries the trace so callers can assert monotonicity.

#include <algorithm>
#include <vector>

#include "penc/model.hpp"
#include "penc/numerics.hpp"
#include "penc/training.hpp"

namespace penc {

struct InferConfig {
    int outer_iterations = 50; // alternation budget
    int z_budget = 25;         // L-BFGS iterations per z-step
    double tolerance = 1e-7;   // stop when relative energy improvement drops below
    double lambda = 0.1;
    double l1_eps = 1e-6;

    void validate() const {
        if (outer_iterations < 1) throw InvalidArgument("InferConfig: outer_iterations must be >= 1");
        if (z_budget < 1) throw InvalidArgument("InferConfig: z_budget must be >= 1");
        if (tolerance < 0) throw InvalidArgument("InferConfig: tolerance must be >= 0");
        if (lambda < 0) throw InvalidArgument("InferConfig: lambda must be >= 0");
        if (!(l1_eps > 0)) throw InvalidArgument("InferConfig: l1_eps must be > 0");
    }

    EnergyConfig energy_config() const { return EnergyConfig{lambda, l1_eps}; }
};

struct DenoiseConfig : InferConfig {
    double mu = 4.0; // weight of the |noisy - x|^2 data term

    void validate() const {
        InferConfig::validate();
        if (!(mu > 0)) throw InvalidArgument("DenoiseConfig: mu must be > 0");
    }
};

struct InferResult {
    Vector frame;
    ContextCode z;
    double final_energy = 0.0;
    std::vector<double> objective_trace; // value at init, then after every half-step
};

namespace detail {

/// Normal matrix and right-hand side of the quadratic in x_u formed by every
/// energy term that touches x_u: the direct residual at t=u (contributing I
/// and xhat_u) and each synthesis term with u in N(t) (contributing A_t^T A_t
/// and A_t^T (x_t - b_t), where xhat_t = A_t x_u + b_t).
struct FrameSystem {
    Matrix H;
    Vector rhs;
};

inline FrameSystem frame_system(const ModelParams& params, const std::vector<Vector>& frames,
                                const NeighborhoodSpec& nb, const Vector& gain, int u) {
    const Eigen::Index dim = params.frame_dim();
    const std::size_t ui = static_cast<std::size_t>(u);
    FrameSystem sys{Matrix::Identity(dim, dim), Vector::Zero(dim)};

    const Vector y_u = hidden_from_frames(params, frames, nb, u);
    sys.rhs += params.W[ui].transpose() * y_u.cwiseProduct(gain);

    for (int t = 0; t < nb.num_frames(); ++t) {
        if (t == u) continue;
        const auto& support = nb.neighbors[static_cast<std::size_t>(t)];
        if (std::find(support.begin(), support.end(), u) == support.end()) continue;
        const std::size_t ti = static_cast<std::size_t>(t);
        const double c = 1.0 / static_cast<double>(support.size());
        Vector m = Vector::Zero(params.hidden_dim());
        for (int tau : support)
            if (tau != u) m += params.W[static_cast<std::size_t>(tau)] * frames[static_cast<std::size_t>(tau)];
        m *= c;
        const Matrix A = c * params.W[ti].transpose() * gain.asDiagonal() * params.W[ui];
        const Vector b = params.W[ti].transpose() * gain.cwiseProduct(m);
        sys.H.noalias() += A.transpose() * A;
        sys.rhs.noalias() += A.transpose() * (frames[ti] - b);
    }
    return sys;
}

inline int find_single_hole(const FrameSequence& seq) {
    int hole = -1;
    for (int t = 0; t < seq.size(); ++t) {
        if (seq.is_observed(t)) continue;
        if (hole >= 0)
            throw MultipleMissingFrames("infer_missing_frame: more than one unobserved frame");
        hole = t;
    }
    if (hole < 0) throw NoMissingFrame("infer_missing_frame: no unobserved frame");
    return hole;
}

} // namespace detail

/// Exact minimizer over x_u of the energy terms involving x_u, with z fixed
/// and every other frame observed.
inline Vector solve_for_frame(const ModelParams& params, const FrameSequence& seq,
                              const NeighborhoodSpec& nb, const ContextCode& z, int u) {
    detail::check_frame_index(u, seq.size(), "solve_for_frame");
    if (z.size() != params.context_dim())
        throw DimensionMismatch("solve_for_frame: context code dim must equal cols(Wz)");
    for (int t = 0; t < seq.size(); ++t)
        if (t != u && !seq.is_observed(t))
            throw MissingNeighbor("solve_for_frame: frame " + std::to_string(t) +
                                  " is unobserved");
    const detail::FrameSystem sys = detail::frame_system(params, seq.frames, nb, params.Wz * z, u);
    return solve_quadratic(sys.H, Vector(-sys.rhs));
}

/// Joint estimation of one missing frame and the context code. x_u starts at
/// the mean of its neighborhood, z at zero; alternation stops when the
/// relative energy improvement of a full outer iteration falls below
/// `tolerance` or the iteration budget runs out.
inline InferResult infer_missing_frame(const ModelParams& params, const FrameSequence& seq,
                                       const NeighborhoodSpec& nb, const InferConfig& cfg) {
    cfg.validate();
    seq.validate();
    if (seq.size() != params.num_frames() || nb.num_frames() != params.num_frames())
        throw InconsistentShapes("infer_missing_frame: sequence/neighborhood/model frame counts differ");
    const int u = detail::find_single_hole(seq);
    const EnergyConfig ecfg = cfg.energy_config();

    FrameSequence work = seq;
    const auto& support_u = nb.neighbors[static_cast<std::size_t>(u)];
    Vector x0 = Vector::Zero(seq.dim());
    for (int tau : support_u) x0 += work.frames[static_cast<std::size_t>(tau)];
    work.frames[static_cast<std::size_t>(u)] = x0 / static_cast<double>(support_u.size());
    work.observed[static_cast<std::size_t>(u)] = 1;

    InferResult res;
    res.z = Vector::Zero(params.context_dim());
    double current = energy(params, work, nb, res.z, ecfg);
    if (!std::isfinite(current)) throw NonFiniteObjective("infer_missing_frame: non-finite energy");
    res.objective_trace.push_back(current);

    for (int it = 0; it < cfg.outer_iterations; ++it) {
        const double round_start = current;

        res.z = estimate_context(params, work, nb, ecfg, cfg.z_budget, &res.z);
        current = energy(params, work, nb, res.z, ecfg);
        res.objective_trace.push_back(current);

        work.frames[static_cast<std::size_t>(u)] = solve_for_frame(params, work, nb, res.z, u);
        current = energy(params, work, nb, res.z, ecfg);
        res.objective_trace.push_back(current);

        if (!std::isfinite(current))
            throw NonFiniteObjective("infer_missing_frame: non-finite energy");
        if (round_start - current <= cfg.tolerance * std::max(1.0, std::abs(round_start))) break;
    }
    res.frame = work.frames[static_cast<std::size_t>(u)];
    res.final_energy = current;
    return res;
}

/// Prediction wrapper: hole at the last index.
inline InferResult predict_next(const ModelParams& params, const std::vector<Vector>& observed,
                                const NeighborhoodSpec& nb, const InferConfig& cfg) {
    if (static_cast<int>(observed.size()) != params.num_frames() - 1)
        throw InconsistentShapes("predict_next: need exactly N-1 observed frames");
    FrameSequence seq;
    seq.frames = observed;
    seq.frames.push_back(Vector::Zero(observed.empty() ? 0 : observed.front().size()));
    seq.observed.assign(seq.frames.size(), 1);
    seq.observed.back() = 0;
    return infer_missing_frame(params, seq, nb, cfg);
}

/// Interpolation wrapper: hole between `before` and `after`.
inline InferResult interpolate(const ModelParams& params, const std::vector<Vector>& before,
                               const std::vector<Vector>& after, const NeighborhoodSpec& nb,
                               const InferConfig& cfg) {
    if (static_cast<int>(before.size() + after.size()) != params.num_frames() - 1)
        throw InconsistentShapes("interpolate: before+after must total N-1 frames");
    if (before.empty()) throw InvalidArgument("interpolate: hole must be interior (before empty)");
    if (after.empty()) throw InvalidArgument("interpolate: hole must be interior (after empty)");
    FrameSequence seq;
    seq.frames = before;
    seq.frames.push_back(Vector::Zero(before.front().size()));
    seq.frames.insert(seq.frames.end(), after.begin(), after.end());
    seq.observed.assign(seq.frames.size(), 1);
    seq.observed[before.size()] = 0;
    return infer_missing_frame(params, seq, nb, cfg);
}

/// Autoregressive rollout: repeatedly predict the next frame from the most
/// recent N-1 frames (observed or previously predicted). Returns the horizon
/// new frames; z is re-estimated at every step.
inline std::vector<Vector> rollout(const ModelParams& params, const std::vector<Vector>& seed_frames,
                                   const NeighborhoodSpec& nb, const InferConfig& cfg, int horizon) {
    if (horizon < 1) throw InvalidArgument("rollout: horizon must be >= 1");
    const std::size_t window = static_cast<std::size_t>(params.num_frames() - 1);
    if (seed_frames.size() < window)
        throw InconsistentShapes("rollout: need at least N-1 seed frames");
    std::vector<Vector> track = seed_frames;
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(horizon));
    for (int h = 0; h < horizon; ++h) {
        std::vector<Vector> recent(track.end() - static_cast<std::ptrdiff_t>(window), track.end());
        InferResult step = predict_next(params, recent, nb, cfg);
        track.push_back(step.frame);
        out.push_back(std::move(step.frame));
    }
    return out;
}

struct DenoiseResult {
    FrameSequence cleaned;
    ContextCode z;
    double final_objective = 0.0;
    std::vector<double> objective_trace; // init, then after every z-step and frame solve
};

/// Block-coordinate descent on energy(x, z) + mu * sum_t |noisy_t - x_t|^2.
/// The z-step reuses estimate_context (the mu term is constant in z); the
/// x-step sweeps frames in order, each solved exactly with mu*I added to the
/// normal matrix and mu*noisy_u to the right-hand side.
inline DenoiseResult denoise_sequence(const ModelParams& params, const FrameSequence& noisy,
                                      const NeighborhoodSpec& nb, const DenoiseConfig& cfg) {
    cfg.validate();
    noisy.validate();
    if (!noisy.fully_observed())
        throw InvalidArgument("denoise_sequence: all frames must be observed");
    if (noisy.size() != params.num_frames() || nb.num_frames() != params.num_frames())
        throw InconsistentShapes("denoise_sequence: sequence/neighborhood/model frame counts differ");
    const EnergyConfig ecfg = cfg.energy_config();

    DenoiseResult res;
    res.cleaned = noisy;
    res.z = Vector::Zero(params.context_dim());

    auto objective = [&](const ContextCode& z) {
        double fidelity = 0.0;
        for (int t = 0; t < noisy.size(); ++t)
            fidelity += (noisy.frames[static_cast<std::size_t>(t)] -
                         res.cleaned.frames[static_cast<std::size_t>(t)])
                            .squaredNorm();
        return energy(params, res.cleaned, nb, z, ecfg) + cfg.mu * fidelity;
    };

    double current = objective(res.z);
    if (!std::isfinite(current)) throw NonFiniteObjective("denoise_sequence: non-finite objective");
    res.objective_trace.push_back(current);

    for (int it = 0; it < cfg.outer_iterations; ++it) {
        const double round_start = current;

        res.z = estimate_context(params, res.cleaned, nb, ecfg, cfg.z_budget, &res.z);
        current = objective(res.z);
        res.objective_trace.push_back(current);

        const Vector gain = params.Wz * res.z;
        for (int u = 0; u < res.cleaned.size(); ++u) {
            detail::FrameSystem sys = detail::frame_system(params, res.cleaned.frames, nb, gain, u);
            sys.H.diagonal().array() += cfg.mu;
            sys.rhs += cfg.mu * noisy.frames[static_cast<std::size_t>(u)];
            res.cleaned.frames[static_cast<std::size_t>(u)] = solve_quadratic(sys.H, Vector(-sys.rhs));
            current = objective(res.z);
            res.objective_trace.push_back(current);
        }

        if (!std::isfinite(current))
            throw NonFiniteObjective("denoise_sequence: non-finite objective");
        if (round_start - current <= cfg.tolerance * std::max(1.0, std::abs(round_start))) break;
    }
    res.final_objective = current;
    return res;
}

} // namespace penc
