#pragma once

// The context-gated predictive encoder.
//
// A sequence of N frames x_t (dim D) is analyzed by per-frame filter banks
// W_t (B x D). The hidden activation for frame t averages the filtered
// neighbors,
//
//     y_t = 1/|N(t)| * sum_{tau in N(t)} W_tau x_tau,
//
// and synthesis is gated element-wise by a context code z (dim K) through the
// feedback matrix Wz (B x K):
//
//     xhat_t = W_t^T (y_t . (Wz z)).
//
// The neighborhood N(t) never contains t itself, so xhat_t is a prediction of
// x_t from its surround. The energy sums squared residuals over every frame
// whose full neighborhood is observed, plus a smoothed-L1 sparsity penalty on
// z. All gradients below are analytic; the test suite checks each against
// central finite differences.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "penc/errors.hpp"
#include "penc/numerics.hpp"

namespace penc {

using ContextCode = Vector;

struct ModelParams {
    std::vector<Matrix> W; // N matrices, each B x D
    Matrix Wz;             // B x K

    int num_frames() const { return static_cast<int>(W.size()); }
    Eigen::Index hidden_dim() const { return W.empty() ? 0 : W.front().rows(); }
    Eigen::Index frame_dim() const { return W.empty() ? 0 : W.front().cols(); }
    Eigen::Index context_dim() const { return Wz.cols(); }

    void validate() const {
        if (W.size() < 2) throw InvalidArgument("ModelParams: need at least 2 frame filters");
        for (const auto& Wt : W) {
            if (Wt.rows() != hidden_dim() || Wt.cols() != frame_dim())
                throw InconsistentShapes("ModelParams: frame filters must share one shape");
            if (!Wt.allFinite()) throw InvalidArgument("ModelParams: non-finite filter entries");
        }
        if (Wz.rows() != hidden_dim())
            throw InconsistentShapes("ModelParams: Wz row count must equal hidden dim");
        if (!Wz.allFinite()) throw InvalidArgument("ModelParams: non-finite Wz entries");
    }
};

/// Fan-scaled uniform initialization: W_t ~ U[-a, a] with a = sqrt(6/(B+D)),
/// Wz likewise with a = sqrt(6/(B+K)). Keeps initial activations O(1).
inline ModelParams init_params(int num_frames, Eigen::Index hidden, Eigen::Index dim,
                               Eigen::Index context, std::uint64_t seed) {
    if (num_frames < 2) throw InvalidArgument("init_params: num_frames must be >= 2");
    std::mt19937_64 rng(seed);
    auto fill = [&rng](Matrix& m, double a) {
        std::uniform_real_distribution<double> u(-a, a);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    };
    ModelParams params;
    params.W.resize(num_frames);
    const double a_frame = std::sqrt(6.0 / static_cast<double>(hidden + dim));
    for (auto& Wt : params.W) {
        Wt.resize(hidden, dim);
        fill(Wt, a_frame);
    }
    params.Wz.resize(hidden, context);
    fill(params.Wz, std::sqrt(6.0 / static_cast<double>(hidden + context)));
    return params;
}

/// Zero-filled parameter block of the same shape, used for gradients and
/// SGD velocity.
inline ModelParams zeros_like(const ModelParams& params) {
    ModelParams out;
    out.W.reserve(params.W.size());
    for (const auto& Wt : params.W) out.W.push_back(Matrix::Zero(Wt.rows(), Wt.cols()));
    out.Wz = Matrix::Zero(params.Wz.rows(), params.Wz.cols());
    return out;
}

/// dst += scale * src, elementwise over the whole parameter block.
inline void add_scaled(ModelParams& dst, const ModelParams& src, double scale) {
    if (dst.W.size() != src.W.size() || dst.Wz.rows() != src.Wz.rows() ||
        dst.Wz.cols() != src.Wz.cols())
        throw ShapeMismatch("add_scaled: parameter blocks differ in shape");
    for (std::size_t t = 0; t < dst.W.size(); ++t) dst.W[t] += scale * src.W[t];
    dst.Wz += scale * src.Wz;
}

/// For each frame index t, the index set N(t) of frames supporting y_t.
/// Invariant: t is never in N(t) and no N(t) is empty.
struct NeighborhoodSpec {
    std::vector<std::vector<int>> neighbors;

    int num_frames() const { return static_cast<int>(neighbors.size()); }

    /// N(t) = {0..N-1} \ {t}; the spatial-context default.
    static NeighborhoodSpec full(int n) {
        NeighborhoodSpec spec;
        spec.neighbors.resize(n);
        for (int t = 0; t < n; ++t)
            for (int s = 0; s < n; ++s)
                if (s != t) spec.neighbors[t].push_back(s);
        spec.validate();
        return spec;
    }

    /// Frames within temporal distance r, excluding t.
    static NeighborhoodSpec radius(int n, int r) {
        NeighborhoodSpec spec;
        spec.neighbors.resize(n);
        for (int t = 0; t < n; ++t)
            for (int s = std::max(0, t - r); s <= std::min(n - 1, t + r); ++s)
                if (s != t) spec.neighbors[t].push_back(s);
        spec.validate();
        return spec;
    }

    /// Up to `depth` preceding frames. Frame 0 has no past, so it is
    /// supported by frame 1 to keep every neighborhood non-empty.
    static NeighborhoodSpec causal(int n, int depth) {
        NeighborhoodSpec spec;
        spec.neighbors.resize(n);
        for (int t = 1; t < n; ++t)
            for (int s = std::max(0, t - depth); s < t; ++s) spec.neighbors[t].push_back(s);
        if (n > 1) spec.neighbors[0].push_back(1);
        spec.validate();
        return spec;
    }

    void validate() const {
        const int n = num_frames();
        if (n < 2) throw InvalidArgument("NeighborhoodSpec: need at least 2 frames");
        for (int t = 0; t < n; ++t) {
            if (neighbors[t].empty())
                throw InvalidArgument("NeighborhoodSpec: empty neighborhood at frame " +
                                      std::to_string(t));
            for (int s : neighbors[t]) {
                if (s < 0 || s >= n)
                    throw IndexOutOfRange("NeighborhoodSpec: neighbor index out of range");
                if (s == t)
                    throw InvalidArgument("NeighborhoodSpec: frame " + std::to_string(t) +
                                          " lists itself as neighbor");
            }
        }
    }
};

/// An ordered list of frames with a per-frame observed mask.
struct FrameSequence {
    std::vector<Vector> frames;
    std::vector<std::uint8_t> observed; // 1 = observed

    FrameSequence() = default;
    explicit FrameSequence(std::vector<Vector> f)
        : frames(std::move(f)), observed(frames.size(), 1) {}

    int size() const { return static_cast<int>(frames.size()); }
    Eigen::Index dim() const { return frames.empty() ? 0 : frames.front().size(); }
    bool is_observed(int t) const { return observed[static_cast<std::size_t>(t)] != 0; }
    bool fully_observed() const {
        for (auto o : observed)
            if (!o) return false;
        return true;
    }

    void validate() const {
        if (frames.size() != observed.size())
            throw InconsistentShapes("FrameSequence: mask length must match frame count");
        for (std::size_t t = 0; t < frames.size(); ++t) {
            if (frames[t].size() != dim())
                throw InconsistentShapes("FrameSequence: frames must share one dim");
            if (observed[t] && !frames[t].allFinite())
                throw InvalidArgument("FrameSequence: observed frame has non-finite entries");
        }
    }
};

struct EnergyConfig {
    double lambda = 0.1; // sparsity weight; 0 permitted as a degenerate test mode
    double l1_eps = 1e-6;

    void validate() const {
        if (lambda < 0) throw InvalidArgument("EnergyConfig: lambda must be >= 0");
        if (!(l1_eps > 0)) throw InvalidArgument("EnergyConfig: l1_eps must be > 0");
    }
};

namespace detail {

inline void check_frame_index(int t, int n, const char* where) {
    if (t < 0 || t >= n) throw IndexOutOfRange(std::string(where) + ": frame index out of range");
}

/// y_t from an explicit frame list (no observedness checks).
inline Vector hidden_from_frames(const ModelParams& params, const std::vector<Vector>& frames,
                                 const NeighborhoodSpec& nb, int t) {
    const auto& support = nb.neighbors[static_cast<std::size_t>(t)];
    Vector y = Vector::Zero(params.hidden_dim());
    for (int tau : support) y += params.W[static_cast<std::size_t>(tau)] * frames[static_cast<std::size_t>(tau)];
    y /= static_cast<double>(support.size());
    return y;
}

/// Frames whose residual is computable: the target frame is observed and the
/// whole analysis neighborhood is observed. Residuals of other frames are
/// dropped from the energy, which keeps the objective well-defined under
/// partial observation.
inline std::vector<int> residual_frames(const FrameSequence& analysis, const FrameSequence& target,
                                        const NeighborhoodSpec& nb) {
    std::vector<int> included;
    for (int t = 0; t < analysis.size(); ++t) {
        if (!target.is_observed(t)) continue;
        bool supported = true;
        for (int tau : nb.neighbors[static_cast<std::size_t>(t)])
            if (!analysis.is_observed(tau)) {
                supported = false;
                break;
            }
        if (supported) included.push_back(t);
    }
    return included;
}

/// Everything the energy and its gradients share for one evaluation point.
/// `analysis` drives the hidden activations; residuals are taken against
/// `target`. The two coincide except during denoising-style training.
struct Forward {
    Vector gain;                  // Wz z
    std::vector<int> terms;       // residual frame indices
    std::vector<Vector> y;        // indexed by frame, filled for `terms`
    std::vector<Vector> residual; // x_t - xhat_t, indexed by frame
    double data_term = 0.0;

    Forward(const ModelParams& params, const FrameSequence& analysis, const FrameSequence& target,
            const NeighborhoodSpec& nb, const ContextCode& z) {
        if (z.size() != params.context_dim())
            throw DimensionMismatch("energy: context code dim must equal cols(Wz)");
        gain = params.Wz * z;
        terms = residual_frames(analysis, target, nb);
        y.resize(static_cast<std::size_t>(analysis.size()));
        residual.resize(static_cast<std::size_t>(analysis.size()));
        for (int t : terms) {
            y[static_cast<std::size_t>(t)] = hidden_from_frames(params, analysis.frames, nb, t);
            Vector xhat = params.W[static_cast<std::size_t>(t)].transpose() *
                          y[static_cast<std::size_t>(t)].cwiseProduct(gain);
            residual[static_cast<std::size_t>(t)] = target.frames[static_cast<std::size_t>(t)] - xhat;
            data_term += residual[static_cast<std::size_t>(t)].squaredNorm();
        }
    }
};

} // namespace detail

/// Hidden activation y_t, the averaged filtered input from N(t).
inline Vector hidden_activation(const ModelParams& params, const FrameSequence& seq,
                                const NeighborhoodSpec& nb, int t) {
    detail::check_frame_index(t, seq.size(), "hidden_activation");
    for (int tau : nb.neighbors[static_cast<std::size_t>(t)])
        if (!seq.is_observed(tau))
            throw MissingNeighbor("hidden_activation: neighbor frame " + std::to_string(tau) +
                                  " is unobserved");
    return detail::hidden_from_frames(params, seq.frames, nb, t);
}

/// The context gain vector Wz z that rescales each hidden unit's synthesis.
inline Vector modulation(const ModelParams& params, const ContextCode& z) {
    if (z.size() != params.context_dim())
        throw DimensionMismatch("modulation: context code dim must equal cols(Wz)");
    return params.Wz * z;
}

/// xhat_t = W_t^T (y_t . Wz z); bilinear in (frames, z).
inline Vector predict_frame(const ModelParams& params, const FrameSequence& seq,
                            const NeighborhoodSpec& nb, const ContextCode& z, int t) {
    const Vector y = hidden_activation(params, seq, nb, t);
    return params.W[static_cast<std::size_t>(t)].transpose() * y.cwiseProduct(modulation(params, z));
}

struct EnergyBreakdown {
    double data_term = 0.0;
    double sparsity_term = 0.0;
    double total = 0.0;
};

inline EnergyBreakdown energy_terms(const ModelParams& params, const FrameSequence& seq,
                                    const NeighborhoodSpec& nb, const ContextCode& z,
                                    const EnergyConfig& cfg) {
    detail::Forward fwd(params, seq, seq, nb, z);
    EnergyBreakdown out;
    out.data_term = fwd.data_term;
    out.sparsity_term = cfg.lambda > 0 ? cfg.lambda * smoothed_l1(z, cfg.l1_eps).first : 0.0;
    out.total = out.data_term + out.sparsity_term;
    return out;
}

/// L = sum_t |x_t - xhat_t|^2 + lambda * smoothed_l1(z), summed over every
/// frame whose full neighborhood is observed.
inline double energy(const ModelParams& params, const FrameSequence& seq,
                     const NeighborhoodSpec& nb, const ContextCode& z, const EnergyConfig& cfg) {
    return energy_terms(params, seq, nb, z, cfg).total;
}

namespace detail {

inline Vector grad_z_from_forward(const ModelParams& params, const Forward& fwd,
                                  const ContextCode& z, const EnergyConfig& cfg) {
    Vector grad = Vector::Zero(params.context_dim());
    for (int t : fwd.terms) {
        const Vector wr = params.W[static_cast<std::size_t>(t)] * fwd.residual[static_cast<std::size_t>(t)];
        grad.noalias() += -2.0 * params.Wz.transpose() * fwd.y[static_cast<std::size_t>(t)].cwiseProduct(wr);
    }
    if (cfg.lambda > 0) grad += cfg.lambda * smoothed_l1(z, cfg.l1_eps).second;
    return grad;
}

inline ModelParams grad_params_from_forward(const ModelParams& params, const FrameSequence& analysis,
                                            const Forward& fwd, const ContextCode& z,
                                            const NeighborhoodSpec& nb) {
    ModelParams grad = zeros_like(params);
    for (int t : fwd.terms) {
        const std::size_t ti = static_cast<std::size_t>(t);
        const Vector wr = params.W[ti] * fwd.residual[ti];   // W_t r_t
        const Vector ywr = fwd.y[ti].cwiseProduct(wr);       // y_t . W_t r_t
        // Synthesis path: W_t appears in xhat_t.
        grad.W[ti].noalias() += -2.0 * fwd.y[ti].cwiseProduct(fwd.gain) * fwd.residual[ti].transpose();
        grad.Wz.noalias() += -2.0 * ywr * z.transpose();
        // Analysis path: W_s feeds y_t for every s in N(t).
        const auto& support = nb.neighbors[ti];
        const double scale = -2.0 / static_cast<double>(support.size());
        const Vector gwr = fwd.gain.cwiseProduct(wr);        // g . W_t r_t
        for (int s : support)
            grad.W[static_cast<std::size_t>(s)].noalias() +=
                scale * gwr * analysis.frames[static_cast<std::size_t>(s)].transpose();
    }
    return grad;
}

} // namespace detail

/// Gradient of the energy with respect to the context code.
inline Vector energy_grad_z(const ModelParams& params, const FrameSequence& seq,
                            const NeighborhoodSpec& nb, const ContextCode& z,
                            const EnergyConfig& cfg) {
    detail::Forward fwd(params, seq, seq, nb, z);
    return detail::grad_z_from_forward(params, fwd, z, cfg);
}

/// Gradient with respect to every W_t and Wz. Each W_t accumulates both its
/// synthesis role in xhat_t and its analysis role in y_tau for every tau with
/// t in N(tau).
inline ModelParams energy_grad_params(const ModelParams& params, const FrameSequence& seq,
                                      const NeighborhoodSpec& nb, const ContextCode& z,
                                      const EnergyConfig& /*cfg*/) {
    detail::Forward fwd(params, seq, seq, nb, z);
    return detail::grad_params_from_forward(params, seq, fwd, z, nb);
}

/// Gradient of sum_{t in N(u) u {u}} |x_t - xhat_t|^2 with respect to x_u:
/// the direct residual at t=u plus every synthesis term where u supports y_t.
inline Vector energy_grad_frame(const ModelParams& params, const FrameSequence& seq,
                                const NeighborhoodSpec& nb, const ContextCode& z,
                                const EnergyConfig& /*cfg*/, int u) {
    detail::check_frame_index(u, seq.size(), "energy_grad_frame");
    detail::Forward fwd(params, seq, seq, nb, z);
    const std::size_t ui = static_cast<std::size_t>(u);
    Vector grad = Vector::Zero(seq.dim());
    for (int t : fwd.terms) {
        const std::size_t ti = static_cast<std::size_t>(t);
        if (t == u) {
            grad += 2.0 * fwd.residual[ti];
            continue;
        }
        const auto& support = nb.neighbors[ti];
        if (std::find(support.begin(), support.end(), u) == support.end()) continue;
        const Vector wr = params.W[ti] * fwd.residual[ti];
        grad.noalias() += (-2.0 / static_cast<double>(support.size())) * params.W[ui].transpose() *
                          fwd.gain.cwiseProduct(wr);
    }
    return grad;
}

} // namespace penc
