#pragma once

// Procedural generation of all desk-scale data: transformed image-patch
// movies with ground-truth labels, linear chirp sequences, band-pass noise
// textures, and noise utilities. Every generator is a pure function of its
// spec and seed; per-item seeds are derived, so parallel and serial
// generation agree.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "penc/errors.hpp"
#include "penc/model.hpp"
#include "penc/rng.hpp"

namespace penc {

using Image = Matrix; // rows = height, cols = width

enum class BorderMode {
    reflect, // mirror about the edge pixel (no edge repeat)
    circular // wrap around; translation by whole pixels becomes an exact roll
};

struct TransformLabel {
    enum class Kind { translation, rotation, scaling };
    Kind kind = Kind::translation;
    double dx = 0.0;     // pixels per frame
    double dy = 0.0;     // pixels per frame
    double dtheta = 0.0; // degrees per frame
    double ratio = 1.0;  // scale factor per frame

    /// The scalar transformation parameter regressed in evaluation.
    double primary_parameter() const {
        switch (kind) {
            case Kind::translation: return dx;
            case Kind::rotation: return dtheta;
            case Kind::scaling: return ratio;
        }
        return 0.0;
    }
};

namespace detail {

inline Eigen::Index border_index(Eigen::Index i, Eigen::Index n, BorderMode mode) {
    if (n == 1) return 0;
    if (mode == BorderMode::circular) {
        Eigen::Index m = i % n;
        return m < 0 ? m + n : m;
    }
    // Mirror without repeating the edge sample: ..., 2, 1, 0, 1, 2, ..., n-2, n-1, n-2, ...
    const Eigen::Index period = 2 * (n - 1);
    Eigen::Index m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

inline double bilinear_sample(const Image& img, double x, double y, BorderMode mode) {
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const Eigen::Index x0 = static_cast<Eigen::Index>(fx);
    const Eigen::Index y0 = static_cast<Eigen::Index>(fy);
    const double ax = x - fx;
    const double ay = y - fy;
    const Eigen::Index c0 = border_index(x0, img.cols(), mode);
    const Eigen::Index c1 = border_index(x0 + 1, img.cols(), mode);
    const Eigen::Index r0 = border_index(y0, img.rows(), mode);
    const Eigen::Index r1 = border_index(y0 + 1, img.rows(), mode);
    const double top = (1.0 - ax) * img(r0, c0) + ax * img(r0, c1);
    const double bottom = (1.0 - ax) * img(r1, c0) + ax * img(r1, c1);
    return (1.0 - ay) * top + ay * bottom;
}

/// Zero mean, unit population variance; near-constant input maps to zeros.
inline Vector standardize(const Vector& v) {
    const double mean = v.mean();
    const Vector centered = v.array() - mean;
    const double var = centered.squaredNorm() / static_cast<double>(v.size());
    const double sd = std::sqrt(var);
    if (sd < 1e-12) return Vector::Zero(v.size());
    return centered / sd;
}

} // namespace detail

/// Renders frame t of a patch movie: the source resampled under the t-fold
/// composition of the per-frame transform, center-cropped to
/// patch_size x patch_size, flattened row-major, then standardized to zero
/// mean and unit variance. Rotation and scaling act about the patch center;
/// resampling is bilinear with the requested border handling.
inline FrameSequence make_sequence(const Image& source, const TransformLabel& label,
                                   int num_frames, int patch_size,
                                   BorderMode border = BorderMode::reflect) {
    if (num_frames < 1) throw InvalidArgument("make_sequence: num_frames must be >= 1");
    if (patch_size < 1) throw InvalidArgument("make_sequence: patch_size must be >= 1");
    if (source.rows() < patch_size || source.cols() < patch_size)
        throw PatchOutOfBounds("make_sequence: source smaller than patch");

    const double pc = (patch_size - 1) / 2.0;
    const double cx = (static_cast<double>(source.cols()) - 1.0) / 2.0;
    const double cy = (static_cast<double>(source.rows()) - 1.0) / 2.0;

    FrameSequence seq;
    seq.frames.reserve(static_cast<std::size_t>(num_frames));
    for (int t = 0; t < num_frames; ++t) {
        Vector frame(patch_size * patch_size);
        for (int r = 0; r < patch_size; ++r) {
            for (int c = 0; c < patch_size; ++c) {
                const double u = c - pc;
                const double v = r - pc;
                double sx = 0.0, sy = 0.0;
                switch (label.kind) {
                    case TransformLabel::Kind::translation:
                        sx = u - t * label.dx;
                        sy = v - t * label.dy;
                        break;
                    case TransformLabel::Kind::rotation: {
                        const double theta = -t * label.dtheta * M_PI / 180.0;
                        const double ct = std::cos(theta);
                        const double st = std::sin(theta);
                        sx = ct * u - st * v;
                        sy = st * u + ct * v;
                        break;
                    }
                    case TransformLabel::Kind::scaling: {
                        const double s = std::pow(label.ratio, t);
                        if (!(s > 0)) throw InvalidArgument("make_sequence: scale ratio must be > 0");
                        sx = u / s;
                        sy = v / s;
                        break;
                    }
                }
                frame(r * patch_size + c) = detail::bilinear_sample(source, cx + sx, cy + sy, border);
            }
        }
        seq.frames.push_back(detail::standardize(frame));
    }
    seq.observed.assign(seq.frames.size(), 1);
    return seq;
}

/// Gaussian white noise convolved with a difference-of-Gaussians band-pass
/// kernel (sigma 1 and 2), standardized to zero mean and unit variance.
/// Self-contained stand-in for a natural-image bank.
inline Image procedural_texture(int size, std::uint64_t seed) {
    if (size < 8) throw InvalidArgument("procedural_texture: size must be >= 8");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Image noise(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) noise(r, c) = gauss(rng);

    auto gaussian_kernel = [](double sigma) {
        const int radius = static_cast<int>(std::ceil(3.0 * sigma));
        Vector k(2 * radius + 1);
        for (int i = -radius; i <= radius; ++i)
            k(i + radius) = std::exp(-0.5 * (i * i) / (sigma * sigma));
        return Vector(k / k.sum());
    };
    auto blur = [](const Image& img, const Vector& kernel) {
        const int radius = static_cast<int>(kernel.size() / 2);
        Image tmp(img.rows(), img.cols());
        for (Eigen::Index r = 0; r < img.rows(); ++r)
            for (Eigen::Index c = 0; c < img.cols(); ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel(k + radius) *
                           img(r, detail::border_index(c + k, img.cols(), BorderMode::reflect));
                tmp(r, c) = acc;
            }
        Image out(img.rows(), img.cols());
        for (Eigen::Index r = 0; r < img.rows(); ++r)
            for (Eigen::Index c = 0; c < img.cols(); ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += kernel(k + radius) *
                           tmp(detail::border_index(r + k, img.rows(), BorderMode::reflect), c);
                out(r, c) = acc;
            }
        return out;
    };

    Image dog = blur(noise, gaussian_kernel(1.0)) - blur(noise, gaussian_kernel(2.0));
    const double mean = dog.mean();
    dog.array() -= mean;
    const double sd = std::sqrt(dog.array().square().sum() / static_cast<double>(dog.size()));
    if (sd < 1e-12) return Image::Zero(size, size);
    return dog / sd;
}

struct MovieSpec {
    enum class Kind { translation, rotation, scaling, mixture };
    Kind kind = Kind::translation;
    int patch_size = 13;
    int num_frames = 3;
    int count = 0;
    std::uint64_t seed = 0;
    bool integer_shifts = false;
    BorderMode border = BorderMode::reflect;
    int texture_size = 64; // procedural source size when no image bank is given

    // Label ranges. Translation steps are uniform over [dx_min, dx_max] x
    // [dy_min, dy_max] (or the integer lattice inside it); rotation steps are
    // the multiples of rotation_step_deg within [-rotation_max_deg,
    // rotation_max_deg]; scale ratios are uniform over [scale_min, scale_max].
    double dx_min = -3.0, dx_max = 3.0;
    double dy_min = -3.0, dy_max = 3.0;
    double rotation_step_deg = 3.0;
    double rotation_max_deg = 21.0;
    double scale_min = 0.6, scale_max = 1.8;

    void validate() const {
        if (patch_size < 5) throw InvalidArgument("MovieSpec: patch_size must be >= 5");
        if (num_frames < 2) throw InvalidArgument("MovieSpec: num_frames must be >= 2");
        if (count < 0) throw InvalidArgument("MovieSpec: count must be >= 0");
        if (texture_size < patch_size)
            throw InvalidArgument("MovieSpec: texture_size must be >= patch_size");
        if (dx_min > dx_max || dy_min > dy_max)
            throw InvalidArgument("MovieSpec: empty translation range");
        if (!(rotation_step_deg > 0) || rotation_max_deg < 0)
            throw InvalidArgument("MovieSpec: bad rotation range");
        if (!(scale_min > 0) || scale_min > scale_max)
            throw InvalidArgument("MovieSpec: bad scale range");
    }
};

struct LabeledSequence {
    FrameSequence seq;
    TransformLabel label;
};

namespace detail {

inline constexpr std::uint64_t kStreamMovie = 0x51;
inline constexpr std::uint64_t kStreamTexture = 0x52;
inline constexpr std::uint64_t kStreamChirp = 0x53;
inline constexpr std::uint64_t kStreamNoise = 0x54;

inline TransformLabel draw_label(const MovieSpec& spec, MovieSpec::Kind kind,
                                 std::mt19937_64& rng) {
    TransformLabel label;
    switch (kind) {
        case MovieSpec::Kind::translation: {
            label.kind = TransformLabel::Kind::translation;
            if (spec.integer_shifts) {
                std::uniform_int_distribution<int> ux(static_cast<int>(std::ceil(spec.dx_min)),
                                                      static_cast<int>(std::floor(spec.dx_max)));
                std::uniform_int_distribution<int> uy(static_cast<int>(std::ceil(spec.dy_min)),
                                                      static_cast<int>(std::floor(spec.dy_max)));
                label.dx = ux(rng);
                label.dy = uy(rng);
            } else {
                std::uniform_real_distribution<double> ux(spec.dx_min, spec.dx_max);
                std::uniform_real_distribution<double> uy(spec.dy_min, spec.dy_max);
                label.dx = ux(rng);
                label.dy = uy(rng);
            }
            break;
        }
        case MovieSpec::Kind::rotation: {
            label.kind = TransformLabel::Kind::rotation;
            const int half = static_cast<int>(std::floor(spec.rotation_max_deg / spec.rotation_step_deg));
            std::uniform_int_distribution<int> u(-half, half);
            label.dtheta = u(rng) * spec.rotation_step_deg;
            break;
        }
        case MovieSpec::Kind::scaling: {
            label.kind = TransformLabel::Kind::scaling;
            std::uniform_real_distribution<double> u(spec.scale_min, spec.scale_max);
            label.ratio = u(rng);
            break;
        }
        case MovieSpec::Kind::mixture:
            throw InvalidArgument("draw_label: mixture resolved before drawing");
    }
    return label;
}

inline std::vector<LabeledSequence> sample_single_kind(const MovieSpec& spec, MovieSpec::Kind kind,
                                                       const std::vector<Image>& bank) {
    std::vector<LabeledSequence> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        const std::uint64_t si = derive_seed(spec.seed, kStreamMovie, static_cast<std::uint64_t>(i));
        std::mt19937_64 rng(si);
        const TransformLabel label = draw_label(spec, kind, rng);

        Image texture;
        const Image* source = nullptr;
        if (!bank.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
            source = &bank[pick(rng)];
        } else {
            texture = procedural_texture(spec.texture_size, derive_seed(si, kStreamTexture));
            source = &texture;
        }
        if (source->rows() < spec.patch_size || source->cols() < spec.patch_size)
            throw PatchOutOfBounds("sample_movie_dataset: bank image smaller than patch");

        // Window with transform margin, placed uniformly at random.
        const Eigen::Index want = 3 * static_cast<Eigen::Index>(spec.patch_size);
        const Eigen::Index win =
            std::min({want, source->rows(), source->cols()});
        std::uniform_int_distribution<Eigen::Index> ur(0, source->rows() - win);
        std::uniform_int_distribution<Eigen::Index> uc(0, source->cols() - win);
        const Eigen::Index r0 = ur(rng);
        const Eigen::Index c0 = uc(rng);
        const Image window = source->block(r0, c0, win, win);

        out.push_back({make_sequence(window, label, spec.num_frames, spec.patch_size, spec.border),
                       label});
    }
    return out;
}

} // namespace detail

/// Draws `count` labeled movies. Sources come from the image bank when one is
/// supplied, else from per-sequence procedural textures. Mixture mode
/// concatenates translation, rotation, and scaling sub-datasets generated
/// from derived seeds, counts split as evenly as possible.
inline std::vector<LabeledSequence> sample_movie_dataset(const MovieSpec& spec,
                                                         const std::vector<Image>& bank = {}) {
    spec.validate();
    if (spec.kind != MovieSpec::Kind::mixture) return detail::sample_single_kind(spec, spec.kind, bank);

    const int base = spec.count / 3;
    const int rem = spec.count % 3;
    const MovieSpec::Kind kinds[3] = {MovieSpec::Kind::translation, MovieSpec::Kind::rotation,
                                      MovieSpec::Kind::scaling};
    std::vector<LabeledSequence> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int k = 0; k < 3; ++k) {
        MovieSpec sub = spec;
        sub.kind = kinds[k];
        sub.count = base + (k < rem ? 1 : 0);
        sub.seed = derive_seed(spec.seed, 0x60 + static_cast<std::uint64_t>(k));
        auto part = detail::sample_single_kind(sub, sub.kind, bank);
        out.insert(out.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    return out;
}

struct ChirpSequence {
    FrameSequence seq; // 16 frames x 10 samples
    double f0 = 0.0;
    double f1 = 0.0;
    double phase = 0.0;
};

/// One linear chirp x(s) = sin(2 pi (f0 s + (f1 - f0)/2 s^2) + phi) sampled
/// at 160 Hz over one second, reshaped into 16 consecutive 10-vectors.
inline ChirpSequence make_chirp(double f0, double f1, double phase) {
    ChirpSequence chirp;
    chirp.f0 = f0;
    chirp.f1 = f1;
    chirp.phase = phase;
    chirp.seq.frames.assign(16, Vector(10));
    for (int k = 0; k < 160; ++k) {
        const double s = k / 160.0;
        const double x = std::sin(2.0 * M_PI * (f0 * s + 0.5 * (f1 - f0) * s * s) + phase);
        chirp.seq.frames[static_cast<std::size_t>(k / 10)](k % 10) = x;
    }
    chirp.seq.observed.assign(16, 1);
    return chirp;
}

/// Chirp dataset with f0 and f1 uniform on [15, 20] Hz and the phase uniform
/// on [0, 2 pi).
inline std::vector<ChirpSequence> make_chirp_dataset(int count, std::uint64_t seed) {
    if (count < 1) throw InvalidArgument("make_chirp_dataset: count must be >= 1");
    std::vector<ChirpSequence> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::mt19937_64 rng(derive_seed(seed, detail::kStreamChirp, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> uf(15.0, 20.0);
        std::uniform_real_distribution<double> up(0.0, 2.0 * M_PI);
        const double f0 = uf(rng);
        const double f1 = uf(rng);
        out.push_back(make_chirp(f0, f1, up(rng)));
    }
    return out;
}

/// Adds i.i.d. N(0, sigma^2) to every pixel of every observed frame.
inline FrameSequence add_gaussian_noise(const FrameSequence& seq, double sigma,
                                        std::uint64_t seed) {
    if (sigma < 0) throw InvalidArgument("add_gaussian_noise: sigma must be >= 0");
    FrameSequence out = seq;
    if (sigma == 0) return out;
    std::mt19937_64 rng(derive_seed(seed, detail::kStreamNoise));
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t t = 0; t < out.frames.size(); ++t) {
        if (!out.observed[t]) continue;
        for (Eigen::Index i = 0; i < out.frames[t].size(); ++i) out.frames[t](i) += noise(rng);
    }
    return out;
}

/// All length-`window` contiguous sub-sequences (stride `stride`) of each
/// input sequence, as fully observed sequences. Feeds fixed-N models from
/// longer recordings such as chirps.
inline std::vector<FrameSequence> window_sequences(const std::vector<FrameSequence>& seqs,
                                                   int window, int stride = 1) {
    if (window < 2) throw InvalidArgument("window_sequences: window must be >= 2");
    if (stride < 1) throw InvalidArgument("window_sequences: stride must be >= 1");
    std::vector<FrameSequence> out;
    for (const auto& seq : seqs) {
        seq.validate();
        if (!seq.fully_observed())
            throw InvalidArgument("window_sequences: sequences must be fully observed");
        for (int start = 0; start + window <= seq.size(); start += stride) {
            FrameSequence w;
            w.frames.assign(seq.frames.begin() + start, seq.frames.begin() + start + window);
            w.observed.assign(static_cast<std::size_t>(window), 1);
            out.push_back(std::move(w));
        }
    }
    return out;
}

} // namespace penc
