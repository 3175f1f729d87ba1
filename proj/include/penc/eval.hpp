#pragma once

// Quantitative evaluation: RMSE, histogram matching, linear decoding of the
// transformation type from context codes, linear regression of transformation
// parameters with relative-error CDFs, and artifact exports (filter mosaics,
// code tables).

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "penc/dataset_io.hpp"
#include "penc/model.hpp"
#include "penc/numerics.hpp"

namespace penc {

inline double rmse(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeMismatch("rmse: vectors differ in size");
    if (a.size() == 0) throw InvalidArgument("rmse: empty input");
    return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

inline double rmse(const FrameSequence& a, const FrameSequence& b) {
    if (a.size() != b.size() || a.dim() != b.dim())
        throw ShapeMismatch("rmse: sequences differ in shape");
    if (a.size() == 0 || a.dim() == 0) throw InvalidArgument("rmse: empty input");
    double ss = 0.0;
    for (int t = 0; t < a.size(); ++t)
        ss += (a.frames[static_cast<std::size_t>(t)] - b.frames[static_cast<std::size_t>(t)])
                  .squaredNorm();
    return std::sqrt(ss / static_cast<double>(a.size() * a.dim()));
}

/// Monotone rank remap: the k-th smallest output pixel receives the k-th
/// smallest reference value (ties broken by original index). The result's
/// sorted values equal the reference's sorted values exactly, so the remap is
/// idempotent.
inline Vector histogram_match(const Vector& output, const Vector& reference) {
    if (output.size() != reference.size())
        throw ShapeMismatch("histogram_match: sizes differ");
    if (output.size() == 0) throw InvalidArgument("histogram_match: empty input");
    const Eigen::Index n = output.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&output](Eigen::Index a, Eigen::Index b) { return output(a) < output(b); });
    std::vector<double> ref_sorted(reference.data(), reference.data() + n);
    std::sort(ref_sorted.begin(), ref_sorted.end());
    Vector out(n);
    for (Eigen::Index k = 0; k < n; ++k)
        out(order[static_cast<std::size_t>(k)]) = ref_sorted[static_cast<std::size_t>(k)];
    return out;
}

struct ClassifierModel {
    Matrix weights; // classes x (K+1), last column is the bias
    int num_classes() const { return static_cast<int>(weights.rows()); }
    Eigen::Index code_dim() const { return weights.cols() - 1; }
};

struct RegressorModel {
    Vector weights; // K+1, last entry is the bias
    Eigen::Index code_dim() const { return weights.size() - 1; }
};

namespace detail {

inline Vector augment(const Vector& z) {
    Vector a(z.size() + 1);
    a.head(z.size()) = z;
    a(z.size()) = 1.0;
    return a;
}

/// Mean multinomial negative log-likelihood plus an L2 penalty on every
/// weight including the bias; the penalty makes the objective strictly
/// convex, so the minimizer is unique.
struct SoftmaxObjective {
    const std::vector<Vector>& codes;
    const std::vector<int>& labels;
    int classes;
    Eigen::Index aug_dim;
    double l2;

    double operator()(const Vector& flat, Vector& grad) const {
        Eigen::Map<const Matrix> W(flat.data(), classes, aug_dim);
        Matrix G = Matrix::Zero(classes, aug_dim);
        double nll = 0.0;
        const double inv_n = 1.0 / static_cast<double>(codes.size());
        for (std::size_t i = 0; i < codes.size(); ++i) {
            const Vector a = augment(codes[i]);
            Vector logits = W * a;
            const double peak = logits.maxCoeff();
            const Vector ex = (logits.array() - peak).exp();
            const double norm = ex.sum();
            nll -= inv_n * (logits(labels[i]) - peak - std::log(norm));
            Vector p = ex / norm;
            p(labels[i]) -= 1.0;
            G.noalias() += inv_n * p * a.transpose();
        }
        nll += 0.5 * l2 * flat.squaredNorm();
        G += l2 * W;
        grad = Eigen::Map<const Vector>(G.data(), G.size());
        return nll;
    }
};

} // namespace detail

struct ClassifierOptions {
    double l2 = 1e-4;
    int max_iterations = 300;
    const Matrix* init = nullptr; // optional start point; zero when absent
};

/// Multinomial logistic regression decoder on context codes. The objective is
/// strictly convex, so training from any start reaches the same optimum.
inline ClassifierModel train_decoder_classify(const std::vector<ContextCode>& codes,
                                              const std::vector<int>& labels, int num_classes,
                                              const ClassifierOptions& opts = {}) {
    if (codes.empty() || codes.size() != labels.size())
        throw InvalidArgument("train_decoder_classify: need one label per code");
    if (num_classes < 2) throw SingleClass("train_decoder_classify: need >= 2 classes");
    std::vector<int> seen;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw IndexOutOfRange("train_decoder_classify: label out of range");
        if (codes[i].size() != codes.front().size())
            throw InconsistentShapes("train_decoder_classify: codes must share dim");
        if (std::find(seen.begin(), seen.end(), labels[i]) == seen.end()) seen.push_back(labels[i]);
    }
    if (seen.size() < 2) throw SingleClass("train_decoder_classify: only one class present");

    const Eigen::Index aug_dim = codes.front().size() + 1;
    detail::SoftmaxObjective obj{codes, labels, num_classes, aug_dim, opts.l2};
    Vector x0 = Vector::Zero(num_classes * aug_dim);
    if (opts.init) {
        if (opts.init->rows() != num_classes || opts.init->cols() != aug_dim)
            throw ShapeMismatch("train_decoder_classify: init shape mismatch");
        x0 = Eigen::Map<const Vector>(opts.init->data(), opts.init->size());
    }
    MinimizeOptions mopts;
    mopts.max_iterations = opts.max_iterations;
    mopts.gradient_tolerance = 1e-10;
    const MinimizeResult res = lbfgs_minimize(
        [&obj](const Vector& w, Vector& g) { return obj(w, g); }, x0, mopts);
    ClassifierModel model;
    model.weights = Eigen::Map<const Matrix>(res.x.data(), num_classes, aug_dim);
    return model;
}

inline Vector classify_logits(const ClassifierModel& model, const ContextCode& z) {
    if (z.size() != model.code_dim())
        throw DimensionMismatch("classify: code dim does not match decoder");
    return model.weights * detail::augment(z);
}

inline int classify(const ClassifierModel& model, const ContextCode& z) {
    Eigen::Index best;
    classify_logits(model, z).maxCoeff(&best);
    return static_cast<int>(best);
}

inline double classification_accuracy(const ClassifierModel& model,
                                      const std::vector<ContextCode>& codes,
                                      const std::vector<int>& labels) {
    if (codes.empty() || codes.size() != labels.size())
        throw InvalidArgument("classification_accuracy: need one label per code");
    int hits = 0;
    for (std::size_t i = 0; i < codes.size(); ++i)
        if (classify(model, codes[i]) == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(codes.size());
}

/// Rows are true classes, columns predicted; row sums equal per-class counts.
inline Eigen::MatrixXi confusion_matrix(const ClassifierModel& model,
                                        const std::vector<ContextCode>& codes,
                                        const std::vector<int>& labels) {
    if (codes.size() != labels.size())
        throw InvalidArgument("confusion_matrix: need one label per code");
    Eigen::MatrixXi cm = Eigen::MatrixXi::Zero(model.num_classes(), model.num_classes());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= model.num_classes())
            throw IndexOutOfRange("confusion_matrix: label out of range");
        cm(labels[i], classify(model, codes[i])) += 1;
    }
    return cm;
}

/// Ordinary least squares of a scalar transformation parameter on the code,
/// with bias, via the normal equations.
inline RegressorModel train_decoder_regress(const std::vector<ContextCode>& codes,
                                            const std::vector<double>& targets) {
    if (codes.empty() || codes.size() != targets.size())
        throw InvalidArgument("train_decoder_regress: need one target per code");
    const Eigen::Index aug_dim = codes.front().size() + 1;
    Matrix H = Matrix::Zero(aug_dim, aug_dim);
    Vector g = Vector::Zero(aug_dim);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i].size() != codes.front().size())
            throw InconsistentShapes("train_decoder_regress: codes must share dim");
        const Vector a = detail::augment(codes[i]);
        H.noalias() += a * a.transpose();
        g.noalias() -= targets[i] * a;
    }
    RegressorModel model;
    try {
        model.weights = solve_quadratic(H, g);
    } catch (const SingularSystem& e) {
        throw DegenerateDesign(std::string("train_decoder_regress: ") + e.what());
    }
    return model;
}

inline double regress(const RegressorModel& model, const ContextCode& z) {
    if (z.size() != model.code_dim())
        throw DimensionMismatch("regress: code dim does not match decoder");
    return model.weights.dot(detail::augment(z));
}

/// |truth - pred| / |truth|; callers must exclude near-zero ground truth.
inline double relative_error(double pred, double truth) {
    if (truth == 0) throw InvalidArgument("relative_error: ground truth must be nonzero");
    return std::abs(truth - pred) / std::abs(truth);
}

/// Sorted relative errors; the empirical CDF sample.
inline std::vector<double> relative_error_cdf(const RegressorModel& model,
                                              const std::vector<ContextCode>& codes,
                                              const std::vector<double>& truths) {
    if (codes.size() != truths.size())
        throw InvalidArgument("relative_error_cdf: need one truth per code");
    std::vector<double> errs;
    errs.reserve(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i)
        errs.push_back(relative_error(regress(model, codes[i]), truths[i]));
    std::sort(errs.begin(), errs.end());
    return errs;
}

/// Filter mosaic: one row per hidden unit, one column per frame; each cell is
/// that unit's W_t row reshaped to patch_h x patch_w and min-max normalized
/// to [0, 255] (flat filters render mid-gray 128). Cells are separated by
/// 1-pixel black gaps.
inline Image export_filters(const ModelParams& params, int patch_h, int patch_w) {
    params.validate();
    if (patch_h < 1 || patch_w < 1) throw InvalidArgument("export_filters: bad patch shape");
    if (patch_h * patch_w != params.frame_dim())
        throw ShapeMismatch("export_filters: patch shape must match frame dim");
    const int gap = 1;
    const int bank = static_cast<int>(params.hidden_dim());
    const int n = params.num_frames();
    Image grid = Image::Zero(bank * patch_h + (bank + 1) * gap, n * patch_w + (n + 1) * gap);
    for (int b = 0; b < bank; ++b) {
        for (int t = 0; t < n; ++t) {
            const Vector row = params.W[static_cast<std::size_t>(t)].row(b);
            const double lo = row.minCoeff();
            const double hi = row.maxCoeff();
            const double range = hi - lo;
            const int r0 = gap + b * (patch_h + gap);
            const int c0 = gap + t * (patch_w + gap);
            for (int r = 0; r < patch_h; ++r)
                for (int c = 0; c < patch_w; ++c) {
                    const double v = row(r * patch_w + c);
                    grid(r0 + r, c0 + c) = range < 1e-12 ? 128.0 : 255.0 * ((v - lo) / range);
                }
        }
    }
    return grid;
}

/// Code table CSV: one row per code, columns z1..zK, then "kind", then the
/// sorted union of numeric label fields (blank where a label lacks a field).
inline std::string export_codes(const std::vector<ContextCode>& codes,
                                const std::vector<nlohmann::json>& labels) {
    if (codes.size() != labels.size())
        throw InvalidArgument("export_codes: need one label per code");
    if (codes.empty()) throw InvalidArgument("export_codes: empty input");
    const Eigen::Index k = codes.front().size();
    std::vector<std::string> numeric_keys;
    for (const auto& label : labels)
        for (const auto& [key, value] : label.items())
            if (value.is_number() &&
                std::find(numeric_keys.begin(), numeric_keys.end(), key) == numeric_keys.end())
                numeric_keys.push_back(key);
    std::sort(numeric_keys.begin(), numeric_keys.end());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> head;
    for (Eigen::Index i = 0; i < k; ++i) head.push_back("z" + std::to_string(i + 1));
    head.push_back("kind");
    for (const auto& key : numeric_keys) head.push_back(key);
    rows.push_back(std::move(head));

    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i].size() != k) throw InconsistentShapes("export_codes: codes must share dim");
        std::vector<std::string> row;
        for (Eigen::Index j = 0; j < k; ++j) row.push_back(format_double(codes[i](j)));
        row.push_back(labels[i].value("kind", std::string()));
        for (const auto& key : numeric_keys) {
            const auto it = labels[i].find(key);
            row.push_back(it != labels[i].end() && it->is_number()
                              ? format_double(it->get<double>())
                              : std::string());
        }
        rows.push_back(std::move(row));
    }
    return csv_from_rows(rows);
}

} // namespace penc
