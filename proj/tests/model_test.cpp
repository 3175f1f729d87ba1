#include "penc/model.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "penc/checkpoint.hpp"
#include "test_support.hpp"

namespace penc {
namespace {

EnergyConfig lambda_cfg(double lambda, double eps = 1e-6) {
    EnergyConfig cfg;
    cfg.lambda = lambda;
    cfg.l1_eps = eps;
    return cfg;
}

TEST(NeighborhoodSpec, FullExcludesSelfAndCoversTheRest) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(4);
    ASSERT_EQ(nb.num_frames(), 4);
    for (int t = 0; t < 4; ++t) {
        EXPECT_EQ(nb.neighbors[t].size(), 3u);
        for (int s : nb.neighbors[t]) EXPECT_NE(s, t);
    }
}

TEST(NeighborhoodSpec, RadiusClipsAtSequenceEnds) {
    const NeighborhoodSpec nb = NeighborhoodSpec::radius(5, 1);
    EXPECT_EQ(nb.neighbors[0], (std::vector<int>{1}));
    EXPECT_EQ(nb.neighbors[2], (std::vector<int>{1, 3}));
    EXPECT_EQ(nb.neighbors[4], (std::vector<int>{3}));
}

TEST(NeighborhoodSpec, CausalUsesPastOnlyExceptAtTheStart) {
    const NeighborhoodSpec nb = NeighborhoodSpec::causal(4, 2);
    EXPECT_EQ(nb.neighbors[0], (std::vector<int>{1})); // no past; supported by the future frame
    EXPECT_EQ(nb.neighbors[1], (std::vector<int>{0}));
    EXPECT_EQ(nb.neighbors[2], (std::vector<int>{0, 1}));
    EXPECT_EQ(nb.neighbors[3], (std::vector<int>{1, 2}));
}

TEST(NeighborhoodSpec, ValidationRejectsDegenerateSpecs) {
    NeighborhoodSpec self;
    self.neighbors = {{1}, {1}};
    EXPECT_THROW(self.validate(), InvalidArgument); // frame 1 lists itself
    NeighborhoodSpec empty;
    empty.neighbors = {{1}, {}};
    EXPECT_THROW(empty.validate(), InvalidArgument);
    NeighborhoodSpec range;
    range.neighbors = {{1}, {2}};
    EXPECT_THROW(range.validate(), IndexOutOfRange);
}

TEST(HiddenActivation, AverageOfEqualNeighborsIsThatVector) {
    const ModelParams params = test::identity_gated_params(4, 2);
    Vector v(4);
    v << 0.5, -1.0, 2.0, 0.25;
    const FrameSequence seq = test::constant_sequence(3, v);
    const Vector y = hidden_activation(params, seq, NeighborhoodSpec::full(3), 1);
    EXPECT_EQ(y, v); // (v + v) / 2 is exact
}

TEST(HiddenActivation, SingletonNeighborhoodIsPlainFiltering) {
    const ModelParams params = test::make_random_params(3, 4, 6, 2, 1);
    const FrameSequence seq = test::make_random_sequence(3, 6, 2);
    NeighborhoodSpec nb;
    nb.neighbors = {{1}, {0}, {1}};
    const Vector y = hidden_activation(params, seq, nb, 2);
    EXPECT_LE((y - params.W[1] * seq.frames[1]).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(HiddenActivation, MatchesScalarLoopOracle) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 3);
    const FrameSequence seq = test::make_random_sequence(3, 6, 4);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    for (int t = 0; t < 3; ++t) {
        const Vector y = hidden_activation(params, seq, nb, t);
        for (Eigen::Index b = 0; b < 4; ++b) {
            double acc = 0.0;
            for (int tau : nb.neighbors[t])
                for (Eigen::Index i = 0; i < 6; ++i) acc += params.W[tau](b, i) * seq.frames[tau](i);
            acc /= static_cast<double>(nb.neighbors[t].size());
            EXPECT_NEAR(y(b), acc, 1e-12);
        }
    }
}

TEST(HiddenActivation, ThrowsWhenANeighborIsUnobserved) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 5);
    FrameSequence seq = test::make_random_sequence(3, 6, 6);
    seq.observed[2] = 0;
    EXPECT_THROW(hidden_activation(params, seq, NeighborhoodSpec::full(3), 0), MissingNeighbor);
    EXPECT_THROW(hidden_activation(params, seq, NeighborhoodSpec::full(3), 5), IndexOutOfRange);
}

TEST(Modulation, LinearInZWithIdentityCases) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 7);
    EXPECT_EQ(modulation(params, Vector::Zero(3)), Vector::Zero(4));
    ModelParams identity = params;
    identity.Wz = Matrix::Identity(4, 4);
    Vector e2 = Vector::Zero(4);
    e2(1) = 1.0;
    EXPECT_EQ(modulation(identity, e2), e2);
    EXPECT_THROW(modulation(params, Vector::Zero(5)), DimensionMismatch);
}

TEST(PredictFrame, IdentityGatedAveragingReproducesNeighborMean) {
    const ModelParams params = test::identity_gated_params(5, 3);
    FrameSequence seq = test::make_random_sequence(3, 5, 8);
    Vector z = Vector::Zero(3);
    z(0) = 1.0;
    const Vector xhat = predict_frame(params, seq, NeighborhoodSpec::full(3), z, 1);
    const Vector expected = (seq.frames[0] + seq.frames[2]) / 2.0;
    EXPECT_LE((xhat - expected).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(PredictFrame, BilinearInFramesAndCode) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 9);
    const FrameSequence seq = test::make_random_sequence(3, 6, 10);
    const Vector z = test::make_random_code(3, 11);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const Vector base = predict_frame(params, seq, nb, z, 0);

    EXPECT_EQ(predict_frame(params, seq, nb, Vector::Zero(3), 0), Vector::Zero(6));

    FrameSequence scaled = seq;
    for (auto& f : scaled.frames) f *= 2.0;
    EXPECT_LE((predict_frame(params, scaled, nb, z, 0) - 2.0 * base).lpNorm<Eigen::Infinity>(),
              1e-12);
    EXPECT_LE((predict_frame(params, seq, nb, Vector(2.0 * z), 0) - 2.0 * base)
                  .lpNorm<Eigen::Infinity>(),
              1e-12);
}

TEST(PredictFrame, SelfExclusionHoldsExactly) {
    // Perturbing x_t must not change xhat_t: t is outside its own neighborhood.
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 12);
    FrameSequence seq = test::make_random_sequence(3, 6, 13);
    const Vector z = test::make_random_code(3, 14);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const Vector before = predict_frame(params, seq, nb, z, 1);
    seq.frames[1].array() += 5.0;
    const Vector after = predict_frame(params, seq, nb, z, 1);
    EXPECT_EQ(before, after);
}

TEST(Energy, PerfectReconstructionHasZeroEnergy) {
    const ModelParams params = test::identity_gated_params(4, 3);
    Vector v(4);
    v << 1.0, -2.0, 0.5, 3.0;
    const FrameSequence seq = test::constant_sequence(3, v);
    Vector z = Vector::Zero(3);
    z(0) = 1.0;
    EXPECT_EQ(energy(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.0)), 0.0);
}

TEST(Energy, PureSparsityTermEqualsK) {
    const ModelParams params = test::identity_gated_params(4, 3);
    const FrameSequence seq = test::constant_sequence(3, Vector::Zero(4));
    const Vector z = Vector::Ones(3);
    // Gain is Wz * ones = ones (only column 0 is nonzero), frames are zero, so
    // the data term vanishes and only the smoothed sparsity term remains.
    const double e = energy(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(1.0, 1e-12));
    EXPECT_NEAR(e, 3.0, 1e-9);
}

TEST(Energy, MatchesScalarLoopOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelParams params = test::make_random_params(3, 4, 6, 3, 20 + seed);
        const FrameSequence seq = test::make_random_sequence(3, 6, 30 + seed);
        const Vector z = test::make_random_code(3, 40 + seed);
        const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
        const double got = energy(params, seq, nb, z, lambda_cfg(0.1));
        const double want = test::scalar_energy_oracle(params, seq, nb, z, 0.1, 1e-6);
        EXPECT_NEAR(got, want, 1e-10);
    }
}

TEST(Energy, DecomposesIntoDataAndSparsity) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 50);
    const FrameSequence seq = test::make_random_sequence(3, 6, 51);
    const Vector z = test::make_random_code(3, 52);
    const EnergyBreakdown eb =
        energy_terms(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.7));
    EXPECT_GE(eb.data_term, 0.0);
    EXPECT_GE(eb.sparsity_term, 0.0);
    EXPECT_EQ(eb.total, eb.data_term + eb.sparsity_term);
    EXPECT_EQ(eb.total, energy(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.7)));
}

TEST(Energy, DropsResidualsWithUnobservedNeighbors) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 53);
    FrameSequence seq = test::make_random_sequence(3, 6, 54);
    seq.observed[2] = 0;
    const Vector z = test::make_random_code(3, 55);

    // Full context: every residual needs frame 2, so only sparsity remains.
    const double full = energy(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.3));
    EXPECT_NEAR(full, 0.3 * smoothed_l1(z, 1e-6).first, 1e-12);

    // Radius 1: only frame 0's residual (neighborhood {1}) is computable.
    const NeighborhoodSpec nb = NeighborhoodSpec::radius(3, 1);
    const Vector xhat0 = predict_frame(params, seq, nb, z, 0);
    const double expected = (seq.frames[0] - xhat0).squaredNorm() + 0.3 * smoothed_l1(z, 1e-6).first;
    EXPECT_NEAR(energy(params, seq, nb, z, lambda_cfg(0.3)), expected, 1e-12);
}

TEST(EnergyGradZ, MatchesFiniteDifferencesOnRandomInstances) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const EnergyConfig cfg = lambda_cfg(0.1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ModelParams params = test::make_random_params(3, 8, 16, 5, 60 + seed);
        const FrameSequence seq = test::make_random_sequence(3, 16, 90 + seed);
        const Vector z = test::make_random_code(5, 120 + seed);
        const Vector analytic = energy_grad_z(params, seq, nb, z, cfg);
        const Vector fd = finite_difference_gradient(
            [&](const Vector& zz) { return energy(params, seq, nb, zz, cfg); }, z);
        EXPECT_LE(test::max_relative_error(analytic, fd), 1e-4) << "seed " << seed;
    }
}

TEST(EnergyGradZ, VanishesAtTheUnpenalizedMinimizer) {
    // With lambda = 0 the objective is quadratic in z; solve it exactly and
    // check the first-order condition.
    const ModelParams params = test::make_random_params(3, 6, 8, 4, 200);
    const FrameSequence seq = test::make_random_sequence(3, 8, 201);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    Matrix h = Matrix::Zero(4, 4);
    Vector g = Vector::Zero(4);
    for (int t = 0; t < 3; ++t) {
        const Vector y = hidden_activation(params, seq, nb, t);
        const Matrix m = params.W[t].transpose() * y.asDiagonal() * params.Wz;
        h += 2.0 * m.transpose() * m;
        g -= 2.0 * m.transpose() * seq.frames[t];
    }
    const Vector z_star = solve_quadratic(h, g);
    const Vector grad = energy_grad_z(params, seq, nb, z_star, lambda_cfg(0.0));
    EXPECT_LE(grad.lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(EnergyGradZ, DataTermIsLinearInResiduals) {
    // Doubling every residual (shifting targets while the analysis frames
    // stay fixed) doubles the data-term gradient.
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 210);
    const FrameSequence seq = test::make_random_sequence(3, 6, 211);
    const Vector z = test::make_random_code(3, 212);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const EnergyConfig cfg = lambda_cfg(0.0);

    detail::Forward base(params, seq, seq, nb, z);
    FrameSequence doubled_targets = seq;
    for (int t = 0; t < 3; ++t) doubled_targets.frames[t] += base.residual[t];
    detail::Forward doubled(params, seq, doubled_targets, nb, z);

    const Vector g1 = detail::grad_z_from_forward(params, base, z, cfg);
    const Vector g2 = detail::grad_z_from_forward(params, doubled, z, cfg);
    EXPECT_LE((g2 - 2.0 * g1).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(EnergyGradParams, MatchesFiniteDifferencesEveryEntry) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const EnergyConfig cfg = lambda_cfg(0.1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ModelParams params = test::make_random_params(3, 8, 16, 5, 300 + seed);
        const FrameSequence seq = test::make_random_sequence(3, 16, 330 + seed);
        const Vector z = test::make_random_code(5, 360 + seed);
        const ModelParams analytic = energy_grad_params(params, seq, nb, z, cfg);
        const Vector fd = finite_difference_gradient(
            [&](const Vector& flat) {
                return energy(test::unpack_params(flat, params), seq, nb, z, cfg);
            },
            test::pack_params(params));
        EXPECT_LE(test::max_relative_error(test::pack_params(analytic), fd), 1e-4)
            << "seed " << seed;
    }
}

TEST(EnergyGradParams, ZeroResidualInstanceHasZeroDataGradient) {
    const ModelParams params = test::identity_gated_params(4, 3);
    Vector v(4);
    v << 2.0, -1.0, 0.5, 1.5;
    const FrameSequence seq = test::constant_sequence(3, v);
    Vector z = Vector::Zero(3);
    z(0) = 1.0;
    const ModelParams grad =
        energy_grad_params(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.0));
    for (const auto& g : grad.W) EXPECT_EQ(g.lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_EQ(grad.Wz.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(EnergyGradParams, WzGradientVanishesAtZeroCode) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 400);
    const FrameSequence seq = test::make_random_sequence(3, 6, 401);
    const ModelParams grad = energy_grad_params(params, seq, NeighborhoodSpec::full(3),
                                                Vector::Zero(3), lambda_cfg(0.1));
    EXPECT_EQ(grad.Wz.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(EnergyGradFrame, MatchesFiniteDifferences) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    const EnergyConfig cfg = lambda_cfg(0.1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ModelParams params = test::make_random_params(3, 8, 16, 5, 500 + seed);
        const FrameSequence seq = test::make_random_sequence(3, 16, 530 + seed);
        const Vector z = test::make_random_code(5, 560 + seed);
        const int u = static_cast<int>(seed % 3);
        const Vector analytic = energy_grad_frame(params, seq, nb, z, cfg, u);
        const Vector fd = finite_difference_gradient(
            [&](const Vector& xu) {
                FrameSequence probe = seq;
                probe.frames[u] = xu;
                return energy(params, probe, nb, z, cfg);
            },
            seq.frames[u]);
        EXPECT_LE(test::max_relative_error(analytic, fd), 1e-4) << "seed " << seed;
    }
}

TEST(EnergyGradFrame, ZeroCodeLeavesOnlyTheDirectTerm) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 600);
    const FrameSequence seq = test::make_random_sequence(3, 6, 601);
    const Vector grad =
        energy_grad_frame(params, seq, NeighborhoodSpec::full(3), Vector::Zero(3), lambda_cfg(0.1), 1);
    // With z = 0 every synthesis path vanishes: grad = 2 (x_u - 0).
    EXPECT_LE((grad - 2.0 * seq.frames[1]).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(EnergyGradFrame, ZeroAtPerfectReconstruction) {
    const ModelParams params = test::identity_gated_params(4, 2);
    Vector v(4);
    v << 1.0, 0.5, -0.5, 2.0;
    const FrameSequence seq = test::constant_sequence(3, v);
    Vector z = Vector::Zero(2);
    z(0) = 1.0;
    const Vector grad =
        energy_grad_frame(params, seq, NeighborhoodSpec::full(3), z, lambda_cfg(0.0), 1);
    EXPECT_EQ(grad.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(InitParams, DeterministicAndFanScaled) {
    const ModelParams a = init_params(3, 8, 16, 5, 77);
    const ModelParams b = init_params(3, 8, 16, 5, 77);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(a.W[t], b.W[t]);
    EXPECT_EQ(a.Wz, b.Wz);
    const double bound_w = std::sqrt(6.0 / (8.0 + 16.0));
    const double bound_wz = std::sqrt(6.0 / (8.0 + 5.0));
    for (const auto& Wt : a.W) EXPECT_LE(Wt.lpNorm<Eigen::Infinity>(), bound_w);
    EXPECT_LE(a.Wz.lpNorm<Eigen::Infinity>(), bound_wz);
    const ModelParams c = init_params(3, 8, 16, 5, 78);
    EXPECT_NE(a.W[0], c.W[0]);
    EXPECT_THROW(init_params(1, 8, 16, 5, 0), InvalidArgument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Checkpoint ckpt;
    ckpt.params = test::make_random_params(3, 8, 16, 5, 700);
    ckpt.neighborhood = NeighborhoodSpec::radius(3, 1);
    ckpt.energy = lambda_cfg(0.25, 1e-7);
    const auto path = std::filesystem::temp_directory_path() / "penc_model_test_roundtrip.penc";
    save_checkpoint(path, ckpt);
    const Checkpoint back = load_checkpoint(path);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(back.params.W[t], ckpt.params.W[t]);
    EXPECT_EQ(back.params.Wz, ckpt.params.Wz);
    EXPECT_EQ(back.neighborhood.neighbors, ckpt.neighborhood.neighbors);
    EXPECT_EQ(back.energy.lambda, ckpt.energy.lambda);
    EXPECT_EQ(back.energy.l1_eps, ckpt.energy.l1_eps);
    // Serialization itself is deterministic.
    EXPECT_EQ(serialize_checkpoint(ckpt), serialize_checkpoint(back));
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
    Checkpoint ckpt;
    ckpt.params = test::make_random_params(2, 3, 4, 2, 701);
    ckpt.neighborhood = NeighborhoodSpec::full(2);
    ckpt.energy = lambda_cfg(0.1);
    std::string bytes = serialize_checkpoint(ckpt);

    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bad_magic), IoError);

    std::string truncated = bytes.substr(0, bytes.size() - 9);
    EXPECT_THROW(deserialize_checkpoint(truncated), IoError);

    std::string trailing = bytes + "zz";
    EXPECT_THROW(deserialize_checkpoint(trailing), IoError);

    std::string bad_version = bytes;
    bad_version[4] = 9;
    EXPECT_THROW(deserialize_checkpoint(bad_version), IoError);
}

} // namespace
} // namespace penc
