#include "penc/training.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

namespace penc {
namespace {

bool params_equal(const ModelParams& a, const ModelParams& b) {
    if (a.W.size() != b.W.size()) return false;
    for (std::size_t t = 0; t < a.W.size(); ++t)
        if (a.W[t] != b.W[t]) return false;
    return a.Wz == b.Wz;
}

std::vector<FrameSequence> small_dataset(int count, int n, Eigen::Index d, std::uint64_t seed) {
    std::vector<FrameSequence> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(test::make_random_sequence(n, d, seed + static_cast<std::uint64_t>(i)));
    return out;
}

TEST(EstimateContext, ExactFitDrivesEnergyToZero) {
    const ModelParams params = test::identity_gated_params(5, 3);
    Vector v(5);
    v << 1.0, -0.5, 2.0, 0.25, -1.5;
    const FrameSequence seq = test::constant_sequence(3, v);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    EnergyConfig cfg;
    cfg.lambda = 0.0;
    const ContextCode z = estimate_context(params, seq, nb, cfg, 50);
    EXPECT_LE(energy(params, seq, nb, z, cfg), 1e-8);
}

TEST(EstimateContext, HugeSparsityWeightDrivesCodeToZero) {
    const ModelParams params = test::make_random_params(3, 6, 8, 4, 1);
    const FrameSequence seq = test::make_random_sequence(3, 8, 2);
    EnergyConfig cfg;
    cfg.lambda = 1e6;
    const ContextCode z = estimate_context(params, seq, NeighborhoodSpec::full(3), cfg, 100);
    EXPECT_LE(z.lpNorm<Eigen::Infinity>(), 1e-3);
}

TEST(EstimateContext, MatchesLongGradientDescentOracle) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 3);
    const FrameSequence seq = test::make_random_sequence(3, 6, 4);
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    EnergyConfig cfg;
    cfg.lambda = 0.1;

    auto objective = [&](const Vector& z, Vector& grad) {
        grad = energy_grad_z(params, seq, nb, z, cfg);
        return energy(params, seq, nb, z, cfg);
    };
    const Vector z_oracle = test::gradient_descent_oracle(objective, Vector::Zero(3), 10000);
    const ContextCode z = estimate_context(params, seq, nb, cfg, 200);
    EXPECT_NEAR(energy(params, seq, nb, z, cfg), energy(params, seq, nb, z_oracle, cfg), 1e-6);
}

TEST(EstimateContext, NeverIncreasesEnergyFromAnyStart) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ModelParams params = test::make_random_params(3, 4, 6, 3, 10 + seed);
        const FrameSequence seq = test::make_random_sequence(3, 6, 40 + seed);
        const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
        EnergyConfig cfg;
        cfg.lambda = 0.2;
        const Vector z0 = test::make_random_code(3, 70 + seed, 2.0);
        const ContextCode z = estimate_context(params, seq, nb, cfg, 5, &z0);
        EXPECT_LE(energy(params, seq, nb, z, cfg), energy(params, seq, nb, z0, cfg));
    }
}

TEST(EstimateContext, ValidatesArguments) {
    const ModelParams params = test::make_random_params(3, 4, 6, 3, 90);
    const FrameSequence seq = test::make_random_sequence(3, 6, 91);
    EnergyConfig cfg;
    EXPECT_THROW(estimate_context(params, seq, NeighborhoodSpec::full(3), cfg, 0), InvalidArgument);
    const Vector bad = Vector::Zero(5);
    EXPECT_THROW(estimate_context(params, seq, NeighborhoodSpec::full(3), cfg, 5, &bad),
                 DimensionMismatch);
}

TEST(SgdStep, FollowsTheMomentumUpdateRuleExactly) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.5;
    cfg.lambda = 0.1;

    ModelParams params = test::make_random_params(3, 4, 6, 3, 100);
    const ModelParams params0 = params;
    ModelParams velocity = zeros_like(params);
    velocity.W[0].setConstant(0.01); // nonzero incoming momentum
    const ModelParams velocity0 = velocity;

    std::vector<BatchItem> batch;
    batch.emplace_back(test::make_random_sequence(3, 6, 101), test::make_random_code(3, 102));
    batch.emplace_back(test::make_random_sequence(3, 6, 103), test::make_random_code(3, 104));

    sgd_step(params, batch, nb, velocity, cfg);

    // Batch gradient is the sum of per-item gradients, accumulated in order.
    ModelParams grad = zeros_like(params0);
    for (const auto& item : batch)
        add_scaled(grad,
                   energy_grad_params(params0, item.analysis, nb, item.code, cfg.energy_config()),
                   1.0);
    for (std::size_t t = 0; t < params.W.size(); ++t) {
        const Matrix v_want = -cfg.learning_rate * grad.W[t] + cfg.momentum * velocity0.W[t];
        EXPECT_EQ(velocity.W[t], v_want);
        EXPECT_EQ(params.W[t], Matrix(params0.W[t] + v_want));
    }
    const Matrix vz_want = -cfg.learning_rate * grad.Wz + cfg.momentum * velocity0.Wz;
    EXPECT_EQ(velocity.Wz, vz_want);
    EXPECT_EQ(params.Wz, Matrix(params0.Wz + vz_want));
}

TEST(SgdStep, PlainSgdWithoutMomentum) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.momentum = 0.0;
    ModelParams params = test::make_random_params(3, 4, 6, 3, 110);
    const ModelParams params0 = params;
    ModelParams velocity = zeros_like(params);
    std::vector<BatchItem> batch;
    batch.emplace_back(test::make_random_sequence(3, 6, 111), test::make_random_code(3, 112));
    sgd_step(params, batch, nb, velocity, cfg);
    const ModelParams grad =
        energy_grad_params(params0, batch[0].analysis, nb, batch[0].code, cfg.energy_config());
    for (std::size_t t = 0; t < params.W.size(); ++t)
        EXPECT_EQ(params.W[t], Matrix(params0.W[t] - cfg.learning_rate * grad.W[t]));
}

TEST(SgdStep, MomentumCoastsOnZeroGradient) {
    // Zero-residual batch with lambda 0: the gradient vanishes and the update
    // is pure momentum.
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.6;
    cfg.lambda = 0.0;
    ModelParams params = test::identity_gated_params(4, 2);
    const ModelParams params0 = params;
    Vector v(4);
    v << 1.0, 2.0, -1.0, 0.5;
    Vector z = Vector::Zero(2);
    z(0) = 1.0;
    std::vector<BatchItem> batch;
    batch.emplace_back(test::constant_sequence(3, v), z);

    ModelParams velocity = zeros_like(params);
    velocity.Wz.setConstant(0.25);
    sgd_step(params, batch, nb, velocity, cfg);
    EXPECT_EQ(velocity.Wz, Matrix(Matrix::Constant(4, 2, 0.6 * 0.25)));
    EXPECT_EQ(params.Wz, Matrix(params0.Wz + velocity.Wz));
    EXPECT_EQ(params.W[0], params0.W[0]);
}

TEST(SgdStep, RejectsMismatchedVelocity) {
    const NeighborhoodSpec nb = NeighborhoodSpec::full(3);
    TrainConfig cfg;
    ModelParams params = test::make_random_params(3, 4, 6, 3, 120);
    ModelParams velocity = zeros_like(test::make_random_params(3, 4, 7, 3, 121));
    std::vector<BatchItem> batch;
    batch.emplace_back(test::make_random_sequence(3, 6, 122), test::make_random_code(3, 123));
    EXPECT_THROW(sgd_step(params, batch, nb, velocity, cfg), ShapeMismatch);
}

TEST(Corrupt, SigmaZeroIsIdentity) {
    const FrameSequence seq = test::make_random_sequence(3, 6, 130);
    std::mt19937_64 rng(1);
    CorruptionSpec spec;
    spec.kind = CorruptionSpec::Kind::gaussian;
    spec.sigma = 0.0;
    const FrameSequence out = corrupt(seq, spec, rng);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(out.frames[t], seq.frames[t]);
}

TEST(Corrupt, FullMaskZeroesEverything) {
    const FrameSequence seq = test::make_random_sequence(3, 6, 131);
    std::mt19937_64 rng(2);
    CorruptionSpec spec;
    spec.kind = CorruptionSpec::Kind::mask;
    spec.probability = 1.0;
    const FrameSequence out = corrupt(seq, spec, rng);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(out.frames[t], Vector::Zero(6));
}

TEST(Corrupt, MaskRateConcentratesAroundP) {
    FrameSequence seq;
    seq.frames.assign(10, Vector::Ones(10000));
    seq.observed.assign(10, 1);
    std::mt19937_64 rng(3);
    CorruptionSpec spec;
    spec.kind = CorruptionSpec::Kind::mask;
    spec.probability = 0.3;
    const FrameSequence out = corrupt(seq, spec, rng);
    int zeroed = 0;
    for (const auto& f : out.frames)
        for (Eigen::Index i = 0; i < f.size(); ++i)
            if (f(i) == 0.0) ++zeroed;
    const double rate = zeroed / 1e5;
    EXPECT_GE(rate, 0.29);
    EXPECT_LE(rate, 0.31);
}

TEST(Corrupt, SkipsUnobservedFrames) {
    FrameSequence seq = test::make_random_sequence(3, 6, 132);
    seq.observed[1] = 0;
    std::mt19937_64 rng(4);
    CorruptionSpec spec;
    spec.kind = CorruptionSpec::Kind::gaussian;
    spec.sigma = 1.0;
    const FrameSequence out = corrupt(seq, spec, rng);
    EXPECT_EQ(out.frames[1], seq.frames[1]);
    EXPECT_NE(out.frames[0], seq.frames[0]);
}

TEST(Train, EnergyDecreasesOnASmallDataset) {
    const auto dataset = small_dataset(12, 3, 6, 500);
    TrainConfig cfg;
    cfg.learning_rate = 0.003;
    cfg.epochs = 15;
    cfg.batch_size = 4;
    cfg.seed = 9;
    const TrainResult res = train(dataset, {8, 4}, NeighborhoodSpec::full(3), cfg);
    ASSERT_EQ(res.history.size(), 15u);
    EXPECT_LT(res.history.energy.back(), res.history.energy.front());
    for (double e : res.history.energy) EXPECT_TRUE(std::isfinite(e));
    EXPECT_EQ(res.codes.size(), dataset.size());
}

TEST(Train, SameSeedIsBitIdentical) {
    const auto dataset = small_dataset(8, 3, 6, 510);
    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.epochs = 4;
    cfg.batch_size = 3;
    cfg.seed = 11;
    const TrainResult a = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    const TrainResult b = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    EXPECT_TRUE(params_equal(a.params, b.params));
    EXPECT_EQ(a.history.energy, b.history.energy);
    EXPECT_EQ(a.history.data_term, b.history.data_term);
    EXPECT_EQ(a.history.sparsity_term, b.history.sparsity_term);
    for (std::size_t i = 0; i < a.codes.size(); ++i) EXPECT_EQ(a.codes[i], b.codes[i]);
}

TEST(Train, ParallelContextEstimationMatchesSerial) {
    const auto dataset = small_dataset(10, 3, 6, 520);
    TrainConfig cfg;
    cfg.learning_rate = 0.02;
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.seed = 13;
    cfg.threads = 1;
    const TrainResult serial = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    cfg.threads = 4;
    const TrainResult parallel = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    EXPECT_TRUE(params_equal(serial.params, parallel.params));
    for (std::size_t i = 0; i < serial.codes.size(); ++i)
        EXPECT_EQ(serial.codes[i], parallel.codes[i]);
}

TEST(Train, ZeroLearningRateFreezesParameters) {
    const auto dataset = small_dataset(6, 3, 6, 530);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    cfg.seed = 17;
    const TrainResult frozen = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    cfg.epochs = 0;
    const TrainResult init_only = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    EXPECT_TRUE(params_equal(frozen.params, init_only.params));
    // With frozen parameters the z refinements can only lower the energy.
    for (std::size_t e = 1; e < frozen.history.size(); ++e)
        EXPECT_LE(frozen.history.energy[e], frozen.history.energy[e - 1] + 1e-12);
}

TEST(Train, ZeroEpochsReturnsInitializationAndEmptyHistory) {
    const auto dataset = small_dataset(5, 3, 6, 540);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 23;
    const TrainResult res = train(dataset, {6, 3}, NeighborhoodSpec::full(3), cfg);
    EXPECT_EQ(res.history.size(), 0u);
    for (const auto& z : res.codes) EXPECT_EQ(z, Vector::Zero(3));
}

TEST(Train, CapacityOverfitDrivesEnergyDown) {
    // One sequence, B >= D * |N(t)|, lambda 0: training should approach an
    // exact fit.
    const std::vector<FrameSequence> dataset = {test::make_random_sequence(3, 4, 550)};
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.momentum = 0.5;
    cfg.epochs = 400;
    cfg.batch_size = 1;
    cfg.z_lbfgs_steps = 10;
    cfg.lambda = 0.0;
    cfg.seed = 31;
    const TrainResult res = train(dataset, {8, 4}, NeighborhoodSpec::full(3), cfg);
    EXPECT_LE(res.history.energy.back(), 1e-3);
}

TEST(Train, EpochCallbackFiresEveryEpoch) {
    const auto dataset = small_dataset(4, 3, 6, 560);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 2;
    std::vector<int> epochs_seen;
    train(dataset, {4, 2}, NeighborhoodSpec::full(3), cfg,
          [&](int epoch, const ModelParams&, const TrainHistory& h) {
              epochs_seen.push_back(epoch);
              EXPECT_EQ(h.size(), static_cast<std::size_t>(epoch));
          });
    EXPECT_EQ(epochs_seen, (std::vector<int>{1, 2, 3}));
}

TEST(Train, RejectsBadInputs) {
    TrainConfig cfg;
    EXPECT_THROW(train({}, {4, 2}, NeighborhoodSpec::full(3), cfg), EmptyDataset);
    auto dataset = small_dataset(3, 3, 6, 570);
    dataset.push_back(test::make_random_sequence(3, 7, 571));
    EXPECT_THROW(train(dataset, {4, 2}, NeighborhoodSpec::full(3), cfg), InconsistentShapes);
    cfg.momentum = 1.0;
    EXPECT_THROW(train(small_dataset(2, 3, 6, 572), {4, 2}, NeighborhoodSpec::full(3), cfg),
                 InvalidArgument);
}

TEST(TrainHistory, CsvRoundTripShape) {
    TrainHistory h;
    h.energy = {2.5, 1.25};
    h.data_term = {2.0, 1.0};
    h.sparsity_term = {0.5, 0.25};
    h.seconds = {0.01, 0.011};
    const std::string csv = history_to_csv(h);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    EXPECT_EQ(line, "epoch,energy,data_term,sparsity_term,seconds");
    std::getline(lines, line);
    EXPECT_EQ(line.substr(0, 2), "1,");
    std::getline(lines, line);
    EXPECT_EQ(line.substr(0, 2), "2,");
    EXPECT_FALSE(std::getline(lines, line));
}

} // namespace
} // namespace penc
