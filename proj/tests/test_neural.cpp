#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace chemprot;
using nn::Matrix;

namespace {

constexpr double kTolerance = 1e-4;
constexpr int kTrials = 20;

template <class F>
void expect_gradients(F&& check) {
    for (int seed = 0; seed < kTrials; ++seed) EXPECT_LT(check(static_cast<std::uint64_t>(seed)), kTolerance) << "seed " << seed;
}

Matrix row(std::initializer_list<double> v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}

}  // namespace

TEST(NeuralGradients, Conv1d) { expect_gradients(testsupport::gradcheck_conv1d); }
TEST(NeuralGradients, MaxOverTime) { expect_gradients(testsupport::gradcheck_max_over_time); }
TEST(NeuralGradients, Dense) { expect_gradients(testsupport::gradcheck_dense); }
TEST(NeuralGradients, LstmStep) { expect_gradients(testsupport::gradcheck_lstm_step); }
TEST(NeuralGradients, BiLstm) { expect_gradients(testsupport::gradcheck_bilstm); }
TEST(NeuralGradients, SoftmaxCrossEntropy) { expect_gradients(testsupport::gradcheck_softmax_ce); }
TEST(NeuralGradients, RankingLoss) { expect_gradients(testsupport::gradcheck_ranking_loss); }

TEST(NeuralOps, Conv1dShapesAndValues) {
    Matrix x(3, 1);
    x << 1, 2, 3;
    Matrix w(2, 1);
    w << 1, 10;
    const Matrix out = nn::conv1d(x, w, Matrix::Constant(1, 1, 0.5), 2);
    ASSERT_EQ(out.rows(), 2);
    EXPECT_DOUBLE_EQ(out(0, 0), 21.5);
    EXPECT_DOUBLE_EQ(out(1, 0), 32.5);
    EXPECT_THROW(nn::conv1d(x, w, Matrix::Zero(1, 2), 2), ShapeError);
}

TEST(NeuralOps, MaxOverTimeTakesFirstMaximum) {
    Matrix x(3, 2);
    x << 1, 5, 4, 5, 4, 0;
    const auto p = nn::max_over_time(x);
    EXPECT_EQ(p.value, row({4, 5}));
    EXPECT_EQ(p.argmax, (std::vector<int>{1, 0}));
}

TEST(NeuralOps, SoftmaxCrossEntropyConstants) {
    EXPECT_NEAR(nn::softmax_ce(Matrix::Zero(1, 6), 2).loss, std::log(6.0), 1e-12);
    Matrix logits = Matrix::Zero(1, 6);
    logits(0, 3) = 50.0;
    EXPECT_LT(nn::softmax_ce(logits, 3).loss, 1e-8);
    const Matrix p = nn::softmax(row({1000, 1000, -1000}));
    EXPECT_NEAR(p(0, 0), 0.5, 1e-12);
    EXPECT_TRUE(p.allFinite());
}

TEST(NeuralOps, RankingLossConstants) {
    // Gold at the positive margin, competitor at minus the negative margin.
    const auto r = nn::ranking_loss(row({2.5, -0.5, -3.0}), 0);
    EXPECT_NEAR(r.loss, 2.0 * std::log(2.0), 1e-9);
    // NEG instance: only the highest positive score is pushed down.
    const auto neg = nn::ranking_loss(row({-10, -12, -11, -15, -10.5}), std::nullopt);
    EXPECT_LT(neg.loss, 1e-8);
    EXPECT_GT(neg.grad(0, 0), 0.0);
    EXPECT_EQ(neg.grad(0, 1), 0.0);
    EXPECT_THROW(nn::ranking_loss(row({1, 2}), 2), ShapeError);
}

TEST(NeuralOps, DropoutRateAndScaling) {
    Rng rng(9);
    const Matrix x = Matrix::Ones(1000, 1000);
    const Matrix y = nn::dropout(x, 0.2, rng, true);
    const double zeros = static_cast<double>((y.array() == 0.0).count()) / 1e6;
    EXPECT_NEAR(zeros, 0.2, 0.002);
    EXPECT_NEAR(y.maxCoeff(), 1.25, 1e-12);
    EXPECT_EQ(nn::dropout(x, 0.2, rng, false), x);
    EXPECT_EQ(nn::dropout(x, 0.0, rng, true), x);
    EXPECT_THROW(nn::dropout(x, 1.0, rng, true), ConfigError);
}

TEST(NeuralOps, AdamFirstStepMovesByLearningRate) {
    nn::Parameter p("p", 1, 3);
    p.value << 1.0, -2.0, 0.5;
    p.grad << 0.3, -7.0, 0.0;
    nn::Parameter* params[] = {&p};
    nn::AdamState state;
    state.config.lr = 0.01;
    nn::adam_update(params, state);
    EXPECT_NEAR(p.value(0, 0), 1.0 - 0.01, 1e-6);
    EXPECT_NEAR(p.value(0, 1), -2.0 + 0.01, 1e-6);
    EXPECT_DOUBLE_EQ(p.value(0, 2), 0.5);
}

TEST(NeuralOps, AdamIsDeterministic) {
    auto run = [] {
        Rng rng(3);
        nn::Parameter p("p", 4, 4);
        p.value = testsupport::random_matrix(4, 4, rng);
        nn::Parameter* params[] = {&p};
        nn::AdamState state;
        for (int i = 0; i < 10; ++i) {
            p.grad = p.value * 2.0;
            nn::adam_update(params, state);
        }
        return p.value;
    };
    EXPECT_EQ(run(), run());
}

TEST(NeuralOps, GlobalNormClipping) {
    nn::Parameter a("a", 1, 2), b("b", 1, 1);
    a.grad << 3.0, 0.0;
    b.grad << 4.0;
    nn::Parameter* params[] = {&a, &b};
    EXPECT_DOUBLE_EQ(nn::clip_global_norm(params, 1.0), 5.0);
    EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-12);
    EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-12);
    nn::zero_grads(params);
    EXPECT_EQ(a.grad.norm(), 0.0);
}

TEST(NeuralOps, VocabularyReservesPadAndUnk) {
    nn::Vocabulary v;
    EXPECT_EQ(v.size(), 2);
    const int k = v.add("aspirin");
    EXPECT_EQ(k, 2);
    EXPECT_EQ(v.add("aspirin"), k);
    EXPECT_EQ(v.lookup("aspirin"), k);
    EXPECT_EQ(v.lookup("unseen"), nn::Vocabulary::kUnk);
}

TEST(NeuralOps, WordVectorsLoadKnownRows) {
    nn::Vocabulary v;
    v.add("inhibit");
    Matrix table = Matrix::Zero(v.size(), 2);
    std::istringstream in("inhibit 0.5 -1\nunknown 1 1\n");
    EXPECT_EQ(nn::load_word_vectors(in, v, table), 1u);
    EXPECT_EQ(table.row(2), row({0.5, -1}));
    std::istringstream bad("inhibit 1 2 3\n");
    EXPECT_THROW(nn::load_word_vectors(bad, v, table), Error);
}
