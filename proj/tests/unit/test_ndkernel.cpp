#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "fgpfe/error.hpp"
#include "fgpfe/gradcheck.hpp"
#include "fgpfe/ops.hpp"
#include "fgpfe/optim.hpp"
#include "fgpfe/random.hpp"

using namespace fgpfe;
using namespace fgpfe::nd;

namespace {

Tensor rand_tensor(Shape s, Rng& rng) {
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(-1, 1);
    return t;
}

Var cst(Shape s, std::vector<double> v) { return Var::constant(Tensor(std::move(s), std::move(v))); }

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
    Tensor t({2, 3}, 1.5);
    EXPECT_EQ(t.size(), 6u);
    t.at({1, 2}) = 4;
    EXPECT_EQ(t[5], 4);
    EXPECT_THROW(t.at({2, 0}), ShapeError);
    EXPECT_THROW(t.reshaped({4}), ShapeError);
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    EXPECT_EQ(t.reshaped({3, 2}).to_vector(), t.to_vector());
}

TEST(Tensor, LargeBlocksRoundTrip) {
    Tensor big({1u << 20}, 0.25);  // 8 MiB, takes the huge-page path
    big[12345] = 7;
    Tensor copy = big;
    EXPECT_TRUE(copy == big);
    EXPECT_EQ(copy[12345], 7);
}

TEST(Linear, IdentityWeights) {
    Rng rng(3);
    const Tensor x = rand_tensor({4, 3}, rng);
    Tensor w({3, 3});
    for (int i = 0; i < 3; ++i) w.at({std::size_t(i), std::size_t(i)}) = 1;
    const Var y = linear(Var::constant(x), Var::constant(w), Var::constant(Tensor({3})));
    EXPECT_TRUE(y.value() == x);
}

TEST(Linear, HandSum) {
    const Var y = linear(cst({1, 2}, {1, 2}), cst({1, 2}, {1, 1}), cst({1}, {0}));
    EXPECT_EQ(y.value().to_vector(), std::vector<double>{3});
}

TEST(Linear, ShapeMismatch) {
    EXPECT_THROW(linear(cst({1, 2}, {1, 2}), cst({1, 3}, {1, 1, 1})), ShapeError);
}

TEST(Linear, WeightGradientMatchesFiniteDifferences) {
    Rng rng(11);
    Parameter x("x", rand_tensor({6, 5}, rng)), w("w", rand_tensor({3, 5}, rng)), b("b", rand_tensor({3}, rng));
    GradGraph g{"linear", {x, w, b}, [=] { return sum(linear(x, w, b)); }};
    GradCheckOptions o;
    o.tolerance = 1e-6;
    const auto r = fd_check(g, o);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    EXPECT_EQ(r.checked, 6u * 5 + 15 + 3);
}

TEST(Conv1d, CenterDeltaIsIdentity) {
    Rng rng(5);
    const Tensor x = rand_tensor({7, 1}, rng);
    const Var y = conv1d(Var::constant(x), cst({1, 1, 3}, {0, 1, 0}));
    EXPECT_TRUE(y.value() == x);
}

TEST(Conv1d, OnesKernelWithZeroPadding) {
    const Var y = conv1d(cst({4, 1}, {1, 1, 1, 1}), cst({1, 1, 3}, {1, 1, 1}));
    EXPECT_EQ(y.value().to_vector(), (std::vector<double>{2, 3, 3, 2}));
}

TEST(Conv1d, EvenKernelRejected) {
    EXPECT_THROW(conv1d(cst({4, 1}, {1, 1, 1, 1}), cst({1, 1, 2}, {1, 1})), ShapeError);
}

TEST(Conv1d, BatchedLeadingAxes) {
    Rng rng(9);
    const Tensor x = rand_tensor({3, 5, 2}, rng), k = rand_tensor({4, 2, 3}, rng);
    const Tensor y = conv1d(Var::constant(x), Var::constant(k)).value();
    ASSERT_EQ(y.shape(), (Shape{3, 5, 4}));
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t l = 0; l < 5; ++l)
            for (std::size_t o = 0; o < 4; ++o) {
                double acc = 0;
                for (std::size_t c = 0; c < 2; ++c)
                    for (std::size_t t = 0; t < 3; ++t) {
                        const long src = long(l) + long(t) - 1;
                        if (src >= 0 && src < 5) acc += k.at({o, c, t}) * x.at({n, std::size_t(src), c});
                    }
                EXPECT_NEAR(y.at({n, l, o}), acc, 1e-14);
            }
}

TEST(Reduce, MeanAndMax) {
    EXPECT_EQ(reduce(cst({2, 3}, {1, 2, 3, 3, 2, 1}), 0, ReduceMode::mean).value().to_vector(),
              (std::vector<double>{2, 2, 2}));
    EXPECT_EQ(reduce(cst({2, 2}, {1, 2, 3, 0}), 0, ReduceMode::max).value().to_vector(), (std::vector<double>{3, 2}));
}

TEST(Reduce, EmptyAxisRejected) { EXPECT_THROW(reduce(Var::constant(Tensor({0, 3})), 0, ReduceMode::mean), ShapeError); }

TEST(Reduce, MaxGradientGoesToFirstTie) {
    Parameter x("x", Tensor({3}, std::vector<double>{2, 5, 5}));
    backward(reduce(x, 0, ReduceMode::max));
    EXPECT_EQ(x.grad().to_vector(), (std::vector<double>{0, 1, 0}));
}

TEST(Reduce, RowPermutationInvariance) {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = rand_tensor({9, 4}, rng);
        std::vector<std::size_t> perm(9);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = 8; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        const Var xp = gather_rows(Var::constant(x), perm);
        EXPECT_NEAR(max_abs_diff(reduce(Var::constant(x), 0, ReduceMode::mean).value(),
                                 reduce(xp, 0, ReduceMode::mean).value()),
                    0.0, 1e-15);
        EXPECT_TRUE(reduce(Var::constant(x), 0, ReduceMode::max).value() == reduce(xp, 0, ReduceMode::max).value());
    }
}

TEST(Elementwise, SigmoidReluEwmul) {
    EXPECT_EQ(sigmoid(cst({1}, {0})).value()[0], 0.5);
    EXPECT_EQ(relu(cst({3}, {-1, 0, 2})).value().to_vector(), (std::vector<double>{0, 0, 2}));
    Rng rng(2);
    const Tensor x = rand_tensor({3, 4}, rng);
    EXPECT_TRUE(ewmul(Var::constant(x), Var::constant(Tensor({3, 4}, 1.0))).value() == x);
    EXPECT_TRUE(logistic(-800) >= 0 && logistic(800) == 1.0);
}

TEST(Elementwise, BroadcastSizeOne) {
    const Var y = ewmul(cst({2, 1}, {2, 3}), cst({1, 3}, {1, 10, 100}));
    EXPECT_EQ(y.value().to_vector(), (std::vector<double>{2, 20, 200, 3, 30, 300}));
    EXPECT_THROW(ewmul(cst({2}, {1, 2}), cst({3}, {1, 2, 3})), ShapeError);
}

TEST(Structural, ConcatReshapeSplitRoundTrip) {
    Rng rng(4);
    const Tensor a = rand_tensor({3, 2}, rng), b = rand_tensor({3, 5}, rng);
    const std::array<Var, 2> parts{Var::constant(a), Var::constant(b)};
    const Var flat = reshape(concat(parts, 1), {21});
    const Var back = reshape(flat, {3, 7});
    EXPECT_TRUE(slice(back, 1, 0, 2).value() == a);
    EXPECT_TRUE(slice(back, 1, 2, 7).value() == b);
}

TEST(Rows, GatherScatterRoundTrip) {
    Rng rng(6);
    const Tensor x = rand_tensor({4, 3}, rng);
    const std::vector<std::size_t> dest{5, 0, 2, 7};
    const Var s = scatter_rows(Var::constant(x), dest, 8);
    EXPECT_TRUE(gather_rows(s, dest).value() == x);
    EXPECT_THROW(scatter_rows(Var::constant(x), std::vector<std::size_t>{1, 1, 2, 3}, 8), ShapeError);
}

TEST(Rows, SegmentReduceEmptySegmentsAreZero) {
    const Var y = segment_reduce(cst({3, 1}, {1, 3, -2}), std::vector<std::size_t>{0, 0, 2}, 4, ReduceMode::max);
    EXPECT_EQ(y.value().to_vector(), (std::vector<double>{3, 0, -2, 0}));
}

TEST(Focal, ConfidentCorrectIsNearZero) {
    const FocalParams fp;
    const Var l = focal_loss(cst({1}, {1 - fp.eps}), Tensor({1}, 1.0), fp);
    EXPECT_LT(l.value().item(), 1e-5);
}

TEST(Focal, HalfProbabilityClosedForm) {
    const Var l = focal_loss(cst({1}, {0.5}), Tensor({1}, 1.0), {0.25, 2.0, 1e-6});
    EXPECT_NEAR(l.value().item(), 0.25 * 0.25 * std::log(2.0), 1e-15);
    EXPECT_NEAR(l.value().item(), 0.043322, 1e-6);
}

TEST(Focal, ShapeMismatch) { EXPECT_THROW(focal_loss(cst({2}, {0.1, 0.2}), Tensor({3}, 0.0)), ShapeError); }

TEST(Focal, MovingTowardLabelLowersTerm) {
    const FocalParams fp;
    for (double p = 0.05; p < 0.9; p += 0.1) {
        EXPECT_LT(focal_term(p + 0.05, 1, fp), focal_term(p, 1, fp));
        EXPECT_LT(focal_term(p, 0, fp), focal_term(p + 0.05, 0, fp));
    }
}

TEST(Focal, GradientMatchesFiniteDifferences) {
    Rng rng(8);
    Tensor p0({10}), y({10});
    for (std::size_t i = 0; i < 10; ++i) {
        p0[i] = rng.uniform(0.05, 0.95);
        y[i] = double(i % 2);
    }
    Parameter p("p", p0);
    const auto r = fd_check({"focal", {p}, [=] { return focal_loss(p, y); }});
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(GradCheck, ZeroParameterGraphPassesVacuously) {
    const auto r = fd_check({"none", {}, [] { return Var::constant(Tensor::scalar(3)); }});
    EXPECT_TRUE(r.passed);
    EXPECT_EQ(r.checked, 0u);
}

TEST(GradCheck, CorruptedBackwardFails) {
    Rng rng(12);
    Parameter x("x", rand_tensor({5}, rng));
    // square whose backward forgets the factor 2
    auto bad_square = [](const Var& a) {
        Tensor v = a.value();
        for (auto& e : v.data()) e *= e;
        return make_op(std::move(v), {a}, [](Node& self) {
            auto& g = self.inputs[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.inputs[0]->value[i];
        });
    };
    const auto r = fd_check({"bad", {x}, [=] { return sum(bad_square(x)); }});
    EXPECT_FALSE(r.passed);
    EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, NonFiniteForwardThrows) {
    Parameter x("x", Tensor({1}, 1.0));
    EXPECT_THROW(fd_check({"nan", {x}, [=] { return sum(scale(x, NAN)); }}), NumericError);
}

TEST(GradCheck, EveryLayerOverTwentySeeds) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Parameter x("x", rand_tensor({4, 3, 5}, rng)), w("w", rand_tensor({2, 5}, rng)), k("k", rand_tensor({2, 2, 3}, rng));
        const Tensor proj = rand_tensor({4, 3, 2}, rng);
        GradGraph g{"stack", {x, w, k}, [=] {
                        const Var h = relu(linear(x, w));
                        const Var c = conv1d(h, k);
                        const Var m = reduce(c, 1, ReduceMode::max, true);
                        return weighted_sum(ewmul(sigmoid(c), add(m, reduce(c, 1, ReduceMode::mean, true))), proj);
                    }};
        const auto r = fd_check(g);
        EXPECT_TRUE(r.passed) << "seed " << seed << " err " << r.max_rel_error << " at " << r.worst;
    }
}

TEST(Sgd, ZeroLearningRateKeepsValues) {
    Parameter p("p", Tensor({2}, std::vector<double>{1, 2}));
    p.grad().fill(3);
    std::vector<Parameter> ps{p};
    sgd_step(ps, 0.0);
    EXPECT_EQ(p.value().to_vector(), (std::vector<double>{1, 2}));
    EXPECT_EQ(p.grad().to_vector(), (std::vector<double>{0, 0}));
}

TEST(Sgd, SingleStep) {
    Parameter p("p", Tensor({1}, 1.0));
    p.grad()[0] = 1;
    std::vector<Parameter> ps{p};
    sgd_step(ps, 0.1);
    EXPECT_DOUBLE_EQ(p.value()[0], 0.9);
}

TEST(Sgd, QuadraticConverges) {
    Parameter x("x", Tensor({1}, 5.0));
    std::vector<Parameter> ps{x};
    const double target = -1.25;
    for (int i = 0; i < 200; ++i) {
        const Var d = add(x, Var::constant(Tensor({1}, -target)));
        backward(sum(ewmul(d, d)));
        sgd_step(ps, 0.05);
    }
    EXPECT_LT(std::abs(x.value()[0] - target), 1e-3);
}

TEST(Checkpoint, RoundTripAndMismatch) {
    Rng rng(1);
    Parameter a("a", rand_tensor({2, 3}, rng)), b("b", rand_tensor({4}, rng));
    const auto path = (std::filesystem::temp_directory_path() / "fgpfe_ckpt_test.bin").string();
    std::vector<Parameter> ps{a, b};
    save_checkpoint(path, ps);
    Parameter a2("a", Tensor({2, 3})), b2("b", Tensor({4}));
    std::vector<Parameter> qs{a2, b2};
    assign_checkpoint(qs, load_checkpoint(path));
    EXPECT_TRUE(a2.value() == a.value());
    EXPECT_TRUE(b2.value() == b.value());
    Parameter wrong("a", Tensor({3, 2}));
    std::vector<Parameter> rs{wrong};
    EXPECT_ANY_THROW(assign_checkpoint(rs, load_checkpoint(path)));
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(NoGrad, RecordsNothing) {
    Parameter x("x", Tensor({2}, 1.0));
    NoGradGuard g;
    EXPECT_FALSE(relu(x).requires_grad());
}
