#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <span>
#include <vector>

#include "bcae/rng.hpp"
#include "bcae/transform.hpp"

using namespace bcae;

namespace {

// Independent base-2 binary cross-entropy, the gamma = 0 oracle.
double bce2_oracle(std::span<const double> p, std::span<const double> l) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = std::clamp(p[i], 1e-7, 1.0 - 1e-7);
        acc += -l[i] * std::log2(pi) - (1.0 - l[i]) * std::log2(1.0 - pi);
    }
    return acc / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("transform anchor values") {
    CHECK(forward_transform(65.0) == 0.0);  // ln(1) = 0 exactly
    CHECK(forward_transform(64.0 + std::exp(6.0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(forward_transform(1023.0) == doctest::Approx(std::log(959.0) / 6.0).epsilon(1e-15));
    CHECK(forward_transform(1023.0) == doctest::Approx(1.14432).epsilon(1e-5));
}

TEST_CASE("inverse transform anchors and round trip") {
    CHECK(inverse_transform(0.0) == 65.0);
    CHECK(inverse_transform(1.14432) == doctest::Approx(1023.0).epsilon(1e-4));
    for (int v = 65; v <= 1023; ++v) {
        const double back = inverse_transform(forward_transform(static_cast<double>(v)));
        REQUIRE(std::abs(back - v) / v < 1e-6);
    }
}

TEST_CASE("transform is strictly increasing") {
    double prev = forward_transform(65.0);
    for (int v = 66; v <= 1023; ++v) {
        const double cur = forward_transform(static_cast<double>(v));
        REQUIRE(cur > prev);
        prev = cur;
    }
}

TEST_CASE("soft label anchors") {
    CHECK(soft_label(63.0) == doctest::Approx(0.5).epsilon(1e-9));  // log2(64) = 6 midpoint
    CHECK(soft_label(0.0) < 1e-50);
    CHECK(soft_label(127.0) == doctest::Approx(1.0 / (1.0 + std::exp(-20.0))).epsilon(1e-12));
    double prev = soft_label(0.0);
    for (int v = 1; v <= 1023; ++v) {
        const double cur = soft_label(static_cast<double>(v));
        REQUIRE(cur > prev);
        prev = cur;
    }
}

TEST_CASE("focal loss perfect prediction is (clamped) zero") {
    std::vector<double> p{1.0, 0.0}, l{1.0, 0.0};
    CHECK(focal_loss<double>(p, l) == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("single-voxel focal example") {
    std::vector<double> p{0.5}, l{1.0};
    CHECK(focal_loss<double>(p, l, FocalParams{2.0}) == 0.25);  // -log2(.5) * .5^2
}

TEST_CASE("focal loss with gamma 0 equals base-2 cross-entropy") {
    Rng rng(31);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> p(64), l(64);
        for (auto& x : p) x = rng.uniform(0.001, 0.999);
        for (auto& x : l) x = rng.uniform();
        const double got = focal_loss<double>(p, l, FocalParams{0.0});
        const double want = bce2_oracle(p, l);
        REQUIRE(std::abs(got - want) < 1e-6 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("focal loss is nonnegative, zero only at hard-correct predictions") {
    Rng rng(32);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> p(32), l(32);
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = rng.uniform(0.01, 0.99);
            l[i] = rng.uniform();
        }
        REQUIRE(focal_loss<double>(p, l) > 0.0);
    }
    std::vector<double> p{1.0, 0.0, 1.0}, l{1.0, 0.0, 1.0};
    CHECK(focal_loss<double>(p, l) < 1e-5);
}

TEST_CASE("focal loss rejects shape mismatch") {
    std::vector<double> p{0.5}, l{1.0, 0.0};
    CHECK_THROWS_AS(focal_loss<double>(p, l), shape_error);
}

TEST_CASE("focal gradient matches central finite differences") {
    Rng rng(33);
    const std::size_t n = 4 * 4 * 4;
    std::vector<double> p(n), l(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = rng.uniform(0.05, 0.95);
        l[i] = rng.uniform();
    }
    focal_loss_grad<double>(p, l, g);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < n; i += 7) {
        std::vector<double> pp = p, pm = p;
        pp[i] += eps;
        pm[i] -= eps;
        const double fd = (focal_loss<double>(pp, l) - focal_loss<double>(pm, l)) / (2 * eps);
        REQUIRE(std::abs(g[i] - fd) / std::max(std::abs(fd), 1e-10) < 1e-4);
    }
}

TEST_CASE("combined prediction gates on the segmentation output") {
    std::vector<double> reg{0.7}, seg{0.3}, out{-1.0};
    combine_output<double>(reg, seg, Threshold(0.5), out);
    CHECK(out[0] == 0.0);

    seg[0] = 0.6;
    reg[0] = 0.0;
    combine_output<double>(reg, seg, Threshold(0.5), out);
    CHECK(out[0] == 65.0);  // inverse transform of 0
}

TEST_CASE("threshold 0 passes every voxel") {
    Rng rng(34);
    std::vector<double> reg(32), seg(32), out(32);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        reg[i] = rng.uniform(-1.0, 1.2);
        seg[i] = rng.uniform();
    }
    combine_output<double>(reg, seg, Threshold(0.0), out);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        REQUIRE(out[i] == inverse_transform(reg[i]));
        REQUIRE(out[i] > 0.0);  // the inverse transform maps above the shift
    }
}

TEST_CASE("threshold clamps into [0, 1]") {
    CHECK(Threshold(1.5).h == 1.0);
    CHECK(Threshold(-0.5).h == 0.0);
}

TEST_CASE("transform-free combine differs exactly by the inverse map on passed voxels") {
    Rng rng(35);
    std::vector<double> reg(64), seg(64), with(64), without(64);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        reg[i] = rng.uniform(0.0, 1.2);
        seg[i] = rng.uniform();
    }
    const Threshold h(0.5);
    combine_output<double>(reg, seg, h, with);
    combine_output_without_transform<double>(reg, seg, h, without);
    for (std::size_t i = 0; i < reg.size(); ++i) {
        if (seg[i] >= h.h) {
            REQUIRE(with[i] == inverse_transform(reg[i]));
            REQUIRE(without[i] == reg[i]);
        } else {
            REQUIRE(with[i] == 0.0);
            REQUIRE(without[i] == 0.0);
        }
    }
}

TEST_CASE("transform-free combine pass-through branch") {
    std::vector<double> reg{500.0}, seg{0.9}, out{0.0};
    combine_output_without_transform<double>(reg, seg, Threshold(0.5), out);
    CHECK(out[0] == 500.0);
}

TEST_CASE("regression loss basics") {
    std::vector<double> a{1, 2, 3}, b{1, 2, 3};
    CHECK(regression_loss<double, double>(a, b) == 0.0);

    std::vector<double> truth(10, 0.0), combined(10, 3.0);
    CHECK(regression_loss<double, double>(combined, truth) == doctest::Approx(9.0).epsilon(0));

    std::vector<double> c{1, 2}, d{1};
    CHECK_THROWS_AS((regression_loss<double, double>(c, d)), shape_error);
}

TEST_CASE("regression loss agrees with a two-pass accumulation oracle") {
    Rng rng(36);
    std::vector<double> x(4096), y(4096);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.uniform(0.0, 1023.0);
        y[i] = rng.uniform(0.0, 1023.0);
    }
    std::vector<double> sq(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - y[i]) * (x[i] - y[i]);
    double acc = 0.0;
    for (double s : sq) acc += s;
    const double want = acc / static_cast<double>(x.size());
    const double got = regression_loss<double, double>(x, y);
    CHECK(std::abs(got - want) / want < 1e-9);
}

TEST_CASE("gated regression gradient matches finite differences, gate fixed") {
    Rng rng(37);
    const std::size_t n = 4 * 4 * 4;
    std::vector<double> reg(n), seg(n), truth(n), grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        reg[i] = rng.uniform(-0.5, 1.2);
        seg[i] = rng.uniform();
        truth[i] = rng.uniform() < 0.5 ? 0.0 : rng.uniform(65.0, 1023.0);
    }
    const Threshold h(0.5);

    for (bool with_transform : {true, false}) {
        std::vector<double> reg_in = reg;
        if (!with_transform) {
            for (auto& v : reg_in) v = std::abs(v);  // variant contract: nonnegative
        }
        const double base = regression_loss_and_grad<double, double>(reg_in, seg, truth, h,
                                                                     with_transform, grad);
        std::vector<double> combined(n);
        if (with_transform) {
            combine_output<double>(reg_in, seg, h, combined);
        } else {
            combine_output_without_transform<double>(reg_in, seg, h, combined);
        }
        CHECK(base == doctest::Approx(regression_loss<double, double>(combined, truth))
                          .epsilon(1e-12));

        const double eps = 1e-6;
        for (std::size_t i = 0; i < n; i += 5) {
            auto eval = [&](double delta) {
                std::vector<double> r2 = reg_in;
                r2[i] += delta;
                std::vector<double> c2(n);
                if (with_transform) {
                    combine_output<double>(r2, seg, h, c2);
                } else {
                    combine_output_without_transform<double>(r2, seg, h, c2);
                }
                return regression_loss<double, double>(c2, truth);
            };
            const double fd = (eval(eps) - eval(-eps)) / (2 * eps);
            if (std::abs(fd) < 1e-12) {
                REQUIRE(std::abs(grad[i]) < 1e-12);  // gated-off voxel
            } else {
                REQUIRE(std::abs(grad[i] - fd) / std::abs(fd) < 1e-4);
            }
        }
    }
}

TEST_CASE("loss weight update rule") {
    LossState s;
    s.rho_r = 2.0;
    s.rho_s = 4.0;
    s.has_history = true;
    LossState n = update_loss_weight(s);
    CHECK(n.seg_weight == 0.5);
    CHECK(n.epoch == 1);

    s.rho_r = 3.0;
    s.rho_s = 3.0;
    CHECK(update_loss_weight(s).seg_weight == 1.0);
}

TEST_CASE("loss weight initialization and zero-loss fallback") {
    LossState fresh;  // no history yet
    CHECK(update_loss_weight(fresh).seg_weight == 1.0);

    LossState degenerate;
    degenerate.has_history = true;
    degenerate.rho_s = 0.0;
    degenerate.rho_r = 5.0;
    degenerate.seg_weight = 2.5;
    LossState kept = update_loss_weight(degenerate);
    CHECK(kept.seg_weight == 2.5);
    CHECK(kept.weight_frozen);
}
