#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "ddln/errors.hpp"
#include "ddln/flow.hpp"
#include "oracles.hpp"

using namespace ddln;

namespace {

Matrix randn(int r, int c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> nd(0.0, sd);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
}

StepController fixed(double h, double T) {
    StepController c;
    c.h = h;
    c.t_max = T;
    c.max_points = 1000000;
    return c;
}

}  // namespace

TEST_CASE("layer rhs") {
    SUBCASE("two layers, one coordinate") {
        const double a = 0.7, b = -1.3;
        const QuadraticLoss loss(Matrix{{1.0}}, Vector{{0.0}});
        const auto rhs = layer_rhs(LayerStack(Matrix{{a}, {b}}), loss);
        CHECK(rhs[0](0) == doctest::Approx(-b * 2 * a * b));
        CHECK(rhs[1](0) == doctest::Approx(-a * 2 * a * b));
    }
    SUBCASE("stationary point") {
        const QuadraticLoss loss(Matrix{{1.0}}, Vector{{6.0}});
        for (const Vector& r : layer_rhs(LayerStack(Matrix{{2.0}, {3.0}}), loss)) CHECK(r.isZero(0.0));
    }
    SUBCASE("finite differences of the composite loss") {
        std::mt19937_64 rng(4);
        for (int trial = 0; trial < 10; ++trial) {
            const Matrix X = randn(6, 3, rng);
            const Vector y = randn(6, 1, rng).col(0);
            const QuadraticLoss loss(X, y);
            const Matrix W = randn(4, 3, rng);
            const auto rhs = layer_rhs(LayerStack(W), loss);
            for (int j = 0; j < 4; ++j) {
                const Vector fd = oracle::fd_gradient(
                    [&](const Vector& row) {
                        Matrix V = W;
                        V.row(j) = row.transpose();
                        return oracle::composite_loss(X, y, V);
                    },
                    W.row(j).transpose());
                CHECK(oracle::rel_err(-rhs[static_cast<std::size_t>(j)], fd) <= 1e-6);
            }
        }
    }
}

TEST_CASE("leave-one-out products handle zeros without division") {
    const Matrix W{{0.0, 2.0}, {3.0, 0.0}, {5.0, 0.0}};
    const Matrix P = leave_one_out_products(W);
    CHECK(P(0, 0) == 15.0);
    CHECK(P(1, 0) == 0.0);
    CHECK(P(2, 0) == 0.0);
    CHECK(P(0, 1) == 0.0);
    CHECK(P(1, 1) == 0.0);
    CHECK(P(2, 1) == 0.0);
}

TEST_CASE("theta rhs") {
    // X = I, y = 0 gives grad L = 2 theta = (6, 16); M = diag(10, 20).
    const QuadraticLoss loss(Matrix::Identity(2, 2), Vector::Zero(2));
    const Vector r = theta_rhs(LayerStack(Matrix{{1.0, 2.0}, {3.0, 4.0}}), loss);
    CHECK(r(0) == doctest::Approx(-60.0));
    CHECK(r(1) == doctest::Approx(-320.0));

    const QuadraticLoss stationary(Matrix{{1.0}}, Vector{{6.0}});
    CHECK(theta_rhs(LayerStack(Matrix{{2.0}, {3.0}}), stationary).isZero(0.0));

    SUBCASE("product rule on 100 random stacks") {
        std::mt19937_64 rng(8);
        std::uniform_int_distribution<int> Ld(2, 5), dd(1, 6);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const int L = Ld(rng), d = dd(rng);
            const QuadraticLoss l(randn(5, d, rng), randn(5, 1, rng).col(0));
            const Matrix W = randn(L, d, rng);
            const auto rhs = layer_rhs(LayerStack(W), l);
            Vector combo = Vector::Zero(d);
            for (int j = 0; j < L; ++j) {
                Vector p = Vector::Ones(d);
                for (int k = 0; k < L; ++k)
                    if (k != j) p = p.cwiseProduct(W.row(k).transpose());
                combo += p.cwiseProduct(rhs[static_cast<std::size_t>(j)]);
            }
            worst = std::max(worst, oracle::rel_err(theta_rhs(LayerStack(W), l), combo));
        }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("step controller validation") {
    StepController c;
    CHECK_NOTHROW(c.validate());
    c.h = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = StepController{};
    c.t_max = -1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = StepController{};
    c.rtol = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("integrate: equilibrium") {
    const QuadraticLoss loss(Matrix{{1.0}}, Vector{{6.0}});
    const Trajectory tr = integrate(LayerStack(Matrix{{2.0}, {3.0}}), loss, fixed(1e-2, 1.0));
    for (std::size_t k = 0; k < tr.size(); ++k) {
        CHECK(tr.thetas[k](0) == 6.0);
        CHECK(tr.losses[k] == loss.optimal_value());
        CHECK(tr.xi[k](0) == 0.0);
    }
}

TEST_CASE("integrate: tiny-step Euler oracle") {
    const QuadraticLoss loss(Matrix{{1.0}}, Vector{{0.0}});
    const Matrix W0{{1.0}, {2.0}};
    const Trajectory tr = integrate(LayerStack(W0), loss, fixed(1e-3, 1.0));
    const Matrix We = oracle::euler_layers(Matrix{{1.0}}, Vector{{0.0}}, W0, 1e-6, 1000000);
    CHECK(std::abs(tr.thetas.back()(0) - We(0, 0) * We(1, 0)) <= 1e-5);
    CHECK(tr.times.back() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("integrate: trajectory invariants") {
    std::mt19937_64 rng(17);
    const QuadraticLoss loss(randn(10, 5, rng, 1.0 / std::sqrt(10.0)), randn(10, 1, rng).col(0));
    const Trajectory tr = integrate(LayerStack(randn(4, 5, rng, 0.7)), loss, fixed(1e-3, 5.0));
    CHECK(tr.size() == 5001);
    CHECK(tr.steps == 5000);
    CHECK(tr.xi.front().isZero(0.0));
    CHECK(tr.times.front() == 0.0);
    for (std::size_t k = 0; k < tr.size(); ++k) {
        CHECK(tr.thetas[k] == theta_of_layers(tr.states[k]));
        if (k > 0) {
            CHECK(tr.times[k] > tr.times[k - 1]);
            CHECK(tr.losses[k] <= tr.losses[k - 1] + 1e-10);
        }
    }
    CHECK(tr.losses.back() <= tr.losses.front());

    SUBCASE("xi is minus the integral of the gradient") {
        // trapezoid on the recorded grid, O(h^2) accurate
        Vector acc = Vector::Zero(5);
        double worst = 0.0;
        for (std::size_t k = 1; k < tr.size(); ++k) {
            const double h = tr.times[k] - tr.times[k - 1];
            acc -= 0.5 * h * (loss.gradient(tr.thetas[k]) + loss.gradient(tr.thetas[k - 1]));
            worst = std::max(worst, (acc - tr.xi[k]).lpNorm<Eigen::Infinity>());
        }
        CHECK(worst <= 1e-5);
    }
    SUBCASE("deterministic") {
        std::mt19937_64 rng2(17);
        const QuadraticLoss loss2(randn(10, 5, rng2, 1.0 / std::sqrt(10.0)), randn(10, 1, rng2).col(0));
        const Trajectory tr2 = integrate(LayerStack(randn(4, 5, rng2, 0.7)), loss2, fixed(1e-3, 5.0));
        CHECK(tr2.thetas.back() == tr.thetas.back());
        CHECK(tr2.xi.back() == tr.xi.back());
    }
}

TEST_CASE("integrate: order of accuracy") {
    std::mt19937_64 rng(23);
    const QuadraticLoss loss(randn(6, 3, rng, 1.0 / std::sqrt(6.0)), randn(6, 1, rng).col(0));
    const LayerStack s0(randn(2, 3, rng));
    const auto end = [&](double h, StepController::Scheme scheme) {
        StepController c = fixed(h, 1.0);
        c.scheme = scheme;
        const Trajectory tr = integrate(s0, loss, c);
        Vector v(6);
        v << tr.states.back().layer(0), tr.states.back().layer(1);
        return v;
    };
    SUBCASE("rk4 is fourth order") {
        // against an h/4 reference the ratio is (255/256) / (15/256) = 17
        const Vector ref = end(0.05 / 4, StepController::Scheme::rk4);
        const double e1 = (end(0.05, StepController::Scheme::rk4) - ref).lpNorm<Eigen::Infinity>();
        const double e2 = (end(0.025, StepController::Scheme::rk4) - ref).lpNorm<Eigen::Infinity>();
        CHECK(e1 / e2 >= 13.0);
        CHECK(e1 / e2 <= 20.0);
    }
    SUBCASE("euler is first order") {
        const Vector ref = end(1e-3 / 4, StepController::Scheme::euler);
        const double e1 = (end(1e-3, StepController::Scheme::euler) - ref).lpNorm<Eigen::Infinity>();
        const double e2 = (end(5e-4, StepController::Scheme::euler) - ref).lpNorm<Eigen::Infinity>();
        // against an h/4 reference the first-order ratio is (3/4) / (1/4) = 3
        CHECK(e1 / e2 >= 2.5);
        CHECK(e1 / e2 <= 3.5);
    }
}

TEST_CASE("integrate: decimation keeps the final point and the full-resolution xi") {
    std::mt19937_64 rng(29);
    const QuadraticLoss loss(randn(8, 4, rng, 0.35), randn(8, 1, rng).col(0));
    const LayerStack s0(randn(3, 4, rng));
    const Trajectory full = integrate(s0, loss, fixed(1e-3, 2.0));
    StepController c = fixed(1e-3, 2.0);
    c.max_points = 100;
    const Trajectory thin = integrate(s0, loss, c);
    CHECK(thin.size() <= 100);
    CHECK(thin.size() >= 50);
    CHECK(thin.steps == full.steps);
    CHECK(thin.times.back() == full.times.back());
    CHECK(thin.xi.back() == full.xi.back());
    CHECK(thin.states.back() == full.states.back());
}

TEST_CASE("integrate: adaptive mode") {
    std::mt19937_64 rng(31);
    const QuadraticLoss loss(randn(8, 4, rng, 0.35), randn(8, 1, rng).col(0));
    const LayerStack s0(randn(3, 4, rng));
    const Trajectory ref = integrate(s0, loss, fixed(1e-4, 3.0));
    StepController c;
    c.mode = StepController::Mode::adaptive;
    c.t_max = 3.0;
    const Trajectory ad = integrate(s0, loss, c);
    CHECK(ad.times.back() == doctest::Approx(3.0).epsilon(1e-14));
    CHECK((ad.thetas.back() - ref.thetas.back()).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK((ad.xi.back() - ref.xi.back()).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(ad.steps < ref.steps);
}

TEST_CASE("integrate: stop on loss gap") {
    const QuadraticLoss loss(Matrix::Identity(2, 2), Vector{{1.0, -2.0}});
    StepController c;
    c.mode = StepController::Mode::adaptive;
    c.t_max = 1e4;
    c.stop_gap = 1e-8;
    const Trajectory tr = integrate(LayerStack(Matrix{{0.5, 0.4}, {0.6, -0.3}}), loss, c);
    CHECK(tr.losses.back() - loss.optimal_value() <= 1e-8);
    CHECK(tr.times.back() < 1e4);
}

TEST_CASE("integrate: divergence guard reports the time") {
    const QuadraticLoss loss(Matrix{{1.0}}, Vector{{0.0}});
    try {
        integrate(LayerStack(Matrix{{10.0}, {10.0}}), loss, fixed(1.0, 100.0));
        FAIL("expected IntegrationError");
    } catch (const IntegrationError& e) {
        CHECK(e.time() > 0.0);
        CHECK(e.time() <= 100.0);
    }
    CHECK_THROWS_AS(integrate(LayerStack(Matrix{{1.0, 1.0}, {1.0, 1.0}}), loss, fixed(1e-3, 1.0)),
                    DimensionMismatch);
}

TEST_CASE("integrate redundant") {
    const QuadraticLoss loss(Matrix{{1.0, 0.5}, {0.2, 1.0}}, Vector{{2.0, 1.5}});
    const Trajectory tr = integrate_redundant(Vector{{0.8, 0.9}}, 3, loss, fixed(1e-3, 2.0));
    CHECK(tr.architecture == Architecture::redundant);
    CHECK(tr.num_layers() == 3);
    for (std::size_t k = 0; k < tr.size(); k += 100) {
        CHECK(tr.states[k].layer(0) == tr.states[k].layer(2));
        CHECK(tr.thetas[k] == theta_of_layers(tr.states[k]));
    }
    // plain Euler on du/dt = -3 u^2 grad L(u^3)
    Vector u{{0.8, 0.9}};
    for (int s = 0; s < 2000000; ++s) {
        const Vector g = loss.gradient(u.array().pow(3).matrix());
        u -= 1e-6 * (3.0 * u.array().square() * g.array()).matrix();
    }
    CHECK((tr.states.back().layer(0) - u).lpNorm<Eigen::Infinity>() <= 1e-5);
    CHECK_THROWS_AS(integrate_redundant(Vector{{1.0}}, 1, QuadraticLoss(Matrix{{1.0}}, Vector{{1.0}}),
                                        fixed(1e-3, 1.0)),
                    std::invalid_argument);
}

TEST_CASE("trajectory csv") {
    const QuadraticLoss loss(Matrix{{1.0, 2.0}}, Vector{{1.0}});
    StepController c = fixed(0.1, 0.2);
    const Trajectory tr = integrate(LayerStack(Matrix{{0.3, 0.1}, {0.2, 0.4}}), loss, c);
    std::ostringstream a, b;
    write_trajectory_csv(a, tr, true);
    write_trajectory_csv(b, tr, false);
    std::istringstream in(a.str());
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,loss,theta_1,theta_2,xi_1,xi_2,u_1_1,u_1_2,u_2_1,u_2_2");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
    CHECK(b.str().substr(0, b.str().find('\n')) == "t,loss,theta_1,theta_2,xi_1,xi_2");
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(std::stod(format_double(tr.losses.back())) == tr.losses.back());
}
