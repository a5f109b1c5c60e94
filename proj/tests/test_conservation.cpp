#include <doctest.h>

#include <cmath>
#include <random>

#include "ddln/conservation.hpp"
#include "ddln/errors.hpp"
#include "ddln/experiments.hpp"
#include "oracles.hpp"

using namespace ddln;

namespace {

StepController fixed(double h, double T) {
    StepController c;
    c.h = h;
    c.t_max = T;
    return c;
}

Trajectory random_run(int L, int d, std::uint64_t seed, double T = 10.0) {
    const QuadraticLoss loss = gaussian_problem(10, d, seed);
    return integrate(init_layers(d, L, InitScheme{}, init_seed(seed)), loss, fixed(1e-3, T));
}

Trajectory equilibrium() {
    const QuadraticLoss loss(Matrix{{1.0, 0.0}, {0.0, 1.0}}, Vector{{6.0, -2.0}});
    return integrate(LayerStack(Matrix{{2.0, 1.0}, {3.0, -2.0}}), loss, fixed(1e-2, 1.0));
}

}  // namespace

TEST_CASE("assumption A") {
    const MinLayerIndex tied = check_assumption_A(LayerStack(Matrix{{1.0, 1.0}, {1.0, 2.0}}));
    CHECK_FALSE(tied.holds());
    CHECK_FALSE(tied.unique[0]);
    CHECK(tied.unique[1]);

    const MinLayerIndex ok = check_assumption_A(LayerStack(Matrix{{-1.0, 2.0}, {2.0, 1.0}}));
    CHECK(ok.holds());
    CHECK(ok.k == std::vector<int>{0, 1});

    // |-1| == |1| is a tie
    CHECK_FALSE(check_assumption_A(LayerStack(Matrix{{-1.0}, {1.0}, {3.0}})).holds());

    SUBCASE("near tie flagged but still unique") {
        const MinLayerIndex near = check_assumption_A(LayerStack(Matrix{{1.0}, {1.0 + 1e-12}}));
        CHECK(near.holds());
        CHECK(near.any_near_tie());
        CHECK_FALSE(check_assumption_A(LayerStack(Matrix{{1.0}, {1.1}})).any_near_tie());
    }
    SUBCASE("random uniform inits never tie") {
        int violations = 0;
        for (std::uint64_t s = 0; s < 1000; ++s)
            if (!check_assumption_A(init_layers(5, 4, InitScheme{}, s)).holds()) ++violations;
        CHECK(violations == 0);
    }
}

TEST_CASE("conservation defect") {
    const LayerStack s0(Matrix{{0.3, -0.2}, {1.0, 0.5}, {-0.7, 0.9}});
    Trajectory one;
    one.times = {0.0};
    one.states = {s0};
    one.thetas = {theta_of_layers(s0)};
    one.xi = {Vector::Zero(2)};
    one.losses = {0.0};
    CHECK(conservation_defect(one).isZero(0.0));
    CHECK(conservation_defect(equilibrium()).isZero(0.0));

    const Trajectory tr = random_run(4, 5, 3);
    const Matrix D = conservation_defect(tr);
    CHECK(D.rows() == 4);
    CHECK(D.maxCoeff() <= 1e-6);
    CHECK(D.isApprox(D.transpose()));

    SUBCASE("detects a broken trajectory") {
        Trajectory bad = tr;
        Matrix W = bad.states.back().weights();
        W(0, 0) += 0.1;
        bad.states.back() = LayerStack(W);
        CHECK(conservation_defect(bad).maxCoeff() > 1e-3);
    }
}

TEST_CASE("sign census") {
    SUBCASE("equilibrium has no crossings") {
        const Trajectory eq = equilibrium();
        const SignCensus c = sign_census(eq, check_assumption_A(eq.states.front()));
        CHECK(c.verified());
        for (const auto& s : c.crossing_layers) CHECK(s.empty());
    }
    SUBCASE("requires assumption A") {
        const Trajectory eq = equilibrium();
        MinLayerIndex idx = check_assumption_A(eq.states.front());
        idx.unique[0] = false;
        CHECK_THROWS_AS(sign_census(eq, idx), AssumptionViolated);
    }
    SUBCASE("a crossing in a non-minimal layer is a violation") {
        Trajectory tr;
        tr.times = {0.0, 1.0, 2.0};
        tr.states = {LayerStack(Matrix{{0.1}, {1.0}}), LayerStack(Matrix{{-0.1}, {1.0}}),
                     LayerStack(Matrix{{-0.1}, {-1.0}})};
        for (const auto& s : tr.states) tr.thetas.push_back(theta_of_layers(s));
        const SignCensus c = sign_census(tr, check_assumption_A(tr.states.front()));
        CHECK(c.crossing_layers[0] == std::vector<int>{0, 1});
        CHECK(c.violations == 1);
    }
    SUBCASE("touching zero counts") {
        Trajectory tr;
        tr.times = {0.0, 1.0};
        tr.states = {LayerStack(Matrix{{0.1}, {1.0}}), LayerStack(Matrix{{0.0}, {1.0}})};
        const SignCensus c = sign_census(tr, check_assumption_A(tr.states.front()));
        CHECK(c.crossing_layers[0] == std::vector<int>{0});
        CHECK(c.verified());
    }
    SUBCASE("fifty random runs") {
        int violations = 0;
        for (std::uint64_t s = 0; s < 50; ++s) {
            const Trajectory tr = random_run(2 + static_cast<int>(s % 4), 5, 500 + s, 5.0);
            violations += sign_census(tr, check_assumption_A(tr.states.front())).violations;
        }
        CHECK(violations == 0);
    }
}

TEST_CASE("min-layer permutation") {
    SUBCASE("identity when layer 1 is already minimal") {
        const LayerStack s(Matrix{{0.1, -0.2}, {1.0, 2.0}, {-3.0, 0.5}});
        const MinLayerIndex idx = check_assumption_A(s);
        CHECK(idx.k == std::vector<int>{0, 0});
        CHECK(min_layer_permutation(s, idx).v_layers == s);
    }
    SUBCASE("swap example") {
        const LayerStack s(Matrix{{5.0}, {2.0}});
        const PermutedStack p = min_layer_permutation(s, check_assumption_A(s));
        CHECK(p.v_layers.node(0, 0) == 2.0);
        CHECK(p.v_layers.node(1, 0) == 5.0);
        CHECK(p.deltas[0](0) == 21.0);
        CHECK(p.signs[0](0) == 1.0);
    }
    SUBCASE("swap moves the displaced node into the vacated slot") {
        const LayerStack s(Matrix{{3.0}, {4.0}, {-1.0}, {2.0}});
        const LayerStack v = apply_min_layer_permutation(s, check_assumption_A(s));
        CHECK(v.weights() == Matrix{{-1.0}, {4.0}, {3.0}, {2.0}});
    }
    SUBCASE("theta preserved up to the rounding of a reordered product, deltas positive") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const LayerStack s = init_layers(6, 5, InitScheme{}, seed);
            const MinLayerIndex idx = check_assumption_A(s);
            const PermutedStack p = min_layer_permutation(s, idx);
            CHECK(oracle::rel_err(theta_of_layers(p.v_layers), theta_of_layers(s)) <= 4e-16 * 5);
            for (const Vector& dl : p.deltas) CHECK(dl.minCoeff() > 0.0);
        }
    }
    SUBCASE("requires assumption A") {
        const LayerStack s(Matrix{{1.0}, {1.0}});
        CHECK_THROWS_AS(min_layer_permutation(s, check_assumption_A(s)), AssumptionViolated);
    }
}

TEST_CASE("reconstruction") {
    SUBCASE("recovers theta(0)") {
        const LayerStack s = init_layers(5, 4, InitScheme{}, 77);
        const MinLayerIndex idx = check_assumption_A(s);
        const PermutedStack p = min_layer_permutation(s, idx);
        CHECK(oracle::rel_err(reconstruct_theta(p.v_layers.layer(0), p), theta_of_layers(s)) <= 1e-14);
    }
    SUBCASE("two-layer form") {
        const LayerStack s(Matrix{{0.5, -3.0}, {-2.0, 0.25}});
        const PermutedStack p = min_layer_permutation(s, check_assumption_A(s));
        const Vector v1{{0.7, -0.4}};
        const Vector expected = v1.cwiseProduct(p.signs[0]).cwiseProduct(
            (v1.array().square() + p.deltas[0].array()).sqrt().matrix());
        CHECK(oracle::rel_err(reconstruct_theta(v1, p), expected) <= 1e-15);
    }
    SUBCASE("along trajectories, including sign changes of the minimal node") {
        for (std::uint64_t s = 0; s < 10; ++s) {
            const Trajectory tr = random_run(2 + static_cast<int>(s % 4), 6, 900 + s);
            CHECK(reconstruction_error(tr, check_assumption_A(tr.states.front())) <= 1e-6);
        }
    }
    SUBCASE("first layer exactly zero") {
        const QuadraticLoss loss = gaussian_problem(10, 8, 5);
        const LayerStack s0 = init_layers(8, 6, InitScheme{InitKind::fig3, 1.0, {}}, 5);
        const Trajectory tr = integrate(s0, loss, fixed(1e-3, 2.0));
        const MinLayerIndex idx = check_assumption_A(s0);
        CHECK(reconstruction_error(tr, idx) <= 1e-6);
        CHECK(tr.thetas.back().lpNorm<Eigen::Infinity>() > 1e-3);
    }
    SUBCASE("negative radicand is a domain error") {
        const LayerStack s(Matrix{{0.5}, {2.0}});
        PermutedStack p = min_layer_permutation(s, check_assumption_A(s));
        p.deltas[0](0) = -1.0;
        CHECK_THROWS_AS(reconstruct_theta(Vector{{0.1}}, p), DomainError);
    }
}

TEST_CASE("M matrix and sigma") {
    CHECK(m_matrix(LayerStack(Matrix{{1.0, 2.0}, {3.0, 4.0}})) == Vector{{10.0, 20.0}});
    CHECK(m_matrix(LayerStack(Matrix{{1.0}, {2.0}, {3.0}}))(0) == 49.0);
    CHECK(m_inverse(Vector{{2.0, 4.0}}) == Vector{{0.5, 0.25}});
    CHECK_THROWS_AS(m_inverse(m_matrix(LayerStack(Matrix{{0.0}, {0.0}, {1.0}}))), SingularMatrix);

    const LayerStack a(Matrix{{1.0}, {2.0}, {3.0}});
    CHECK(sigma_lower_bound(a, check_assumption_A(a)).sigma == 24.0);
    const LayerStack b(Matrix{{1.0, 3.0}, {2.0, 2.0}});
    const SigmaBound sb = sigma_lower_bound(b, check_assumption_A(b));
    CHECK(sb.per_coordinate == Vector{{3.0, 5.0}});
    CHECK(sb.sigma == 3.0);
    const LayerStack tied(Matrix{{1.0}, {1.0}});
    CHECK_THROWS_AS(sigma_lower_bound(tied, check_assumption_A(tied)), AssumptionViolated);

    SUBCASE("M stays above the per-coordinate products along runs") {
        for (std::uint64_t s = 0; s < 20; ++s) {
            const Trajectory tr = random_run(2 + static_cast<int>(s % 4), 5, 40 + s, 5.0);
            const SigmaBound bound = sigma_lower_bound(tr.states.front(), check_assumption_A(tr.states.front()));
            CHECK(bound.sigma > 0.0);
            CHECK(m_bound_margin(tr, bound) >= -1e-12 * std::max(1.0, bound.per_coordinate.maxCoeff()));
            double lam_min = INFINITY;
            for (const LayerStack& st : tr.states) lam_min = std::min(lam_min, m_matrix(st).minCoeff());
            CHECK(lam_min >= bound.sigma * (1 - 1e-12));
        }
    }
}
