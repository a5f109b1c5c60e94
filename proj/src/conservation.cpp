#include "ddln/conservation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ddln/errors.hpp"

namespace ddln {

namespace {

double sign_of(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

void require_holds(const MinLayerIndex& idx, const char* where) {
    if (!idx.holds()) {
        throw AssumptionViolated(std::string(where) +
                                 ": minimal node is not unique for some coordinate");
    }
}

void require_dim(const MinLayerIndex& idx, const LayerStack& stack) {
    if (static_cast<int>(idx.k.size()) != stack.dim()) {
        throw DimensionMismatch("MinLayerIndex has " + std::to_string(idx.k.size()) +
                                " coordinates, stack has " + std::to_string(stack.dim()));
    }
}

}  // namespace

bool MinLayerIndex::holds() const {
    return std::all_of(unique.begin(), unique.end(), [](bool b) { return b; });
}

bool MinLayerIndex::any_near_tie() const {
    return std::any_of(near_tie.begin(), near_tie.end(), [](bool b) { return b; });
}

MinLayerIndex check_assumption_A(const LayerStack& stack0, double near_tie_rel) {
    const int L = stack0.num_layers();
    const int d = stack0.dim();
    MinLayerIndex idx;
    idx.k.resize(static_cast<std::size_t>(d));
    idx.unique.resize(static_cast<std::size_t>(d));
    idx.near_tie.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        int best = 0;
        double best_abs = std::abs(stack0.node(0, i));
        for (int j = 1; j < L; ++j) {
            const double a = std::abs(stack0.node(j, i));
            if (a < best_abs) {
                best_abs = a;
                best = j;
            }
        }
        int ties = 0;
        double runner_up = std::numeric_limits<double>::infinity();
        for (int j = 0; j < L; ++j) {
            const double a = std::abs(stack0.node(j, i));
            if (a == best_abs) ++ties;
            if (j != best) runner_up = std::min(runner_up, a);
        }
        const auto ui = static_cast<std::size_t>(i);
        idx.k[ui] = best;
        idx.unique[ui] = ties == 1;
        idx.near_tie[ui] = runner_up - best_abs <= near_tie_rel * runner_up;
    }
    return idx;
}

Matrix conservation_defect(const Trajectory& traj) {
    if (traj.empty()) throw std::invalid_argument("conservation_defect: empty trajectory");
    const int L = traj.num_layers();
    const Matrix w0sq = traj.states.front().weights().array().square();
    Matrix defect = Matrix::Zero(L, L);
    for (const LayerStack& s : traj.states) {
        const Matrix growth = s.weights().array().square().matrix() - w0sq;
        for (int j = 0; j < L; ++j) {
            for (int k = j + 1; k < L; ++k) {
                const double m = (growth.row(j) - growth.row(k)).lpNorm<Eigen::Infinity>();
                defect(j, k) = std::max(defect(j, k), m);
                defect(k, j) = defect(j, k);
            }
        }
    }
    return defect;
}

SignCensus sign_census(const Trajectory& traj, const MinLayerIndex& idx) {
    require_holds(idx, "sign_census");
    if (traj.empty()) throw std::invalid_argument("sign_census: empty trajectory");
    require_dim(idx, traj.states.front());
    const int L = traj.num_layers();
    const int d = traj.dim();
    SignCensus census;
    census.crossing_layers.resize(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < L; ++j) {
            bool crossed = false;
            for (std::size_t k = 0; k < traj.size() && !crossed; ++k) {
                const double now = traj.states[k].node(j, i);
                if (now == 0.0) crossed = true;
                if (k + 1 < traj.size() &&
                    sign_of(now) * sign_of(traj.states[k + 1].node(j, i)) < 0.0) {
                    crossed = true;
                }
            }
            if (!crossed) continue;
            census.crossing_layers[static_cast<std::size_t>(i)].push_back(j);
            if (j != idx.k[static_cast<std::size_t>(i)]) ++census.violations;
        }
    }
    return census;
}

LayerStack apply_min_layer_permutation(const LayerStack& stack, const MinLayerIndex& idx) {
    require_dim(idx, stack);
    Matrix v = stack.weights();
    for (int i = 0; i < stack.dim(); ++i) {
        const int k = idx.k[static_cast<std::size_t>(i)];
        if (k != 0) std::swap(v(0, i), v(k, i));
    }
    return LayerStack(std::move(v));
}

PermutedStack min_layer_permutation(const LayerStack& stack0, const MinLayerIndex& idx) {
    require_holds(idx, "min_layer_permutation");
    LayerStack v = apply_min_layer_permutation(stack0, idx);
    const Vector v1sq = v.layer(0).array().square();
    PermutedStack out{v, {}, {}};
    for (int j = 1; j < v.num_layers(); ++j) {
        const Vector vj = v.layer(j);
        out.deltas.push_back(vj.array().square().matrix() - v1sq);
        out.signs.push_back(vj.unaryExpr([](double x) { return sign_of(x); }));
    }
    return out;
}

ThetaVector reconstruct_theta(const Vector& v1_t, const PermutedStack& perm) {
    if (v1_t.size() != perm.v_layers.dim()) {
        throw DimensionMismatch("v1 has length " + std::to_string(v1_t.size()) +
                                ", permutation expects " + std::to_string(perm.v_layers.dim()));
    }
    ThetaVector theta = v1_t;
    const Vector v1sq = v1_t.array().square();
    for (std::size_t j = 0; j < perm.deltas.size(); ++j) {
        const Vector radicand = v1sq + perm.deltas[j];
        if ((radicand.array() < 0.0).any()) {
            throw DomainError("reconstruct_theta: negative radicand (inconsistent v1 and deltas)");
        }
        theta.array() *= perm.signs[j].array() * radicand.array().sqrt();
    }
    return theta;
}

double reconstruction_error(const Trajectory& traj, const MinLayerIndex& idx) {
    if (traj.empty()) throw std::invalid_argument("reconstruction_error: empty trajectory");
    const PermutedStack perm = min_layer_permutation(traj.states.front(), idx);
    double worst = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const Vector v1 = apply_min_layer_permutation(traj.states[k], idx).layer(0);
        worst = std::max(worst, (reconstruct_theta(v1, perm) - traj.thetas[k]).lpNorm<Eigen::Infinity>());
    }
    return worst;
}

Vector m_matrix(const LayerStack& stack) {
    return leave_one_out_products(stack.weights()).array().square().colwise().sum().transpose();
}

Vector m_inverse(const Vector& m_diagonal) {
    for (Eigen::Index i = 0; i < m_diagonal.size(); ++i) {
        if (m_diagonal(i) == 0.0) {
            throw SingularMatrix("M is singular at coordinate " + std::to_string(i + 1));
        }
    }
    return m_diagonal.cwiseInverse();
}

SigmaBound sigma_lower_bound(const LayerStack& stack0, const MinLayerIndex& idx) {
    require_holds(idx, "sigma_lower_bound");
    require_dim(idx, stack0);
    SigmaBound out;
    out.per_coordinate.resize(stack0.dim());
    for (int i = 0; i < stack0.dim(); ++i) {
        const int ki = idx.k[static_cast<std::size_t>(i)];
        const double min_sq = stack0.node(ki, i) * stack0.node(ki, i);
        double prod = 1.0;
        for (int k = 0; k < stack0.num_layers(); ++k) {
            if (k != ki) prod *= stack0.node(k, i) * stack0.node(k, i) - min_sq;
        }
        out.per_coordinate(i) = prod;
    }
    out.sigma = out.per_coordinate.minCoeff();
    return out;
}

double m_bound_margin(const Trajectory& traj, const SigmaBound& bound) {
    double margin = std::numeric_limits<double>::infinity();
    for (const LayerStack& s : traj.states) {
        margin = std::min(margin, (m_matrix(s) - bound.per_coordinate).minCoeff());
    }
    return margin;
}

}  // namespace ddln
