#pragma once

#include <vector>

#include "ddln/flow.hpp"
#include "ddln/model.hpp"

namespace ddln {

/// Per coordinate, the layer holding the node of minimal |u^k_i(0)|.
struct MinLayerIndex {
    std::vector<int> k;           // 0-based layer index
    std::vector<bool> unique;     // exact-tie test on |u^k_i(0)|
    std::vector<bool> near_tie;   // runner-up within the relative near-tie threshold

    /// Every coordinate has a unique minimal node.
    bool holds() const;
    bool any_near_tie() const;
};

/// Exact float equality decides ties; near_tie flags gaps below
/// near_tie_rel * |runner-up|, where sigma is tiny and the rate bound useless.
MinLayerIndex check_assumption_A(const LayerStack& stack0, double near_tie_rel = 1e-9);

/// Entry (j,k) = max_{t,i} |(u^j_i(t)^2 - u^j_i(0)^2) - (u^k_i(t)^2 - u^k_i(0)^2)|.
Matrix conservation_defect(const Trajectory& traj);

struct SignCensus {
    /// crossing_layers[i] = 0-based layers whose node i changed sign or hit 0.
    std::vector<std::vector<int>> crossing_layers;
    /// Number of (coordinate, layer) crossings outside the minimal layer.
    int violations = 0;
    bool verified() const { return violations == 0; }
};

/// Grid-resolution census: a crossing between consecutive snapshots is
/// sign(u(t_k)) * sign(u(t_{k+1})) < 0. Double crossings inside one grid
/// interval are invisible. Throws AssumptionViolated if idx does not hold.
SignCensus sign_census(const Trajectory& traj, const MinLayerIndex& idx);

struct PermutedStack {
    /// Layer 0 gathers the minimal nodes of every coordinate.
    LayerStack v_layers;
    /// deltas[j-1] = v^j(0)^2 - v^0(0)^2 for j = 1..L-1.
    std::vector<Vector> deltas;
    /// signs[j-1] = sign(v^j(0)) for j = 1..L-1.
    std::vector<Vector> signs;
};

/// Swaps the minimal node of each coordinate into layer 0 and the displaced
/// node into the vacated slot. Applying it to any snapshot gives v(t).
LayerStack apply_min_layer_permutation(const LayerStack& stack, const MinLayerIndex& idx);

PermutedStack min_layer_permutation(const LayerStack& stack0, const MinLayerIndex& idx);

/// theta(t) rebuilt from v^0(t) and the initialization alone:
///   theta = v^0 (.) sign(prod_{j>=1} v^j(0)) (.) prod_{j>=1} sqrt(v^0(t)^2 + Delta_j).
/// Carrying v^0 itself (not |v^0| with the t=0 sign) keeps the sign right
/// after the minimal node crosses zero.
ThetaVector reconstruct_theta(const Vector& v1_t, const PermutedStack& perm);

/// max_t ||reconstruct_theta(v^0(t)) - theta(t)||_inf along a trajectory.
double reconstruction_error(const Trajectory& traj, const MinLayerIndex& idx);

/// Diagonal of M = diag(sum_j prod_{k != j} (u^k_i)^2).
Vector m_matrix(const LayerStack& stack);

/// Diagonal of M^{-1}; throws SingularMatrix if an entry is zero.
Vector m_inverse(const Vector& m_diagonal);

struct SigmaBound {
    double sigma = 0.0;
    /// prod_{k != k_i} (u^k_i(0)^2 - u^{k_i}_i(0)^2) for each coordinate.
    Vector per_coordinate;
};

SigmaBound sigma_lower_bound(const LayerStack& stack0, const MinLayerIndex& idx);

/// min over snapshots and coordinates of m_i(t) - sigma_i; >= 0 when the
/// lower bound on M holds along the run.
double m_bound_margin(const Trajectory& traj, const SigmaBound& bound);

}  // namespace ddln
