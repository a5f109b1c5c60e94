#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "ddln/model.hpp"

namespace ddln {

/// How theta is built from the trained weights.
enum class Architecture {
    deep_diagonal,  // theta = u^1 (.) ... (.) u^L, layers trained independently
    redundant,      // theta = u^L with one shared vector u
};

struct StepController {
    enum class Mode { fixed, adaptive };
    enum class Scheme { rk4, euler };

    Mode mode = Mode::fixed;
    Scheme scheme = Scheme::rk4;
    double h = 1e-3;
    double rtol = 1e-8;
    double atol = 1e-10;
    double t_max = 1.0;
    /// Snapshots kept after decimation. xi is always accumulated on every step.
    std::size_t max_points = 5000;
    /// Stop as soon as loss - L* <= stop_gap. Disabled when <= 0.
    double stop_gap = 0.0;
    double divergence_bound = 1e12;
    double min_step = 1e-14;

    /// Throws std::invalid_argument on non-positive step, tolerance or horizon.
    void validate() const;
};

struct Trajectory {
    Architecture architecture = Architecture::deep_diagonal;
    std::vector<double> times;
    std::vector<LayerStack> states;
    std::vector<ThetaVector> thetas;
    /// xi(t) = -int_0^t grad L(theta(s)) ds, xi[0] == 0.
    std::vector<Vector> xi;
    std::vector<double> losses;
    /// Accepted integration steps, including those dropped by decimation.
    std::size_t steps = 0;

    std::size_t size() const { return times.size(); }
    bool empty() const { return times.empty(); }
    int num_layers() const { return states.front().num_layers(); }
    int dim() const { return states.front().dim(); }
};

/// Column i holds prod_{k != j} u^k_i in row j. No division, so zero nodes are fine.
Matrix leave_one_out_products(const Matrix& weights);

/// du^j/dt = -(prod_{k != j} u^k) (.) grad L(theta), one entry per layer.
std::vector<Vector> layer_rhs(const LayerStack& stack, const Loss& loss);

/// dtheta/dt = -M(u) grad L(theta) with M = diag(sum_j prod_{k != j} (u^k)^2).
Vector theta_rhs(const LayerStack& stack, const Loss& loss);

/// Gradient flow on all L layers of a deep diagonal network.
Trajectory integrate(const LayerStack& stack0, const Loss& loss, const StepController& ctrl);

/// Gradient flow on the shared vector of theta = u^L (redundant network).
/// Snapshots store L identical copies of u so theta_of_layers still applies.
Trajectory integrate_redundant(const Vector& u0, int num_layers, const Loss& loss,
                               const StepController& ctrl);

/// Header `t,loss,theta_1..theta_d,xi_1..xi_d[,u_j_i...]`, values as %.17g.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool include_layers);

/// printf-style "%.17g" for doubles; shared by every CSV writer.
std::string format_double(double value);

}  // namespace ddln
