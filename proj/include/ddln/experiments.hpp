#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ddln/conservation.hpp"
#include "ddln/flow.hpp"
#include "ddln/mirror.hpp"
#include "ddln/model.hpp"

namespace ddln {

// ---------------------------------------------------------------------------
// Problem generation. X entries are N(0, 1/n) so columns have roughly unit
// norm; the positive generator draws X and theta_true from uniform (0, 1].

/// X ~ N(0, 1/n), y ~ N(0, 1). y is generally outside range(X) when n > d.
QuadraticLoss gaussian_problem(int n, int d, std::uint64_t seed);

/// X ~ N(0, 1/n), y = X theta_true with `support` nonzero N(0, 1) entries
/// in the leading coordinates of theta_true.
QuadraticLoss sparse_interpolation_problem(int n, int d, int support, std::uint64_t seed);

/// X, theta_true ~ U(0, 1], y = X theta_true > 0.
QuadraticLoss positive_problem(int n, int d, std::uint64_t seed);

/// Seed for the initialization stream derived from the problem seed.
std::uint64_t init_seed(std::uint64_t seed);

// ---------------------------------------------------------------------------

enum class ExperimentKind { simulate, crossings, convergence, bias, paramcheck };
enum class BiasModel { two_layer, redundant };

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::simulate;
    int n = 10;
    int d = 5;
    int L = 4;
    std::uint64_t seed = 0;
    double t_max = 10.0;
    double h = 1e-3;
    bool adaptive = false;
    InitScheme init;
    /// Scale sweep: one run per scale, fig3 scheme, same seed.
    std::vector<double> scales;
    /// Bias sweep: Delta0 = alpha (u(0) = sqrt(alpha), v(0) = 0).
    std::vector<double> alphas{1.0, 0.1, 0.01};
    double large_alpha = 100.0;
    BiasModel bias_model = BiasModel::two_layer;
    /// 0-based coordinate whose nodes the crossings CSV lists.
    int coordinate = 0;
    std::string output_path;
    std::string diagnostics_path;

    /// Throws std::invalid_argument on sizes < 1, L < 2, t_max <= 0 or h <= 0.
    void validate() const;
    StepController controller() const;
};

// ---------------------------------------------------------------------------
// Polyak-Lojasiewicz rate check.

/// mu = 2 * smallest nonzero eigenvalue of X X^T, so that
/// 2 mu (L(theta) - L*) <= ||grad L(theta)||^2 for every theta.
/// Throws std::invalid_argument for an all-zero X.
double pl_constant(const QuadraticLoss& loss);

struct RateCheck {
    double sigma = 0.0;
    double mu = 0.0;
    int violations = 0;
    /// max_t of gap(t) - bound(t); negative when the bound is never reached.
    double worst_excess = 0.0;
};

/// Slack added to e^{-2 sigma mu t} gap(0) before counting a violation: the
/// floating-point floor of a computed gap, 1e-12 * max(1, L(theta(0))).
double rate_slack(double initial_loss);

RateCheck check_rate(const Trajectory& traj, const Loss& loss, double sigma, double mu);

/// First time the gap L - L* drops to `target`, log-linear between snapshots.
std::optional<double> time_to_gap(const Trajectory& traj, const Loss& loss, double target);

struct ConvergenceRun {
    double scale = 1.0;
    Trajectory trajectory;
    MinLayerIndex index;
    SigmaBound sigma;
    RateCheck rate;
    std::optional<double> time_to_target;
};

struct ConvergenceResult {
    QuadraticLoss loss;
    std::vector<ConvergenceRun> runs;  // in configuration order
    /// Time-to-gap strictly decreasing and sigma strictly increasing in scale.
    bool ordering_holds = true;
};

inline constexpr double kTargetGap = 1e-6;

/// One run per entry of cfg.scales (or a single run with cfg.init when the
/// list is empty). Runs execute concurrently; results keep config order.
ConvergenceResult run_convergence(const ExperimentConfig& cfg);

/// Schema `t,loss_gap,log_loss_gap,bound`.
void write_convergence_csv(std::ostream& out, const ConvergenceRun& run, const Loss& loss);

// ---------------------------------------------------------------------------
// Node crossings.

struct CrossingsResult {
    QuadraticLoss loss;
    Trajectory trajectory;
    MinLayerIndex index;
    SignCensus census;
};

CrossingsResult run_crossings(const ExperimentConfig& cfg);

/// Schema `t,u_1_i,...,u_L_i` for 0-based coordinate i (printed 1-based).
void write_crossings_csv(std::ostream& out, const Trajectory& traj, int coordinate);

// ---------------------------------------------------------------------------
// Implicit bias.

struct KktSolution {
    Vector nu;
    ThetaVector theta_star;
    double residual = 0.0;      // ||X theta* - y||_inf
    double kkt_residual = 0.0;  // ||grad Q(theta*) - X^T omega||_inf
    int iterations = 0;
};

/// Damped Newton on F(nu) = X Psi(X^T nu) - y with Jacobian
/// X diag(Psi'(X^T nu)) X^T; step halving until ||F||^2 satisfies Armijo.
/// Throws ConvergenceError after max_iter iterations or a rank-deficient Jacobian.
KktSolution solve_kkt_bias(const QuadraticLoss& loss, const EntropyMap& map, double tol = 1e-12,
                           int max_iter = 50);

struct MinNormSolution {
    double norm = 0.0;
    Vector theta;
};

/// min ||theta||_1 s.t. X theta = y by enumerating basic solutions (supports of
/// size rank(X)). Exact; exponential in d, meant for d <= ~12.
MinNormSolution min_l1_solution(const Matrix& X, const Vector& y);

/// Integrate until L - L* <= gap or t_max, adaptive RK4.
Trajectory flow_limit(const LayerStack& stack0, const Loss& loss, double gap = 1e-10,
                      double t_max = 1e5);

struct BiasRow {
    double alpha = 0.0;
    double l1_norm = 0.0;
    double l1_min = 0.0;
    double linf_mismatch = 0.0;    // ||theta_inf - theta*||_inf
    double l2_distance = 0.0;      // ||theta_inf - theta_L2||_inf / ||theta_L2||_inf
    double final_gap = 0.0;
};

struct BiasResult {
    std::vector<BiasRow> rows;  // cfg.alphas in order, then large_alpha
    double max_mismatch = 0.0;
    bool l1_gap_decreasing = true;
    double l1_relative_gap_small = 0.0;  // at the smallest alpha
    double l2_relative_large = 0.0;      // at large_alpha
};

BiasResult run_bias(const ExperimentConfig& cfg);

/// Schema `alpha,l1_norm,l1_min,linf_mismatch`.
void write_bias_csv(std::ostream& out, const BiasResult& result);

// ---------------------------------------------------------------------------
// Parameterization certificate.

struct CertificationRow {
    std::string claim;
    double value = 0.0;      // worst observed defect / count
    double tolerance = 0.0;
    bool passed = false;
};

/// Randomized certificate of the commuting and regularity properties of the
/// Hadamard block parameterization with cfg.L layers and cfg.d coordinates.
std::vector<CertificationRow> run_paramcheck(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Diagnostics for a single deep diagonal trajectory.

struct DiagnosticsReport {
    Matrix conservation;
    MinLayerIndex index;
    std::optional<SignCensus> census;
    std::optional<double> reconstruction_error;
    std::optional<SigmaBound> sigma;
    std::optional<double> m_margin;
    std::optional<double> mirror_general;
    std::optional<double> mirror_closed_form;
    std::optional<RateCheck> rate;
    bool on_manifold = true;
    double max_spacing = 0.0;
};

DiagnosticsReport diagnose(const Trajectory& traj, const QuadraticLoss& loss);

/// Report written as `# section` headers followed by CSV rows.
void write_diagnostics_csv(std::ostream& out, const DiagnosticsReport& report);

}  // namespace ddln
