#include "ddln/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "ddln/errors.hpp"
#include "ddln/paramcheck.hpp"

namespace ddln {

// ---------------------------------------------------------------------------
// Problems

namespace {

Matrix gaussian_design(int n, int d, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
    Matrix X(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) X(r, c) = normal(rng);
    return X;
}

void check_sizes(int n, int d) {
    if (n < 1 || d < 1) throw std::invalid_argument("problem sizes must be >= 1");
}

}  // namespace

QuadraticLoss gaussian_problem(int n, int d, std::uint64_t seed) {
    check_sizes(n, d);
    std::mt19937_64 rng(seed);
    Matrix X = gaussian_design(n, d, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector y(n);
    for (int r = 0; r < n; ++r) y(r) = normal(rng);
    return QuadraticLoss(std::move(X), std::move(y));
}

QuadraticLoss sparse_interpolation_problem(int n, int d, int support, std::uint64_t seed) {
    check_sizes(n, d);
    if (support < 1 || support > d) throw std::invalid_argument("support must be in [1, d]");
    std::mt19937_64 rng(seed);
    Matrix X = gaussian_design(n, d, rng);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector theta = Vector::Zero(d);
    for (int i = 0; i < support; ++i) theta(i) = normal(rng);
    Vector y = X * theta;
    return QuadraticLoss(std::move(X), std::move(y));
}

QuadraticLoss positive_problem(int n, int d, std::uint64_t seed) {
    check_sizes(n, d);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix X(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) X(r, c) = 1.0 - unif(rng);
    Vector theta(d);
    for (int i = 0; i < d; ++i) theta(i) = 1.0 - unif(rng);
    Vector y = X * theta;
    return QuadraticLoss(std::move(X), std::move(y));
}

std::uint64_t init_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ULL; }

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
    if (n < 1 || d < 1) throw std::invalid_argument("--samples and --dim must be >= 1");
    if (L < 2) throw std::invalid_argument("--layers must be >= 2");
    if (!(t_max > 0.0)) throw std::invalid_argument("--tmax must be > 0");
    if (!(h > 0.0)) throw std::invalid_argument("--step must be > 0");
    if (coordinate < 0 || coordinate >= d) throw std::invalid_argument("--coordinate out of range");
    for (double s : scales)
        if (!(s > 0.0)) throw std::invalid_argument("scales must be > 0");
    for (double a : alphas)
        if (!(a > 0.0)) throw std::invalid_argument("alphas must be > 0");
}

StepController ExperimentConfig::controller() const {
    StepController ctrl;
    ctrl.mode = adaptive ? StepController::Mode::adaptive : StepController::Mode::fixed;
    ctrl.h = h;
    ctrl.t_max = t_max;
    return ctrl;
}

// ---------------------------------------------------------------------------
// PL rate

double pl_constant(const QuadraticLoss& loss) {
    const Matrix& X = loss.X();
    if ((X.array() == 0.0).all()) throw std::invalid_argument("pl_constant: X is identically zero");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(X * X.transpose(), Eigen::EigenvaluesOnly);
    const Vector& lambda = eig.eigenvalues();
    const double cutoff = 1e-12 * lambda.maxCoeff();
    double smallest = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < lambda.size(); ++k)
        if (lambda(k) > cutoff) smallest = std::min(smallest, lambda(k));
    return 2.0 * smallest;
}

double rate_slack(double initial_loss) { return 1e-12 * std::max(1.0, initial_loss); }

RateCheck check_rate(const Trajectory& traj, const Loss& loss, double sigma, double mu) {
    if (traj.empty()) throw std::invalid_argument("check_rate: empty trajectory");
    RateCheck out{sigma, mu, 0, -std::numeric_limits<double>::infinity()};
    const double star = loss.optimal_value();
    const double gap0 = traj.losses.front() - star;
    const double slack = rate_slack(traj.losses.front());
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double bound = std::exp(-2.0 * sigma * mu * traj.times[k]) * gap0;
        const double excess = (traj.losses[k] - star) - bound;
        out.worst_excess = std::max(out.worst_excess, excess);
        if (excess > slack) ++out.violations;
    }
    return out;
}

std::optional<double> time_to_gap(const Trajectory& traj, const Loss& loss, double target) {
    const double star = loss.optimal_value();
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double gap = traj.losses[k] - star;
        if (gap > target) continue;
        if (k == 0) return traj.times[0];
        const double prev = traj.losses[k - 1] - star;
        if (gap <= 0.0 || prev <= 0.0) return traj.times[k];
        const double frac = (std::log(prev) - std::log(target)) / (std::log(prev) - std::log(gap));
        return traj.times[k - 1] + frac * (traj.times[k] - traj.times[k - 1]);
    }
    return std::nullopt;
}

namespace {

ConvergenceRun convergence_run(const ExperimentConfig& cfg, const QuadraticLoss& loss,
                               const InitScheme& init, double mu) {
    ConvergenceRun run;
    run.scale = init.scale;
    const LayerStack stack0 = init_layers(cfg.d, cfg.L, init, init_seed(cfg.seed));
    run.index = check_assumption_A(stack0);
    if (!run.index.holds()) {
        throw AssumptionViolated("convergence: initialization violates the unique-minimum assumption");
    }
    run.sigma = sigma_lower_bound(stack0, run.index);
    StepController ctrl = cfg.controller();
    // Run past the target so the curve shows the linear-rate regime.
    ctrl.stop_gap = 1e-3 * kTargetGap;
    run.trajectory = integrate(stack0, loss, ctrl);
    run.rate = check_rate(run.trajectory, loss, run.sigma.sigma, mu);
    run.time_to_target = time_to_gap(run.trajectory, loss, kTargetGap);
    return run;
}

}  // namespace

ConvergenceResult run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    ConvergenceResult result{gaussian_problem(cfg.n, cfg.d, cfg.seed), {}, true};
    const double mu = pl_constant(result.loss);

    std::vector<InitScheme> inits;
    if (cfg.scales.empty()) {
        inits.push_back(cfg.init);
    } else {
        for (double s : cfg.scales) {
            InitScheme init{InitKind::fig3, s, {}};
            inits.push_back(init);
        }
    }
    std::vector<std::future<ConvergenceRun>> jobs;
    for (const InitScheme& init : inits) {
        jobs.push_back(std::async(std::launch::async, convergence_run, std::cref(cfg),
                                  std::cref(result.loss), init, mu));
    }
    for (auto& job : jobs) result.runs.push_back(job.get());

    for (std::size_t k = 1; k < result.runs.size(); ++k) {
        const ConvergenceRun& a = result.runs[k - 1];
        const ConvergenceRun& b = result.runs[k];
        if (!(b.scale > a.scale)) continue;
        const bool sigma_up = b.sigma.sigma > a.sigma.sigma;
        const bool faster = a.time_to_target && b.time_to_target && *b.time_to_target < *a.time_to_target;
        result.ordering_holds = result.ordering_holds && sigma_up && faster;
    }
    return result;
}

void write_convergence_csv(std::ostream& out, const ConvergenceRun& run, const Loss& loss) {
    const Trajectory& traj = run.trajectory;
    const double star = loss.optimal_value();
    const double gap0 = traj.losses.front() - star;
    out << "t,loss_gap,log_loss_gap,bound\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        const double gap = traj.losses[k] - star;
        const double log_gap = gap > 0.0 ? std::log(gap) : -std::numeric_limits<double>::infinity();
        const double bound = std::exp(-2.0 * run.rate.sigma * run.rate.mu * traj.times[k]) * gap0;
        out << format_double(traj.times[k]) << ',' << format_double(gap) << ','
            << format_double(log_gap) << ',' << format_double(bound) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Crossings

CrossingsResult run_crossings(const ExperimentConfig& cfg) {
    cfg.validate();
    QuadraticLoss loss = gaussian_problem(cfg.n, cfg.d, cfg.seed);
    const LayerStack stack0 = init_layers(cfg.d, cfg.L, cfg.init, init_seed(cfg.seed));
    MinLayerIndex idx = check_assumption_A(stack0);
    Trajectory traj = integrate(stack0, loss, cfg.controller());
    SignCensus census = sign_census(traj, idx);
    return CrossingsResult{std::move(loss), std::move(traj), std::move(idx), std::move(census)};
}

void write_crossings_csv(std::ostream& out, const Trajectory& traj, int coordinate) {
    if (coordinate < 0 || coordinate >= traj.dim()) {
        throw std::out_of_range("write_crossings_csv: coordinate out of range");
    }
    out << 't';
    for (int j = 1; j <= traj.num_layers(); ++j) out << ",u_" << j << '_' << coordinate + 1;
    out << '\n';
    for (std::size_t k = 0; k < traj.size(); ++k) {
        out << format_double(traj.times[k]);
        for (int j = 0; j < traj.num_layers(); ++j)
            out << ',' << format_double(traj.states[k].node(j, coordinate));
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Implicit bias

KktSolution solve_kkt_bias(const QuadraticLoss& loss, const EntropyMap& map, double tol,
                           int max_iter) {
    const Matrix& X = loss.X();
    const Vector& y = loss.y();
    return std::visit(
        [&](const auto& e) {
            if (e.dim() != X.cols()) {
                throw DimensionMismatch("solve_kkt_bias: map dimension does not match X");
            }
            // F(nu), or nullopt when X^T nu leaves the map's domain or overflows.
            const auto residual = [&](const Vector& nu) -> std::optional<Vector> {
                try {
                    Vector F = X * e.psi(X.transpose() * nu) - y;
                    if (!F.allFinite()) return std::nullopt;
                    return F;
                } catch (const DomainError&) {
                    return std::nullopt;
                }
            };

            KktSolution sol;
            sol.nu = Vector::Zero(X.rows());
            std::optional<Vector> F = residual(sol.nu);
            if (!F) throw ConvergenceError("solve_kkt_bias: map undefined at nu = 0", 0.0);
            while (F->lpNorm<Eigen::Infinity>() > tol) {
                if (sol.iterations == max_iter) {
                    throw ConvergenceError("solve_kkt_bias: Newton did not converge in " +
                                               std::to_string(max_iter) + " iterations",
                                           F->lpNorm<Eigen::Infinity>());
                }
                ++sol.iterations;
                const Vector dpsi = e.psi_derivative(X.transpose() * sol.nu);
                const Matrix J = X * dpsi.asDiagonal() * X.transpose();
                const Eigen::ColPivHouseholderQR<Matrix> qr(J);
                if (qr.rank() < J.rows()) {
                    throw ConvergenceError("solve_kkt_bias: rank-deficient Jacobian",
                                           F->lpNorm<Eigen::Infinity>());
                }
                const Vector step = qr.solve(-*F);
                const double f0 = F->squaredNorm();
                double s = 1.0;
                for (;;) {
                    std::optional<Vector> trial = residual(sol.nu + s * step);
                    if (trial && trial->squaredNorm() <= (1.0 - 1e-4 * s) * f0) {
                        sol.nu += s * step;
                        F = std::move(trial);
                        break;
                    }
                    s *= 0.5;
                    if (s < 1e-12) {
                        throw ConvergenceError("solve_kkt_bias: line search failed", std::sqrt(f0));
                    }
                }
            }
            sol.theta_star = e.psi(X.transpose() * sol.nu);
            sol.residual = F->template lpNorm<Eigen::Infinity>();
            const Vector omega = e.gradient_scale() * sol.nu;
            sol.kkt_residual =
                (e.entropy_gradient(sol.theta_star) - X.transpose() * omega).template lpNorm<Eigen::Infinity>();
            return sol;
        },
        map);
}

MinNormSolution min_l1_solution(const Matrix& X, const Vector& y) {
    const int d = static_cast<int>(X.cols());
    const Eigen::FullPivLU<Matrix> lu(X);
    const int r = static_cast<int>(lu.rank());
    if (r == 0) {
        if (y.lpNorm<Eigen::Infinity>() != 0.0) throw DomainError("min_l1_solution: y not in range(X)");
        return {0.0, Vector::Zero(d)};
    }
    const double feas_tol = 1e-9 * (1.0 + y.norm());
    MinNormSolution best{std::numeric_limits<double>::infinity(), Vector::Zero(d)};
    // Walk all r-subsets of columns in lexicographic order.
    std::vector<int> cols(static_cast<std::size_t>(r));
    std::iota(cols.begin(), cols.end(), 0);
    for (;;) {
        Matrix Xs(X.rows(), r);
        for (int c = 0; c < r; ++c) Xs.col(c) = X.col(cols[static_cast<std::size_t>(c)]);
        const Eigen::ColPivHouseholderQR<Matrix> qr(Xs);
        if (qr.rank() == r) {
            const Vector ts = qr.solve(y);
            if ((Xs * ts - y).norm() <= feas_tol) {
                const double norm = ts.lpNorm<1>();
                if (norm < best.norm) {
                    best.norm = norm;
                    best.theta.setZero();
                    for (int c = 0; c < r; ++c) best.theta(cols[static_cast<std::size_t>(c)]) = ts(c);
                }
            }
        }
        int pos = r - 1;
        while (pos >= 0 && cols[static_cast<std::size_t>(pos)] == d - r + pos) --pos;
        if (pos < 0) break;
        ++cols[static_cast<std::size_t>(pos)];
        for (int c = pos + 1; c < r; ++c)
            cols[static_cast<std::size_t>(c)] = cols[static_cast<std::size_t>(c - 1)] + 1;
    }
    if (!std::isfinite(best.norm)) throw DomainError("min_l1_solution: y not in range(X)");
    return best;
}

Trajectory flow_limit(const LayerStack& stack0, const Loss& loss, double gap, double t_max) {
    StepController ctrl;
    ctrl.mode = StepController::Mode::adaptive;
    ctrl.h = 1e-3;
    ctrl.t_max = t_max;
    ctrl.stop_gap = gap;
    return integrate(stack0, loss, ctrl);
}

namespace {

Trajectory redundant_flow_limit(const Vector& u0, int L, const Loss& loss, double gap,
                                double t_max) {
    StepController ctrl;
    ctrl.mode = StepController::Mode::adaptive;
    ctrl.h = 1e-3;
    ctrl.t_max = t_max;
    ctrl.stop_gap = gap;
    return integrate_redundant(u0, L, loss, ctrl);
}

}  // namespace

BiasResult run_bias(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.n >= cfg.d) throw std::invalid_argument("bias experiment needs n < d");
    const bool redundant = cfg.bias_model == BiasModel::redundant;
    if (redundant && cfg.L < 3) throw std::invalid_argument("redundant bias experiment needs L >= 3");

    const QuadraticLoss loss = redundant ? positive_problem(cfg.n, cfg.d, cfg.seed)
                                         : sparse_interpolation_problem(cfg.n, cfg.d, 2, cfg.seed);
    const double l1_min = min_l1_solution(loss.X(), loss.y()).norm;
    const Vector& l2_sol = loss.least_squares_solution();

    std::vector<double> alphas = cfg.alphas;
    alphas.push_back(cfg.large_alpha);

    const auto one = [&](double alpha) {
        BiasRow row;
        row.alpha = alpha;
        Trajectory traj;
        KktSolution kkt;
        if (redundant) {
            // theta(0) = u0^L = alpha * 1.
            const Vector u0 = Vector::Constant(cfg.d, std::pow(alpha, 1.0 / cfg.L));
            traj = redundant_flow_limit(u0, cfg.L, loss, 1e-10, cfg.t_max);
            kkt = solve_kkt_bias(loss, RedundantEntropy(u0, cfg.L));
        } else {
            Matrix w(2, cfg.d);
            w.row(0).setConstant(std::sqrt(alpha));
            w.row(1).setZero();
            const LayerStack stack0(w);
            traj = flow_limit(stack0, loss, 1e-10, cfg.t_max);
            kkt = solve_kkt_bias(loss, DlnEntropy::from_stack(stack0));
        }
        const ThetaVector& theta_inf = traj.thetas.back();
        row.final_gap = traj.losses.back() - loss.optimal_value();
        row.l1_norm = theta_inf.lpNorm<1>();
        row.l1_min = l1_min;
        row.linf_mismatch = (theta_inf - kkt.theta_star).lpNorm<Eigen::Infinity>();
        row.l2_distance = (theta_inf - l2_sol).lpNorm<Eigen::Infinity>() / l2_sol.lpNorm<Eigen::Infinity>();
        return row;
    };

    std::vector<std::future<BiasRow>> jobs;
    for (double a : alphas) jobs.push_back(std::async(std::launch::async, one, a));
    BiasResult result;
    for (auto& job : jobs) result.rows.push_back(job.get());

    for (const BiasRow& row : result.rows) result.max_mismatch = std::max(result.max_mismatch, row.linf_mismatch);
    // Small-init sweep: the L1 excess should shrink as alpha decreases.
    std::vector<BiasRow> sweep(result.rows.begin(), result.rows.end() - 1);
    std::sort(sweep.begin(), sweep.end(), [](const BiasRow& a, const BiasRow& b) { return a.alpha > b.alpha; });
    for (std::size_t k = 1; k < sweep.size(); ++k) {
        if (!(sweep[k].l1_norm - sweep[k].l1_min < sweep[k - 1].l1_norm - sweep[k - 1].l1_min)) {
            result.l1_gap_decreasing = false;
        }
    }
    if (!sweep.empty()) {
        result.l1_relative_gap_small = (sweep.back().l1_norm - sweep.back().l1_min) / sweep.back().l1_min;
    }
    result.l2_relative_large = result.rows.back().l2_distance;
    return result;
}

void write_bias_csv(std::ostream& out, const BiasResult& result) {
    out << "alpha,l1_norm,l1_min,linf_mismatch\n";
    for (const BiasRow& row : result.rows) {
        out << format_double(row.alpha) << ',' << format_double(row.l1_norm) << ','
            << format_double(row.l1_min) << ',' << format_double(row.linf_mismatch) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Parameterization certificate

namespace {

double fd_gradient_error(const HadamardBlocks& g, const Vector& w, int i) {
    const double step = 1e-6;
    const Vector analytic = g.gradient(w, i);
    Vector fd(w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        Vector wp = w, wm = w;
        wp(j) += step;
        wm(j) -= step;
        fd(j) = (g.eval(wp)(i) - g.eval(wm)(i)) / (2.0 * step);
    }
    return (fd - analytic).lpNorm<Eigen::Infinity>() / std::max(1.0, analytic.lpNorm<Eigen::Infinity>());
}

double fd_hessian_error(const HadamardBlocks& g, const Vector& w, int i) {
    const double step = 1e-6;
    const Matrix analytic = g.hessian(w, i);
    Matrix fd(w.size(), w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) {
        Vector wp = w, wm = w;
        wp(j) += step;
        wm(j) -= step;
        fd.col(j) = (g.gradient(wp, i) - g.gradient(wm, i)) / (2.0 * step);
    }
    return (fd - analytic).lpNorm<Eigen::Infinity>() / std::max(1.0, analytic.lpNorm<Eigen::Infinity>());
}

}  // namespace

std::vector<CertificationRow> run_paramcheck(const ExperimentConfig& cfg) {
    cfg.validate();
    const int L = cfg.L;
    const int d = cfg.d;
    const HadamardBlocks g(L, d);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    std::uniform_int_distribution<int> coord(0, d - 1);
    const auto random_w = [&] {
        Vector w(L * d);
        for (Eigen::Index k = 0; k < w.size(); ++k) w(k) = unif(rng);
        return w;
    };

    std::vector<CertificationRow> rows;

    double commute = 0.0;
    for (int s = 0; s < 200; ++s) {
        const Vector w = random_w();
        commute = std::max(commute, commuting_defect(g, w, coord(rng), coord(rng)));
    }
    rows.push_back({"commuting defect (200 samples, exact)", commute, 0.0, commute == 0.0});

    int rank_failures = 0;
    for (int s = 0; s < 100; ++s) {
        Vector w = random_w();
        // At most one zero per block keeps w on the manifold.
        if (s % 2 == 0) w(coord(rng) * L + (s / 2) % L) = 0.0;
        if (!manifold_membership(FlatParams(w, L, d)) || jacobian_rank(g, w) != d) ++rank_failures;
    }
    rows.push_back({"rank J_G = d on manifold (100 samples)", static_cast<double>(rank_failures), 0.0,
                    rank_failures == 0});

    int detected = 0;
    const int violations = std::min(d, 10);
    if (L >= 2) {
        for (int b = 0; b < violations; ++b) {
            Vector w = random_w();
            w(b * L) = 0.0;
            w(b * L + 1) = 0.0;
            if (!manifold_membership(FlatParams(w, L, d)) && jacobian_rank(g, w) == d - 1) ++detected;
        }
    }
    rows.push_back({"rank d-1 off manifold (two zeros in a block)", static_cast<double>(violations - detected),
                    0.0, detected == violations});

    double grad_err = 0.0, hess_err = 0.0;
    for (int s = 0; s < 100; ++s) {
        const Vector w = random_w();
        const int i = coord(rng);
        grad_err = std::max(grad_err, fd_gradient_error(g, w, i));
        hess_err = std::max(hess_err, fd_hessian_error(g, w, i));
    }
    rows.push_back({"grad G vs finite differences (rel)", grad_err, 1e-6, grad_err <= 1e-6});
    rows.push_back({"Hessian G vs finite differences (rel)", hess_err, 1e-6, hess_err <= 1e-6});

    const SharedFactorControl control;
    const double control_defect = commuting_defect(control, Vector{{0.7, -1.3, 0.4}}, 0, 1);
    rows.push_back({"control G=(w1w2,w1w3) defect > 1e-3", control_defect, 1e-3, control_defect > 1e-3});

    int off_manifold = 0;
    for (int s = 0; s < 50; ++s) {
        const LayerStack stack0 = init_layers(d, L, InitScheme{}, cfg.seed + 1000 + static_cast<std::uint64_t>(s));
        if (check_assumption_A(stack0).holds() && !manifold_membership(flatten(stack0))) ++off_manifold;
    }
    rows.push_back({"unique-minimum inits lie on manifold (50 seeds)", static_cast<double>(off_manifold), 0.0,
                    off_manifold == 0});

    int left = 0;
    for (int s = 0; s < 5; ++s) {
        const std::uint64_t seed = cfg.seed + 2000 + static_cast<std::uint64_t>(s);
        const QuadraticLoss loss = gaussian_problem(std::max(cfg.n, 1), d, seed);
        const LayerStack stack0 = init_layers(d, L, InitScheme{}, init_seed(seed));
        StepController ctrl;
        ctrl.t_max = 2.0;
        if (!flow_stays_on_manifold(integrate(stack0, loss, ctrl))) ++left;
    }
    rows.push_back({"flow stays on manifold (5 runs)", static_cast<double>(left), 0.0, left == 0});
    return rows;
}

// ---------------------------------------------------------------------------
// Diagnostics

DiagnosticsReport diagnose(const Trajectory& traj, const QuadraticLoss& loss) {
    if (traj.empty()) throw std::invalid_argument("diagnose: empty trajectory");
    DiagnosticsReport r;
    r.conservation = conservation_defect(traj);
    r.index = check_assumption_A(traj.states.front());
    r.on_manifold = flow_stays_on_manifold(traj);
    for (std::size_t k = 1; k < traj.size(); ++k)
        r.max_spacing = std::max(r.max_spacing, traj.times[k] - traj.times[k - 1]);
    if (r.index.holds()) {
        r.census = sign_census(traj, r.index);
        r.reconstruction_error = reconstruction_error(traj, r.index);
        r.sigma = sigma_lower_bound(traj.states.front(), r.index);
        r.m_margin = m_bound_margin(traj, *r.sigma);
        r.rate = check_rate(traj, loss, r.sigma->sigma, pl_constant(loss));
        try {
            r.mirror_general = mirror_residual_general(traj, loss);
        } catch (const SingularMatrix&) {
        }
    }
    if (traj.num_layers() == 2) {
        try {
            r.mirror_closed_form = mirror_residual_closed_form(traj, DlnEntropy::from_stack(traj.states.front()));
        } catch (const DomainError&) {
        }
    }
    return r;
}

void write_diagnostics_csv(std::ostream& out, const DiagnosticsReport& r) {
    out << "# conservation_defect\nj,k,defect\n";
    for (Eigen::Index j = 0; j < r.conservation.rows(); ++j)
        for (Eigen::Index k = 0; k < r.conservation.cols(); ++k)
            out << j + 1 << ',' << k + 1 << ',' << format_double(r.conservation(j, k)) << '\n';

    out << "# sign_census\ncoordinate,min_layer,unique_min,crossing_layers,violation\n";
    for (std::size_t i = 0; i < r.index.k.size(); ++i) {
        out << i + 1 << ',' << r.index.k[i] + 1 << ',' << (r.index.unique[i] ? 1 : 0) << ',';
        bool violation = false;
        if (r.census) {
            const auto& layers = r.census->crossing_layers[i];
            for (std::size_t m = 0; m < layers.size(); ++m) {
                out << (m ? ";" : "") << layers[m] + 1;
                violation = violation || layers[m] != r.index.k[i];
            }
        }
        out << ',' << (violation ? 1 : 0) << '\n';
    }

    out << "# residuals\nname,value\n";
    const auto opt = [&](const char* name, const std::optional<double>& v) {
        if (v) out << name << ',' << format_double(*v) << '\n';
    };
    opt("reconstruction_error", r.reconstruction_error);
    opt("m_bound_margin", r.m_margin);
    opt("mirror_residual_general", r.mirror_general);
    opt("mirror_residual_closed_form", r.mirror_closed_form);
    out << "on_manifold," << (r.on_manifold ? 1 : 0) << '\n';

    if (r.rate) {
        out << "# rate_check\nsigma,mu,violations,worst_excess\n"
            << format_double(r.rate->sigma) << ',' << format_double(r.rate->mu) << ','
            << r.rate->violations << ',' << format_double(r.rate->worst_excess) << '\n';
    }
}

}  // namespace ddln
