#include "ddln/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>

#include "ddln/errors.hpp"

namespace ddln {

void StepController::validate() const {
    if (!(h > 0.0)) throw std::invalid_argument("step size h must be > 0");
    if (!(t_max > 0.0)) throw std::invalid_argument("t_max must be > 0");
    if (!(rtol > 0.0 && atol > 0.0)) throw std::invalid_argument("tolerances must be > 0");
    if (max_points < 2) throw std::invalid_argument("max_points must be >= 2");
}

Matrix leave_one_out_products(const Matrix& weights) {
    const auto L = weights.rows();
    const auto d = weights.cols();
    Matrix out(L, d);
    for (Eigen::Index i = 0; i < d; ++i) {
        double prefix = 1.0;
        for (Eigen::Index j = 0; j < L; ++j) {
            out(j, i) = prefix;
            prefix *= weights(j, i);
        }
        double suffix = 1.0;
        for (Eigen::Index j = L - 1; j >= 0; --j) {
            out(j, i) *= suffix;
            suffix *= weights(j, i);
        }
    }
    return out;
}

std::vector<Vector> layer_rhs(const LayerStack& stack, const Loss& loss) {
    const Vector grad = loss.gradient(theta_of_layers(stack));
    const Matrix loo = leave_one_out_products(stack.weights());
    std::vector<Vector> rhs;
    rhs.reserve(static_cast<std::size_t>(stack.num_layers()));
    for (int j = 0; j < stack.num_layers(); ++j) {
        rhs.push_back(-(loo.row(j).transpose().cwiseProduct(grad)));
    }
    return rhs;
}

Vector theta_rhs(const LayerStack& stack, const Loss& loss) {
    const Vector grad = loss.gradient(theta_of_layers(stack));
    const Vector m = leave_one_out_products(stack.weights()).array().square().colwise().sum().transpose();
    return -(m.cwiseProduct(grad));
}

namespace {

struct State {
    Matrix w;   // L x d (deep diagonal) or 1 x d (redundant)
    Vector xi;
};

struct Derivative {
    Matrix dw;
    Vector dxi;
};

State axpy(const State& s, double a, const Derivative& k) {
    return State{s.w + a * k.dw, s.xi + a * k.dxi};
}

class Model {
public:
    Model(Architecture arch, int num_layers, const Loss& loss)
        : arch_(arch), num_layers_(num_layers), loss_(loss) {}

    ThetaVector theta(const Matrix& w) const {
        if (arch_ == Architecture::deep_diagonal) return w.colwise().prod().transpose();
        return w.row(0).transpose().array().pow(num_layers_).matrix();
    }

    Derivative rhs(const State& s) const {
        const Vector grad = loss_.gradient(theta(s.w));
        Derivative k;
        if (arch_ == Architecture::deep_diagonal) {
            k.dw = -(leave_one_out_products(s.w).array().rowwise() * grad.transpose().array()).matrix();
        } else {
            const Vector u = s.w.row(0).transpose();
            k.dw = (-static_cast<double>(num_layers_) *
                    u.array().pow(num_layers_ - 1) * grad.array()).matrix().transpose();
        }
        k.dxi = -grad;
        return k;
    }

    LayerStack snapshot(const Matrix& w) const {
        if (arch_ == Architecture::deep_diagonal) return LayerStack(w);
        return LayerStack(Matrix(w.replicate(num_layers_, 1)));
    }

    Architecture architecture() const { return arch_; }
    const Loss& loss() const { return loss_; }

private:
    Architecture arch_;
    int num_layers_;
    const Loss& loss_;
};

State rk4_step(const Model& model, const State& s, double h) {
    const Derivative k1 = model.rhs(s);
    const Derivative k2 = model.rhs(axpy(s, 0.5 * h, k1));
    const Derivative k3 = model.rhs(axpy(s, 0.5 * h, k2));
    const Derivative k4 = model.rhs(axpy(s, h, k3));
    State out;
    out.w = s.w + (h / 6.0) * (k1.dw + 2.0 * k2.dw + 2.0 * k3.dw + k4.dw);
    out.xi = s.xi + (h / 6.0) * (k1.dxi + 2.0 * k2.dxi + 2.0 * k3.dxi + k4.dxi);
    return out;
}

State euler_step(const Model& model, const State& s, double h) {
    return axpy(s, h, model.rhs(s));
}

State take_step(const Model& model, StepController::Scheme scheme, const State& s, double h) {
    return scheme == StepController::Scheme::rk4 ? rk4_step(model, s, h) : euler_step(model, s, h);
}

/// Keeps at most max_points snapshots by doubling the recording stride and
/// dropping every other stored point whenever the buffer fills up.
class Recorder {
public:
    Recorder(const Model& model, std::size_t max_points, Architecture arch)
        : model_(model), max_points_(max_points) {
        traj_.architecture = arch;
    }

    void offer(std::size_t step, double t, const State& s, bool force) {
        if (!force && step % stride_ != 0) return;
        if (traj_.size() >= max_points_) {
            thin();
            if (!force && step % stride_ != 0) return;
        }
        push(step, t, s);
    }

    Trajectory finish(std::size_t steps) {
        traj_.steps = steps;
        return std::move(traj_);
    }

private:
    void push(std::size_t step, double t, const State& s) {
        LayerStack snap = model_.snapshot(s.w);
        const ThetaVector theta = theta_of_layers(snap);
        traj_.times.push_back(t);
        traj_.states.push_back(std::move(snap));
        traj_.thetas.push_back(theta);
        traj_.xi.push_back(s.xi);
        traj_.losses.push_back(model_.loss().value(theta));
        step_ids_.push_back(step);
    }

    void thin() {
        stride_ *= 2;
        std::size_t keep = 0;
        for (std::size_t k = 0; k < step_ids_.size(); ++k) {
            if (step_ids_[k] % stride_ != 0) continue;
            if (keep != k) {
                traj_.times[keep] = traj_.times[k];
                traj_.states[keep] = std::move(traj_.states[k]);
                traj_.thetas[keep] = std::move(traj_.thetas[k]);
                traj_.xi[keep] = std::move(traj_.xi[k]);
                traj_.losses[keep] = traj_.losses[k];
                step_ids_[keep] = step_ids_[k];
            }
            ++keep;
        }
        traj_.times.resize(keep);
        traj_.states.erase(traj_.states.begin() + static_cast<std::ptrdiff_t>(keep), traj_.states.end());
        traj_.thetas.resize(keep);
        traj_.xi.resize(keep);
        traj_.losses.resize(keep);
        step_ids_.resize(keep);
    }

    const Model& model_;
    std::size_t max_points_;
    std::size_t stride_ = 1;
    std::vector<std::size_t> step_ids_;
    Trajectory traj_;
};

void guard(const Model& model, const State& s, double t, double bound) {
    if (!s.w.allFinite() || !s.xi.allFinite()) {
        throw IntegrationError("non-finite state (divergence), reduce the step size", t);
    }
    const ThetaVector theta = model.theta(s.w);
    if (!theta.allFinite() || theta.lpNorm<Eigen::Infinity>() > bound) {
        throw IntegrationError("||theta||_inf exceeded divergence bound, reduce the step size", t);
    }
}

bool reached_gap(const Model& model, const StepController& ctrl, const State& s) {
    if (ctrl.stop_gap <= 0.0) return false;
    const Loss& loss = model.loss();
    return loss.value(model.theta(s.w)) - loss.optimal_value() <= ctrl.stop_gap;
}

Trajectory run(const Model& model, Matrix w0, const StepController& ctrl) {
    ctrl.validate();
    State s{std::move(w0), Vector::Zero(model.loss().dim())};
    Recorder rec(model, ctrl.max_points, model.architecture());
    rec.offer(0, 0.0, s, true);
    if (reached_gap(model, ctrl, s)) return rec.finish(0);

    std::size_t step = 0;
    if (ctrl.mode == StepController::Mode::fixed) {
        const auto n_steps =
            static_cast<std::size_t>(std::ceil(ctrl.t_max / ctrl.h * (1.0 - 1e-12)));
        for (std::size_t n = 1; n <= n_steps; ++n) {
            const double t_prev = static_cast<double>(n - 1) * ctrl.h;
            const double t = (n == n_steps) ? ctrl.t_max : static_cast<double>(n) * ctrl.h;
            s = take_step(model, ctrl.scheme, s, t - t_prev);
            guard(model, s, t, ctrl.divergence_bound);
            step = n;
            const bool done = reached_gap(model, ctrl, s);
            rec.offer(n, t, s, n == n_steps || done);
            if (done) break;
        }
        return rec.finish(step);
    }

    // Step doubling: one step of size h against two of size h/2.
    const double order_factor = ctrl.scheme == StepController::Scheme::rk4 ? 15.0 : 1.0;
    const double exponent = ctrl.scheme == StepController::Scheme::rk4 ? 0.2 : 0.5;
    double t = 0.0;
    double h = std::min(ctrl.h, ctrl.t_max);
    while (t < ctrl.t_max) {
        if (h < ctrl.min_step * std::max(1.0, t)) {
            throw IntegrationError("adaptive step size underflow (h=" + std::to_string(h) + ")", t);
        }
        const bool last = t + h >= ctrl.t_max;
        const double h_try = last ? ctrl.t_max - t : h;
        const State full = take_step(model, ctrl.scheme, s, h_try);
        const State half = take_step(model, ctrl.scheme, take_step(model, ctrl.scheme, s, 0.5 * h_try),
                                     0.5 * h_try);

        double err = 0.0;
        bool finite = full.w.allFinite() && half.w.allFinite() && half.xi.allFinite() &&
                      full.xi.allFinite();
        if (finite) {
            const auto scaled = [&](const auto& a, const auto& b) {
                const auto tol = ctrl.atol + ctrl.rtol * a.array().abs().max(b.array().abs());
                return ((a - b).array().abs() / tol).maxCoeff();
            };
            err = std::max(scaled(half.w, full.w), scaled(half.xi, full.xi)) / order_factor;
            finite = std::isfinite(err);
        }
        if (!finite) {
            h = 0.25 * h_try;
            continue;
        }
        if (err > 1.0) {
            h = h_try * std::max(0.2, 0.9 * std::pow(err, -exponent));
            continue;
        }
        s = half;
        t = last ? ctrl.t_max : t + h_try;
        ++step;
        guard(model, s, t, ctrl.divergence_bound);
        const bool done = reached_gap(model, ctrl, s);
        rec.offer(step, t, s, last || done);
        if (done) break;
        const double grow = err == 0.0 ? 4.0 : std::min(4.0, 0.9 * std::pow(err, -exponent));
        h = h_try * std::max(1.0, grow);
    }
    return rec.finish(step);
}

}  // namespace

Trajectory integrate(const LayerStack& stack0, const Loss& loss, const StepController& ctrl) {
    if (stack0.dim() != loss.dim()) {
        throw DimensionMismatch("stack has d=" + std::to_string(stack0.dim()) + ", loss expects " +
                                std::to_string(loss.dim()));
    }
    const Model model(Architecture::deep_diagonal, stack0.num_layers(), loss);
    return run(model, stack0.weights(), ctrl);
}

Trajectory integrate_redundant(const Vector& u0, int num_layers, const Loss& loss,
                               const StepController& ctrl) {
    if (num_layers < 2) throw std::invalid_argument("redundant network needs L >= 2");
    if (u0.size() != loss.dim()) {
        throw DimensionMismatch("u0 has length " + std::to_string(u0.size()) + ", loss expects " +
                                std::to_string(loss.dim()));
    }
    const Model model(Architecture::redundant, num_layers, loss);
    return run(model, Matrix(u0.transpose()), ctrl);
}

std::string format_double(double value) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool include_layers) {
    if (traj.empty()) throw std::invalid_argument("write_trajectory_csv: empty trajectory");
    const int d = traj.dim();
    const int L = traj.num_layers();
    out << "t,loss";
    for (int i = 1; i <= d; ++i) out << ",theta_" << i;
    for (int i = 1; i <= d; ++i) out << ",xi_" << i;
    if (include_layers) {
        for (int j = 1; j <= L; ++j)
            for (int i = 1; i <= d; ++i) out << ",u_" << j << '_' << i;
    }
    out << '\n';
    for (std::size_t k = 0; k < traj.size(); ++k) {
        out << format_double(traj.times[k]) << ',' << format_double(traj.losses[k]);
        for (int i = 0; i < d; ++i) out << ',' << format_double(traj.thetas[k](i));
        for (int i = 0; i < d; ++i) out << ',' << format_double(traj.xi[k](i));
        if (include_layers) {
            for (int j = 0; j < L; ++j)
                for (int i = 0; i < d; ++i) out << ',' << format_double(traj.states[k].node(j, i));
        }
        out << '\n';
    }
}

}  // namespace ddln
