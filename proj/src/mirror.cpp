#include "ddln/mirror.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddln/conservation.hpp"
#include "ddln/errors.hpp"

namespace ddln {

namespace {

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
    if (a != b) {
        throw DimensionMismatch(std::string(what) + ": length " + std::to_string(a) + " vs " +
                                std::to_string(b));
    }
}

void require_positive(const Vector& theta, const char* what) {
    if ((theta.array() <= 0.0).any()) {
        throw DomainError(std::string(what) + ": theta must be strictly positive");
    }
}

}  // namespace

DlnEntropy::DlnEntropy(Vector u0, Vector v0) : u0_(std::move(u0)), v0_(std::move(v0)) {
    require_same_dim(u0_.size(), v0_.size(), "DlnEntropy u0/v0");
    const Vector usq = u0_.array().square();
    const Vector vsq = v0_.array().square();
    delta0_ = (usq - vsq).cwiseAbs();
    for (Eigen::Index i = 0; i < delta0_.size(); ++i) {
        const double floor = 1e-12 * std::max(usq(i), vsq(i));
        if (!(delta0_(i) > 0.0) || delta0_(i) < floor) {
            throw DomainError("DlnEntropy: |u0| == |v0| at coordinate " + std::to_string(i + 1) +
                              " (Delta0 vanishes)");
        }
    }
    c_ = ((u0_ + v0_).array() / (u0_ - v0_).array()).abs().log();
}

DlnEntropy DlnEntropy::from_stack(const LayerStack& stack0) {
    if (stack0.num_layers() != 2) {
        throw ModelMismatch("DlnEntropy needs a 2-layer stack, got L=" +
                            std::to_string(stack0.num_layers()));
    }
    return DlnEntropy(stack0.layer(0), stack0.layer(1));
}

ThetaVector DlnEntropy::psi(const Vector& xi) const {
    require_same_dim(xi.size(), delta0_.size(), "dln_psi");
    return (0.5 * delta0_.array() * (2.0 * xi.array() + c_.array()).sinh()).matrix();
}

Vector DlnEntropy::psi_inverse(const ThetaVector& theta) const {
    require_same_dim(theta.size(), delta0_.size(), "dln_psi_inverse");
    Vector out(theta.size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        out(i) = 0.5 * (std::asinh(2.0 * theta(i) / delta0_(i)) - c_(i));
    }
    return out;
}

Vector DlnEntropy::psi_derivative(const Vector& xi) const {
    require_same_dim(xi.size(), delta0_.size(), "dln_psi_derivative");
    return (delta0_.array() * (2.0 * xi.array() + c_.array()).cosh()).matrix();
}

double DlnEntropy::entropy(const ThetaVector& theta) const {
    require_same_dim(theta.size(), delta0_.size(), "dln_entropy");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double t = theta(i);
        const double D = delta0_(i);
        sum += 2.0 * t * std::asinh(2.0 * t / D) - std::sqrt(4.0 * t * t + D * D) + D;
    }
    return 0.25 * sum - 0.5 * c_.dot(theta);
}

RedundantEntropy::RedundantEntropy(Vector u0, int num_layers) : u0_(std::move(u0)), L_(num_layers) {
    if (L_ < 3) throw DomainError("RedundantEntropy needs L >= 3, got " + std::to_string(L_));
    if ((u0_.array() <= 0.0).any()) throw DomainError("RedundantEntropy needs u0 > 0");
    inv_pow_ = u0_.array().pow(-static_cast<double>(L_ - 2));
}

Vector RedundantEntropy::base(const Vector& xi) const {
    require_same_dim(xi.size(), u0_.size(), "redundant_psi");
    Vector b = inv_pow_ - static_cast<double>(L_) * (L_ - 2) * xi;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        if (!(b(i) > 0.0)) {
            throw DomainError("redundant_psi: u0^{-(L-2)} - L(L-2) xi <= 0 at coordinate " +
                              std::to_string(i + 1) + " (left the positive orthant)");
        }
    }
    return b;
}

ThetaVector RedundantEntropy::psi(const Vector& xi) const {
    return base(xi).array().pow(-static_cast<double>(L_) / (L_ - 2)).matrix();
}

Vector RedundantEntropy::psi_inverse(const ThetaVector& theta) const {
    require_same_dim(theta.size(), u0_.size(), "redundant_psi_inverse");
    require_positive(theta, "redundant_psi_inverse");
    const double exponent = -static_cast<double>(L_ - 2) / L_;
    return ((inv_pow_.array() - theta.array().pow(exponent)) / (static_cast<double>(L_) * (L_ - 2)))
        .matrix();
}

Vector RedundantEntropy::psi_derivative(const Vector& xi) const {
    const double L = L_;
    return (L * L * base(xi).array().pow(-(2.0 * L - 2.0) / (L - 2.0))).matrix();
}

double RedundantEntropy::entropy(const ThetaVector& theta) const {
    require_same_dim(theta.size(), u0_.size(), "redundant_entropy");
    require_positive(theta, "redundant_entropy");
    const double L = L_;
    return inv_pow_.dot(theta) - 0.5 * L * theta.array().pow(2.0 / L).sum();
}

Vector RedundantEntropy::entropy_gradient(const ThetaVector& theta) const {
    require_same_dim(theta.size(), u0_.size(), "redundant_entropy_gradient");
    require_positive(theta, "redundant_entropy_gradient");
    const double L = L_;
    return (inv_pow_.array() - theta.array().pow(-(1.0 - 2.0 / L))).matrix();
}

ThetaVector dln_psi(const Vector& xi, const DlnEntropy& e) { return e.psi(xi); }
Vector dln_psi_inverse(const ThetaVector& theta, const DlnEntropy& e) { return e.psi_inverse(theta); }
double dln_entropy(const ThetaVector& theta, const DlnEntropy& e) { return e.entropy(theta); }
ThetaVector redundant_psi(const Vector& xi, const RedundantEntropy& e) { return e.psi(xi); }
Vector redundant_psi_inverse(const ThetaVector& theta, const RedundantEntropy& e) {
    return e.psi_inverse(theta);
}
double redundant_entropy(const ThetaVector& theta, const RedundantEntropy& e) {
    return e.entropy(theta);
}

ThetaVector ZPair::theta() const {
    return ((plus.array().square() - minus.array().square()) / 4.0).matrix();
}

ZPair dln_z_variables(const Vector& xi, const DlnEntropy& e) {
    require_same_dim(xi.size(), e.u0().size(), "dln_z_variables");
    return ZPair{((e.u0() + e.v0()).array() * xi.array().exp()).matrix(),
                 ((e.u0() - e.v0()).array() * (-xi.array()).exp()).matrix()};
}

namespace {

void check_matches(const Trajectory& traj, const DlnEntropy& e) {
    if (traj.architecture != Architecture::deep_diagonal || traj.num_layers() != 2) {
        throw ModelMismatch("2-layer mirror map needs a 2-layer deep diagonal trajectory");
    }
    const LayerStack& s0 = traj.states.front();
    if (s0.dim() != e.dim() || s0.layer(0) != e.u0() || s0.layer(1) != e.v0()) {
        throw ModelMismatch("mirror map was built from a different initialization");
    }
}

void check_matches(const Trajectory& traj, const RedundantEntropy& e) {
    if (traj.architecture != Architecture::redundant || traj.num_layers() != e.num_layers()) {
        throw ModelMismatch("redundant mirror map needs a redundant trajectory with the same L");
    }
    if (traj.dim() != e.dim() || traj.states.front().layer(0) != e.u0()) {
        throw ModelMismatch("mirror map was built from a different initialization");
    }
}

}  // namespace

double mirror_residual_closed_form(const Trajectory& traj, const EntropyMap& map) {
    if (traj.empty()) throw std::invalid_argument("mirror_residual_closed_form: empty trajectory");
    return std::visit(
        [&](const auto& e) {
            check_matches(traj, e);
            double worst = 0.0;
            for (std::size_t k = 0; k < traj.size(); ++k) {
                const Vector r = e.psi_inverse(traj.thetas[k]) - traj.xi[k];
                worst = std::max(worst, r.lpNorm<Eigen::Infinity>());
            }
            return worst;
        },
        map);
}

double mirror_residual_general(const Trajectory& traj, const Loss& loss) {
    if (traj.architecture != Architecture::deep_diagonal) {
        throw ModelMismatch("mirror_residual_general expects a deep diagonal trajectory");
    }
    double worst = 0.0;
    for (std::size_t k = 1; k + 1 < traj.size(); ++k) {
        const double hm = traj.times[k] - traj.times[k - 1];
        const double hp = traj.times[k + 1] - traj.times[k];
        const Vector theta_dot =
            (hm * hm * traj.thetas[k + 1] - hp * hp * traj.thetas[k - 1] +
             (hp * hp - hm * hm) * traj.thetas[k]) /
            (hm * hp * (hm + hp));
        const Vector minv = m_inverse(m_matrix(traj.states[k]));
        const Vector r = minv.cwiseProduct(theta_dot) + loss.gradient(traj.thetas[k]);
        worst = std::max(worst, r.lpNorm<Eigen::Infinity>());
    }
    return worst;
}

}  // namespace ddln
