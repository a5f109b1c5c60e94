#pragma once

#include <variant>

#include "ddln/flow.hpp"
#include "ddln/model.hpp"

namespace ddln {

/// Closed-form mirror map of the 2-layer network theta = u (.) v:
///   Psi(xi)      = (Delta0 / 2) sinh(2 xi + c)
///   Psi^{-1}(th) = (arcsinh(2 th / Delta0) - c) / 2
///   Q(th)        = 1/4 sum(2 th asinh(2 th/Delta0) - sqrt(4 th^2 + Delta0^2) + Delta0) - <c, th>/2
/// with Delta0 = |u0^2 - v0^2| and c = log|(u0 + v0)/(u0 - v0)|.
///
/// The 1/4 prefactor is what makes grad Q == Psi^{-1}; a 1/2 prefactor would
/// double the arcsinh term of the gradient.
class DlnEntropy {
public:
    /// Throws DomainError when Delta0_i < 1e-12 * max(u0_i^2, v0_i^2) for some i.
    DlnEntropy(Vector u0, Vector v0);
    /// Uses layers 1 and 2 of a two-layer stack.
    static DlnEntropy from_stack(const LayerStack& stack0);

    int dim() const { return static_cast<int>(delta0_.size()); }
    const Vector& delta0() const { return delta0_; }
    const Vector& c() const { return c_; }
    const Vector& u0() const { return u0_; }
    const Vector& v0() const { return v0_; }

    ThetaVector psi(const Vector& xi) const;
    Vector psi_inverse(const ThetaVector& theta) const;
    /// dPsi_i / dxi_i.
    Vector psi_derivative(const Vector& xi) const;
    double entropy(const ThetaVector& theta) const;
    Vector entropy_gradient(const ThetaVector& theta) const { return psi_inverse(theta); }
    /// grad Q(theta(t)) = gradient_scale() * xi(t) along the flow.
    double gradient_scale() const { return 1.0; }

private:
    Vector u0_, v0_, delta0_, c_;
};

/// Mirror map of the redundant network theta = u^L (u > 0, L >= 3):
///   Psi(xi)      = (u0^{-(L-2)} - L(L-2) xi)^{-L/(L-2)}
///   Psi^{-1}(th) = (u0^{-(L-2)} - th^{-(L-2)/L}) / (L(L-2))
///   Q(th)        = <u0^{-(L-2)}, th> - (L/2) <1, th^{2/L}>
/// so grad Q = L(L-2) Psi^{-1}. The first term of Q carries u0^{-(L-2)}:
/// that is the exponent for which grad Q matches Psi^{-1}.
class RedundantEntropy {
public:
    /// Throws DomainError unless u0 > 0 componentwise and L >= 3.
    RedundantEntropy(Vector u0, int num_layers);

    int dim() const { return static_cast<int>(u0_.size()); }
    int num_layers() const { return L_; }
    const Vector& u0() const { return u0_; }

    /// Throws DomainError where u0^{-(L-2)} - L(L-2) xi <= 0.
    ThetaVector psi(const Vector& xi) const;
    /// Throws DomainError for non-positive theta.
    Vector psi_inverse(const ThetaVector& theta) const;
    Vector psi_derivative(const Vector& xi) const;
    /// Throws DomainError for non-positive theta.
    double entropy(const ThetaVector& theta) const;
    Vector entropy_gradient(const ThetaVector& theta) const;
    double gradient_scale() const { return static_cast<double>(L_) * (L_ - 2); }

private:
    Vector base(const Vector& xi) const;

    Vector u0_;
    int L_;
    Vector inv_pow_;  // u0^{-(L-2)}
};

using EntropyMap = std::variant<DlnEntropy, RedundantEntropy>;

ThetaVector dln_psi(const Vector& xi, const DlnEntropy& e);
Vector dln_psi_inverse(const ThetaVector& theta, const DlnEntropy& e);
double dln_entropy(const ThetaVector& theta, const DlnEntropy& e);
ThetaVector redundant_psi(const Vector& xi, const RedundantEntropy& e);
Vector redundant_psi_inverse(const ThetaVector& theta, const RedundantEntropy& e);
double redundant_entropy(const ThetaVector& theta, const RedundantEntropy& e);

/// z+ = u + v and z- = u - v of the 2-layer network, in closed form from xi:
/// z+(t) = z+(0) e^{xi(t)}, z-(t) = z-(0) e^{-xi(t)}.
struct ZPair {
    Vector plus;
    Vector minus;
    /// (z+^2 - z-^2) / 4, which equals u (.) v.
    ThetaVector theta() const;
};
ZPair dln_z_variables(const Vector& xi, const DlnEntropy& e);

/// max_t ||Psi^{-1}(theta(t)) - xi(t)||_inf. Throws ModelMismatch when the
/// trajectory was not produced by the map's parameterization and init.
double mirror_residual_closed_form(const Trajectory& traj, const EntropyMap& map);

/// max over interior grid points of ||M^{-1}(t) thetadot(t) + grad L(theta(t))||_inf,
/// thetadot by second-order central differences (non-uniform grids allowed).
/// Throws SingularMatrix when some M(t) has a zero entry.
double mirror_residual_general(const Trajectory& traj, const Loss& loss);

}  // namespace ddln
