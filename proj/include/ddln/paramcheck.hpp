#pragma once

#include <memory>

#include "ddln/flow.hpp"
#include "ddln/model.hpp"

namespace ddln {

/// All weights in one vector, coordinate-major: block b (0-based) occupies
/// w[b*L .. b*L + L - 1] and holds u^1_b, ..., u^L_b.
struct FlatParams {
    Vector w;
    int num_layers = 0;
    int dim = 0;

    /// Throws DimensionMismatch if w.size() != num_layers * dim.
    FlatParams(Vector w, int num_layers, int dim);

    auto block(int i) const { return w.segment(static_cast<Eigen::Index>(i) * num_layers, num_layers); }
};

FlatParams flatten(const LayerStack& stack);
LayerStack unflatten(const FlatParams& params);

/// A smooth map G: R^p -> R^d with dense derivatives, enough to run the
/// commuting and regularity checks against any candidate parameterization.
class Parameterization {
public:
    virtual ~Parameterization() = default;
    virtual int input_dim() const = 0;
    virtual int output_dim() const = 0;
    virtual Vector eval(const Vector& w) const = 0;
    virtual Vector gradient(const Vector& w, int i) const = 0;
    virtual Matrix hessian(const Vector& w, int i) const = 0;
};

/// G_i(w) = product of block i of w; the deep diagonal network.
class HadamardBlocks final : public Parameterization {
public:
    HadamardBlocks(int num_layers, int dim);
    int input_dim() const override { return L_ * d_; }
    int output_dim() const override { return d_; }
    Vector eval(const Vector& w) const override;
    Vector gradient(const Vector& w, int i) const override;
    Matrix hessian(const Vector& w, int i) const override;

private:
    void check(const Vector& w, int i) const;
    int L_;
    int d_;
};

/// G(w) = (w1 w2, w1 w3): two outputs sharing w1, hence not commuting.
/// Used as a control to show the commutator check can fail.
class SharedFactorControl final : public Parameterization {
public:
    int input_dim() const override { return 3; }
    int output_dim() const override { return 2; }
    Vector eval(const Vector& w) const override;
    Vector gradient(const Vector& w, int i) const override;
    Matrix hessian(const Vector& w, int i) const override;
};

ThetaVector g_eval(const FlatParams& w);
/// Leave-one-out products inside block i, zero elsewhere. i is 0-based.
Vector g_gradient(const FlatParams& w, int i);
/// Dense (L*d) x (L*d); nonzero only inside block i, zero block diagonal.
Matrix g_hessian(const FlatParams& w, int i);

/// ||H_{i1} grad G_{i2} - H_{i2} grad G_{i1}||_inf.
double commuting_defect(const Parameterization& g, const Vector& w, int i1, int i2);
double commuting_defect(const FlatParams& w, int i1, int i2);

/// Rows of J_G are grad G_i. Counts singular values >= tol * sigma_max.
int jacobian_rank(const Parameterization& g, const Vector& w, double tol = 1e-10);
int jacobian_rank(const FlatParams& w, double tol = 1e-10);

/// Every block has at most one exactly-zero entry.
bool manifold_membership(const FlatParams& w);
bool flow_stays_on_manifold(const Trajectory& traj);

}  // namespace ddln
