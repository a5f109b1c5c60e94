#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace ddln {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// theta = u^1 (.) u^2 (.) ... (.) u^L, always of length d.
using ThetaVector = Eigen::VectorXd;

/// Weights u^1..u^L of a deep diagonal linear network. Row j of the backing
/// matrix holds layer j, column i holds the L nodes feeding coordinate i.
class LayerStack {
public:
    /// Throws DimensionMismatch if fewer than two layers, d == 0 or ragged input.
    explicit LayerStack(std::vector<Vector> layers);
    explicit LayerStack(Matrix weights);

    int num_layers() const { return static_cast<int>(weights_.rows()); }
    int dim() const { return static_cast<int>(weights_.cols()); }

    Vector layer(int j) const { return weights_.row(j).transpose(); }
    const Matrix& weights() const { return weights_; }
    double node(int j, int i) const { return weights_(j, i); }

    std::vector<Vector> layers() const;

    friend bool operator==(const LayerStack& a, const LayerStack& b) {
        return a.weights_.rows() == b.weights_.rows() && a.weights_.cols() == b.weights_.cols() &&
               a.weights_ == b.weights_;
    }

private:
    Matrix weights_;
};

ThetaVector theta_of_layers(const LayerStack& stack);

/// Smooth loss on theta. The flow only needs value and gradient; the
/// optimal value is used by the convergence diagnostics.
class Loss {
public:
    virtual ~Loss() = default;
    virtual int dim() const = 0;
    virtual double value(const ThetaVector& theta) const = 0;
    virtual Vector gradient(const ThetaVector& theta) const = 0;
    virtual double optimal_value() const = 0;
};

/// L(theta) = ||X theta - y||^2, unnormalized (no 1/n, no 1/2).
class QuadraticLoss final : public Loss {
public:
    QuadraticLoss(Matrix X, Vector y);

    int dim() const override { return static_cast<int>(X_.cols()); }
    int samples() const { return static_cast<int>(X_.rows()); }
    double value(const ThetaVector& theta) const override;
    Vector gradient(const ThetaVector& theta) const override;
    double optimal_value() const override { return optimal_value_; }

    const Matrix& X() const { return X_; }
    const Vector& y() const { return y_; }
    /// Minimum-norm least-squares solution computed at construction.
    const Vector& least_squares_solution() const { return lstsq_; }

private:
    void check_dim(const ThetaVector& theta) const;

    Matrix X_;
    Vector y_;
    Vector lstsq_;
    double optimal_value_ = 0.0;
};

enum class InitKind {
    uniform,   // every node uniform in [-1, 1)
    fig3,      // first layer zero, other layers uniform in [0.5, 1.5) times scale
    explicit_values,
    positive,  // every node uniform in (0, 1]
};

struct InitScheme {
    InitKind kind = InitKind::uniform;
    double scale = 1.0;
    /// Only read for InitKind::explicit_values; must be L x d.
    Matrix values;
};

/// Deterministic in (d, L, scheme, seed).
LayerStack init_layers(int d, int L, const InitScheme& scheme, std::uint64_t seed);

}  // namespace ddln
