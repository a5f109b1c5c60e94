#include "ddln/model.hpp"

#include <random>
#include <string>

#include "ddln/errors.hpp"

namespace ddln {

namespace {

Matrix stack_rows(const std::vector<Vector>& layers) {
    if (layers.size() < 2) {
        throw DimensionMismatch("LayerStack needs at least 2 layers, got " +
                                std::to_string(layers.size()));
    }
    const auto d = layers.front().size();
    Matrix w(static_cast<Eigen::Index>(layers.size()), d);
    for (std::size_t j = 0; j < layers.size(); ++j) {
        if (layers[j].size() != d) {
            throw DimensionMismatch("layer " + std::to_string(j + 1) + " has length " +
                                    std::to_string(layers[j].size()) + ", expected " +
                                    std::to_string(d));
        }
        w.row(static_cast<Eigen::Index>(j)) = layers[j].transpose();
    }
    return w;
}

}  // namespace

LayerStack::LayerStack(std::vector<Vector> layers) : LayerStack(stack_rows(layers)) {}

LayerStack::LayerStack(Matrix weights) : weights_(std::move(weights)) {
    if (weights_.rows() < 2) {
        throw DimensionMismatch("LayerStack needs at least 2 layers, got " +
                                std::to_string(weights_.rows()));
    }
    if (weights_.cols() < 1) {
        throw DimensionMismatch("LayerStack needs dimension d >= 1");
    }
}

std::vector<Vector> LayerStack::layers() const {
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(num_layers()));
    for (int j = 0; j < num_layers(); ++j) out.push_back(layer(j));
    return out;
}

ThetaVector theta_of_layers(const LayerStack& stack) {
    return stack.weights().colwise().prod().transpose();
}

QuadraticLoss::QuadraticLoss(Matrix X, Vector y) : X_(std::move(X)), y_(std::move(y)) {
    if (X_.rows() != y_.size()) {
        throw DimensionMismatch("X has " + std::to_string(X_.rows()) + " rows but y has length " +
                                std::to_string(y_.size()));
    }
    if (X_.cols() < 1) throw DimensionMismatch("X must have at least one column");

    // Normal equations with a relative eigenvalue cutoff; gives the
    // minimum-norm minimizer even when X is rank deficient.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(X_.transpose() * X_);
    const Vector& lambda = eig.eigenvalues();
    const double cutoff = 1e-12 * std::max(lambda.maxCoeff(), 0.0);
    const Vector rhs = eig.eigenvectors().transpose() * (X_.transpose() * y_);
    Vector coeffs = Vector::Zero(rhs.size());
    for (Eigen::Index k = 0; k < lambda.size(); ++k) {
        if (lambda(k) > cutoff && lambda(k) > 0.0) coeffs(k) = rhs(k) / lambda(k);
    }
    lstsq_ = eig.eigenvectors() * coeffs;
    optimal_value_ = (X_ * lstsq_ - y_).squaredNorm();
}

void QuadraticLoss::check_dim(const ThetaVector& theta) const {
    if (theta.size() != X_.cols()) {
        throw DimensionMismatch("theta has length " + std::to_string(theta.size()) +
                                ", loss expects " + std::to_string(X_.cols()));
    }
}

double QuadraticLoss::value(const ThetaVector& theta) const {
    check_dim(theta);
    return (X_ * theta - y_).squaredNorm();
}

Vector QuadraticLoss::gradient(const ThetaVector& theta) const {
    check_dim(theta);
    return 2.0 * (X_.transpose() * (X_ * theta - y_));
}

LayerStack init_layers(int d, int L, const InitScheme& scheme, std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("init_layers: d must be >= 1");
    if (L < 2) throw std::invalid_argument("init_layers: L must be >= 2");

    std::mt19937_64 rng(seed);
    Matrix w(L, d);
    switch (scheme.kind) {
    case InitKind::uniform: {
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (int j = 0; j < L; ++j)
            for (int i = 0; i < d; ++i) w(j, i) = unif(rng);
        break;
    }
    case InitKind::fig3: {
        if (!(scheme.scale > 0.0)) throw std::invalid_argument("init_layers: fig3 scale must be > 0");
        std::uniform_real_distribution<double> unif(0.5, 1.5);
        w.row(0).setZero();
        for (int j = 1; j < L; ++j)
            for (int i = 0; i < d; ++i) w(j, i) = unif(rng) * scheme.scale;
        break;
    }
    case InitKind::explicit_values:
        if (scheme.values.rows() != L || scheme.values.cols() != d) {
            throw std::invalid_argument("init_layers: explicit values are " +
                                        std::to_string(scheme.values.rows()) + "x" +
                                        std::to_string(scheme.values.cols()) + ", expected " +
                                        std::to_string(L) + "x" + std::to_string(d));
        }
        w = scheme.values;
        break;
    case InitKind::positive: {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int j = 0; j < L; ++j)
            for (int i = 0; i < d; ++i) w(j, i) = 1.0 - unif(rng);
        break;
    }
    }
    return LayerStack(std::move(w));
}

}  // namespace ddln
