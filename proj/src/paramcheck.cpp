#include "ddln/paramcheck.hpp"

#include <string>

#include "ddln/errors.hpp"

namespace ddln {

FlatParams::FlatParams(Vector w_, int num_layers_, int dim_)
    : w(std::move(w_)), num_layers(num_layers_), dim(dim_) {
    if (num_layers < 1 || dim < 1 || w.size() != static_cast<Eigen::Index>(num_layers) * dim) {
        throw DimensionMismatch("flat parameter vector has length " + std::to_string(w.size()) +
                                ", expected L*d = " + std::to_string(num_layers) + "*" +
                                std::to_string(dim));
    }
}

FlatParams flatten(const LayerStack& stack) {
    // Column-major storage of the L x d weight matrix is exactly coordinate-major order.
    const Matrix& m = stack.weights();
    return FlatParams(Eigen::Map<const Vector>(m.data(), m.size()), stack.num_layers(), stack.dim());
}

LayerStack unflatten(const FlatParams& params) {
    return LayerStack(Matrix(Eigen::Map<const Matrix>(params.w.data(), params.num_layers, params.dim)));
}

HadamardBlocks::HadamardBlocks(int num_layers, int dim) : L_(num_layers), d_(dim) {
    if (L_ < 1 || d_ < 1) throw std::invalid_argument("HadamardBlocks needs L >= 1 and d >= 1");
}

void HadamardBlocks::check(const Vector& w, int i) const {
    if (w.size() != static_cast<Eigen::Index>(L_) * d_) {
        throw DimensionMismatch("parameter vector has length " + std::to_string(w.size()) +
                                ", expected " + std::to_string(L_ * d_));
    }
    if (i < 0 || i >= d_) {
        throw std::out_of_range("coordinate " + std::to_string(i) + " outside [0, " +
                                std::to_string(d_) + ")");
    }
}

Vector HadamardBlocks::eval(const Vector& w) const {
    check(w, 0);
    Vector out(d_);
    for (int i = 0; i < d_; ++i) out(i) = w.segment(static_cast<Eigen::Index>(i) * L_, L_).prod();
    return out;
}

Vector HadamardBlocks::gradient(const Vector& w, int i) const {
    check(w, i);
    Vector g = Vector::Zero(w.size());
    const Eigen::Index start = static_cast<Eigen::Index>(i) * L_;
    for (int j = 0; j < L_; ++j) {
        double p = 1.0;
        for (int k = 0; k < L_; ++k)
            if (k != j) p *= w(start + k);
        g(start + j) = p;
    }
    return g;
}

Matrix HadamardBlocks::hessian(const Vector& w, int i) const {
    check(w, i);
    Matrix h = Matrix::Zero(w.size(), w.size());
    const Eigen::Index start = static_cast<Eigen::Index>(i) * L_;
    for (int a = 0; a < L_; ++a) {
        for (int b = a + 1; b < L_; ++b) {
            double p = 1.0;
            for (int k = 0; k < L_; ++k)
                if (k != a && k != b) p *= w(start + k);
            h(start + a, start + b) = p;
            h(start + b, start + a) = p;
        }
    }
    return h;
}

namespace {

void check_control(const Vector& w, int i) {
    if (w.size() != 3) throw DimensionMismatch("control parameterization takes 3 inputs");
    if (i < 0 || i > 1) throw std::out_of_range("control parameterization has 2 outputs");
}

}  // namespace

Vector SharedFactorControl::eval(const Vector& w) const {
    check_control(w, 0);
    return Vector{{w(0) * w(1), w(0) * w(2)}};
}

Vector SharedFactorControl::gradient(const Vector& w, int i) const {
    check_control(w, i);
    return i == 0 ? Vector{{w(1), w(0), 0.0}} : Vector{{w(2), 0.0, w(0)}};
}

Matrix SharedFactorControl::hessian(const Vector& w, int i) const {
    check_control(w, i);
    Matrix h = Matrix::Zero(3, 3);
    const int other = i == 0 ? 1 : 2;
    h(0, other) = 1.0;
    h(other, 0) = 1.0;
    return h;
}

ThetaVector g_eval(const FlatParams& w) { return HadamardBlocks(w.num_layers, w.dim).eval(w.w); }

Vector g_gradient(const FlatParams& w, int i) {
    return HadamardBlocks(w.num_layers, w.dim).gradient(w.w, i);
}

Matrix g_hessian(const FlatParams& w, int i) {
    return HadamardBlocks(w.num_layers, w.dim).hessian(w.w, i);
}

double commuting_defect(const Parameterization& g, const Vector& w, int i1, int i2) {
    const Vector lhs = g.hessian(w, i1) * g.gradient(w, i2);
    const Vector rhs = g.hessian(w, i2) * g.gradient(w, i1);
    return (lhs - rhs).lpNorm<Eigen::Infinity>();
}

double commuting_defect(const FlatParams& w, int i1, int i2) {
    return commuting_defect(HadamardBlocks(w.num_layers, w.dim), w.w, i1, i2);
}

int jacobian_rank(const Parameterization& g, const Vector& w, double tol) {
    Matrix J(g.output_dim(), g.input_dim());
    for (int i = 0; i < g.output_dim(); ++i) J.row(i) = g.gradient(w, i).transpose();
    const Eigen::JacobiSVD<Matrix> svd(J);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || s(0) == 0.0) return 0;
    int rank = 0;
    for (Eigen::Index k = 0; k < s.size(); ++k)
        if (s(k) >= tol * s(0)) ++rank;
    return rank;
}

int jacobian_rank(const FlatParams& w, double tol) {
    return jacobian_rank(HadamardBlocks(w.num_layers, w.dim), w.w, tol);
}

bool manifold_membership(const FlatParams& w) {
    for (int i = 0; i < w.dim; ++i) {
        if ((w.block(i).array() == 0.0).count() > 1) return false;
    }
    return true;
}

bool flow_stays_on_manifold(const Trajectory& traj) {
    if (traj.empty()) throw std::invalid_argument("flow_stays_on_manifold: empty trajectory");
    for (const LayerStack& s : traj.states) {
        if (!manifold_membership(flatten(s))) return false;
    }
    return true;
}

}  // namespace ddln
