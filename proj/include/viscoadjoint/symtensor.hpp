#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>

namespace viscoadjoint {

/// Symmetric dim x dim matrix stored as a dim(dim+1)/2 component vector.
///
/// Off-diagonal components carry a sqrt(2) weight so that the Euclidean dot
/// product of two component vectors equals the Frobenius inner product of the
/// matrices.  Component order: diagonal first (00,11[,22]), then off-diagonals
/// (01[,02,12]) scaled by sqrt(2).
class SymTensor {
public:
    SymTensor() = default;
    explicit SymTensor(int dim) : dim_(dim) {
        if (dim != 2 && dim != 3) throw std::invalid_argument("SymTensor: dim must be 2 or 3");
        a_.fill(0.0);
    }

    static SymTensor identity(int dim) {
        SymTensor t(dim);
        for (int i = 0; i < dim; ++i) t.a_[static_cast<std::size_t>(i)] = 1.0;
        return t;
    }

    int dim() const { return dim_; }
    int size() const { return dim_ * (dim_ + 1) / 2; }

    double& operator[](int i) { return a_[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return a_[static_cast<std::size_t>(i)]; }

    /// Entry (i,j) of the dense matrix.
    double at(int i, int j) const {
        if (i == j) return a_[static_cast<std::size_t>(i)];
        return offdiag(i, j) / std::sqrt(2.0);
    }
    void set(int i, int j, double v) {
        if (i == j) a_[static_cast<std::size_t>(i)] = v;
        else offdiag(i, j) = v * std::sqrt(2.0);
    }

    double trace() const {
        double t = 0.0;
        for (int i = 0; i < dim_; ++i) t += a_[static_cast<std::size_t>(i)];
        return t;
    }

    /// Frobenius inner product <M,N>.
    double dot(const SymTensor& o) const {
        double s = 0.0;
        for (int i = 0; i < size(); ++i) s += a_[static_cast<std::size_t>(i)] * o.a_[static_cast<std::size_t>(i)];
        return s;
    }
    double norm() const { return std::sqrt(dot(*this)); }

    SymTensor& operator+=(const SymTensor& o) {
        for (int i = 0; i < size(); ++i) a_[static_cast<std::size_t>(i)] += o.a_[static_cast<std::size_t>(i)];
        return *this;
    }
    SymTensor& operator-=(const SymTensor& o) {
        for (int i = 0; i < size(); ++i) a_[static_cast<std::size_t>(i)] -= o.a_[static_cast<std::size_t>(i)];
        return *this;
    }
    SymTensor& operator*=(double c) {
        for (int i = 0; i < size(); ++i) a_[static_cast<std::size_t>(i)] *= c;
        return *this;
    }
    friend SymTensor operator+(SymTensor a, const SymTensor& b) { return a += b; }
    friend SymTensor operator-(SymTensor a, const SymTensor& b) { return a -= b; }
    friend SymTensor operator*(double c, SymTensor a) { return a *= c; }

    template <class Rng>
    static SymTensor random(int dim, Rng& rng) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        SymTensor t(dim);
        for (int i = 0; i < t.size(); ++i) t.a_[static_cast<std::size_t>(i)] = u(rng);
        return t;
    }

private:
    double& offdiag(int i, int j) {
        return a_[static_cast<std::size_t>(offdiag_index(i, j))];
    }
    double offdiag(int i, int j) const {
        return a_[static_cast<std::size_t>(offdiag_index(i, j))];
    }
    int offdiag_index(int i, int j) const {
        if (i > j) std::swap(i, j);
        if (dim_ == 2) return 2;          // (0,1)
        if (i == 0 && j == 1) return 3;   // (0,1)
        if (i == 0 && j == 2) return 4;   // (0,2)
        return 5;                         // (1,2)
    }

    int dim_ = 3;
    std::array<double, 6> a_{};
};

}  // namespace viscoadjoint
