#pragma once

#include <podcut/geometry.hpp>

#include <array>
#include <stdexcept>

namespace podcut {

/// Dense bivariate polynomial of total degree at most 6, indexed by the
/// monomials x^i y^j with i + j <= 6.
class Poly2 {
public:
    static constexpr int max_degree = 6;
    static constexpr int num_coeffs = (max_degree + 1) * (max_degree + 2) / 2;

    static constexpr int index(int i, int j) {
        const int d = i + j;
        return d * (d + 1) / 2 + j;
    }

    Poly2() = default;

    static Poly2 constant(double c) {
        Poly2 p;
        p.c_[0] = c;
        p.deg_ = 0;
        return p;
    }

    /// a + b*x + c*y
    static Poly2 affine(double a, double b, double c) {
        Poly2 p;
        p.c_[index(0, 0)] = a;
        p.c_[index(1, 0)] = b;
        p.c_[index(0, 1)] = c;
        p.deg_ = (b != 0.0 || c != 0.0) ? 1 : 0;
        return p;
    }

    double coeff(int i, int j) const { return c_[index(i, j)]; }
    void set_coeff(int i, int j, double v) {
        if (i + j > max_degree) throw std::invalid_argument("Poly2: degree cap exceeded");
        c_[index(i, j)] = v;
        deg_ = std::max(deg_, i + j);
    }
    int degree() const { return deg_; }

    Poly2& operator+=(const Poly2& o) {
        for (int k = 0; k < num_coeffs; ++k) c_[k] += o.c_[k];
        deg_ = std::max(deg_, o.deg_);
        return *this;
    }

    Poly2& operator*=(double s) {
        for (int k = 0; k < num_coeffs; ++k) c_[k] *= s;
        return *this;
    }

    friend Poly2 operator*(const Poly2& a, const Poly2& b) {
        if (a.deg_ + b.deg_ > max_degree)
            throw std::invalid_argument("Poly2: product exceeds degree cap");
        Poly2 r;
        r.deg_ = a.deg_ + b.deg_;
        for (int da = 0; da <= a.deg_; ++da)
            for (int ja = 0; ja <= da; ++ja) {
                const double ca = a.c_[da * (da + 1) / 2 + ja];
                if (ca == 0.0) continue;
                for (int db = 0; db <= b.deg_; ++db)
                    for (int jb = 0; jb <= db; ++jb) {
                        const double cb = b.c_[db * (db + 1) / 2 + jb];
                        if (cb == 0.0) continue;
                        r.c_[index(da - ja + db - jb, ja + jb)] += ca * cb;
                    }
            }
        return r;
    }

    double evaluate(Vec2 p) const {
        // powers up to the live degree
        std::array<double, max_degree + 1> px, py;
        px[0] = py[0] = 1.0;
        for (int k = 1; k <= deg_; ++k) {
            px[k] = px[k - 1] * p.x;
            py[k] = py[k - 1] * p.y;
        }
        double acc = 0.0;
        for (int d = 0; d <= deg_; ++d)
            for (int j = 0; j <= d; ++j) {
                const double c = c_[d * (d + 1) / 2 + j];
                if (c != 0.0) acc += c * px[d - j] * py[j];
            }
        return acc;
    }

    /// Coefficients of the homogeneous part of total degree q.
    const double* homogeneous(int q) const { return c_.data() + q * (q + 1) / 2; }

private:
    std::array<double, num_coeffs> c_{};
    int deg_ = 0;
};

inline Poly2 cube(const Poly2& p) { return p * p * p; }

} // namespace podcut
