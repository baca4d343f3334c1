#pragma once

#include <podcut/mesh.hpp>
#include <podcut/poly2.hpp>

#include <array>
#include <utility>
#include <vector>

namespace podcut {

/// Counterclockwise convex polygon with a small inline vertex buffer, the
/// result type of triangle clipping. Intersections with area below 1e-14 are
/// flagged degenerate and integrate to zero.
class ConvexPolygon {
public:
    static constexpr int capacity = 16;
    static constexpr double degenerate_area = 1e-14;

    ConvexPolygon() = default;

    ConvexPolygon(std::initializer_list<Vec2> pts) {
        for (Vec2 p : pts) push_back(p);
        finish();
    }

    void push_back(Vec2 p) { v_[n_++] = p; }
    void clear() { n_ = 0; }

    int size() const { return n_; }
    Vec2 operator[](int i) const { return v_[i]; }
    const Vec2* begin() const { return v_.data(); }
    const Vec2* end() const { return v_.data() + n_; }

    double area() const { return area_; }
    bool degenerate() const { return degenerate_; }

    /// Deduplicate vertices within 1e-14 and cache the shoelace area.
    void finish() {
        int m = 0;
        for (int i = 0; i < n_; ++i) {
            const Vec2 p = v_[i];
            const Vec2 q = v_[(i + 1) % n_];
            if (std::abs(p.x - q.x) > 1e-14 || std::abs(p.y - q.y) > 1e-14) v_[m++] = p;
        }
        n_ = m;
        area_ = 0.0;
        for (int i = 0; i < n_; ++i) area_ += cross(v_[i], v_[(i + 1) % n_]);
        area_ *= 0.5;
        degenerate_ = (n_ < 3) || (area_ < degenerate_area);
    }

private:
    std::array<Vec2, capacity> v_{};
    int n_ = 0;
    double area_ = 0.0;
    bool degenerate_ = true;
};

namespace detail {

/// One Sutherland-Hodgman pass: keep the part of `poly` left of the directed
/// line a -> b.
inline void clip_halfplane(const ConvexPolygon& poly, Vec2 a, Vec2 b, ConvexPolygon& out) {
    out.clear();
    const int n = poly.size();
    const Vec2 d = b - a;
    for (int i = 0; i < n; ++i) {
        const Vec2 cur = poly[i];
        const Vec2 nxt = poly[(i + 1) % n];
        const double sc = cross(d, cur - a);
        const double sn = cross(d, nxt - a);
        if (sc >= 0.0) out.push_back(cur);
        if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
            const double t = sc / (sc - sn);
            out.push_back(cur + t * (nxt - cur));
        }
    }
}

} // namespace detail

/// Intersection of a convex polygon with a counterclockwise triangle.
inline ConvexPolygon clip_polygon_triangle(const ConvexPolygon& poly,
                                           const std::array<Vec2, 3>& tri) {
    ConvexPolygon a = poly, b;
    for (int e = 0; e < 3 && a.size() >= 3; ++e) {
        detail::clip_halfplane(a, tri[e], tri[(e + 1) % 3], b);
        std::swap(a, b);
    }
    a.finish();
    return a;
}

/// Intersection of two counterclockwise triangles by successive half-plane
/// clipping of `a` against the edges of `b`. An empty intersection yields a
/// degenerate polygon without vertices.
inline ConvexPolygon intersect_triangles(const std::array<Vec2, 3>& a,
                                         const std::array<Vec2, 3>& b) {
    ConvexPolygon p;
    p.push_back(a[0]);
    p.push_back(a[1]);
    p.push_back(a[2]);
    return clip_polygon_triangle(p, b);
}

/// Candidate pairs (active triangle of A, active triangle of B) whose
/// bounding boxes overlap; a superset of all pairs with positive-area
/// intersection. Pairs come out sorted.
inline std::vector<std::pair<int, int>> bbox_collide(const Mesh& a, const Mesh& b) {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> hits;
    for (int ta : a.active_triangles()) {
        const auto bb = a.triangle_bbox(ta);
        b.query_bbox(bb[0], bb[1], bb[2], bb[3], hits);
        for (int tb : hits) pairs.emplace_back(ta, tb);
    }
    return pairs;
}

/// Moments of a convex polygon: integrals of the monomials x^i y^j up to the
/// requested total degree, computed per homogeneous degree q from the
/// boundary representation
///     int_P f = 1/(2+q) * sum_i (b_i / |a_i|) int_{E_i} f dsigma
/// with edge line integrals by Gauss quadrature exact to degree 6. Values are
/// indexed by Poly2::index.
inline std::array<double, Poly2::num_coeffs> polygon_moments(const ConvexPolygon& p,
                                                             int max_deg) {
    std::array<double, Poly2::num_coeffs> m{};
    if (p.degenerate()) return m;
    const auto& xi = GaussSegment<4>::nodes;
    const auto& w = GaussSegment<4>::weights;
    const int n = p.size();
    for (int e = 0; e < n; ++e) {
        const Vec2 v = p[e];
        const Vec2 u = p[(e + 1) % n];
        // outward normal direction (dy, -dx); the |a| factor cancels against
        // the arclength measure, leaving the plane offset b = a . v
        const Vec2 d = u - v;
        const double b = d.y * v.x - d.x * v.y;
        if (b == 0.0) continue;
        for (int g = 0; g < 4; ++g) {
            const Vec2 x = v + xi[g] * d;
            double px[Poly2::max_degree + 1], py[Poly2::max_degree + 1];
            px[0] = py[0] = 1.0;
            for (int k = 1; k <= max_deg; ++k) {
                px[k] = px[k - 1] * x.x;
                py[k] = py[k - 1] * x.y;
            }
            const double wb = w[g] * b;
            for (int q = 0; q <= max_deg; ++q)
                for (int j = 0; j <= q; ++j) m[q * (q + 1) / 2 + j] += wb * px[q - j] * py[j];
        }
    }
    for (int q = 0; q <= max_deg; ++q) {
        const double s = 1.0 / (2.0 + q);
        for (int j = 0; j <= q; ++j) m[q * (q + 1) / 2 + j] *= s;
    }
    return m;
}

/// Exact integral of a polynomial over a convex polygon (degenerate -> 0).
inline double integrate_polygon(const ConvexPolygon& p, const Poly2& f) {
    if (p.degenerate()) return 0.0;
    const auto m = polygon_moments(p, f.degree());
    double acc = 0.0;
    for (int q = 0; q <= f.degree(); ++q) {
        const double* c = f.homogeneous(q);
        const double* mm = m.data() + q * (q + 1) / 2;
        for (int j = 0; j <= q; ++j) acc += c[j] * mm[j];
    }
    return acc;
}

/// Affine expansions (a, b, c) with v(x) = a + b x + c y of the three nodal
/// P1 basis functions on a triangle.
inline std::array<std::array<double, 3>, 3> p1_affine(const std::array<Vec2, 3>& t) {
    const double inv2a = 1.0 / (2.0 * signed_area(t[0], t[1], t[2]));
    std::array<std::array<double, 3>, 3> out;
    for (int k = 0; k < 3; ++k) {
        const Vec2 p = t[(k + 1) % 3];
        const Vec2 q = t[(k + 2) % 3];
        out[k] = {cross(p, q) * inv2a, (p.y - q.y) * inv2a, (q.x - p.x) * inv2a};
    }
    return out;
}

/// Constant gradients of the three nodal P1 basis functions.
inline std::array<Vec2, 3> p1_gradients(const std::array<Vec2, 3>& t) {
    const auto a = p1_affine(t);
    return {Vec2{a[0][1], a[0][2]}, Vec2{a[1][1], a[1][2]}, Vec2{a[2][1], a[2][2]}};
}

enum class ProductMode { L2, H1semi };

namespace detail {

/// All nine products of P1 basis functions from two triangles over a common
/// convex region, from the degree-2 polygon moments. out[k][l] pairs basis k
/// of ta with basis l of tb.
inline void pair_products_from_moments(const std::array<Vec2, 3>& ta,
                                       const std::array<Vec2, 3>& tb,
                                       const std::array<double, Poly2::num_coeffs>& m,
                                       double region_area, double l2[3][3], double h1[3][3]) {
    const auto fa = p1_affine(ta);
    const auto fb = p1_affine(tb);
    const double m00 = m[Poly2::index(0, 0)], m10 = m[Poly2::index(1, 0)],
                 m01 = m[Poly2::index(0, 1)], m20 = m[Poly2::index(2, 0)],
                 m11 = m[Poly2::index(1, 1)], m02 = m[Poly2::index(0, 2)];
    for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) {
            const auto& u = fa[k];
            const auto& v = fb[l];
            l2[k][l] = u[0] * v[0] * m00 + (u[0] * v[1] + u[1] * v[0]) * m10 +
                       (u[0] * v[2] + u[2] * v[0]) * m01 + u[1] * v[1] * m20 +
                       (u[1] * v[2] + u[2] * v[1]) * m11 + u[2] * v[2] * m02;
            h1[k][l] = (u[1] * v[1] + u[2] * v[2]) * region_area;
        }
}

/// Same products integrated over a triangle `s` contained in both source
/// triangles (the nested case; no clipping).
inline void pair_products_nested(const std::array<Vec2, 3>& ta, const std::array<Vec2, 3>& tb,
                                 const std::array<Vec2, 3>& s, double l2[3][3], double h1[3][3]) {
    ConvexPolygon p;
    p.push_back(s[0]);
    p.push_back(s[1]);
    p.push_back(s[2]);
    p.finish();
    pair_products_from_moments(ta, tb, polygon_moments(p, 2), p.area(), l2, h1);
}

inline bool triangle_inside(const std::array<Vec2, 3>& inner, const std::array<Vec2, 3>& outer,
                            double tol = 1e-12) {
    for (const Vec2 p : inner) {
        const auto l = barycentric(p, outer[0], outer[1], outer[2]);
        if (l[0] < -tol || l[1] < -tol || l[2] < -tol) return false;
    }
    return true;
}

} // namespace detail

/// Inner product of one nodal basis function from each mesh over the
/// intersection of their triangles. L2 returns int v_a v_b; H1semi returns
/// int grad v_a . grad v_b. The call is normalized so both argument orders
/// run the identical arithmetic.
inline double integrate_basis_product(const Mesh& mesh_a, int tri_a, int local_a,
                                      const Mesh& mesh_b, int tri_b, int local_b,
                                      ProductMode mode) {
    if (local_a < 0 || local_a > 2 || local_b < 0 || local_b > 2)
        throw std::invalid_argument("integrate_basis_product: local index out of range");
    if (!mesh_a.triangles()[tri_a].is_active() || !mesh_b.triangles()[tri_b].is_active())
        throw std::invalid_argument("integrate_basis_product: inactive triangle");

    if (mesh_b.id() < mesh_a.id() ||
        (mesh_a.id() == mesh_b.id() && tri_b < tri_a))
        return integrate_basis_product(mesh_b, tri_b, local_b, mesh_a, tri_a, local_a, mode);

    const auto ca = mesh_a.corners(tri_a);
    const auto cb = mesh_b.corners(tri_b);
    double l2[3][3], h1[3][3];

    if (mesh_a.id() == mesh_b.id()) {
        if (tri_a != tri_b) return 0.0;
        const double area = mesh_a.area(tri_a);
        if (mode == ProductMode::L2) return (local_a == local_b) ? area / 6.0 : area / 12.0;
        const auto g = p1_gradients(ca);
        return dot(g[local_a], g[local_b]) * area;
    }

    if (mesh_a.family() == mesh_b.family()) {
        // within one family two triangles are nested or overlap on a null set
        if (detail::triangle_inside(cb, ca)) {
            detail::pair_products_nested(ca, cb, cb, l2, h1);
            return mode == ProductMode::L2 ? l2[local_a][local_b] : h1[local_a][local_b];
        }
        if (detail::triangle_inside(ca, cb)) {
            detail::pair_products_nested(ca, cb, ca, l2, h1);
            return mode == ProductMode::L2 ? l2[local_a][local_b] : h1[local_a][local_b];
        }
        return 0.0;
    }

    const ConvexPolygon p = intersect_triangles(ca, cb);
    if (p.degenerate()) return 0.0;
    detail::pair_products_from_moments(ca, cb, polygon_moments(p, 2), p.area(), l2, h1);
    return mode == ProductMode::L2 ? l2[local_a][local_b] : h1[local_a][local_b];
}

} // namespace podcut
