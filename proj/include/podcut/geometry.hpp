#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace podcut {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

/// Signed area of the triangle (a,b,c); positive when counterclockwise.
inline double signed_area(Vec2 a, Vec2 b, Vec2 c) {
    return 0.5 * cross(b - a, c - a);
}

/// Barycentric coordinates of p with respect to the triangle (a,b,c).
/// The result sums to one for any p; no containment is implied.
inline std::array<double, 3> barycentric(Vec2 p, Vec2 a, Vec2 b, Vec2 c) {
    const double area = signed_area(a, b, c);
    const double l0 = signed_area(p, b, c) / area;
    const double l1 = signed_area(a, p, c) / area;
    return {l0, l1, 1.0 - l0 - l1};
}

/// Gauss-Legendre rule on [0,1], exact for polynomials of degree 2n-1.
template <int N>
struct GaussSegment;

template <>
struct GaussSegment<2> {
    static constexpr std::array<double, 2> nodes = {0.21132486540518711775, 0.78867513459481288225};
    static constexpr std::array<double, 2> weights = {0.5, 0.5};
};

template <>
struct GaussSegment<4> {
    static constexpr std::array<double, 4> nodes = {0.069431844202973712388, 0.33000947820757186760,
                                                    0.66999052179242813240, 0.93056815579702628761};
    static constexpr std::array<double, 4> weights = {0.17392742256872692869, 0.32607257743127307131,
                                                      0.32607257743127307131, 0.17392742256872692869};
};

/// Symmetric quadrature rule on the reference triangle, stored as barycentric
/// points with weights summing to one. Apply as area * sum w_q f(x_q).
struct TriangleRule {
    const std::array<double, 3>* points;
    const double* weights;
    int size;
};

namespace detail {

// degree 2: edge midpoints
inline constexpr std::array<std::array<double, 3>, 3> tri_pts_deg2 = {{
    {0.5, 0.5, 0.0}, {0.0, 0.5, 0.5}, {0.5, 0.0, 0.5},
}};
inline constexpr std::array<double, 3> tri_w_deg2 = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

// degree 4: 6-point rule
inline constexpr double tq4_a1 = 0.445948490915965;
inline constexpr double tq4_b1 = 0.108103018168070;
inline constexpr double tq4_a2 = 0.091576213509771;
inline constexpr double tq4_b2 = 0.816847572980459;
inline constexpr std::array<std::array<double, 3>, 6> tri_pts_deg4 = {{
    {tq4_b1, tq4_a1, tq4_a1}, {tq4_a1, tq4_b1, tq4_a1}, {tq4_a1, tq4_a1, tq4_b1},
    {tq4_b2, tq4_a2, tq4_a2}, {tq4_a2, tq4_b2, tq4_a2}, {tq4_a2, tq4_a2, tq4_b2},
}};
inline constexpr std::array<double, 6> tri_w_deg4 = {
    0.223381589678011, 0.223381589678011, 0.223381589678011,
    0.109951743655322, 0.109951743655322, 0.109951743655322,
};

// degree 5: 7-point rule
inline constexpr double tq5_a1 = 0.470142064105115;
inline constexpr double tq5_b1 = 0.059715871789770;
inline constexpr double tq5_a2 = 0.101286507323456;
inline constexpr double tq5_b2 = 0.797426985353087;
inline constexpr std::array<std::array<double, 3>, 7> tri_pts_deg5 = {{
    {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0},
    {tq5_b1, tq5_a1, tq5_a1}, {tq5_a1, tq5_b1, tq5_a1}, {tq5_a1, tq5_a1, tq5_b1},
    {tq5_b2, tq5_a2, tq5_a2}, {tq5_a2, tq5_b2, tq5_a2}, {tq5_a2, tq5_a2, tq5_b2},
}};
inline constexpr std::array<double, 7> tri_w_deg5 = {
    0.225,
    0.132394152788506, 0.132394152788506, 0.132394152788506,
    0.125939180544827, 0.125939180544827, 0.125939180544827,
};

} // namespace detail

/// Rule exact for the given polynomial degree (2, 4 or 5 supported).
inline TriangleRule triangle_rule(int degree) {
    if (degree <= 2)
        return {detail::tri_pts_deg2.data(), detail::tri_w_deg2.data(), 3};
    if (degree <= 4)
        return {detail::tri_pts_deg4.data(), detail::tri_w_deg4.data(), 6};
    return {detail::tri_pts_deg5.data(), detail::tri_w_deg5.data(), 7};
}

/// Integrate a callable f(Vec2) over the triangle (a,b,c) with a rule of the
/// requested polynomial exactness.
template <typename F>
double integrate_triangle(Vec2 a, Vec2 b, Vec2 c, int degree, F&& f) {
    const TriangleRule rule = triangle_rule(degree);
    const double area = std::abs(signed_area(a, b, c));
    double acc = 0.0;
    for (int q = 0; q < rule.size; ++q) {
        const auto& l = rule.points[q];
        const Vec2 p = l[0] * a + l[1] * b + l[2] * c;
        acc += rule.weights[q] * f(p);
    }
    return area * acc;
}

} // namespace podcut
