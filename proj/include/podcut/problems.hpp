#pragma once

#include <podcut/fem.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace podcut {

/// Heat equation with f = 0 and first-eigenfunction initial data; decays as
/// exp(-2 pi^2 t) sin(pi x0) sin(pi x1).
inline HeatProblem heat_linear_problem() {
    HeatProblem p;
    p.c = 0.0;
    p.forcing = nullptr;
    p.initial = [](Vec2 x) { return std::sin(M_PI * x.x) * std::sin(M_PI * x.y); };
    p.analytic = [](double t, Vec2 x) {
        return std::exp(-2.0 * M_PI * M_PI * t) * std::sin(M_PI * x.x) * std::sin(M_PI * x.y);
    };
    return p;
}

/// Manufactured solution exp(-t) sin(pi x0) sin(pi x1) with the forcing
/// adjusted for the cubic term; c = 0 gives the linear manufactured problem.
inline HeatProblem manufactured_problem(double c = 0.0) {
    HeatProblem p;
    p.c = c;
    p.analytic = [](double t, Vec2 x) {
        return std::exp(-t) * std::sin(M_PI * x.x) * std::sin(M_PI * x.y);
    };
    p.initial = [](Vec2 x) { return std::sin(M_PI * x.x) * std::sin(M_PI * x.y); };
    p.forcing = [c](double t, Vec2 x) {
        const double s = std::sin(M_PI * x.x) * std::sin(M_PI * x.y);
        const double y = std::exp(-t) * s;
        return (2.0 * M_PI * M_PI - 1.0) * y + c * y * y * y;
    };
    return p;
}

/// Linear heat equation with the closed-form solution
/// sin(pi x0) sin(pi x1) cos(2 pi t x0) on the unit square.
inline HeatProblem example_6_3_problem() {
    HeatProblem p;
    p.c = 0.0;
    p.analytic = [](double t, Vec2 x) {
        return std::sin(M_PI * x.x) * std::sin(M_PI * x.y) * std::cos(2.0 * M_PI * t * x.x);
    };
    p.initial = [](Vec2 x) { return std::sin(M_PI * x.x) * std::sin(M_PI * x.y); };
    p.forcing = [](double t, Vec2 x) {
        const double u0 = std::sin(M_PI * x.x), u1 = std::sin(M_PI * x.y);
        const double a = 2.0 * M_PI * t;
        const double w = std::cos(a * x.x), sw = std::sin(a * x.x);
        // f = y_t - laplace y for y = u0 u1 w
        const double yt = -2.0 * M_PI * x.x * u0 * u1 * sw;
        const double lap = -(2.0 * M_PI * M_PI + a * a) * u0 * u1 * w -
                           2.0 * a * M_PI * std::cos(M_PI * x.x) * u1 * sw;
        return yt - lap;
    };
    return p;
}

namespace detail {

/// Rotating double-bump solution with steep moving gradients; vanishes on
/// the boundary of the unit square.
inline double example_6_1_solution(double t, Vec2 x) {
    const double ct = std::cos(t), st = std::sin(t);
    const double A = 0.5 + ct * (x.x - 0.5) - st * (x.y - 0.5);
    const double B = 0.5 + st * (x.x - 0.5) + ct * (x.y - 0.5);
    const double a4 = std::pow(A * (1.0 - A), 4);
    const double r = 50000.0 * x.x * (1.0 - x.x) * a4 /
                     ((t + 1.0) * (1.0 + 1000.0 * (A - 0.5) * (A - 0.5)));
    const double b2 = x.y * (1.0 - x.y) * std::pow(B * (1.0 - B), 2);
    const double s1 = 10000.0 * b2 / (1.0 + 100.0 * (B - 0.25) * (B - 0.25));
    const double s2 = 10000.0 * b2 / (1.0 + 100.0 * (B - 0.75) * (B - 0.75));
    return r * (s1 - s2);
}

} // namespace detail

/// Steep rotating-feature problem driving the adaptive runs. The forcing is
/// approximated from the closed-form solution: fourth order finite
/// differences in time and a fourth order five-point Laplacian stencil in
/// space (the solution is defined on all of R^2, so the stencil may cross
/// the boundary).
inline HeatProblem example_6_1_problem() {
    HeatProblem p;
    p.c = 0.0;
    p.analytic = [](double t, Vec2 x) { return detail::example_6_1_solution(t, x); };
    p.initial = [](Vec2 x) { return detail::example_6_1_solution(0.0, x); };
    p.forcing = [](double t, Vec2 x) {
        const double ht = 1e-4, hx = 1e-3;
        auto y = [&](double tt, double xx, double yy) {
            return detail::example_6_1_solution(tt, {xx, yy});
        };
        const double yt = (-y(t + 2 * ht, x.x, x.y) + 8 * y(t + ht, x.x, x.y) -
                           8 * y(t - ht, x.x, x.y) + y(t - 2 * ht, x.x, x.y)) /
                          (12 * ht);
        auto lap1d = [&](bool in_x) {
            const double h = hx;
            auto at = [&](double d) {
                return in_x ? y(t, x.x + d, x.y) : y(t, x.x, x.y + d);
            };
            return (-at(2 * h) + 16 * at(h) - 30 * at(0) + 16 * at(-h) - at(-2 * h)) /
                   (12 * h * h);
        };
        return yt - lap1d(true) - lap1d(false);
    };
    return p;
}

inline HeatProblem problem_preset(const std::string& name, double cubic_c = 1.0) {
    if (name == "heat-linear") return heat_linear_problem();
    if (name == "heat-cubic") return manufactured_problem(cubic_c);
    if (name == "example-6-3") return example_6_3_problem();
    if (name == "example-6-1") return example_6_1_problem();
    if (name == "manufactured") return manufactured_problem(0.0);
    throw std::invalid_argument("unknown problem preset: " + name);
}

} // namespace podcut
