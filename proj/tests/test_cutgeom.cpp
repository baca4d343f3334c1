#include <podcut/cutgeom.hpp>

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace podcut;

namespace {

std::array<Vec2, 3> random_ccw_triangle(std::mt19937& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (;;) {
        std::array<Vec2, 3> t = {Vec2{u(rng), u(rng)}, Vec2{u(rng), u(rng)}, Vec2{u(rng), u(rng)}};
        const double a = signed_area(t[0], t[1], t[2]);
        if (a < 0.0) std::swap(t[1], t[2]);
        if (std::abs(a) > 0.02) return t;
    }
}

Poly2 random_poly(std::mt19937& rng, int degree) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Poly2 p;
    for (int i = 0; i + 0 <= degree; ++i)
        for (int j = 0; i + j <= degree; ++j) p.set_coeff(i, j, u(rng));
    return p;
}

const ConvexPolygon unit_square_poly{{0, 0}, {1, 0}, {1, 1}, {0, 1}};

} // namespace

TEST_CASE("triangle intersection") {
    std::mt19937 rng(41);

    SECTION("self intersection preserves the triangle") {
        for (int k = 0; k < 50; ++k) {
            const auto t = random_ccw_triangle(rng);
            const auto p = intersect_triangles(t, t);
            REQUIRE(!p.degenerate());
            CHECK(p.area() == Catch::Approx(signed_area(t[0], t[1], t[2])).epsilon(1e-14));
        }
    }

    SECTION("edge-sharing triangles overlap on a null set") {
        const std::array<Vec2, 3> a = {Vec2{0, 0}, Vec2{1, 0}, Vec2{0, 1}};
        const std::array<Vec2, 3> b = {Vec2{1, 0}, Vec2{1, 1}, Vec2{0, 1}};
        CHECK(intersect_triangles(a, b).degenerate());
    }

    SECTION("shifted overlap matches the half-plane oracle") {
        const std::array<Vec2, 3> a = {Vec2{0, 0}, Vec2{1, 0}, Vec2{0, 1}};
        const std::array<Vec2, 3> b = {Vec2{0.5, 0}, Vec2{1.5, 0}, Vec2{0.5, 1}};
        const auto p = intersect_triangles(a, b);
        const auto q = oracles::intersect_triangles(a, b);
        CHECK(p.area() == Catch::Approx(oracles::shoelace(q)).epsilon(1e-13));
        CHECK(p.area() == Catch::Approx(0.125).epsilon(1e-13));
    }

    SECTION("random pairs match the oracle area") {
        for (int k = 0; k < 300; ++k) {
            const auto a = random_ccw_triangle(rng);
            const auto b = random_ccw_triangle(rng);
            const auto p = intersect_triangles(a, b);
            const auto q = oracles::intersect_triangles(a, b);
            const double oracle_area = q.size() >= 3 ? oracles::shoelace(q) : 0.0;
            CHECK(std::abs(p.area() - oracle_area) <= 1e-10);
        }
    }
}

TEST_CASE("polygon integration by the boundary representation") {
    SECTION("unit square analytic values") {
        CHECK(integrate_polygon(unit_square_poly, Poly2::constant(1.0)) ==
              Catch::Approx(1.0).margin(1e-14));
        CHECK(integrate_polygon(unit_square_poly, Poly2::affine(0, 1, 0)) ==
              Catch::Approx(0.5).margin(1e-14));
        CHECK(integrate_polygon(unit_square_poly, Poly2::affine(0, 0, 1)) ==
              Catch::Approx(0.5).margin(1e-14));
        Poly2 x2;
        x2.set_coeff(2, 0, 1.0);
        CHECK(integrate_polygon(unit_square_poly, x2) == Catch::Approx(1.0 / 3.0).margin(1e-14));
    }

    SECTION("degenerate polygons integrate to zero") {
        ConvexPolygon p;
        CHECK(integrate_polygon(p, Poly2::constant(1.0)) == 0.0);
    }

    SECTION("random clipped polygons match the fan-subtriangulation oracle") {
        std::mt19937 rng(43);
        int tested = 0;
        while (tested < 150) {
            const auto a = random_ccw_triangle(rng);
            const auto b = random_ccw_triangle(rng);
            const auto p = intersect_triangles(a, b);
            if (p.degenerate() || p.area() < 1e-6) continue;
            const Poly2 f = random_poly(rng, 4);
            const double got = integrate_polygon(p, f);
            std::vector<Vec2> verts(p.begin(), p.end());
            const double want = oracles::fan_integrate(verts, [&](Vec2 x) { return f.evaluate(x); });
            CHECK(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
            ++tested;
        }
    }

    SECTION("linearity and additivity under splitting") {
        std::mt19937 rng(47);
        const Poly2 f = random_poly(rng, 3);
        const Poly2 g = random_poly(rng, 2);
        Poly2 fg = f;
        fg += g;
        CHECK(integrate_polygon(unit_square_poly, fg) ==
              Catch::Approx(integrate_polygon(unit_square_poly, f) +
                            integrate_polygon(unit_square_poly, g))
                  .margin(1e-13));

        const ConvexPolygon left{{0, 0}, {0.4, 0}, {0.4, 1}, {0, 1}};
        const ConvexPolygon right{{0.4, 0}, {1, 0}, {1, 1}, {0.4, 1}};
        CHECK(integrate_polygon(left, f) + integrate_polygon(right, f) ==
              Catch::Approx(integrate_polygon(unit_square_poly, f)).epsilon(1e-13));
    }
}

TEST_CASE("bbox collision candidates") {
    const Mesh m = make_unit_square(1, 1);

    SECTION("identical meshes collide with themselves") {
        const auto pairs = bbox_collide(m, m);
        bool t00 = false, t11 = false;
        for (auto [a, b] : pairs) {
            t00 |= (a == 0 && b == 0);
            t11 |= (a == 1 && b == 1);
        }
        CHECK(t00);
        CHECK(t11);
    }

    SECTION("superset of the exhaustive positive-area pairs") {
        std::mt19937 rng(53);
        Mesh a = make_unit_square(2, 2);
        a = refine(a, {a.active_triangles()[0], a.active_triangles()[3]});
        const Mesh b = relocate_nodes(make_unit_square(3, 2), [](Vec2 p) {
            return Vec2{p.x + 0.05 * p.x * (p.x - 1.0), p.y + 0.03 * p.y * (1.0 - p.y)};
        });
        const auto pairs = bbox_collide(a, b);
        const std::set<std::pair<int, int>> have(pairs.begin(), pairs.end());
        for (int ta : a.active_triangles())
            for (int tb : b.active_triangles()) {
                const auto p = intersect_triangles(a.corners(ta), b.corners(tb));
                if (!p.degenerate()) {
                    CAPTURE(ta, tb);
                    CHECK(have.count({ta, tb}) == 1);
                }
            }
        // no pair with disjoint boxes may appear
        for (auto [ta, tb] : pairs) {
            const auto ba = a.triangle_bbox(ta);
            const auto bb = b.triangle_bbox(tb);
            CHECK((ba[0] <= bb[2] && ba[2] >= bb[0] && ba[1] <= bb[3] && ba[3] >= bb[1]));
        }
    }
}

TEST_CASE("basis products across meshes") {
    SECTION("same triangle, same mesh reproduces the reference mass entries") {
        const Mesh m = make_unit_square(2, 2);
        for (int t : m.active_triangles()) {
            const double area = m.area(t);
            for (int k = 0; k < 3; ++k) {
                CHECK(integrate_basis_product(m, t, k, m, t, k, ProductMode::L2) ==
                      Catch::Approx(area / 6.0).epsilon(1e-14));
                CHECK(integrate_basis_product(m, t, k, m, t, (k + 1) % 3, ProductMode::L2) ==
                      Catch::Approx(area / 12.0).epsilon(1e-14));
            }
        }
    }

    SECTION("edge-adjacent triangles have zero product") {
        const Mesh m = make_unit_square(1, 1);
        CHECK(integrate_basis_product(m, 0, 0, m, 1, 0, ProductMode::L2) == 0.0);
    }

    SECTION("nested fast path equals the general clipped path") {
        const Mesh coarse = make_unit_square(2, 2);
        Mesh fine = refine(coarse, {coarse.active_triangles()[1], coarse.active_triangles()[4]});
        fine = refine(fine, {fine.active_triangles()[2]});
        // a geometrically identical mesh in a fresh family forces clipping
        const Mesh alien = relocate_nodes(fine, [](Vec2 p) { return p; });
        REQUIRE(alien.family() != coarse.family());

        for (int tc : coarse.active_triangles())
            for (std::size_t i = 0; i < fine.active_triangles().size(); ++i) {
                const int tf = fine.active_triangles()[i];
                const int ta = alien.active_triangles()[i];
                for (int k = 0; k < 3; ++k)
                    for (int l = 0; l < 3; ++l) {
                        for (auto mode : {ProductMode::L2, ProductMode::H1semi}) {
                            const double fast =
                                integrate_basis_product(coarse, tc, k, fine, tf, l, mode);
                            const double general =
                                integrate_basis_product(coarse, tc, k, alien, ta, l, mode);
                            CHECK(std::abs(fast - general) <= 1e-13);
                        }
                    }
            }
    }

    SECTION("argument order does not change the value") {
        const Mesh a = make_unit_square(2, 2);
        const Mesh b = relocate_nodes(make_unit_square(3, 3), [](Vec2 p) {
            return Vec2{p.x + 0.04 * p.x * (p.x - 1.0), p.y};
        });
        for (int ta : a.active_triangles())
            for (int tb : b.active_triangles())
                for (int k = 0; k < 3; ++k) {
                    const double kl = integrate_basis_product(a, ta, k, b, tb, 2, ProductMode::L2);
                    const double lk = integrate_basis_product(b, tb, 2, a, ta, k, ProductMode::L2);
                    CHECK(kl == lk); // bitwise, the call is ordering-normalized
                }
    }

    SECTION("partition of unity over any cut polygon") {
        const Mesh a = make_unit_square(2, 2);
        const Mesh b = relocate_nodes(make_unit_square(3, 3), [](Vec2 p) {
            return Vec2{p.x + 0.06 * p.x * (p.x - 1.0), p.y + 0.03 * p.y * (p.y - 1.0)};
        });
        for (auto [ta, tb] : bbox_collide(a, b)) {
            const auto p = intersect_triangles(a.corners(ta), b.corners(tb));
            double sum = 0.0;
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l)
                    sum += integrate_basis_product(a, ta, k, b, tb, l, ProductMode::L2);
            CHECK(sum == Catch::Approx(p.degenerate() ? 0.0 : p.area()).margin(1e-12));
        }
    }

    SECTION("intersection areas tile the domain") {
        const Mesh a = refine(make_unit_square(2, 2), {0, 3, 5});
        const Mesh b = relocate_nodes(make_unit_square(4, 3), [](Vec2 p) {
            return Vec2{p.x + 0.05 * p.x * (p.x - 1.0), p.y + 0.02 * p.y * (1.0 - p.y)};
        });
        double total = 0.0;
        for (auto [ta, tb] : bbox_collide(a, b))
            total += std::max(0.0, intersect_triangles(a.corners(ta), b.corners(tb)).area());
        CHECK(total == Catch::Approx(1.0).epsilon(1e-10));
    }
}
