#include <podcut/fem.hpp>
#include <podcut/problems.hpp>

#include "support/oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <random>
#include <set>

using namespace podcut;

namespace {

Eigen::MatrixXd dense(const SparseMat& m) { return Eigen::MatrixXd(m); }

std::shared_ptr<const Mesh> square(int n) {
    return std::make_shared<Mesh>(make_unit_square(n, n));
}

} // namespace

TEST_CASE("P1 assembly") {
    const Mesh m = make_unit_square(1, 1);

    SECTION("stiffness of the two-triangle square matches the hand computation") {
        // vertex order (0,0), (1,0), (0,1), (1,1)
        Eigen::MatrixXd want(4, 4);
        want << 1.0, -0.5, -0.5, 0.0,
               -0.5,  1.0,  0.0, -0.5,
               -0.5,  0.0,  1.0, -0.5,
                0.0, -0.5, -0.5,  1.0;
        CHECK((dense(assemble_stiffness(m)) - want).cwiseAbs().maxCoeff() <= 1e-14);
    }

    SECTION("mass quadratic form of the constant is the domain area") {
        for (int n : {1, 3, 5}) {
            const Mesh mm = make_unit_square(n, n);
            const Eigen::VectorXd ones = Eigen::VectorXd::Ones(mm.num_dofs());
            CHECK(ones.dot(assemble_mass(mm) * ones) == Catch::Approx(1.0).epsilon(1e-13));
        }
    }

    SECTION("mass row sums equal a third of the incident areas") {
        const Mesh mm = refine(make_unit_square(2, 2), {0, 5});
        const Eigen::VectorXd rows = assemble_mass(mm) * Eigen::VectorXd::Ones(mm.num_dofs());
        Eigen::VectorXd want = Eigen::VectorXd::Zero(mm.num_dofs());
        for (int t : mm.active_triangles())
            for (int v : mm.triangles()[t].v) want[mm.dof_of(v)] += mm.area(t) / 3.0;
        CHECK((rows - want).cwiseAbs().maxCoeff() <= 1e-14);
    }

    SECTION("zero forcing gives a zero load") {
        CHECK(assemble_load(m, 0.3, nullptr).norm() == 0.0);
        CHECK(assemble_load(m, 0.3, [](double, Vec2) { return 0.0; }).norm() == 0.0);
    }
}

TEST_CASE("implicit Euler stepping") {
    SECTION("free decay is dissipative in L2") {
        const auto mesh = square(8);
        HeatProblem p = heat_linear_problem();
        Eigen::VectorXd y = detail::initial_snapshot(*mesh, p);
        double prev = l2_norm(*mesh, y);
        for (int j = 1; j <= 20; ++j) {
            y = step_implicit_euler(*mesh, y, 0.01 * j, 0.01, p);
            const double cur = l2_norm(*mesh, y);
            CHECK(cur <= prev + 1e-14);
            prev = cur;
        }
    }

    SECTION("steady forcing drives the iterates to the steady FE solution") {
        const auto mesh = square(6);
        HeatProblem p;
        p.c = 0.0;
        p.forcing = [](double, Vec2 x) { return 1.0 + x.x; };
        p.initial = [](Vec2) { return 0.0; };

        // independent steady solve A y = b on the interior
        const detail::DirichletMap dir(*mesh);
        const Eigen::MatrixXd a = dense(dir.reduce(assemble_stiffness(*mesh)));
        const Eigen::VectorXd b = dir.reduce(assemble_load(*mesh, 0.0, p.forcing));
        const Eigen::VectorXd steady = dir.expand(a.ldlt().solve(b), mesh->num_dofs());

        Eigen::VectorXd y = Eigen::VectorXd::Zero(mesh->num_dofs());
        for (int j = 1; j <= 200; ++j) y = step_implicit_euler(*mesh, y, 0.1 * j, 0.1, p);
        CHECK((y - steady).lpNorm<Eigen::Infinity>() <= 1e-8);
    }

    SECTION("manufactured cubic problem converges at second order in h") {
        const HeatProblem p = manufactured_problem(1.0);
        double err[2];
        int k = 0;
        for (int n : {8, 16}) {
            const auto mesh = square(n);
            const TimeGrid grid = TimeGrid::uniform(0.02, 10);
            const SnapshotSet s = solve_fixed(p, grid, mesh);
            err[k++] = l2_error_vs(*mesh, s.snapshot(s.size() - 1).coeffs, p.analytic, 0.02);
        }
        CHECK(err[0] / err[1] > 2.5);
        CHECK(err[0] / err[1] < 6.0);
    }

    SECTION("L2 error at T contracts fourfold when h halves with dt ~ h^2") {
        const HeatProblem p = example_6_3_problem();
        const auto coarse = square(4);
        const auto fine = square(8);
        const SnapshotSet sc = solve_fixed(p, TimeGrid::uniform(0.2, 10), coarse);
        const SnapshotSet sf = solve_fixed(p, TimeGrid::uniform(0.2, 40), fine);
        const double ec = l2_error_vs(*coarse, sc.snapshot(10).coeffs, p.analytic, 0.2);
        const double ef = l2_error_vs(*fine, sf.snapshot(40).coeffs, p.analytic, 0.2);
        CHECK(ec / ef >= 3.2);
        CHECK(ec / ef <= 4.8);
    }

    SECTION("Newton failure reports the last residual") {
        const auto mesh = square(4);
        HeatProblem p;
        p.c = 1e20;
        p.initial = [](Vec2 x) { return std::sin(M_PI * x.x) * std::sin(M_PI * x.y); };
        const Eigen::VectorXd y0 = detail::initial_snapshot(*mesh, p);
        try {
            step_implicit_euler(*mesh, y0, 1.0, 1.0, p);
            FAIL("expected newton_error");
        } catch (const newton_error& e) {
            CHECK(e.last_residual > 0.0);
        }
    }
}

TEST_CASE("edge jump indicator") {
    const Mesh m = refine(make_unit_square(3, 3), {2, 7, 11});

    SECTION("globally linear functions have zero indicators") {
        const Eigen::VectorXd y = nodal_values(m, [](Vec2 p) { return 2.0 + 3.0 * p.x - p.y; });
        for (double e : error_indicator(m, y)) CHECK(std::abs(e) <= 1e-24);
    }

    SECTION("a hat function localizes the indicator to its star") {
        const Mesh uni = make_unit_square(4, 4);
        REQUIRE(uni.point(12).x == 0.5);
        REQUIRE(uni.point(12).y == 0.5);
        Eigen::VectorXd y = Eigen::VectorXd::Zero(uni.num_dofs());
        y[uni.dof_of(12)] = 1.0;
        const auto eta = error_indicator(uni, y);
        double total = 0.0;
        for (std::size_t i = 0; i < eta.size(); ++i) {
            total += eta[i];
            const int t = uni.active_triangles()[i];
            bool touches_star = false;
            for (int v : uni.triangles()[t].v)
                for (const auto& e : uni.active_edges())
                    if ((e.a == 12 || e.b == 12) && (v == e.a || v == e.b)) touches_star = true;
            if (!touches_star) CHECK(eta[i] == 0.0);
        }
        CHECK(total > 0.0);
    }

    SECTION("jumps match a finite-difference gradient oracle") {
        std::mt19937 rng(71);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Eigen::VectorXd y(m.num_dofs());
        for (int i = 0; i < y.size(); ++i) y[i] = u(rng);

        auto value_at = [&](int t, Vec2 p) {
            const auto c = m.corners(t);
            const auto l = barycentric(p, c[0], c[1], c[2]);
            const auto& tv = m.triangles()[t].v;
            return l[0] * y[m.dof_of(tv[0])] + l[1] * y[m.dof_of(tv[1])] +
                   l[2] * y[m.dof_of(tv[2])];
        };
        auto fd_grad = [&](int t) {
            const auto c = m.corners(t);
            const Vec2 g = (1.0 / 3.0) * (c[0] + c[1] + c[2]);
            const double h = 1e-7;
            return Vec2{(value_at(t, g + Vec2{h, 0}) - value_at(t, g - Vec2{h, 0})) / (2 * h),
                        (value_at(t, g + Vec2{0, h}) - value_at(t, g - Vec2{0, h})) / (2 * h)};
        };

        const auto jumps = edge_jumps(m, y);
        for (std::size_t i = 0; i < m.active_edges().size(); ++i) {
            const auto& e = m.active_edges()[i];
            if (!e.interior()) {
                CHECK(jumps[i] == 0.0);
                continue;
            }
            const Vec2 a = m.point(e.a), b = m.point(e.b);
            const Vec2 nu = (1.0 / norm(b - a)) * Vec2{b.y - a.y, a.x - b.x};
            const double want = dot(fd_grad(e.t0) - fd_grad(e.t1), nu);
            CHECK(jumps[i] == Catch::Approx(want).margin(1e-6));
        }
    }
}

TEST_CASE("interpolation across meshes") {
    const Mesh src = make_unit_square(3, 3);
    Mesh dst = refine(src, {0, 4, 8, 12});
    dst = refine(dst, {dst.active_triangles()[3]});

    SECTION("exact for functions linear on each target triangle") {
        const auto f = [](Vec2 p) { return 1.0 - 2.0 * p.x + 5.0 * p.y; };
        const Eigen::VectorXd z = interpolate(src, nodal_values(src, f), dst);
        CHECK((z - nodal_values(dst, f)).lpNorm<Eigen::Infinity>() <= 1e-13);
    }

    SECTION("exact for any coarse function on a nested refinement") {
        std::mt19937 rng(5);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Eigen::VectorXd y(src.num_dofs());
        for (int i = 0; i < y.size(); ++i) y[i] = u(rng);
        const Eigen::VectorXd z = interpolate(src, y, dst);
        std::mt19937 rng2(6);
        std::uniform_real_distribution<double> pt(0.0, 1.0);
        for (int k = 0; k < 100; ++k) {
            const Vec2 p{pt(rng2), pt(rng2)};
            const auto ls = src.locate(p);
            const auto ld = dst.locate(p);
            double vs = 0.0, vd = 0.0;
            for (int i = 0; i < 3; ++i) {
                vs += ls.bary[i] * y[src.dof_of(src.triangles()[ls.triangle].v[i])];
                vd += ld.bary[i] * z[dst.dof_of(dst.triangles()[ld.triangle].v[i])];
            }
            CHECK(vs == Catch::Approx(vd).margin(1e-13));
        }
    }
}

TEST_CASE("adaptive driver") {
    const HeatProblem p = example_6_3_problem();
    const auto mesh = square(4);
    const TimeGrid grid = TimeGrid::uniform(0.1, 5);

    SECTION("zero fractions reproduce the fixed-mesh path bitwise") {
        const SnapshotSet fixed = solve_fixed(p, grid, mesh);
        const SnapshotSet adaptive = solve_adaptive(p, grid, mesh, 0.0, 0.0, 10);
        REQUIRE(fixed.size() == adaptive.size());
        for (int j = 0; j < fixed.size(); ++j) {
            CHECK(fixed.snapshot(j).mesh_id == adaptive.snapshot(j).mesh_id);
            CHECK(fixed.snapshot(j).coeffs == adaptive.snapshot(j).coeffs);
        }
    }

    SECTION("invalid fractions are rejected") {
        CHECK_THROWS_AS(solve_adaptive(p, grid, mesh, 1.5, 0.0, 10), std::invalid_argument);
    }

    SECTION("adaptation tracks a moving feature and stays below the uniform count") {
        const HeatProblem steep = example_6_1_problem();
        const auto base = square(8);
        const TimeGrid g = TimeGrid::uniform(0.3, 15);
        const SnapshotSet s = solve_adaptive(steep, g, base, 0.25, 0.05, 3);

        std::set<int> dof_counts;
        int max_dofs = 0;
        for (int j = 0; j < s.size(); ++j) {
            const int nd = s.mesh_of(j).num_dofs();
            dof_counts.insert(nd);
            max_dofs = std::max(max_dofs, nd);
        }
        CHECK(dof_counts.size() > 1);

        Mesh uniform = *base;
        for (int r = 0; r < 3; ++r) uniform = refine(uniform, uniform.active_triangles());
        CHECK(max_dofs < uniform.num_dofs());

        // the carried overlay must be at least as fine as every snapshot mesh
        const Mesh& overlay = s.mesh(s.finest_mesh_id());
        for (int j = 0; j < s.size(); ++j) {
            const Mesh& mj = s.mesh_of(j);
            for (int t : mj.active_triangles()) {
                const auto c = mj.corners(t);
                const Vec2 centroid = (1.0 / 3.0) * (c[0] + c[1] + c[2]);
                CHECK(overlay.area(overlay.locate(centroid).triangle) <=
                      mj.area(t) * (1.0 + 1e-9));
            }
        }
    }

    SECTION("adaptive error stays within 10x of the uniformly refined run") {
        const auto base = square(8);
        const TimeGrid g = TimeGrid::uniform(0.2, 10);
        const SnapshotSet ad = solve_adaptive(p, g, base, 0.3, 0.0, 2);
        Mesh uni = *base;
        for (int r = 0; r < 2; ++r) uni = refine(uni, uni.active_triangles());
        const SnapshotSet fx = solve_fixed(p, g, std::make_shared<Mesh>(std::move(uni)));

        double ead = 0.0, efx = 0.0;
        for (int j = 0; j < ad.size(); ++j) {
            const double w = ad.weight(j);
            ead += w * std::pow(l2_error_vs(ad.mesh_of(j), ad.snapshot(j).coeffs, p.analytic,
                                            g.times[j]),
                                2);
            efx += w * std::pow(l2_error_vs(fx.mesh_of(j), fx.snapshot(j).coeffs, p.analytic,
                                            g.times[j]),
                                2);
        }
        CHECK(std::sqrt(ead) <= 10.0 * std::sqrt(efx));
    }
}

TEST_CASE("disturbed-mesh driver") {
    const HeatProblem p = example_6_3_problem();
    const auto base = square(6);

    SECTION("theta = 0 reproduces the fixed-mesh run") {
        const TimeGrid grid = TimeGrid::uniform(0.1, 5);
        const SnapshotSet fixed = solve_fixed(p, grid, base);
        const SnapshotSet dist = solve_disturbed(p, grid, base, 0.0);
        for (int j = 0; j < fixed.size(); ++j)
            CHECK(fixed.snapshot(j).coeffs == dist.snapshot(j).coeffs);
    }

    SECTION("theta = 10 keeps all triangles positive over 100 steps") {
        const TimeGrid grid = TimeGrid::uniform(1.0, 100);
        const SnapshotSet s = solve_disturbed(p, grid, base, 10.0);
        CHECK(s.size() == 101);
        std::set<std::int64_t> distinct;
        for (int j = 0; j < s.size(); ++j) {
            const Mesh& m = s.mesh_of(j);
            distinct.insert(m.id());
            for (int t : m.active_triangles()) CHECK(m.area(t) > 0.0);
            CHECK(std::abs(m.active_area() - 1.0) <= 1e-12);
        }
        CHECK(distinct.size() == 101);
    }

    SECTION("oversized theta is rejected") {
        const TimeGrid grid = TimeGrid::uniform(1.0, 2);
        CHECK_THROWS(solve_disturbed(p, grid, base, 2500.0));
    }
}
