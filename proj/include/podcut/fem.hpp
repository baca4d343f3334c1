#pragma once

#include <podcut/cutgeom.hpp>
#include <podcut/mesh.hpp>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace podcut {

using SparseMat = Eigen::SparseMatrix<double>;

class newton_error : public std::runtime_error {
public:
    newton_error(const std::string& what, double residual)
        : std::runtime_error(what), last_residual(residual) {}
    double last_residual;
};

/// Nodal P1 coefficient vector bound to one mesh by id.
struct FeFunction {
    std::int64_t mesh_id = -1;
    Eigen::VectorXd coeffs;
};

struct TimeGrid {
    std::vector<double> times;

    TimeGrid() = default;
    explicit TimeGrid(std::vector<double> t) : times(std::move(t)) { validate(); }

    static TimeGrid uniform(double t_end, int steps) {
        std::vector<double> t(steps + 1);
        for (int j = 0; j <= steps; ++j) t[j] = t_end * j / steps;
        return TimeGrid(std::move(t));
    }

    int steps() const { return static_cast<int>(times.size()) - 1; }
    double dt(int j) const { return times[j] - times[j - 1]; } // j in 1..steps
    double t_end() const { return times.back(); }

    void validate() const {
        if (times.size() < 2) throw std::invalid_argument("time grid needs at least one step");
        for (std::size_t j = 1; j < times.size(); ++j)
            if (times[j] <= times[j - 1])
                throw std::invalid_argument("time grid must be strictly increasing");
    }
};

/// Trapezoidal weights: alpha_0 = dt_1/2, alpha_j = (dt_j + dt_{j+1})/2,
/// alpha_n = dt_n/2. They sum to the covered time span.
inline std::vector<double> trapezoidal_weights(const TimeGrid& g) {
    const int n = g.steps();
    std::vector<double> alpha(n + 1);
    alpha[0] = 0.5 * g.dt(1);
    for (int j = 1; j < n; ++j) alpha[j] = 0.5 * (g.dt(j) + g.dt(j + 1));
    alpha[n] = 0.5 * g.dt(n);
    return alpha;
}

namespace detail {
inline std::uint64_t next_snapshot_set_id() {
    static std::atomic<std::uint64_t> c{1};
    return c.fetch_add(1);
}
} // namespace detail

/// Time grid, trapezoidal weights and one finite element function per time
/// instance; the meshes may differ per entry and are shared through a
/// registry keyed by mesh id.
class SnapshotSet {
public:
    explicit SnapshotSet(TimeGrid grid)
        : grid_(std::move(grid)), weights_(trapezoidal_weights(grid_)),
          id_(detail::next_snapshot_set_id()) {}

    void add(std::shared_ptr<const Mesh> mesh, Eigen::VectorXd coeffs) {
        if (static_cast<int>(coeffs.size()) != mesh->num_dofs())
            throw std::invalid_argument("snapshot length does not match the mesh");
        if (size() > grid_.steps())
            throw std::invalid_argument("snapshot set already complete");
        snapshots_.push_back({mesh->id(), std::move(coeffs)});
        meshes_.emplace(mesh->id(), std::move(mesh));
    }

    void register_mesh(std::shared_ptr<const Mesh> mesh) {
        meshes_.emplace(mesh->id(), std::move(mesh));
    }

    std::uint64_t id() const { return id_; }
    const TimeGrid& grid() const { return grid_; }
    const std::vector<double>& weights() const { return weights_; }
    double weight(int j) const { return weights_[j]; }
    int size() const { return static_cast<int>(snapshots_.size()); }

    const FeFunction& snapshot(int j) const { return snapshots_[j]; }
    const std::vector<FeFunction>& snapshots() const { return snapshots_; }

    const Mesh& mesh(std::int64_t id) const {
        const auto it = meshes_.find(id);
        if (it == meshes_.end())
            throw std::invalid_argument("mesh id not registered in the snapshot set");
        return *it->second;
    }

    std::shared_ptr<const Mesh> mesh_ptr(std::int64_t id) const {
        const auto it = meshes_.find(id);
        if (it == meshes_.end())
            throw std::invalid_argument("mesh id not registered in the snapshot set");
        return it->second;
    }

    const Mesh& mesh_of(int j) const { return mesh(snapshots_[j].mesh_id); }

    const std::map<std::int64_t, std::shared_ptr<const Mesh>>& meshes() const { return meshes_; }

    void check_complete() const {
        if (size() != grid_.steps() + 1)
            throw std::invalid_argument("snapshot set is incomplete");
    }

    std::int64_t finest_mesh_id() const { return finest_mesh_id_; }
    void set_finest_mesh(std::shared_ptr<const Mesh> mesh) {
        finest_mesh_id_ = mesh->id();
        register_mesh(std::move(mesh));
    }

private:
    TimeGrid grid_;
    std::vector<double> weights_;
    std::vector<FeFunction> snapshots_;
    std::map<std::int64_t, std::shared_ptr<const Mesh>> meshes_;
    std::int64_t finest_mesh_id_ = -1;
    std::uint64_t id_;
};

/// Semilinear heat problem y_t - laplace y + c y^3 = f with homogeneous
/// Dirichlet data. `analytic`, when set, is used for error reporting only.
struct HeatProblem {
    double c = 0.0;
    std::function<double(double, Vec2)> forcing;
    std::function<double(Vec2)> initial;
    std::function<double(double, Vec2)> analytic;
};

// ---------------------------------------------------------------------------
// assembly

inline SparseMat assemble_mass(const Mesh& m) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(9 * m.active_triangles().size());
    for (int t : m.active_triangles()) {
        const auto& tv = m.triangles()[t].v;
        const double a = m.area(t);
        for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l)
                trip.emplace_back(m.dof_of(tv[k]), m.dof_of(tv[l]), (k == l) ? a / 6.0 : a / 12.0);
    }
    SparseMat mat(m.num_dofs(), m.num_dofs());
    mat.setFromTriplets(trip.begin(), trip.end());
    return mat;
}

inline SparseMat assemble_stiffness(const Mesh& m) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(9 * m.active_triangles().size());
    for (int t : m.active_triangles()) {
        const auto& tv = m.triangles()[t].v;
        const double a = m.area(t);
        const auto g = p1_gradients(m.corners(t));
        for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l)
                trip.emplace_back(m.dof_of(tv[k]), m.dof_of(tv[l]), a * dot(g[k], g[l]));
    }
    SparseMat mat(m.num_dofs(), m.num_dofs());
    mat.setFromTriplets(trip.begin(), trip.end());
    return mat;
}

template <typename F>
Eigen::VectorXd nodal_values(const Mesh& m, F&& f) {
    Eigen::VectorXd v(m.num_dofs());
    for (int vid : m.active_vertices()) v[m.dof_of(vid)] = f(m.point(vid));
    return v;
}

/// Load vector of the nodal interpolant of the forcing, b = M I_h f(t).
inline Eigen::VectorXd assemble_load(const Mesh& m, double t,
                                     const std::function<double(double, Vec2)>& forcing) {
    if (!forcing) return Eigen::VectorXd::Zero(m.num_dofs());
    const Eigen::VectorXd fv = nodal_values(m, [&](Vec2 p) { return forcing(t, p); });
    return assemble_mass(m) * fv;
}

namespace detail {

/// Homogeneous Dirichlet elimination: keeps the interior rows/columns.
struct DirichletMap {
    std::vector<int> interior;    // compressed -> dof
    std::vector<int> interior_of; // dof -> compressed, -1 on the boundary

    explicit DirichletMap(const Mesh& m) : interior_of(m.num_dofs(), -1) {
        for (int v : m.active_vertices())
            if (!m.vertices()[v].boundary) {
                interior_of[m.dof_of(v)] = static_cast<int>(interior.size());
                interior.push_back(m.dof_of(v));
            }
    }

    SparseMat reduce(const SparseMat& full) const {
        std::vector<Eigen::Triplet<double>> trip;
        for (int col = 0; col < full.outerSize(); ++col) {
            const int jc = interior_of[col];
            if (jc < 0) continue;
            for (SparseMat::InnerIterator it(full, col); it; ++it) {
                const int ir = interior_of[it.row()];
                if (ir >= 0) trip.emplace_back(ir, jc, it.value());
            }
        }
        SparseMat red(interior.size(), interior.size());
        red.setFromTriplets(trip.begin(), trip.end());
        return red;
    }

    Eigen::VectorXd reduce(const Eigen::VectorXd& full) const {
        Eigen::VectorXd r(interior.size());
        for (std::size_t i = 0; i < interior.size(); ++i) r[i] = full[interior[i]];
        return r;
    }

    Eigen::VectorXd expand(const Eigen::VectorXd& red, int n) const {
        Eigen::VectorXd full = Eigen::VectorXd::Zero(n);
        for (std::size_t i = 0; i < interior.size(); ++i) full[interior[i]] = red[i];
        return full;
    }
};

/// Nonlinear term n(y)_i = int y^3 v_i and its Jacobian 3 int y^2 v_i v_j,
/// both exact for the piecewise cubic integrands.
inline void cubic_term(const Mesh& m, const Eigen::VectorXd& y, Eigen::VectorXd* n,
                       std::vector<Eigen::Triplet<double>>* jac) {
    const TriangleRule rule = triangle_rule(4);
    if (n) n->setZero(m.num_dofs());
    for (int t : m.active_triangles()) {
        const auto& tv = m.triangles()[t].v;
        const double area = m.area(t);
        const double yl[3] = {y[m.dof_of(tv[0])], y[m.dof_of(tv[1])], y[m.dof_of(tv[2])]};
        for (int q = 0; q < rule.size; ++q) {
            const auto& l = rule.points[q];
            const double yq = yl[0] * l[0] + yl[1] * l[1] + yl[2] * l[2];
            const double w = rule.weights[q] * area;
            if (n) {
                const double c3 = w * yq * yq * yq;
                for (int k = 0; k < 3; ++k) (*n)[m.dof_of(tv[k])] += c3 * l[k];
            }
            if (jac) {
                const double c2 = 3.0 * w * yq * yq;
                for (int k = 0; k < 3; ++k)
                    for (int p = 0; p < 3; ++p)
                        jac->emplace_back(m.dof_of(tv[k]), m.dof_of(tv[p]), c2 * l[k] * l[p]);
            }
        }
    }
}

} // namespace detail

/// One implicit Euler step: solve (M/dt + A) y + c n(y) = M y_prev/dt + b(t)
/// on the interior degrees of freedom, by a single sparse solve when c = 0
/// and by Newton iteration (residual 1e-10, at most 25 iterations) otherwise.
/// y_prev must already live on `m`.
inline Eigen::VectorXd step_implicit_euler(const Mesh& m, const Eigen::VectorXd& y_prev, double t,
                                           double dt, const HeatProblem& problem) {
    const detail::DirichletMap dir(m);
    const SparseMat mass = assemble_mass(m);
    const SparseMat stiff = assemble_stiffness(m);
    const SparseMat lin = dir.reduce(SparseMat(mass / dt + stiff));
    const Eigen::VectorXd rhs =
        dir.reduce(Eigen::VectorXd(mass * y_prev / dt + assemble_load(m, t, problem.forcing)));

    Eigen::SimplicialLDLT<SparseMat> solver;
    if (problem.c == 0.0) {
        solver.compute(lin);
        if (solver.info() != Eigen::Success)
            throw std::runtime_error("implicit Euler: factorization failed");
        return dir.expand(solver.solve(rhs), m.num_dofs());
    }

    Eigen::VectorXd y = y_prev; // warm start
    Eigen::VectorXd n_full;
    std::vector<Eigen::Triplet<double>> jac_trip;
    double res_norm = 0.0;
    for (int it = 0; it < 25; ++it) {
        jac_trip.clear();
        detail::cubic_term(m, y, &n_full, &jac_trip);
        const Eigen::VectorXd residual =
            lin * dir.reduce(y) + problem.c * dir.reduce(n_full) - rhs;
        res_norm = residual.norm();
        if (res_norm <= 1e-10) return y;
        SparseMat jac_full(m.num_dofs(), m.num_dofs());
        jac_full.setFromTriplets(jac_trip.begin(), jac_trip.end());
        solver.compute(SparseMat(lin + problem.c * dir.reduce(jac_full)));
        if (solver.info() != Eigen::Success)
            throw newton_error("implicit Euler: Newton Jacobian is singular", res_norm);
        const Eigen::VectorXd delta = solver.solve(residual);
        y -= dir.expand(delta, m.num_dofs());
    }
    throw newton_error("implicit Euler: Newton did not converge", res_norm);
}

// ---------------------------------------------------------------------------
// error indicator and marking

/// Edge-jump indicator eta_E = sqrt(h_E) || [grad y]_E . nu ||_L2(E) per
/// interior edge, accumulated per triangle as the half of eta_E^2 from each
/// incident edge.
inline std::vector<double> error_indicator(const Mesh& m, const Eigen::VectorXd& y) {
    std::vector<double> eta(m.active_triangles().size(), 0.0);
    std::vector<int> slot(m.triangles().size(), -1);
    for (std::size_t i = 0; i < m.active_triangles().size(); ++i)
        slot[m.active_triangles()[i]] = static_cast<int>(i);

    auto grad_on = [&](int t) {
        const auto g = p1_gradients(m.corners(t));
        const auto& tv = m.triangles()[t].v;
        Vec2 grad{0, 0};
        for (int k = 0; k < 3; ++k) grad = grad + y[m.dof_of(tv[k])] * g[k];
        return grad;
    };

    for (const auto& e : m.active_edges()) {
        if (!e.interior()) continue;
        const Vec2 a = m.point(e.a), b = m.point(e.b);
        const double h = norm(b - a);
        const Vec2 nu = (1.0 / h) * Vec2{b.y - a.y, a.x - b.x};
        const double jump = dot(grad_on(e.t0) - grad_on(e.t1), nu);
        const double eta_sq = h * (jump * jump) * h; // sqrt(h)^2 * L2(E) norm^2
        eta[slot[e.t0]] += 0.5 * eta_sq;
        eta[slot[e.t1]] += 0.5 * eta_sq;
    }
    return eta;
}

/// Signed gradient jumps [grad y].nu per active edge (0 on boundary edges),
/// with nu pointing from t0 to t1; aligned with Mesh::active_edges().
inline std::vector<double> edge_jumps(const Mesh& m, const Eigen::VectorXd& y) {
    std::vector<double> jumps(m.active_edges().size(), 0.0);
    for (std::size_t i = 0; i < m.active_edges().size(); ++i) {
        const auto& e = m.active_edges()[i];
        if (!e.interior()) continue;
        const Vec2 a = m.point(e.a), b = m.point(e.b);
        const Vec2 nu = (1.0 / norm(b - a)) * Vec2{b.y - a.y, a.x - b.x};
        auto grad_on = [&](int t) {
            const auto g = p1_gradients(m.corners(t));
            const auto& tv = m.triangles()[t].v;
            Vec2 grad{0, 0};
            for (int k = 0; k < 3; ++k) grad = grad + y[m.dof_of(tv[k])] * g[k];
            return grad;
        };
        jumps[i] = dot(grad_on(e.t0) - grad_on(e.t1), nu);
    }
    return jumps;
}

namespace detail {

/// Bulk marking: smallest set of triangles whose indicator mass reaches
/// `fraction` of the total, largest indicators first. Triangles at
/// max_generation are not marked.
inline std::vector<int> mark_top(const Mesh& m, const std::vector<double>& eta, double fraction,
                                 int max_generation) {
    if (fraction <= 0.0) return {};
    std::vector<int> order(eta.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return eta[a] > eta[b]; });
    const double total = std::accumulate(eta.begin(), eta.end(), 0.0);
    std::vector<int> marks;
    double acc = 0.0;
    for (int i : order) {
        if (acc >= fraction * total) break;
        acc += eta[i];
        const int t = m.active_triangles()[i];
        if (m.triangles()[t].generation < max_generation) marks.push_back(t);
    }
    return marks;
}

/// Complementary coarsening marks: largest low-indicator set whose mass
/// stays below `fraction` of the total.
inline std::vector<int> mark_bottom(const Mesh& m, const std::vector<double>& eta,
                                    double fraction) {
    if (fraction <= 0.0) return {};
    std::vector<int> order(eta.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return eta[a] < eta[b]; });
    const double total = std::accumulate(eta.begin(), eta.end(), 0.0);
    std::vector<int> marks;
    double acc = 0.0;
    for (int i : order) {
        acc += eta[i];
        if (acc > fraction * total) break;
        marks.push_back(m.active_triangles()[i]);
    }
    return marks;
}

} // namespace detail

/// Lagrange interpolation of nodal values from one mesh onto another.
inline Eigen::VectorXd interpolate(const Mesh& src, const Eigen::VectorXd& coeffs,
                                   const Mesh& dst) {
    if (src.id() == dst.id()) return coeffs;
    Eigen::VectorXd out(dst.num_dofs());
    for (int v : dst.active_vertices()) {
        const auto loc = src.locate(dst.point(v));
        const auto& tv = src.triangles()[loc.triangle].v;
        double val = 0.0;
        for (int k = 0; k < 3; ++k) val += loc.bary[k] * coeffs[src.dof_of(tv[k])];
        out[dst.dof_of(v)] = val;
    }
    return out;
}

namespace detail {

inline Eigen::VectorXd initial_snapshot(const Mesh& m, const HeatProblem& p) {
    Eigen::VectorXd y0 = nodal_values(m, p.initial);
    for (int v : m.active_vertices())
        if (m.vertices()[v].boundary) y0[m.dof_of(v)] = 0.0;
    return y0;
}

/// Keep the overlay at least as fine as the computational mesh everywhere.
inline void ensure_cover(std::shared_ptr<const Mesh>& overlay, const Mesh& comp) {
    for (int t : comp.active_triangles()) {
        const auto c = comp.corners(t);
        const Vec2 centroid = (1.0 / 3.0) * (c[0] + c[1] + c[2]);
        const double target = comp.area(t) * (1.0 + 1e-9);
        for (;;) {
            const int r = overlay->locate(centroid).triangle;
            if (overlay->area(r) <= target) break;
            overlay = std::make_shared<Mesh>(refine(*overlay, {r}));
        }
    }
}

} // namespace detail

/// Implicit Euler on one fixed mesh; records a snapshot at every time
/// instance including the interpolated initial condition.
inline SnapshotSet solve_fixed(const HeatProblem& problem, const TimeGrid& grid,
                               std::shared_ptr<const Mesh> mesh) {
    SnapshotSet out(grid);
    Eigen::VectorXd y = detail::initial_snapshot(*mesh, problem);
    out.add(mesh, y);
    for (int j = 1; j <= grid.steps(); ++j) {
        y = step_implicit_euler(*mesh, y, grid.times[j], grid.dt(j), problem);
        out.add(mesh, y);
    }
    out.set_finest_mesh(mesh);
    return out;
}

/// h-adaptive implicit Euler: solve, mark by the edge-jump indicator, adapt,
/// interpolate the previous solution onto the adapted mesh and re-solve once,
/// then record. Carries an overlay mesh that is refined alongside and ends up
/// at least as fine as every computational mesh; it is registered as the
/// finest mesh of the returned snapshot set.
inline SnapshotSet solve_adaptive(const HeatProblem& problem, const TimeGrid& grid,
                                  std::shared_ptr<const Mesh> initial_mesh,
                                  double refine_fraction, double coarsen_fraction,
                                  int max_generation) {
    if (refine_fraction < 0.0 || refine_fraction > 1.0 || coarsen_fraction < 0.0 ||
        coarsen_fraction > 1.0)
        throw std::invalid_argument("marking fractions must lie in [0,1]");
    const bool adapting = refine_fraction > 0.0 || coarsen_fraction > 0.0;

    SnapshotSet out(grid);
    std::shared_ptr<const Mesh> mesh = initial_mesh;
    std::shared_ptr<const Mesh> overlay = initial_mesh;
    Eigen::VectorXd y = detail::initial_snapshot(*mesh, problem);
    out.add(mesh, y);

    for (int j = 1; j <= grid.steps(); ++j) {
        const double t = grid.times[j], dt = grid.dt(j);
        Eigen::VectorXd y_step = step_implicit_euler(*mesh, y, t, dt, problem);
        if (adapting) {
            const auto eta = error_indicator(*mesh, y_step);
            const auto rmarks = detail::mark_top(*mesh, eta, refine_fraction, max_generation);
            const auto cmarks = detail::mark_bottom(*mesh, eta, coarsen_fraction);
            std::shared_ptr<const Mesh> adapted = mesh;
            if (!rmarks.empty()) adapted = std::make_shared<Mesh>(refine(*adapted, rmarks));
            if (!cmarks.empty()) adapted = std::make_shared<Mesh>(coarsen(*adapted, cmarks));
            if (adapted->id() != mesh->id()) {
                const Eigen::VectorXd y_on_adapted = interpolate(*mesh, y, *adapted);
                mesh = adapted;
                y_step = step_implicit_euler(*mesh, y_on_adapted, t, dt, problem);
                detail::ensure_cover(overlay, *mesh);
            }
        }
        y = std::move(y_step);
        out.add(mesh, y);
    }
    out.set_finest_mesh(overlay);
    return out;
}

/// Non-nested variant: every step relocates the mesh nodes by
///   x0 <- x0 + theta x0 (x0 - 1) dt/10,  x1 <- x1 + theta/2 x1 (x1 - 1) dt/10
/// and solves after Lagrange interpolation onto the moved mesh.
inline SnapshotSet solve_disturbed(const HeatProblem& problem, const TimeGrid& grid,
                                   std::shared_ptr<const Mesh> base_mesh, double theta) {
    SnapshotSet out(grid);
    std::shared_ptr<const Mesh> mesh = base_mesh;
    Eigen::VectorXd y = detail::initial_snapshot(*mesh, problem);
    out.add(mesh, y);

    for (int j = 1; j <= grid.steps(); ++j) {
        const double dt = grid.dt(j);
        if (theta != 0.0) {
            const auto moved = std::make_shared<Mesh>(relocate_nodes(*mesh, [&](Vec2 p) {
                return Vec2{p.x + theta * p.x * (p.x - 1.0) * (dt / 10.0),
                            p.y + theta * 0.5 * p.y * (p.y - 1.0) * (dt / 10.0)};
            }));
            for (int v : moved->active_vertices())
                if (!moved->vertices()[v].boundary) {
                    const Vec2 p = moved->point(v);
                    if (p.x <= 0.0 || p.x >= 1.0 || p.y <= 0.0 || p.y >= 1.0)
                        throw std::invalid_argument("solve_disturbed: theta moves nodes outside");
                }
            y = interpolate(*mesh, y, *moved);
            mesh = moved;
        }
        y = step_implicit_euler(*mesh, y, grid.times[j], grid.dt(j), problem);
        out.add(mesh, y);
    }
    return out;
}

/// Discrete L2 norm on the mesh of the coefficients, ||y||_M = sqrt(y' M y).
inline double l2_norm(const Mesh& m, const Eigen::VectorXd& y) {
    return std::sqrt(y.dot(assemble_mass(m) * y));
}

/// L2 distance between a P1 function and a smooth reference at time t,
/// integrated triangle-wise with a degree five rule.
inline double l2_error_vs(const Mesh& m, const Eigen::VectorXd& y,
                          const std::function<double(double, Vec2)>& ref, double t) {
    double acc = 0.0;
    for (int tri : m.active_triangles()) {
        const auto c = m.corners(tri);
        const auto& tv = m.triangles()[tri].v;
        const double yl[3] = {y[m.dof_of(tv[0])], y[m.dof_of(tv[1])], y[m.dof_of(tv[2])]};
        acc += integrate_triangle(c[0], c[1], c[2], 5, [&](Vec2 p) {
            const auto l = barycentric(p, c[0], c[1], c[2]);
            const double yh = yl[0] * l[0] + yl[1] * l[1] + yl[2] * l[2];
            const double d = yh - ref(t, p);
            return d * d;
        });
    }
    return std::sqrt(acc);
}

} // namespace podcut
