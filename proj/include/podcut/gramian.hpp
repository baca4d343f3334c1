#pragma once

#include <podcut/cutgeom.hpp>
#include <podcut/fem.hpp>

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace podcut {

/// Inner product defining the snapshot correlation: L2 or full H1
/// (L2 plus the H1 seminorm).
enum class InnerProduct { L2, H1 };

inline const char* to_string(InnerProduct t) { return t == InnerProduct::L2 ? "l2" : "h1"; }

/// Weighted snapshot correlation matrix with entries
/// sqrt(alpha_i alpha_j) <y_i, y_j>_X.
struct Gramian {
    Eigen::MatrixXd matrix;
    InnerProduct tag = InnerProduct::L2;
    std::uint64_t snapshot_set_id = 0;
};

/// Auxiliary cross matrix in snapshot coordinates.
struct CrossMatrix {
    enum class Role { stiffness, nonlin_jacobian };
    Eigen::MatrixXd matrix;
    Role role = Role::stiffness;
    std::uint64_t snapshot_set_id = 0;
};

/// Nonlinearity projections for one time step j: entries
///   N_k   = <N(y_j), sqrt(alpha_k) y_k>
///   Ny_k  = <N_y(y_j) y_j, sqrt(alpha_k) y_k>
///   Nyy_pr = <N_y(y_j) sqrt(alpha_p) y_p, sqrt(alpha_r) y_r>
/// for the cubic N(y) = c y^3.
struct NonlinCross {
    Eigen::VectorXd n;
    Eigen::VectorXd ny;
    Eigen::MatrixXd nyy;
};

struct AssemblyOptions {
    int threads = 1;
    bool force_general_path = false; // bypass the nested fast path
    bool cache_pair_geometry = true;
};

namespace detail {

/// Pairs (active in A, active in B) with positive-area intersection for two
/// meshes of one refinement family. The intersection of every emitted pair is
/// the smaller of the two triangles; all other pairs overlap on a null set.
inline std::vector<std::pair<int, int>> nested_pairs(const Mesh& a, const Mesh& b) {
    std::vector<std::pair<int, int>> out;
    out.reserve(std::max(a.active_triangles().size(), b.active_triangles().size()));
    for (int ta : a.active_triangles()) {
        int cur = ta;
        for (;;) {
            const auto& rec = a.triangles()[cur];
            if (b.contains_gid(rec.gid) && !b.triangles()[b.local_of_gid(rec.gid)].removed) break;
            cur = rec.parent;
            if (cur < 0) throw std::logic_error("nested_pairs: no shared ancestor");
        }
        int node = b.local_of_gid(a.triangles()[cur].gid);
        if (b.triangles()[node].is_active()) {
            out.emplace_back(ta, node);
            continue;
        }
        // descend along the centroid until reaching the twin of ta, then
        // collect every active leaf below it
        const double ta_area = a.area(ta);
        const auto ca = a.corners(ta);
        const Vec2 centroid = (1.0 / 3.0) * (ca[0] + ca[1] + ca[2]);
        bool emitted = false;
        while (b.area(node) > ta_area * (1.0 + 1e-9)) {
            if (b.triangles()[node].is_active()) {
                out.emplace_back(ta, node);
                emitted = true;
                break;
            }
            const auto ch = b.triangles()[node].children;
            const auto c0 = b.corners(ch[0]);
            const auto l = barycentric(centroid, c0[0], c0[1], c0[2]);
            node = (l[0] >= -1e-12 && l[1] >= -1e-12 && l[2] >= -1e-12) ? ch[0] : ch[1];
        }
        if (emitted) continue;
        std::vector<int> stack{node};
        while (!stack.empty()) {
            const int cur_b = stack.back();
            stack.pop_back();
            const auto& rb = b.triangles()[cur_b];
            if (rb.is_active()) out.emplace_back(ta, cur_b);
            else if (rb.children[0] >= 0) {
                stack.push_back(rb.children[0]);
                stack.push_back(rb.children[1]);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Per triangle-pair local products for one ordered mesh pair.
struct PairLocal {
    int ta, tb;
    double l2[3][3];
    double h1[3][3];
};

inline std::vector<PairLocal> build_pair_products(const Mesh& a, const Mesh& b,
                                                  bool force_general) {
    std::vector<PairLocal> out;
    if (!force_general && a.family() == b.family()) {
        for (auto [ta, tb] : nested_pairs(a, b)) {
            PairLocal pl{ta, tb, {}, {}};
            const auto ca = a.corners(ta);
            const auto cb = b.corners(tb);
            pair_products_nested(ca, cb, a.area(ta) <= b.area(tb) ? ca : cb, pl.l2, pl.h1);
            out.push_back(pl);
        }
        return out;
    }
    for (auto [ta, tb] : bbox_collide(a, b)) {
        const auto ca = a.corners(ta);
        const auto cb = b.corners(tb);
        const ConvexPolygon p = intersect_triangles(ca, cb);
        if (p.degenerate()) continue;
        PairLocal pl{ta, tb, {}, {}};
        pair_products_from_moments(ca, cb, polygon_moments(p, 2), p.area(), pl.l2, pl.h1);
        out.push_back(pl);
    }
    return out;
}

/// Scalar products between finite element functions on arbitrary meshes of
/// the snapshot registry. Geometry shared between entries is cached per mesh
/// pair; concurrent lookups are safe and inserts are idempotent.
class CrossAssembler {
public:
    CrossAssembler(const SnapshotSet& s, AssemblyOptions opt) : s_(s), opt_(opt) {
        for (int i = 0; i < s.size(); ++i)
            for (int j = i; j < s.size(); ++j)
                ++use_count_[ordered(s.snapshot(i).mesh_id, s.snapshot(j).mesh_id)];
    }

    /// weighted product wl2 * <u, v>_L2 + wh1 * <grad u, grad v>_L2
    double inner(std::int64_t mesh_u, const Eigen::VectorXd& u, std::int64_t mesh_v,
                 const Eigen::VectorXd& v, double wl2, double wh1) {
        if (mesh_u == mesh_v) {
            const Mesh& m = s_.mesh(mesh_u);
            double acc = 0.0;
            if (wl2 != 0.0) acc += wl2 * u.dot(*mass(mesh_u) * v);
            if (wh1 != 0.0) acc += wh1 * u.dot(*stiffness(mesh_u) * v);
            return acc;
        }
        if (mesh_u > mesh_v)
            return inner(mesh_v, v, mesh_u, u, wl2, wh1); // products are symmetric
        const Mesh& a = s_.mesh(mesh_u);
        const Mesh& b = s_.mesh(mesh_v);
        const auto products = pair_products(a, b);
        double acc = 0.0;
        for (const PairLocal& pl : *products) {
            const auto& tva = a.triangles()[pl.ta].v;
            const auto& tvb = b.triangles()[pl.tb].v;
            for (int k = 0; k < 3; ++k) {
                const double uk = u[a.dof_of(tva[k])];
                if (uk == 0.0) continue;
                for (int l = 0; l < 3; ++l)
                    acc += uk * (wl2 * pl.l2[k][l] + wh1 * pl.h1[k][l]) * v[b.dof_of(tvb[l])];
            }
        }
        return acc;
    }

    double inner(std::int64_t mesh_u, const Eigen::VectorXd& u, std::int64_t mesh_v,
                 const Eigen::VectorXd& v, InnerProduct tag) {
        return inner(mesh_u, u, mesh_v, v, 1.0, tag == InnerProduct::H1 ? 1.0 : 0.0);
    }

    std::shared_ptr<const SparseMat> mass(std::int64_t id) {
        return matrix(mass_, id, [&](const Mesh& m) { return assemble_mass(m); });
    }

    std::shared_ptr<const SparseMat> stiffness(std::int64_t id) {
        return matrix(stiff_, id, [&](const Mesh& m) { return assemble_stiffness(m); });
    }

    const SnapshotSet& snapshots() const { return s_; }
    const AssemblyOptions& options() const { return opt_; }

private:
    static std::pair<std::int64_t, std::int64_t> ordered(std::int64_t a, std::int64_t b) {
        return a <= b ? std::make_pair(a, b) : std::make_pair(b, a);
    }

    template <typename Map, typename Build>
    std::shared_ptr<const SparseMat> matrix(Map& map, std::int64_t id, Build&& build) {
        {
            std::lock_guard lock(mu_);
            const auto it = map.find(id);
            if (it != map.end()) return it->second;
        }
        auto fresh = std::make_shared<const SparseMat>(build(s_.mesh(id)));
        std::lock_guard lock(mu_);
        return map.emplace(id, std::move(fresh)).first->second;
    }

    std::shared_ptr<const std::vector<PairLocal>> pair_products(const Mesh& a, const Mesh& b) {
        const auto key = ordered(a.id(), b.id());
        const auto uses = use_count_.find(key); // populated once in the constructor
        const bool cache =
            opt_.cache_pair_geometry && uses != use_count_.end() && uses->second > 1;
        if (cache) {
            std::lock_guard lock(mu_);
            const auto it = pairs_.find(key);
            if (it != pairs_.end()) return it->second;
        }
        auto fresh = std::make_shared<const std::vector<PairLocal>>(
            build_pair_products(a, b, opt_.force_general_path));
        if (!cache) return fresh;
        std::lock_guard lock(mu_);
        return pairs_.emplace(key, std::move(fresh)).first->second;
    }

    const SnapshotSet& s_;
    AssemblyOptions opt_;
    std::mutex mu_;
    std::map<std::int64_t, std::shared_ptr<const SparseMat>> mass_, stiff_;
    std::map<std::pair<std::int64_t, std::int64_t>, std::shared_ptr<const std::vector<PairLocal>>>
        pairs_;
    std::map<std::pair<std::int64_t, std::int64_t>, int> use_count_;
};

/// Run fn(k) for k in [0, count) on the requested number of threads. Each
/// index is processed exactly once; results must go to disjoint slots.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int k = 0; k < count; ++k) fn(k);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (int k = next.fetch_add(1); k < count; k = next.fetch_add(1)) fn(k);
        });
    for (auto& th : pool) th.join();
}

} // namespace detail

/// Assemble the correlation matrix K_ij = sqrt(alpha_i alpha_j) <y_i, y_j>_X
/// directly from snapshots on heterogeneous meshes. Only the upper triangle
/// is computed and mirrored; entries go through the nested fast path for
/// meshes of one refinement family and through cut-element quadrature
/// otherwise.
inline Gramian assemble_gramian(const SnapshotSet& s, InnerProduct tag,
                                const AssemblyOptions& opt = {}) {
    s.check_complete();
    const int n1 = s.size();
    detail::CrossAssembler asm_(s, opt);

    std::vector<std::pair<int, int>> entries;
    entries.reserve(n1 * (n1 + 1) / 2);
    for (int i = 0; i < n1; ++i)
        for (int j = i; j < n1; ++j) entries.emplace_back(i, j);

    Eigen::MatrixXd k(n1, n1);
    detail::parallel_for(static_cast<int>(entries.size()), opt.threads, [&](int e) {
        const auto [i, j] = entries[e];
        const double v = std::sqrt(s.weight(i) * s.weight(j)) *
                         asm_.inner(s.snapshot(i).mesh_id, s.snapshot(i).coeffs,
                                    s.snapshot(j).mesh_id, s.snapshot(j).coeffs, tag);
        k(i, j) = v;
        k(j, i) = v;
    });
    return {std::move(k), tag, s.id()};
}

/// Cross matrix of the diffusion form, entry (i,j) =
/// sqrt(alpha_i alpha_j) int grad y_i . grad y_j.
inline CrossMatrix assemble_stiffness_cross(const SnapshotSet& s,
                                            const AssemblyOptions& opt = {}) {
    s.check_complete();
    const int n1 = s.size();
    detail::CrossAssembler asm_(s, opt);

    std::vector<std::pair<int, int>> entries;
    for (int i = 0; i < n1; ++i)
        for (int j = i; j < n1; ++j) entries.emplace_back(i, j);

    Eigen::MatrixXd k(n1, n1);
    detail::parallel_for(static_cast<int>(entries.size()), opt.threads, [&](int e) {
        const auto [i, j] = entries[e];
        const double v = std::sqrt(s.weight(i) * s.weight(j)) *
                         asm_.inner(s.snapshot(i).mesh_id, s.snapshot(i).coeffs,
                                    s.snapshot(j).mesh_id, s.snapshot(j).coeffs, 0.0, 1.0);
        k(i, j) = v;
        k(j, i) = v;
    });
    return {std::move(k), CrossMatrix::Role::stiffness, s.id()};
}

/// Weighted projections (sqrt(alpha_j) <w, y_j>_X)_j of a function given on
/// an explicit mesh.
inline Eigen::VectorXd project_function(const SnapshotSet& s, const Mesh& w_mesh,
                                        const Eigen::VectorXd& w, InnerProduct tag,
                                        const AssemblyOptions& opt = {}) {
    s.check_complete();
    SnapshotSet scratch = s; // shares the immutable meshes
    scratch.register_mesh(std::make_shared<Mesh>(w_mesh));
    detail::CrossAssembler asm_(scratch, opt);
    Eigen::VectorXd out(s.size());
    for (int j = 0; j < s.size(); ++j)
        out[j] = std::sqrt(s.weight(j)) *
                 asm_.inner(w_mesh.id(), w, s.snapshot(j).mesh_id, s.snapshot(j).coeffs, tag);
    return out;
}

/// Same, with the mesh resolved from the snapshot registry.
inline Eigen::VectorXd project_function(const SnapshotSet& s, const FeFunction& w,
                                        InnerProduct tag, const AssemblyOptions& opt = {}) {
    return project_function(s, s.mesh(w.mesh_id), w.coeffs, tag, opt);
}

namespace detail {

inline Poly2 field_poly(const Mesh& m, int tri, const Eigen::VectorXd& y) {
    const auto aff = p1_affine(m.corners(tri));
    const auto& tv = m.triangles()[tri].v;
    Poly2 p;
    for (int k = 0; k < 3; ++k) {
        const double c = y[m.dof_of(tv[k])];
        Poly2 l = Poly2::affine(aff[k][0], aff[k][1], aff[k][2]);
        l *= c;
        p += l;
    }
    return p;
}

inline double field_value(const Mesh& m, int tri, const Eigen::VectorXd& y, Vec2 p) {
    const auto c = m.corners(tri);
    const auto l = barycentric(p, c[0], c[1], c[2]);
    const auto& tv = m.triangles()[tri].v;
    return l[0] * y[m.dof_of(tv[0])] + l[1] * y[m.dof_of(tv[1])] + l[2] * y[m.dof_of(tv[2])];
}

/// int over the domain of u^3 v with u, v piecewise linear on two meshes;
/// the cube is taken of the exact field, a cubic polynomial per triangle.
inline double cubic_inner(const SnapshotSet& s, std::int64_t mesh_u, const Eigen::VectorXd& u,
                          std::int64_t mesh_v, const Eigen::VectorXd& v, bool force_general) {
    const Mesh& a = s.mesh(mesh_u);
    const Mesh& b = s.mesh(mesh_v);
    double acc = 0.0;
    if (mesh_u == mesh_v) {
        const TriangleRule rule = triangle_rule(4);
        for (int t : a.active_triangles()) {
            const auto c = a.corners(t);
            const auto& tv = a.triangles()[t].v;
            const double area = a.area(t);
            for (int q = 0; q < rule.size; ++q) {
                const auto& l = rule.points[q];
                double uq = 0.0, vq = 0.0;
                for (int k = 0; k < 3; ++k) {
                    uq += l[k] * u[a.dof_of(tv[k])];
                    vq += l[k] * v[a.dof_of(tv[k])];
                }
                acc += rule.weights[q] * area * uq * uq * uq * vq;
            }
        }
        return acc;
    }
    if (!force_general && a.family() == b.family()) {
        const TriangleRule rule = triangle_rule(4);
        for (auto [ta, tb] : nested_pairs(a, b)) {
            const auto ca = a.corners(ta);
            const auto cb = b.corners(tb);
            const auto& small = a.area(ta) <= b.area(tb) ? ca : cb;
            const double area = signed_area(small[0], small[1], small[2]);
            for (int q = 0; q < rule.size; ++q) {
                const auto& l = rule.points[q];
                const Vec2 x = l[0] * small[0] + l[1] * small[1] + l[2] * small[2];
                const double uq = field_value(a, ta, u, x);
                const double vq = field_value(b, tb, v, x);
                acc += rule.weights[q] * area * uq * uq * uq * vq;
            }
        }
        return acc;
    }
    for (auto [ta, tb] : bbox_collide(a, b)) {
        const ConvexPolygon p = intersect_triangles(a.corners(ta), b.corners(tb));
        if (p.degenerate()) continue;
        const Poly2 fu = field_poly(a, ta, u);
        const Poly2 fv = field_poly(b, tb, v);
        acc += integrate_polygon(p, cube(fu) * fv);
    }
    return acc;
}

/// int over the domain of w^2 u v with the three factors on three meshes.
inline double jacobian_inner(const SnapshotSet& s, std::int64_t mesh_w, const Eigen::VectorXd& w,
                             std::int64_t mesh_u, const Eigen::VectorXd& u, std::int64_t mesh_v,
                             const Eigen::VectorXd& v) {
    const Mesh& mw = s.mesh(mesh_w);
    const Mesh& mu = s.mesh(mesh_u);
    const Mesh& mv = s.mesh(mesh_v);
    double acc = 0.0;
    if (mesh_w == mesh_u && mesh_u == mesh_v) {
        const TriangleRule rule = triangle_rule(4);
        for (int t : mw.active_triangles()) {
            const auto& tv = mw.triangles()[t].v;
            const double area = mw.area(t);
            for (int q = 0; q < rule.size; ++q) {
                const auto& l = rule.points[q];
                double wq = 0.0, uq = 0.0, vq = 0.0;
                for (int k = 0; k < 3; ++k) {
                    wq += l[k] * w[mw.dof_of(tv[k])];
                    uq += l[k] * u[mw.dof_of(tv[k])];
                    vq += l[k] * v[mw.dof_of(tv[k])];
                }
                acc += rule.weights[q] * area * wq * wq * uq * vq;
            }
        }
        return acc;
    }
    // general triple overlap: clip (u, v) pairs first, then cut by w
    std::vector<int> hits;
    for (auto [tu, tv_] : bbox_collide(mu, mv)) {
        const ConvexPolygon p1 = intersect_triangles(mu.corners(tu), mv.corners(tv_));
        if (p1.degenerate()) continue;
        double xlo = 1e300, ylo = 1e300, xhi = -1e300, yhi = -1e300;
        for (const Vec2 q : p1) {
            xlo = std::min(xlo, q.x);
            ylo = std::min(ylo, q.y);
            xhi = std::max(xhi, q.x);
            yhi = std::max(yhi, q.y);
        }
        mw.query_bbox(xlo, ylo, xhi, yhi, hits);
        if (hits.empty()) continue;
        const Poly2 fu = field_poly(mu, tu, u);
        const Poly2 fv = field_poly(mv, tv_, v);
        const Poly2 fuv = fu * fv;
        for (int tw : hits) {
            const ConvexPolygon p2 = clip_polygon_triangle(p1, mw.corners(tw));
            if (p2.degenerate()) continue;
            const Poly2 fw = field_poly(mw, tw, w);
            acc += integrate_polygon(p2, fw * fw * fuv);
        }
    }
    return acc;
}

} // namespace detail

/// Projections of the cubic nonlinearity N(y) = c y^3 linearized at snapshot
/// j; entries use cut-element quadrature of the exact degree-4 integrands.
inline NonlinCross assemble_nonlin_cross(const SnapshotSet& s, int j, double c,
                                         const AssemblyOptions& opt = {}) {
    s.check_complete();
    const int n1 = s.size();
    NonlinCross out;
    out.n = Eigen::VectorXd::Zero(n1);
    out.ny = Eigen::VectorXd::Zero(n1);
    out.nyy = Eigen::MatrixXd::Zero(n1, n1);
    if (c == 0.0) return out;

    const auto& yj = s.snapshot(j);
    detail::parallel_for(n1, opt.threads, [&](int k) {
        const double val = c * detail::cubic_inner(s, yj.mesh_id, yj.coeffs,
                                                   s.snapshot(k).mesh_id, s.snapshot(k).coeffs,
                                                   opt.force_general_path);
        out.n[k] = std::sqrt(s.weight(k)) * val;
        out.ny[k] = 3.0 * out.n[k]; // N_y(y) y = 3 c y^3 for the cubic
    });

    std::vector<std::pair<int, int>> entries;
    for (int p = 0; p < n1; ++p)
        for (int r = p; r < n1; ++r) entries.emplace_back(p, r);
    detail::parallel_for(static_cast<int>(entries.size()), opt.threads, [&](int e) {
        const auto [p, r] = entries[e];
        const double val =
            3.0 * c *
            detail::jacobian_inner(s, yj.mesh_id, yj.coeffs, s.snapshot(p).mesh_id,
                                   s.snapshot(p).coeffs, s.snapshot(r).mesh_id,
                                   s.snapshot(r).coeffs);
        const double w = std::sqrt(s.weight(p) * s.weight(r)) * val;
        out.nyy(p, r) = w;
        out.nyy(r, p) = w;
    });
    return out;
}

} // namespace podcut
