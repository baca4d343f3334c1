#pragma once

#include <podcut/geometry.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

namespace podcut {

class not_found_error : public std::runtime_error {
public:
    explicit not_found_error(const std::string& what) : std::runtime_error(what) {}
};

class conformity_error : public std::logic_error {
public:
    explicit conformity_error(const std::string& what) : std::logic_error(what) {}
};

struct Vertex {
    int id = -1;
    Vec2 x;
    bool boundary = false;
};

/// One node of the bisection hierarchy. Leaves that were never merged away
/// are the active triangles of the mesh. Local edge k is the edge opposite
/// vertex k, i.e. (v[k+1], v[k+2]) mod 3.
struct Triangle {
    int id = -1;             // index into Mesh::triangles()
    std::uint64_t gid = 0;   // unique across all meshes of one refinement family
    std::array<int, 3> v{};  // vertex ids, counterclockwise
    int refinement_edge = 0; // local edge bisected by newest-vertex refinement
    int parent = -1;
    std::array<int, 2> children{-1, -1};
    int generation = 0;
    bool removed = false;    // tombstoned by coarsening; never reactivated

    bool is_leaf() const { return children[0] < 0; }
    bool is_active() const { return !removed && is_leaf(); }
};

namespace detail {

inline std::int64_t claim_mesh_id(std::int64_t wanted = -1) {
    static std::atomic<std::int64_t> counter{1};
    if (wanted < 0)
        return counter.fetch_add(1);
    std::int64_t cur = counter.load();
    while (cur <= wanted && !counter.compare_exchange_weak(cur, wanted + 1)) {
    }
    return wanted;
}

inline std::uint64_t claim_triangle_gids(std::uint64_t count) {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(count);
}

inline std::uint64_t edge_key(int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

} // namespace detail

/// Immutable conforming 2D triangulation carrying its full bisection
/// hierarchy. Refinement and coarsening return new meshes; a finalized mesh
/// can be shared freely between threads.
class Mesh {
public:
    struct Location {
        int triangle = -1;
        std::array<double, 3> bary{};
    };

    struct Edge {
        int a = -1, b = -1;   // vertex ids, a < b
        int t0 = -1, t1 = -1; // incident active triangles, t1 < 0 on the boundary
        bool interior() const { return t1 >= 0; }
    };

    std::int64_t id() const { return id_; }
    std::uint64_t family() const { return family_; }

    const std::vector<Vertex>& vertices() const { return vertices_; }
    const std::vector<Triangle>& triangles() const { return triangles_; }
    const std::vector<int>& active_triangles() const { return active_tris_; }
    const std::vector<int>& active_vertices() const { return active_verts_; }
    const std::vector<Edge>& active_edges() const { return edges_; }

    int num_dofs() const { return static_cast<int>(active_verts_.size()); }

    /// Dense index of a vertex among the active vertices, -1 if unused.
    int dof_of(int vertex_id) const { return dof_map_[vertex_id]; }

    Vec2 point(int vertex_id) const { return vertices_[vertex_id].x; }

    std::array<Vec2, 3> corners(int tri_id) const {
        const auto& t = triangles_[tri_id];
        return {vertices_[t.v[0]].x, vertices_[t.v[1]].x, vertices_[t.v[2]].x};
    }

    double area(int tri_id) const {
        const auto c = corners(tri_id);
        return signed_area(c[0], c[1], c[2]);
    }

    double domain_area() const { return domain_area_; }

    double active_area() const {
        double s = 0.0;
        for (int t : active_tris_) s += area(t);
        return s;
    }

    bool contains_gid(std::uint64_t gid) const { return gid_map_.count(gid) > 0; }
    int local_of_gid(std::uint64_t gid) const { return gid_map_.at(gid); }

    /// Locate a point in the active triangulation. Returns the containing
    /// triangle of lowest id together with barycentric coordinates; points on
    /// shared edges or vertices therefore resolve deterministically. Throws
    /// not_found_error if the point lies outside the domain beyond 1e-12.
    Location locate(Vec2 p) const {
        constexpr double tol = 1e-12;
        Location best;
        auto consider = [&](int t) {
            if (best.triangle >= 0 && t >= best.triangle) return;
            const auto c = corners(t);
            const auto l = barycentric(p, c[0], c[1], c[2]);
            if (l[0] >= -tol && l[1] >= -tol && l[2] >= -tol) {
                best.triangle = t;
                best.bary = l;
            }
        };
        int cx = 0, cy = 0;
        if (grid_cell(p, cx, cy)) {
            for (int t : grid_[cx + cy * grid_n_]) consider(t);
        }
        if (best.triangle < 0) {
            // tolerance fallback near cell borders and domain boundary
            for (int t : active_tris_) consider(t);
        }
        if (best.triangle < 0)
            throw not_found_error("point outside the triangulated domain");
        return best;
    }

    /// Active triangles whose bounding box intersects [xlo,xhi]x[ylo,yhi].
    void query_bbox(double xlo, double ylo, double xhi, double yhi, std::vector<int>& out) const {
        out.clear();
        const int ix0 = cell_index(xlo, bb_lo_.x, cell_w_);
        const int ix1 = cell_index(xhi, bb_lo_.x, cell_w_);
        const int iy0 = cell_index(ylo, bb_lo_.y, cell_h_);
        const int iy1 = cell_index(yhi, bb_lo_.y, cell_h_);
        for (int iy = std::max(0, iy0); iy <= std::min(grid_n_ - 1, iy1); ++iy)
            for (int ix = std::max(0, ix0); ix <= std::min(grid_n_ - 1, ix1); ++ix)
                for (int t : grid_[ix + iy * grid_n_]) {
                    const auto& bb = tri_bbox_[t];
                    if (bb[0] <= xhi && bb[2] >= xlo && bb[1] <= yhi && bb[3] >= ylo)
                        out.push_back(t);
                }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }

    std::array<double, 4> triangle_bbox(int t) const { return tri_bbox_[t]; }

private:
    friend class MeshBuilder;

    std::int64_t id_ = -1;
    std::uint64_t family_ = 0;
    std::vector<Vertex> vertices_;
    std::vector<Triangle> triangles_;
    double domain_area_ = 0.0;

    // finalized views
    std::vector<int> active_tris_;
    std::vector<int> active_verts_;
    std::vector<int> dof_map_;
    std::vector<Edge> edges_;
    std::unordered_map<std::uint64_t, int> gid_map_;

    // spatial index over active triangles
    int grid_n_ = 1;
    Vec2 bb_lo_, bb_hi_;
    double cell_w_ = 1.0, cell_h_ = 1.0;
    std::vector<std::vector<int>> grid_;
    std::vector<std::array<double, 4>> tri_bbox_;

    static int cell_index(double x, double lo, double w) {
        return static_cast<int>(std::floor((x - lo) / w));
    }

    bool grid_cell(Vec2 p, int& cx, int& cy) const {
        cx = std::clamp(cell_index(p.x, bb_lo_.x, cell_w_), 0, grid_n_ - 1);
        cy = std::clamp(cell_index(p.y, bb_lo_.y, cell_h_), 0, grid_n_ - 1);
        const double tol = 1e-12;
        return p.x >= bb_lo_.x - tol && p.x <= bb_hi_.x + tol && p.y >= bb_lo_.y - tol &&
               p.y <= bb_hi_.y + tol;
    }
};

/// Mutable staging area behind the mesh-producing free functions.
class MeshBuilder {
public:
    MeshBuilder() = default;

    explicit MeshBuilder(const Mesh& m)
        : vertices_(m.vertices_), triangles_(m.triangles_), family_(m.family_),
          domain_area_(m.domain_area_) {
        for (const auto& t : triangles_)
            if (t.is_active()) add_edges(t.id);
    }

    int add_vertex(Vec2 p, bool boundary = false) {
        const int id = static_cast<int>(vertices_.size());
        vertices_.push_back({id, p, boundary});
        return id;
    }

    int add_root_triangle(int a, int b, int c, int refinement_edge) {
        Vec2 pa = vertices_[a].x, pb = vertices_[b].x, pc = vertices_[c].x;
        if (signed_area(pa, pb, pc) < 0.0) std::swap(b, c);
        const int id = static_cast<int>(triangles_.size());
        Triangle t;
        t.id = id;
        t.gid = detail::claim_triangle_gids(1);
        t.v = {a, b, c};
        t.refinement_edge = refinement_edge;
        triangles_.push_back(t);
        add_edges(id);
        return id;
    }

    const std::vector<Triangle>& triangles() const { return triangles_; }
    std::vector<Triangle>& triangles() { return triangles_; }
    std::vector<Vertex>& vertices() { return vertices_; }

    /// Conforming bisection of an active triangle through its refinement
    /// edge, recursing into incompatible neighbors first. Records every
    /// bisected parent in `log`.
    void bisect_conforming(int t, std::vector<std::uint64_t>* log = nullptr) {
        if (!triangles_[t].is_active()) return;
        for (;;) {
            const auto [a, b] = refinement_edge_of(t);
            const int n = neighbor_across(t, a, b);
            if (n < 0) {
                bisect_pair(t, -1, a, b, log);
                return;
            }
            const auto [na, nb] = refinement_edge_of(n);
            if (detail::edge_key(na, nb) == detail::edge_key(a, b)) {
                bisect_pair(t, n, a, b, log);
                return;
            }
            bisect_conforming(n, log);
        }
    }

    void tombstone_pair(int parent) {
        auto& p = triangles_[parent];
        triangles_[p.children[0]].removed = true;
        triangles_[p.children[1]].removed = true;
        remove_edges(p.children[0]);
        remove_edges(p.children[1]);
        p.children = {-1, -1};
        add_edges(parent);
    }

    Mesh finalize(std::int64_t wanted_id = -1) && {
        Mesh m;
        m.id_ = detail::claim_mesh_id(wanted_id);
        m.family_ = family_ ? family_ : static_cast<std::uint64_t>(m.id_);
        m.vertices_ = std::move(vertices_);
        m.triangles_ = std::move(triangles_);

        for (const auto& t : m.triangles_)
            if (t.is_active()) m.active_tris_.push_back(t.id);

        m.gid_map_.reserve(m.triangles_.size());
        for (const auto& t : m.triangles_) m.gid_map_.emplace(t.gid, t.id);

        // active vertices and dense dof numbering
        m.dof_map_.assign(m.vertices_.size(), -1);
        for (int t : m.active_tris_)
            for (int v : m.triangles_[t].v) m.dof_map_[v] = 0;
        for (std::size_t v = 0; v < m.dof_map_.size(); ++v)
            if (m.dof_map_[v] == 0) {
                m.dof_map_[v] = static_cast<int>(m.active_verts_.size());
                m.active_verts_.push_back(static_cast<int>(v));
            }

        // active edge adjacency; also refresh boundary flags from it
        std::unordered_map<std::uint64_t, Mesh::Edge> edges;
        edges.reserve(3 * m.active_tris_.size());
        for (int t : m.active_tris_) {
            const auto& tr = m.triangles_[t];
            for (int e = 0; e < 3; ++e) {
                int a = tr.v[(e + 1) % 3], b = tr.v[(e + 2) % 3];
                if (a > b) std::swap(a, b);
                auto [it, fresh] = edges.try_emplace(detail::edge_key(a, b));
                if (fresh) {
                    it->second.a = a;
                    it->second.b = b;
                    it->second.t0 = t;
                } else {
                    if (it->second.t1 >= 0)
                        throw conformity_error("edge shared by more than two active triangles");
                    it->second.t1 = t;
                }
            }
        }
        for (auto& v : m.vertices_) v.boundary = false;
        for (auto& [key, e] : edges) {
            if (e.t0 > e.t1 && e.t1 >= 0) std::swap(e.t0, e.t1);
            if (!e.interior()) {
                m.vertices_[e.a].boundary = true;
                m.vertices_[e.b].boundary = true;
            }
            m.edges_.push_back(e);
        }
        std::sort(m.edges_.begin(), m.edges_.end(),
                  [](const Mesh::Edge& l, const Mesh::Edge& r) {
                      return std::make_pair(l.a, l.b) < std::make_pair(r.a, r.b);
                  });

        double total = 0.0;
        m.tri_bbox_.assign(m.triangles_.size(), {0, 0, 0, 0});
        m.bb_lo_ = {1e300, 1e300};
        m.bb_hi_ = {-1e300, -1e300};
        for (int t : m.active_tris_) {
            const auto c = m.corners(t);
            const double ar = signed_area(c[0], c[1], c[2]);
            if (ar <= 0.0) throw conformity_error("active triangle is not counterclockwise");
            total += ar;
            auto& bb = m.tri_bbox_[t];
            bb[0] = std::min({c[0].x, c[1].x, c[2].x});
            bb[1] = std::min({c[0].y, c[1].y, c[2].y});
            bb[2] = std::max({c[0].x, c[1].x, c[2].x});
            bb[3] = std::max({c[0].y, c[1].y, c[2].y});
            m.bb_lo_.x = std::min(m.bb_lo_.x, bb[0]);
            m.bb_lo_.y = std::min(m.bb_lo_.y, bb[1]);
            m.bb_hi_.x = std::max(m.bb_hi_.x, bb[2]);
            m.bb_hi_.y = std::max(m.bb_hi_.y, bb[3]);
        }
        if (domain_area_ == 0.0) domain_area_ = total;
        if (std::abs(total - domain_area_) > 1e-12 * domain_area_)
            throw conformity_error("active triangles do not cover the domain");
        m.domain_area_ = domain_area_;

        m.grid_n_ = std::max(1, static_cast<int>(std::ceil(
                                    std::sqrt(static_cast<double>(m.active_tris_.size()) / 2.0))));
        m.cell_w_ = std::max((m.bb_hi_.x - m.bb_lo_.x) / m.grid_n_, 1e-300);
        m.cell_h_ = std::max((m.bb_hi_.y - m.bb_lo_.y) / m.grid_n_, 1e-300);
        m.grid_.assign(static_cast<std::size_t>(m.grid_n_) * m.grid_n_, {});
        for (int t : m.active_tris_) {
            const auto& bb = m.tri_bbox_[t];
            const int ix0 = std::clamp(Mesh::cell_index(bb[0], m.bb_lo_.x, m.cell_w_), 0, m.grid_n_ - 1);
            const int ix1 = std::clamp(Mesh::cell_index(bb[2], m.bb_lo_.x, m.cell_w_), 0, m.grid_n_ - 1);
            const int iy0 = std::clamp(Mesh::cell_index(bb[1], m.bb_lo_.y, m.cell_h_), 0, m.grid_n_ - 1);
            const int iy1 = std::clamp(Mesh::cell_index(bb[3], m.bb_lo_.y, m.cell_h_), 0, m.grid_n_ - 1);
            for (int iy = iy0; iy <= iy1; ++iy)
                for (int ix = ix0; ix <= ix1; ++ix) m.grid_[ix + iy * m.grid_n_].push_back(t);
        }
        return m;
    }

private:
    std::vector<Vertex> vertices_;
    std::vector<Triangle> triangles_;
    std::uint64_t family_ = 0;
    double domain_area_ = 0.0;

    struct Incidence {
        int n = 0;
        std::array<int, 2> t{-1, -1};
    };
    std::unordered_map<std::uint64_t, Incidence> edge_map_;
    std::unordered_map<std::uint64_t, int> midpoint_of_; // edge key -> vertex id, this epoch

    std::pair<int, int> refinement_edge_of(int t) const {
        const auto& tr = triangles_[t];
        const int k = tr.refinement_edge;
        return {tr.v[(k + 1) % 3], tr.v[(k + 2) % 3]};
    }

    int neighbor_across(int t, int a, int b) const {
        const auto it = edge_map_.find(detail::edge_key(a, b));
        if (it == edge_map_.end()) return -1;
        const auto& inc = it->second;
        if (inc.n == 1) return inc.t[0] == t ? -1 : inc.t[0];
        return inc.t[0] == t ? inc.t[1] : inc.t[0];
    }

    void add_edges(int t) {
        const auto& tr = triangles_[t];
        for (int e = 0; e < 3; ++e) {
            auto& inc = edge_map_[detail::edge_key(tr.v[(e + 1) % 3], tr.v[(e + 2) % 3])];
            if (inc.n >= 2) throw conformity_error("edge incidence overflow during refinement");
            inc.t[inc.n++] = t;
        }
    }

    void remove_edges(int t) {
        const auto& tr = triangles_[t];
        for (int e = 0; e < 3; ++e) {
            const auto key = detail::edge_key(tr.v[(e + 1) % 3], tr.v[(e + 2) % 3]);
            auto it = edge_map_.find(key);
            if (it == edge_map_.end()) continue;
            auto& inc = it->second;
            if (inc.n == 2 && inc.t[1] == t) inc.n = 1;
            else if (inc.n >= 1 && inc.t[0] == t) {
                inc.t[0] = inc.t[1];
                --inc.n;
            }
            if (inc.n == 0) edge_map_.erase(it);
        }
    }

    int midpoint(int a, int b) {
        const auto key = detail::edge_key(a, b);
        auto it = midpoint_of_.find(key);
        if (it != midpoint_of_.end()) return it->second;
        const int id = add_vertex(0.5 * (vertices_[a].x + vertices_[b].x));
        midpoint_of_.emplace(key, id);
        return id;
    }

    // Split child ordering follows the parent orientation: with peak p and
    // refinement edge (a,b), the children are (a,m,p) and (m,b,p). The new
    // vertex m is the newest vertex of both, so their refinement edges are
    // the edges opposite m.
    void split(int t, int m, std::vector<std::uint64_t>* log) {
        auto& tr = triangles_[t];
        const int k = tr.refinement_edge;
        const int p = tr.v[k], a = tr.v[(k + 1) % 3], b = tr.v[(k + 2) % 3];
        const std::uint64_t g = detail::claim_triangle_gids(2);

        const int c0 = static_cast<int>(triangles_.size());
        Triangle t0;
        t0.id = c0;
        t0.gid = g;
        t0.v = {a, m, p};
        t0.refinement_edge = 1;
        t0.parent = t;
        t0.generation = tr.generation + 1;

        const int c1 = c0 + 1;
        Triangle t1;
        t1.id = c1;
        t1.gid = g + 1;
        t1.v = {m, b, p};
        t1.refinement_edge = 0;
        t1.parent = t;
        t1.generation = tr.generation + 1;

        remove_edges(t);
        triangles_.push_back(t0);
        triangles_.push_back(t1);
        triangles_[t].children = {c0, c1};
        add_edges(c0);
        add_edges(c1);
        if (log) log->push_back(triangles_[t].gid);
    }

    void bisect_pair(int t, int n, int a, int b, std::vector<std::uint64_t>* log) {
        const int m = midpoint(a, b);
        split(t, m, log);
        if (n >= 0) split(n, m, log);
    }
};

/// Structured triangulation of the unit square with nx*ny cells, each split
/// along its diagonal. Refinement edges start on the hypotenuses.
inline Mesh make_unit_square(int nx, int ny) {
    if (nx < 1 || ny < 1)
        throw std::invalid_argument("make_unit_square: cell counts must be positive");
    MeshBuilder b;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            b.add_vertex({static_cast<double>(i) / nx, static_cast<double>(j) / ny},
                         i == 0 || i == nx || j == 0 || j == ny);
    const auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const int v00 = vid(i, j), v10 = vid(i + 1, j);
            const int v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
            b.add_root_triangle(v00, v10, v11, 1); // hypotenuse (v11, v00)
            b.add_root_triangle(v00, v11, v01, 2); // hypotenuse (v00, v11)
        }
    return std::move(b).finalize();
}

namespace detail {

inline void check_marks_active(const Mesh& m, const std::vector<int>& marked) {
    for (int t : marked) {
        if (t < 0 || t >= static_cast<int>(m.triangles().size()))
            throw std::invalid_argument("mark out of range");
        if (!m.triangles()[t].is_active())
            throw std::invalid_argument("marked triangle is not an active leaf");
    }
}

} // namespace detail

/// Newest-vertex bisection of the marked active triangles plus the closure
/// needed to keep the mesh conforming. Optionally reports the gids of every
/// bisected parent (marked or closure).
inline Mesh refine_tracked(const Mesh& m, const std::vector<int>& marked,
                           std::vector<std::uint64_t>* bisected) {
    detail::check_marks_active(m, marked);
    MeshBuilder b(m);
    std::vector<int> order(marked);
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    for (int t : order) b.bisect_conforming(t, bisected);
    return std::move(b).finalize();
}

inline Mesh refine(const Mesh& m, const std::vector<int>& marked) {
    return refine_tracked(m, marked, nullptr);
}

/// Merge sibling leaf pairs back into their parent where this keeps the mesh
/// conforming. A mark on either sibling proposes the merge; ineligible marks
/// are skipped silently.
inline Mesh coarsen(const Mesh& m, const std::vector<int>& marked) {
    for (int t : marked)
        if (t < 0 || t >= static_cast<int>(m.triangles().size()))
            throw std::invalid_argument("mark out of range");

    const auto& tris = m.triangles();
    std::vector<int> candidates;
    for (int t : marked) {
        if (!tris[t].is_active()) continue;
        const int p = tris[t].parent;
        if (p < 0) continue;
        const auto ch = tris[p].children;
        if (tris[ch[0]].is_active() && tris[ch[1]].is_active()) candidates.push_back(p);
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    if (candidates.empty()) {
        MeshBuilder b(m);
        return std::move(b).finalize();
    }

    // The children of a parent share the newest vertex, the midpoint of the
    // parent's refinement edge. A merge is conforming exactly when every
    // active triangle at that midpoint is merged away with it.
    auto midpoint_vertex = [&](int p) {
        const auto ch = tris[p].children;
        for (int v : tris[ch[0]].v) {
            if (v == tris[ch[1]].v[0] || v == tris[ch[1]].v[1] || v == tris[ch[1]].v[2]) {
                bool in_parent = false;
                for (int w : tris[p].v) in_parent |= (w == v);
                if (!in_parent) return v;
            }
        }
        return -1;
    };

    std::unordered_map<int, std::vector<int>> groups; // midpoint vertex -> parents
    for (int p : candidates) groups[midpoint_vertex(p)].push_back(p);

    std::unordered_map<int, int> incident; // midpoint vertex -> active triangle count
    for (auto& [v, ps] : groups) incident[v] = 0;
    for (int t : m.active_triangles())
        for (int v : tris[t].v) {
            auto it = incident.find(v);
            if (it != incident.end()) ++it->second;
        }

    MeshBuilder b(m);
    for (auto& [v, parents] : groups)
        if (incident[v] == 2 * static_cast<int>(parents.size()))
            for (int p : parents) b.tombstone_pair(p);
    return std::move(b).finalize();
}

/// Same topology with every vertex moved by `map`; throws invalid_argument
/// if the move inverts a triangle. The result starts a fresh family.
inline Mesh relocate_nodes(const Mesh& m, const std::function<Vec2(Vec2)>& map) {
    MeshBuilder b;
    std::vector<int> verts(m.num_dofs());
    for (int v : m.active_vertices())
        verts[m.dof_of(v)] = b.add_vertex(map(m.point(v)), m.vertices()[v].boundary);
    for (int t : m.active_triangles()) {
        const auto& tr = m.triangles()[t];
        const int a = verts[m.dof_of(tr.v[0])], c = verts[m.dof_of(tr.v[1])],
                  d = verts[m.dof_of(tr.v[2])];
        if (signed_area(b.vertices()[a].x, b.vertices()[c].x, b.vertices()[d].x) <= 0.0)
            throw std::invalid_argument("relocate_nodes: displacement inverts a triangle");
        b.add_root_triangle(a, c, d, tr.refinement_edge);
    }
    return std::move(b).finalize();
}

} // namespace podcut
