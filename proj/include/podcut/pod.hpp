#pragma once

#include <podcut/gramian.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace podcut {

/// Eigensystem of the correlation matrix. The basis functions themselves are
/// never materialized; psi_i = 1/sqrt(lambda_i) sum_j sqrt(alpha_j)
/// (phi_i)_j y_j stays implicit until a reconstruction is requested.
struct PodBasis {
    Eigen::VectorXd eigenvalues;     // retained, descending
    Eigen::MatrixXd eigenvectors;    // (n+1) x d, orthonormal columns
    Eigen::VectorXd all_eigenvalues; // full spectrum, descending
    InnerProduct tag = InnerProduct::L2;
    std::uint64_t snapshot_set_id = 0;

    int rank() const { return static_cast<int>(eigenvalues.size()); }
};

namespace detail {

/// Cyclic Jacobi iteration for a symmetric matrix; stops once the
/// off-diagonal Frobenius norm falls below 1e-14 of the matrix norm.
inline void jacobi_eigensymm(Eigen::MatrixXd a, Eigen::VectorXd& values,
                             Eigen::MatrixXd& vectors) {
    const int n = static_cast<int>(a.rows());
    vectors = Eigen::MatrixXd::Identity(n, n);
    if (n == 1) {
        values = a.col(0);
        return;
    }
    const double target = 1e-14 * std::max(a.norm(), 1e-300);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
        if (std::sqrt(off) <= target) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vectors(k, p), vkq = vectors(k, q);
                    vectors(k, p) = c * vkp - s * vkq;
                    vectors(k, q) = s * vkp + c * vkq;
                }
            }
    }
    values = a.diagonal();
}

} // namespace detail

/// Full symmetric eigendecomposition of the gramian by cyclic Jacobi
/// rotations, sorted descending with a deterministic sign convention (the
/// first nonzero component of each eigenvector is positive). Eigenvalues
/// below cutoff * lambda_1 are dropped from the retained basis.
inline PodBasis eig_sym(const Gramian& g, double cutoff = 1e-13) {
    const int n = static_cast<int>(g.matrix.rows());
    if ((g.matrix - g.matrix.transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("eig_sym: matrix is not symmetric");

    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    detail::jacobi_eigensymm(0.5 * (g.matrix + g.matrix.transpose()), values, vectors);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values[a] > values[b]; });

    PodBasis basis;
    basis.tag = g.tag;
    basis.snapshot_set_id = g.snapshot_set_id;
    basis.all_eigenvalues.resize(n);
    Eigen::MatrixXd sorted(n, n);
    for (int i = 0; i < n; ++i) {
        basis.all_eigenvalues[i] = values[order[i]];
        Eigen::VectorXd v = vectors.col(order[i]);
        const double vmax = v.cwiseAbs().maxCoeff();
        for (int k = 0; k < n; ++k)
            if (std::abs(v[k]) > 1e-12 * vmax) {
                if (v[k] < 0.0) v = -v;
                break;
            }
        sorted.col(i) = v;
    }

    const double lambda1 = std::max(basis.all_eigenvalues[0], 0.0);
    int d = 0;
    while (d < n && basis.all_eigenvalues[d] > cutoff * lambda1) ++d;
    basis.eigenvalues = basis.all_eigenvalues.head(d);
    basis.eigenvectors = sorted.leftCols(d);
    return basis;
}

/// Expansion coefficients of the first ell basis functions in terms of the
/// snapshots: psi_i = sum_j C(j,i) y_j with C(j,i) = sqrt(alpha_j)
/// (phi_i)_j / sqrt(lambda_i).
inline Eigen::MatrixXd pod_coefficients(const SnapshotSet& s, const PodBasis& basis, int ell) {
    if (ell < 0 || ell > basis.rank())
        throw std::invalid_argument("pod_coefficients: rank out of range");
    Eigen::MatrixXd c(s.size(), ell);
    for (int i = 0; i < ell; ++i) {
        const double scale = 1.0 / std::sqrt(basis.eigenvalues[i]);
        for (int j = 0; j < s.size(); ++j)
            c(j, i) = std::sqrt(s.weight(j)) * basis.eigenvectors(j, i) * scale;
    }
    return c;
}

/// Projection error of the rank-ell basis: the sum of the truncated
/// eigenvalues.
inline double projection_error(const PodBasis& basis, int ell) {
    if (ell < 0 || ell > basis.rank())
        throw std::invalid_argument("projection_error: rank out of range");
    return basis.eigenvalues.tail(basis.rank() - ell).sum();
}

/// Verification mode: recompute sum_j alpha_j || y_j - P_ell y_j ||^2
/// entirely through gramian algebra, without using the eigen identity
/// K phi = lambda phi. Expands the projector with <y_j, psi_i> =
/// (K phi_i)_j / (sqrt(lambda_i alpha_j)) and <psi_i, psi_k> =
/// phi_i' K phi_k / sqrt(lambda_i lambda_k).
inline double projection_error_recomputed(const Gramian& g, const SnapshotSet& s,
                                          const PodBasis& basis, int ell) {
    const int n1 = s.size();
    const Eigen::MatrixXd phi = basis.eigenvectors.leftCols(ell);
    const Eigen::MatrixXd kphi = g.matrix * phi;        // (n+1) x ell
    const Eigen::MatrixXd psi_gram = phi.transpose() * kphi; // ell x ell
    Eigen::VectorXd inv_sqrt_lambda(ell);
    for (int i = 0; i < ell; ++i) inv_sqrt_lambda[i] = 1.0 / std::sqrt(basis.eigenvalues[i]);

    double acc = 0.0;
    for (int j = 0; j < n1; ++j) {
        const double alpha = s.weight(j);
        const double norm_sq = g.matrix(j, j) / alpha;
        double cross = 0.0, gram = 0.0;
        Eigen::VectorXd coeff(ell); // <y_j, psi_i>
        for (int i = 0; i < ell; ++i)
            coeff[i] = kphi(j, i) * inv_sqrt_lambda[i] / std::sqrt(alpha);
        for (int i = 0; i < ell; ++i) {
            cross += coeff[i] * coeff[i];
            for (int k = 0; k < ell; ++k)
                gram += coeff[i] * coeff[k] * psi_gram(i, k) * inv_sqrt_lambda[i] *
                        inv_sqrt_lambda[k];
        }
        acc += alpha * (norm_sq - 2.0 * cross + gram);
    }
    return acc;
}

/// Information content Gamma(ell), the captured share of the eigenvalue
/// mass.
inline double information_content(const PodBasis& basis, int ell) {
    if (ell < 0 || ell > basis.rank())
        throw std::invalid_argument("information_content: rank out of range");
    const double total = basis.eigenvalues.sum();
    if (total <= 0.0) return 1.0;
    return basis.eigenvalues.head(ell).sum() / total;
}

/// Smallest rank whose information content exceeds 1 - p.
inline int select_rank(const PodBasis& basis, double p) {
    for (int ell = 1; ell <= basis.rank(); ++ell)
        if (information_content(basis, ell) > 1.0 - p) return ell;
    return basis.rank();
}

/// Point evaluations of every snapshot: row j holds y_j at the query points.
inline Eigen::MatrixXd evaluate_snapshots(const SnapshotSet& s, const std::vector<Vec2>& pts) {
    Eigen::MatrixXd vals(s.size(), pts.size());
    for (int j = 0; j < s.size(); ++j) {
        const Mesh& m = s.mesh_of(j);
        const auto& y = s.snapshot(j).coeffs;
        for (std::size_t q = 0; q < pts.size(); ++q) {
            const auto loc = m.locate(pts[q]);
            const auto& tv = m.triangles()[loc.triangle].v;
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += loc.bary[k] * y[m.dof_of(tv[k])];
            vals(j, q) = v;
        }
    }
    return vals;
}

/// Evaluate the reduced solution sum_i eta_i(t_j) psi_i at arbitrary query
/// points for every time step; eta is (n+1) x ell. Row j of the result holds
/// the values at time t_j.
inline Eigen::MatrixXd reconstruct_at_points(const SnapshotSet& s, const PodBasis& basis,
                                             int ell, const Eigen::MatrixXd& eta,
                                             const std::vector<Vec2>& pts) {
    if (eta.cols() < ell) throw std::invalid_argument("reconstruct: eta has too few columns");
    const Eigen::MatrixXd c = pod_coefficients(s, basis, ell); // (n+1) x ell
    const Eigen::MatrixXd snap_vals = evaluate_snapshots(s, pts);
    // values(t_j, q) = sum_i eta(j,i) sum_s c(s,i) y_s(q)
    return eta.leftCols(ell) * (c.transpose() * snap_vals);
}

/// Reconstruction as nodal functions on a query mesh, one per time step.
inline std::vector<FeFunction> reconstruct_on_mesh(const SnapshotSet& s, const PodBasis& basis,
                                                   int ell, const Eigen::MatrixXd& eta,
                                                   const Mesh& query) {
    std::vector<Vec2> pts;
    pts.reserve(query.num_dofs());
    for (int v : query.active_vertices()) pts.push_back(query.point(v));
    const Eigen::MatrixXd vals = reconstruct_at_points(s, basis, ell, eta, pts);
    std::vector<FeFunction> out(s.size());
    for (int j = 0; j < s.size(); ++j)
        out[j] = {query.id(), vals.row(j).transpose()};
    return out;
}

} // namespace podcut
