"""Dense singular value decomposition via one-sided Jacobi rotations.

The decomposition of an arbitrary d x D matrix A is A = U S V^T with U
(d x d) and V (D x D) orthogonal and S the nonincreasing singular values.
One-sided Jacobi orthogonalizes the columns of a working copy of A by plane
rotations accumulated into V; it is deterministic, needs nothing beyond
matrix arithmetic, and delivers near machine precision at the dense sizes
this toolkit targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100

# Relative cutoff below which a singular value is treated as exactly zero.
SINGULAR_ZERO_RTOL = 1e-8


@dataclass(frozen=True)
class SvdFactors:
    """Orthogonal factors and singular values of a dense operator."""

    u: np.ndarray  # d x d
    singulars: np.ndarray  # min(d, D), nonincreasing, >= 0
    v: np.ndarray  # D x D

    @property
    def out_dim(self) -> int:
        return self.u.shape[0]

    @property
    def in_dim(self) -> int:
        return self.v.shape[0]

    def reconstruct(self) -> np.ndarray:
        d, big_d = self.out_dim, self.in_dim
        sigma = np.zeros((d, big_d))
        k = self.singulars.size
        sigma[:k, :k] = np.diag(self.singulars)
        return self.u @ sigma @ self.v.T

    def singulars_extended(self) -> np.ndarray:
        """Singular values padded with zeros to length D (input dimension)."""
        out = np.zeros(self.in_dim)
        out[: self.singulars.size] = self.singulars
        return out


def _orthonormal_completion(basis: np.ndarray, dim: int) -> np.ndarray:
    """Extend the orthonormal columns of `basis` to a full dim x dim basis
    by modified Gram-Schmidt against the identity candidates."""
    cols = [basis[:, i] for i in range(basis.shape[1])]
    for k in range(dim):
        if len(cols) == dim:
            break
        cand = np.zeros(dim)
        cand[k] = 1.0
        for c in cols:
            cand = cand - (c @ cand) * c
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            cols.append(cand / norm)
    if len(cols) != dim:
        raise NumericError("failed to complete an orthonormal basis")
    return np.column_stack(cols)


def jacobi_svd(
    matrix: np.ndarray,
    tol: float = JACOBI_TOL,
    max_sweeps: int = JACOBI_MAX_SWEEPS,
) -> SvdFactors:
    """Full SVD of a dense matrix by one-sided Jacobi iteration.

    Raises NumericError when the rotation sweep has not converged after
    `max_sweeps` passes over all column pairs.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise NumericError("jacobi_svd needs a 2-D matrix")
    d, big_d = a.shape
    work = a.copy()
    v = np.eye(big_d)

    # columns whose norm collapses to rounding noise are rank deficiencies;
    # rotating them against each other would never settle
    dead_norm2 = (16 * np.finfo(np.float64).eps * np.linalg.norm(a)) ** 2

    converged = False
    for _ in range(max_sweeps):
        rotated = False
        for i in range(big_d - 1):
            wi = work[:, i]
            for j in range(i + 1, big_d):
                wj = work[:, j]
                pq = wi @ wj
                pp = wi @ wi
                qq = wj @ wj
                if pp <= dead_norm2 or qq <= dead_norm2:
                    continue
                if abs(pq) <= tol * np.sqrt(pp * qq) or pq == 0.0:
                    continue
                rotated = True
                theta = 0.5 * np.arctan2(2.0 * pq, pp - qq)
                c = np.cos(theta)
                s = np.sin(theta)
                new_i = c * wi + s * wj
                work[:, j] = -s * wi + c * wj
                work[:, i] = new_i
                wi = new_i
                vi = v[:, i].copy()
                v[:, i] = c * vi + s * v[:, j]
                v[:, j] = -s * vi + c * v[:, j]
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericError(f"jacobi SVD did not converge in {max_sweeps} sweeps")

    norms = np.linalg.norm(work, axis=0)
    order = np.argsort(-norms, kind="stable")
    norms = norms[order]
    work = work[:, order]
    v = v[:, order]

    k = min(d, big_d)
    singulars = norms[:k].copy()
    max_s = singulars[0] if k else 0.0
    u_cols = []
    for i in range(k):
        # norms are sorted descending, so everything past the first tiny
        # column is rank-deficient and gets filled by basis completion
        if max_s == 0.0 or norms[i] <= 1e-13 * max_s:
            break
        u_cols.append(work[:, i] / norms[i])
    u_partial = np.column_stack(u_cols) if u_cols else np.zeros((d, 0))
    u = _orthonormal_completion(u_partial, d)
    return SvdFactors(u=u, singulars=singulars, v=v)


def pinv_matrix_from_svd(factors: SvdFactors, threshold: float = SINGULAR_ZERO_RTOL) -> np.ndarray:
    """Dense pseudo-inverse V S^+ U^T.

    Reciprocals are taken only for singular values above
    threshold * max(singulars); the rest invert to exactly zero.
    """
    if threshold < 0:
        raise NumericError("threshold must be nonnegative")
    s = factors.singulars
    cutoff = threshold * (s[0] if s.size else 0.0)
    inv = np.where(s > cutoff, np.divide(1.0, np.where(s > cutoff, s, 1.0)), 0.0)
    d, big_d = factors.out_dim, factors.in_dim
    sig_pinv = np.zeros((big_d, d))
    k = s.size
    sig_pinv[:k, :k] = np.diag(inv)
    return factors.v @ sig_pinv @ factors.u.T
