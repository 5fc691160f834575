"""Dense 64-bit linear algebra used by the alignment loss and its gradients.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The SVD is a
one-sided (Hestenes) Jacobi iteration so results are bit-reproducible and do
not depend on the LAPACK build numpy happens to link against.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRowError, NumericalError, ShapeError

ROTATION_TOL = 1e-14
MAX_SWEEPS = 60
# columns below this fraction of the Frobenius norm are rounding noise
NULL_COLUMN_TOL = 1e-15


def as_matrix(m, name="matrix"):
    """Coerce to a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def row_l2_normalize(m, min_norm=1e-12):
    """Scale every row to unit Euclidean norm.

    Raises:
        DegenerateRowError: if any row has norm <= ``min_norm``.
    """
    m = as_matrix(m)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms <= min_norm)
    if bad.size:
        raise DegenerateRowError(f"rows {bad.tolist()} have norm <= {min_norm:g}")
    return m / norms[:, None]


def gram(m):
    """Pairwise inner products of the rows of ``m``, exactly symmetric."""
    m = as_matrix(m)
    g = m @ m.T
    return 0.5 * (g + g.T)


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD ``m = u @ diag(sigma) @ v.T`` with ``k = min(rows, cols)``.

    ``u`` is rows x k, ``v`` is cols x k, both with orthonormal columns.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self):
        return (self.u * self.sigma) @ self.v.T


def _complete_columns(q, filled):
    """Fill the columns of ``q`` not flagged in ``filled`` with an orthonormal
    completion, trying standard basis vectors in index order."""
    m, k = q.shape
    basis = [q[:, j] for j in range(k) if filled[j]]
    candidates = iter(range(m))
    for j in range(k):
        if filled[j]:
            continue
        while True:
            e = np.zeros(m)
            e[next(candidates)] = 1.0
            for _ in range(2):
                for b in basis:
                    e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                break
        q[:, j] = e / nrm
        basis.append(q[:, j])
    return q


def _jacobi_tall(b):
    """One-sided Jacobi on a tall matrix (rows >= cols).

    Returns ``(left, sigma, right, nonzero)`` unsorted, with
    ``b @ right = left * sigma``; ``left`` is zero where ``nonzero`` is False.
    """
    b = b.copy()
    n = b.shape[1]
    w = np.eye(n)
    null_sq = (NULL_COLUMN_TOL * np.linalg.norm(b)) ** 2
    for sweep in range(1, MAX_SWEEPS + 1):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                bi, bj = b[:, i], b[:, j]
                alpha = bi @ bi
                beta = bj @ bj
                gamma = bi @ bj
                if min(alpha, beta) <= null_sq or abs(gamma) <= ROTATION_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_i = c * bi - s * bj
                new_j = s * bi + c * bj
                b[:, i], b[:, j] = new_i, new_j
                wi, wj = w[:, i].copy(), w[:, j].copy()
                w[:, i] = c * wi - s * wj
                w[:, j] = s * wi + c * wj
        if not rotated:
            break
    else:
        raise NumericalError(
            f"Jacobi SVD did not converge within {MAX_SWEEPS} sweeps", iterations=MAX_SWEEPS
        )
    sigma = np.linalg.norm(b, axis=0)
    left = np.zeros_like(b)
    nonzero = (sigma * sigma > null_sq) & (sigma > 0.0)
    left[:, nonzero] = b[:, nonzero] / sigma[nonzero]
    return left, sigma, w, nonzero


def svd(m):
    """Deterministic thin singular value decomposition.

    Singular values come back sorted nonincreasing. Each column of ``u`` is
    sign-fixed so that its largest-magnitude entry is nonnegative (the
    matching column of ``v`` is flipped along with it).

    Raises:
        NumericalError: if the Jacobi sweeps fail to converge.
    """
    m = as_matrix(m)
    rows, cols = m.shape
    if min(rows, cols) < 1:
        raise ShapeError(f"svd needs a nonempty matrix, got {m.shape}")
    transposed = rows < cols
    left, sigma, right, nonzero = _jacobi_tall(m.T if transposed else m)

    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    left = left[:, order]
    right = right[:, order]
    left = _complete_columns(left, nonzero[order])

    u, v = (right, left) if transposed else (left, right)
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivots, np.arange(u.shape[1])] < 0.0, -1.0, 1.0)
    return SvdFactors(u=u * signs, sigma=sigma, v=v * signs)


def numerical_rank(m, tol):
    """Number of singular values exceeding ``tol * sigma_max``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sigma = svd(m).sigma
    if sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > tol * sigma[0]))


def spectral_norm(m):
    return float(svd(m).sigma[0])
