"""Gaussian Markov random field numerics.

Factorizations are dense (LAPACK) up to ``DENSE_LIMIT`` rows and sparse
above it. The sparse route runs SuperLU with a minimum-degree ordering on
``Q + Q'`` and no pivoting, which for a symmetric positive definite matrix
yields ``P Q P' = L D L'``; the Cholesky factor is ``L sqrt(D)``.

Random numbers come from numpy's Philox counter-based generator. Independent
streams are derived with ``numpy.random.SeedSequence(seed).spawn``; see
:func:`make_rng` and :func:`spawn_rngs`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import NotPositiveDefiniteError, NumericalError, ValidationError
from .precision import PrecisionMatrix

JITTER = 1e-8
DENSE_LIMIT = 2000


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """``n`` independent generators; stream ``k`` depends only on (seed, k)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(n)]


@dataclass(frozen=True, eq=False)
class CholeskyFactor:
    """Lower factor of ``P (Q + jitter I) P'``; ``perm[i]`` is the row of Q at position i."""

    lower: np.ndarray | sp.csr_matrix
    perm: np.ndarray
    jitter_applied: float
    matrix: sp.csr_matrix  # the jittered Q, unpermuted

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.lower)

    def diagonal(self) -> np.ndarray:
        return self.lower.diagonal() if self.is_sparse else np.diag(self.lower).copy()

    def log_det(self) -> float:
        """log |Q + jitter I|."""
        return 2.0 * float(np.sum(np.log(self.diagonal())))

    def _tri(self, b, lower: bool, trans: bool):
        if self.is_sparse:
            mat = self.lower.T.tocsr() if trans else self.lower
            return spla.spsolve_triangular(mat, b, lower=not trans)
        return sla.solve_triangular(self.lower, b, lower=True, trans="T" if trans else "N")

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """L^{-1} P b."""
        return self._tri(np.asarray(b, dtype=float)[self.perm], lower=True, trans=False)

    def solve_lower_t(self, w: np.ndarray) -> np.ndarray:
        """P' L^{-T} w."""
        z = self._tri(np.asarray(w, dtype=float), lower=False, trans=True)
        out = np.empty_like(z)
        out[self.perm] = z
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.solve_lower_t(self.solve_lower(b))


def _as_sparse(Q) -> tuple[sp.csr_matrix, bool]:
    if isinstance(Q, PrecisionMatrix):
        return Q.matrix, Q.intrinsic
    if sp.issparse(Q):
        return sp.csr_matrix(Q, dtype=float), False
    return sp.csr_matrix(np.asarray(Q, dtype=float)), False


def factorize(Q, intrinsic: bool | None = None, method: str = "auto") -> CholeskyFactor:
    """Cholesky factor of Q, jittered by ``1e-8 * mean(diag Q)`` when intrinsic."""
    mat, flag = _as_sparse(Q)
    if intrinsic is None:
        intrinsic = flag
    n = mat.shape[0]
    if mat.shape != (n, n):
        raise ValidationError(f"precision must be square, got {mat.shape}")
    jitter = JITTER * float(mat.diagonal().mean()) if intrinsic and n else 0.0
    if jitter:
        mat = (mat + jitter * sp.identity(n, format="csr")).tocsr()
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "sparse"
    if method == "dense":
        try:
            lower = sla.cholesky(mat.toarray(), lower=True)
        except sla.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from None
        return CholeskyFactor(lower, np.arange(n), jitter, mat)
    if method == "sparse":
        return _sparse_factor(mat, jitter)
    raise ValidationError(f"unknown factorization method {method!r}")


def _sparse_factor(mat: sp.csr_matrix, jitter: float) -> CholeskyFactor:
    n = mat.shape[0]
    csc = mat.tocsc()
    try:
        lu = spla.splu(
            csc,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise NotPositiveDefiniteError(f"sparse factorization failed: {exc}") from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NumericalError("sparse factorization pivoted off the diagonal")
    d = lu.U.diagonal()
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise NotPositiveDefiniteError("matrix is not positive definite (non-positive pivot)")
    # splu: Pr A Pc = L U, and column j of A lands at position perm_c[j]
    perm = np.argsort(lu.perm_c)
    lower = (lu.L @ sp.diags(np.sqrt(d))).tocsr()
    lower.sort_indices()
    return CholeskyFactor(lower, perm, jitter, mat)


def _check_dim(factor: CholeskyFactor, v: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != factor.n:
        raise ValidationError(f"{what} has length {v.shape[0]}, expected {factor.n}")
    return v


def solve(factor: CholeskyFactor, b) -> np.ndarray:
    """Q^{-1} b for the (jittered) factorized Q."""
    return factor.solve(_check_dim(factor, b, "right-hand side"))


def log_density(x, mean, factor: CholeskyFactor) -> float:
    x = _check_dim(factor, x, "x")
    mean = _check_dim(factor, mean, "mean")
    r = x - mean
    quad = float(r @ (factor.matrix @ r))
    return -0.5 * factor.n * np.log(2 * np.pi) + 0.5 * factor.log_det() - 0.5 * quad


def condition_on_constraint(factor: CholeskyFactor, x: np.ndarray, constraint: np.ndarray) -> np.ndarray:
    """Correct draws ``x`` (n or n-by-k) so that ``constraint @ x == 0``.

    Uses ``x - Q^{-1} A' (A Q^{-1} A')^{-1} A x``.
    """
    A = np.atleast_2d(np.asarray(constraint, dtype=float))
    if A.shape[0] == 0:
        return x
    if A.shape[1] != factor.n:
        raise ValidationError(f"constraint has {A.shape[1]} columns, expected {factor.n}")
    QiAt = np.column_stack([factor.solve(row) for row in A])
    S = A @ QiAt
    try:
        cf = sla.cho_factor(S)
    except sla.LinAlgError:
        raise NumericalError("constraint covariance A Q^{-1} A' is singular") from None
    return x - QiAt @ sla.cho_solve(cf, A @ x)


def sample(
    factor: CholeskyFactor,
    constraint: np.ndarray | None = None,
    rng_seed=None,
    size: int | None = None,
) -> np.ndarray:
    """Zero-mean draw(s) from N(0, Q^{-1}), optionally conditioned on ``A x = 0``.

    With ``size`` given, returns an array of shape (size, n).
    """
    rng = make_rng(rng_seed)
    k = 1 if size is None else size
    z = rng.standard_normal((factor.n, k))
    x = factor.solve_lower_t(z)
    if constraint is not None:
        x = condition_on_constraint(factor, x, constraint)
    return x[:, 0] if size is None else x.T


def generalized_log_det(factor: CholeskyFactor, constraint: np.ndarray) -> float:
    """log of the product of non-zero eigenvalues of an intrinsic Q.

    ``constraint`` rows must span the null space of Q (sum-to-zero rows per
    component). Uses ``log|Q + dI| + log|A (Q + dI)^{-1} A'| - log|A A'|``,
    which equals the generalized determinant up to O(d / smallest eigenvalue).
    """
    A = np.atleast_2d(np.asarray(constraint, dtype=float))
    if A.shape[0] == 0:
        return factor.log_det()
    QiAt = np.column_stack([factor.solve(row) for row in A])
    _, logdet_s = np.linalg.slogdet(A @ QiAt)
    _, logdet_aa = np.linalg.slogdet(A @ A.T)
    return factor.log_det() + logdet_s - logdet_aa
