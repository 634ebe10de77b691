"""Smallest eigenpairs of the Stokes saddle-point pencil.

The pencil is ``K x = lam * Mb x`` with

    K  = [[A, B^T, 0], [B, 0, m_p], [0, m_p^T, 0]],   Mb = diag(M, 0, 0),

the last row/column being the zero-mean pressure multiplier.  ``K - sigma*Mb``
is factored once and a block of velocity vectors is driven by inverse
(subspace) iteration with a Rayleigh-Ritz step in the M inner product.
Applying ``K^{-1}`` to ``Mb``-images only ever produces discretely
divergence-free velocities, so the infinite eigenvalues never appear.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import StokesOperators
from .th_space import Coefficients

DEFAULT_TOL = 1e-10
DEFAULT_SEED = 20240917


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenPair:
    lam: float
    c: Coefficients
    residual: float
    iterations: int


def augmented_matrices(ops: StokesOperators, sigma: float = 0.0):
    """Return (K - sigma*Mb, Mb) as sparse matrices."""
    n_u, n_p = ops.n_u, ops.n_p
    blocks = [[ops.A - sigma * ops.M, ops.B.T], [ops.B, None]]
    mb = [[ops.M, None], [None, sp.csr_matrix((n_p, n_p))]]
    if ops.m_p is not None:
        mcol = sp.csr_matrix(np.asarray(ops.m_p).reshape(-1, 1))
        blocks = [[blocks[0][0], blocks[0][1], None],
                  [blocks[1][0], None, mcol],
                  [None, mcol.T, None]]
        mb = [[ops.M, None, None],
              [None, sp.csr_matrix((n_p, n_p)), None],
              [None, None, sp.csr_matrix((1, 1))]]
    if n_p == 0:
        return sp.csr_matrix(ops.A - sigma * ops.M), sp.csr_matrix(ops.M)
    K = sp.bmat(blocks, format="csc")
    Mb = sp.bmat(mb, format="csr")
    return K, Mb


def _factor(K):
    """Sparse LU of the indefinite matrix with one step of iterative refinement."""
    K = sp.csc_matrix(K)
    try:
        # symmetric fill-reducing ordering; threshold pivoting handles the zero block
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1e-3,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise EigenSolverError(f"factorization of the augmented matrix failed: {exc}") from exc

    def solve(b):
        x = lu.solve(b)
        return x + lu.solve(b - K @ x)

    return solve


def _multiplier(ops: StokesOperators, u: np.ndarray) -> np.ndarray:
    if ops.m_p is None or ops.n_p == 0:
        return np.zeros(0)
    m = np.asarray(ops.m_p)
    return np.array([-(m @ (ops.B @ u)) / (m @ m)])


def full_vector(ops: StokesOperators, c: Coefficients) -> np.ndarray:
    return np.concatenate([c.u, c.p, _multiplier(ops, c.u)])


def residual(ops: StokesOperators, pair: EigenPair) -> float:
    """Relative residual ||Kx - lam Mb x|| / (||Kx|| + lam ||Mb x||)."""
    K, Mb = augmented_matrices(ops)
    x = full_vector(ops, pair.c)
    Kx = K @ x
    Mx = Mb @ x
    denom = np.linalg.norm(Kx) + abs(pair.lam) * np.linalg.norm(Mx)
    return float(np.linalg.norm(Kx - pair.lam * Mx) / denom) if denom > 0 else 0.0


def _fix_sign(u: np.ndarray) -> float:
    k = int(np.argmax(np.abs(u)))
    return -1.0 if u[k] < 0 else 1.0


def _rayleigh_ritz(Y: np.ndarray, A, M, n_u: int):
    """Ritz values/vectors of (A, M) on span of the velocity part of Y."""
    Yu = Y[:n_u]
    G = Yu.T @ (M @ Yu)
    G = 0.5 * (G + G.T)
    g, V = la.eigh(G)
    keep = g > 1e-13 * g.max()
    Q = V[:, keep] / np.sqrt(g[keep])
    H = Yu.T @ (A @ Yu)
    H = Q.T @ (0.5 * (H + H.T)) @ Q
    theta, C = la.eigh(H)
    return theta, Y @ (Q @ C)


def solve_evp(ops: StokesOperators, nev: int = 1, sigma: float = 0.0,
              tol: float = DEFAULT_TOL, max_iter: int = 500,
              start: np.ndarray | None = None, block: int | None = None,
              seed: int = DEFAULT_SEED) -> list[EigenPair]:
    """The ``nev`` smallest finite eigenpairs, ascending, with ||u||_M = 1.

    ``start`` optionally supplies velocity start vectors (n_u, k) which take
    the first columns of the iteration block; the rest are pseudo-random
    from ``seed``.
    """
    if nev < 1:
        raise ValueError("nev must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_u = ops.n_u
    K, Mb = augmented_matrices(ops, sigma)
    solve = _factor(K)
    A, M = ops.A, ops.M
    N = K.shape[0]

    p = min(block or max(nev + 4, 2 * nev), n_u)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_u, p))
    if start is not None:
        S = np.asarray(start, dtype=float).reshape(n_u, -1)[:, :p]
        X[:, :S.shape[1]] = S + 1e-3 * np.linalg.norm(S, axis=0) / np.sqrt(n_u) * X[:, :S.shape[1]]

    res = np.full(nev, np.inf)
    for it in range(1, max_iter + 1):
        rhs = np.zeros((N, X.shape[1]))
        rhs[:n_u] = M @ X
        Y = solve(rhs)
        if not np.all(np.isfinite(Y)):
            raise EigenSolverError("augmented matrix is singular")
        theta, Z = _rayleigh_ritz(Y, A, M, n_u)
        if len(theta) < nev:
            raise EigenSolverError(
                f"only {len(theta)} finite eigenvalues available, {nev} requested")
        nrm = np.sqrt(np.einsum("ij,ij->j", Z[:n_u], M @ Z[:n_u]))
        Z = Z / nrm
        lam = theta + sigma
        Kz = K @ Z[:, :nev] + sigma * (Mb @ Z[:, :nev])
        Mz = Mb @ Z[:, :nev]
        r = Kz - lam[:nev] * Mz
        res = np.linalg.norm(r, axis=0) / (np.linalg.norm(Kz, axis=0) + np.abs(lam[:nev]) * np.linalg.norm(Mz, axis=0))
        if np.all(res <= tol):
            break
        # a rank drop means the block exceeds the divergence-free space; keep
        # the smaller block, fresh random columns would spoil the pressures
        X = Z[:n_u]
    else:
        raise EigenSolverError(
            f"inverse iteration did not converge in {max_iter} steps (residuals {res.tolist()})")

    pairs = []
    for j in range(nev):
        z = Z[:, j]
        s = _fix_sign(z[:n_u])
        c = Coefficients(s * z[:n_u].copy(), s * z[n_u:n_u + ops.n_p].copy())
        pairs.append(EigenPair(float(lam[j]), c, float(res[j]), it))
    return pairs


def align(pair: EigenPair, reference_u: np.ndarray, M) -> EigenPair:
    """Flip ``pair`` so that (u, reference_u)_M >= 0."""
    if pair.c.u @ (M @ reference_u) < 0:
        return EigenPair(pair.lam, -1.0 * pair.c, pair.residual, pair.iterations)
    return pair
