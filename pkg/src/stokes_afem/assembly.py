"""Quadrature and sparse assembly of the Stokes forms on a Taylor-Hood space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .th_space import Coefficients, THSpace, bary_gradients, p2_dbary, p2_values


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray    # barycentric (n, 3) on triangles, (n,) in [0, 1] on edges
    weights: np.ndarray   # scaled to the reference measure
    degree: int


def triangle_rule() -> QuadratureRule:
    """Six-point symmetric rule, exact to degree 4, reference area 1/2."""
    a1, w1 = 0.44594849091596488632, 0.22338158967801146570
    a2, w2 = 0.091576213509770743460, 0.10995174365532186764
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1 - 2 * a
        pts += [[b, a, a], [a, b, a], [a, a, b]]
        wts += [w] * 3
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), 4)


def edge_rule() -> QuadratureRule:
    """Three-point Gauss-Legendre on [0, 1], exact to degree 5."""
    x, w = np.polynomial.legendre.leggauss(3)
    return QuadratureRule(0.5 * (x + 1), 0.5 * w, 5)


@dataclass(frozen=True)
class StokesOperators:
    A: sp.csr_matrix      # (n_u, n_u) vector Laplacian
    B: sp.csr_matrix      # (n_p, n_u), b(v, q) = -(div v, q)
    M: sp.csr_matrix      # (n_u, n_u) velocity mass
    m_p: np.ndarray | None = None   # (n_p,) integrals of the pressure basis; None: no mean constraint
    Mp: sp.csr_matrix | None = None  # (n_p, n_p) pressure mass

    @property
    def n_u(self) -> int:
        return self.A.shape[0]

    @property
    def n_p(self) -> int:
        return self.B.shape[0]


def _gradients_at_quadrature(space: THSpace, qp: np.ndarray) -> np.ndarray:
    """(nc, nq, 6, 2) physical gradients of the P2 shape functions."""
    G = bary_gradients(space.mesh)
    return np.einsum("qab,nbd->nqad", p2_dbary(qp), G)


def _scatter(rows, cols, vals, shape) -> sp.csr_matrix:
    m = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return m


def assemble(space: THSpace) -> StokesOperators:
    mesh = space.mesh
    rule = triangle_rule()
    area = mesh.areas
    w = rule.weights[None, :] * (2 * area)[:, None]              # (nc, nq)
    phi = p2_values(rule.points)                                  # (nq, 6)
    dphi = _gradients_at_quadrature(space, rule.points)           # (nc, nq, 6, 2)
    psi = rule.points                                             # P1 basis = barycentrics

    Ke = np.einsum("nq,nqad,nqbd->nab", w, dphi, dphi)
    Me = np.einsum("nq,qa,qb->nab", w, phi, phi)
    De = -np.einsum("nq,qi,nqad->niad", w, psi, dphi)             # (nc, 3, 6, 2)
    Mpe = np.einsum("nq,qi,qj->nij", w, psi, psi)

    # scalar P2 blocks restricted to interior nodes, then expanded by component
    k = space.node_to_interior[space.cell_nodes]                  # (nc, 6)
    ni = len(space.interior_nodes)
    ok = (k[:, :, None] >= 0) & (k[:, None, :] >= 0)
    r = np.broadcast_to(k[:, :, None], ok.shape)[ok]
    c = np.broadcast_to(k[:, None, :], ok.shape)[ok]
    Ks = _scatter(r, c, Ke[ok], (ni, ni))
    Ms = _scatter(r, c, Me[ok], (ni, ni))
    I2 = sp.identity(2, format="csr")
    A = sp.kron(Ks, I2, format="csr")
    M = sp.kron(Ms, I2, format="csr")

    vdofs = space.cell_velocity_dofs                              # (nc, 6, 2)
    pd = mesh.cells                                               # (nc, 3)
    rows = np.broadcast_to(pd[:, :, None, None], De.shape)
    cols = np.broadcast_to(vdofs[:, None, :, :], De.shape)
    keep = cols >= 0
    B = _scatter(rows[keep], cols[keep], De[keep], (space.n_p, space.n_u))

    rows = np.broadcast_to(pd[:, :, None], Mpe.shape)
    cols = np.broadcast_to(pd[:, None, :], Mpe.shape)
    Mp = _scatter(rows, cols, Mpe, (space.n_p, space.n_p))
    m_p = np.bincount(pd.ravel(), weights=np.repeat(area / 3, 3), minlength=space.n_p)
    for mat in (A, M):
        mat.sort_indices()
    return StokesOperators(A, B, M, m_p, Mp)


FORM_KINDS = ("a", "b", "l2_velocity", "l2_pressure", "graph_norm")


def form_eval(space: THSpace, ops: StokesOperators, kind: str,
              c1: Coefficients, c2: Coefficients | None = None) -> float:
    """Evaluate a(u1,u2), b(u1,p2), (u1,u2), (p1,p2), or the graph norm of c1."""
    c2 = c1 if c2 is None else c2
    for c in (c1, c2):
        if len(c.u) != space.n_u or len(c.p) != space.n_p:
            raise ValueError("coefficient vector does not match the space")
    if kind == "a":
        return float(c1.u @ (ops.A @ c2.u))
    if kind == "b":
        return float(c2.p @ (ops.B @ c1.u))
    if kind == "l2_velocity":
        return float(c1.u @ (ops.M @ c2.u))
    if kind == "l2_pressure":
        return float(c1.p @ (ops.Mp @ c2.p))
    if kind == "graph_norm":
        val = c1.u @ (ops.A @ c1.u) + c1.p @ (ops.Mp @ c1.p)
        return float(np.sqrt(max(val, 0.0)))
    raise ValueError(f"unknown form kind {kind!r}; expected one of {FORM_KINDS}")


def write_matrix_market(ops: StokesOperators, prefix) -> None:
    from scipy.io import mmwrite

    for name in ("A", "B", "M", "Mp"):
        mmwrite(f"{prefix}_{name}.mtx", getattr(ops, name))
    np.savetxt(f"{prefix}_m_p.txt", ops.m_p)
