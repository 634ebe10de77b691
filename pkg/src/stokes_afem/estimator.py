"""Residual error indicators for the Stokes eigenvalue problem and bulk marking.

For each cell T the squared indicator is

    eta_T^2 = h_T^2 ||lam u + Lap u - grad p||^2_T
            + h_T   ||[d_n u]||^2_{dT interior}
            + h_T   ||div u|_T||^2_{dT}

with h_T the cell diameter.  Each interior edge jump is computed once and
charged to both neighbours with their own h_T.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .assembly import edge_rule, triangle_rule
from .mesh2d import LOCAL_EDGES, Mesh
from .th_space import P2_D2BARY, THSpace, bary_gradients, p2_dbary, p2_values


@dataclass(frozen=True)
class Indicators:
    vol: np.ndarray
    jump: np.ndarray
    div: np.ndarray

    @property
    def eta_sq(self) -> np.ndarray:
        return self.vol + self.jump + self.div

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt(self.eta_sq)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_id", "eta_sq", "vol", "jump", "div"])
            for k, row in enumerate(zip(self.eta_sq, self.vol, self.jump, self.div)):
                w.writerow([k, *(repr(float(x)) for x in row)])


def _edge_bary(t: np.ndarray, local_edge: np.ndarray, reverse: np.ndarray) -> np.ndarray:
    """Barycentrics (n, nq, 3) of points at parameter t along local edges.

    The parameter runs from the lower to the higher global vertex id;
    ``reverse`` says whether that is opposite to the local edge direction.
    """
    n = len(local_edge)
    s = np.where(reverse[:, None], 1 - t[None, :], t[None, :])   # position from local start
    out = np.zeros((n, len(t), 3))
    i0 = LOCAL_EDGES[local_edge, 0]
    i1 = LOCAL_EDGES[local_edge, 1]
    rows = np.arange(n)[:, None]
    cols = np.arange(len(t))[None, :]
    out[rows, cols, i0[:, None]] = 1 - s
    out[rows, cols, i1[:, None]] = s
    return out


def _edge_traces(mesh: Mesh, cells: np.ndarray, local: np.ndarray, t: np.ndarray):
    """Barycentric points on (cell, local edge) pairs, parametrised along the global edge."""
    a = mesh.cells[cells, LOCAL_EDGES[local, 0]]
    b = mesh.cells[cells, LOCAL_EDGES[local, 1]]
    return _edge_bary(t, local, a > b)


def _edge_gradients(mesh: Mesh, G: np.ndarray, uloc: np.ndarray, t: np.ndarray) -> np.ndarray:
    """(nc, 3, nq, comp, dir) velocity gradients at points ``t`` on each local edge."""
    nc = mesh.n_cells
    cells3 = np.repeat(np.arange(nc), 3)
    bary = _edge_traces(mesh, cells3, np.tile(np.arange(3), nc), t)
    dphi = np.einsum("mqab,mbd->mqad", p2_dbary(bary), G[cells3])
    grad = np.einsum("mqad,mac->mqcd", dphi, uloc[cells3])
    return grad.reshape(nc, 3, len(t), 2, 2)


def local_indicators(mesh: Mesh, uloc: np.ndarray, ploc: np.ndarray, lam: float) -> Indicators:
    """Indicators from per-cell local coefficients.

    ``uloc`` is (nc, 6, 2) P2 velocity coefficients, ``ploc`` (nc, 3) P1
    pressure coefficients; boundary values are whatever the caller supplies.
    """
    G = bary_gradients(mesh)                                       # (nc, 3, 2)
    h = mesh.diameters
    area = mesh.areas

    # volume residual lam*u + Lap u - grad p, exact with the degree-4 rule
    rule = triangle_rule()
    gg = np.einsum("nid,njd->nij", G, G)                           # grad(lam_i).grad(lam_j)
    lap_phi = np.einsum("aij,nij->na", P2_D2BARY, gg)              # (nc, 6)
    lap_u = np.einsum("na,nac->nc", lap_phi, uloc)                 # (nc, 2)
    grad_p = np.einsum("ni,nid->nd", ploc, G)                      # (nc, 2)
    u_q = np.einsum("qa,nac->nqc", p2_values(rule.points), uloc)
    r = lam * u_q + (lap_u - grad_p)[:, None, :]
    vol = h ** 2 * 2 * area * np.einsum("q,nqc->n", rule.weights, r * r)

    er = edge_rule()
    grad_e = _edge_gradients(mesh, G, uloc, er.points)

    # divergence trace from inside T on all three of its edges
    div = grad_e[..., 0, 0] + grad_e[..., 1, 1]                   # (nc, 3, nq)
    div_term = h * np.einsum("ni,q,niq->n", mesh.edge_lengths_local, er.weights, div * div)

    ec, length, jump_edge = _interior_jumps(mesh, grad_e, er.weights)
    nc = mesh.n_cells
    jump_term = np.zeros(nc)
    for side in range(2):
        np.add.at(jump_term, ec[:, side], h[ec[:, side]] * jump_edge)
    return Indicators(vol, jump_term, div_term)


def compute_indicators(space: THSpace, ops, pair) -> Indicators:
    c = pair.c
    if len(c.u) != space.n_u or len(c.p) != space.n_p:
        raise ValueError("eigenpair does not belong to this space")
    return local_indicators(space.mesh, space.local_velocity(c.u), space.local_pressure(c.p), pair.lam)


def global_eta(ind) -> float:
    eta_sq = ind.eta_sq if isinstance(ind, Indicators) else np.asarray(ind, dtype=float) ** 2
    return math.sqrt(math.fsum(eta_sq))


def mark_dorfler(ind, theta: float) -> set[int]:
    """Minimum-cardinality set M with eta(M)^2 >= theta * eta(T)^2.

    ``ind`` is an Indicators instance or an array of squared indicators.
    Largest indicators are taken first, ties by ascending cell id.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    eta_sq = ind.eta_sq if isinstance(ind, Indicators) else np.asarray(ind, dtype=float)
    total = math.fsum(eta_sq)
    if total == 0:
        return set()
    order = np.lexsort((np.arange(len(eta_sq)), -eta_sq))
    csum = np.cumsum(eta_sq[order])
    k = int(np.searchsorted(csum, theta * total, side="left")) + 1
    k = min(max(k - 1, 1), len(order))
    # settle the cut with exact summation
    while k < len(order) and math.fsum(eta_sq[order[:k]]) < theta * total:
        k += 1
    while k > 1 and math.fsum(eta_sq[order[:k - 1]]) >= theta * total:
        k -= 1
    return set(order[:k].tolist())


def _interior_jumps(mesh: Mesh, grad_edges: np.ndarray, weights: np.ndarray):
    """Squared normal-derivative jumps integrated over each interior edge.

    ``grad_edges`` is (nc, 3, nq, comp, dir): velocity gradients at the edge
    quadrature points of every local edge, parametrised along the global edge.
    """
    interior = np.flatnonzero(mesh.edge_cell_count == 2)
    ec = mesh.edge_cells[interior]
    el = mesh.edge_local_index[interior]
    ev = mesh.vertices[mesh.edges[interior]]
    tang = ev[:, 1] - ev[:, 0]
    length = np.linalg.norm(tang, axis=1)
    normal = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
    g0 = grad_edges[ec[:, 0], el[:, 0]]
    g1 = grad_edges[ec[:, 1], el[:, 1]]
    jmp = np.einsum("eqcd,ed->eqc", g0 - g1, normal)
    return ec, length, length * np.einsum("q,eqc->e", weights, jmp * jmp)


def divergence_jump_ratio(space: THSpace, pair) -> float:
    """||div u||^2 over the domain divided by sum_e h_e ||[d_n u]||^2_e (interior edges)."""
    mesh = space.mesh
    uloc = space.local_velocity(pair.c.u)
    G = bary_gradients(mesh)
    rule = triangle_rule()
    dphi = np.einsum("qab,nbd->nqad", p2_dbary(rule.points), G)
    grad_u = np.einsum("nqad,nac->nqcd", dphi, uloc)
    div = grad_u[..., 0, 0] + grad_u[..., 1, 1]
    div_sq = math.fsum(2 * mesh.areas * np.einsum("q,nq->n", rule.weights, div * div))

    er = edge_rule()
    grad_e = _edge_gradients(mesh, G, uloc, er.points)
    _, length, jump_edge = _interior_jumps(mesh, grad_e, er.weights)
    jump_sum = math.fsum(length * jump_edge)
    return div_sq / jump_sum if jump_sum > 0 else math.inf
