"""Taylor-Hood P2-P1 space on a triangle mesh.

P2 nodes are numbered vertices first, then edge midpoints (``n_vertices +
edge id``).  Velocity DOFs live on interior P2 nodes only, interleaved by
component (``2*k + comp``).  Every vertex carries a P1 pressure DOF; the
zero-mean condition is imposed later through a multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh2d import CellMap, Mesh


def p2_values(bary: np.ndarray) -> np.ndarray:
    """(..., 6) P2 shape functions at barycentric points (..., 3)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=-1)


def p2_dbary(bary: np.ndarray) -> np.ndarray:
    """(..., 6, 3) derivatives of the P2 shape functions w.r.t. barycentrics."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(l0)
    rows = [
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
        [4 * l1, 4 * l0, z],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


# second barycentric derivatives of P2 shape functions (constant), (6, 3, 3)
P2_D2BARY = np.zeros((6, 3, 3))
for _i in range(3):
    P2_D2BARY[_i, _i, _i] = 4.0
    _j, _k = (_i + 1) % 3, (_i + 2) % 3
    P2_D2BARY[3 + _i, _j, _k] = P2_D2BARY[3 + _i, _k, _j] = 4.0

# P2 node positions in barycentric coordinates (vertices, then edge midpoints)
P2_NODES_BARY = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1],
    [0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0],
])


def bary_gradients(mesh: Mesh) -> np.ndarray:
    """(nc, 3, 2) constant gradients of the barycentric coordinates."""
    p = mesh.vertices[mesh.cells]
    two_area = 2 * mesh.signed_areas
    g = np.empty((mesh.n_cells, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / two_area
        g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / two_area
    return g


def barycentric(mesh: Mesh, cells: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``pts[i]`` (or ``pts[i, j]``) in ``cells[i]``."""
    p = mesh.vertices[mesh.cells[cells]]              # (n, 3, 2)
    g = bary_gradients(mesh)[cells]                   # (n, 3, 2)
    squeeze = pts.ndim == 2
    if squeeze:
        pts = pts[:, None, :]
    d = pts[:, :, None, :] - p[:, None, [1, 2, 0], :]  # relative to a vertex on the opposite edge
    lam = np.einsum("nqkd,nkd->nqk", d, g)
    return lam[:, 0] if squeeze else lam


@dataclass(frozen=True)
class Coefficients:
    """Velocity (length n_u) and pressure (length n_p) coefficient vectors."""

    u: np.ndarray
    p: np.ndarray

    def __add__(self, other):
        return Coefficients(self.u + other.u, self.p + other.p)

    def __sub__(self, other):
        return Coefficients(self.u - other.u, self.p - other.p)

    def __mul__(self, s):
        return Coefficients(s * self.u, s * self.p)

    __rmul__ = __mul__

    def to_json(self) -> dict:
        return {"u": self.u.tolist(), "p": self.p.tolist()}

    @classmethod
    def from_json(cls, data) -> "Coefficients":
        return cls(np.asarray(data["u"], dtype=float), np.asarray(data["p"], dtype=float))


class THSpace:
    """DOF layout of the Taylor-Hood pair on ``mesh``."""

    def __init__(self, mesh: Mesh):
        if mesh.n_cells < 3:
            raise ValueError("admissible meshes contain at least three cells")
        self.mesh = mesh
        nv = mesh.n_vertices
        self.n_nodes = nv + len(mesh.edges)
        bnd = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
        self.interior_nodes = np.flatnonzero(~bnd)
        node2k = np.full(self.n_nodes, -1, dtype=np.int64)
        node2k[self.interior_nodes] = np.arange(len(self.interior_nodes))
        self.node_to_interior = node2k
        self.cell_nodes = np.hstack([mesh.cells, nv + mesh.cell_edges])   # (nc, 6)
        self.n_u = 2 * len(self.interior_nodes)
        self.n_p = nv

    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_p

    @cached_property
    def node_coords(self) -> np.ndarray:
        v = self.mesh.vertices
        e = self.mesh.edges
        return np.vstack([v, 0.5 * (v[e[:, 0]] + v[e[:, 1]])])

    @cached_property
    def cell_velocity_dofs(self) -> np.ndarray:
        """(nc, 6, 2) velocity DOF per local node and component, -1 on the boundary."""
        k = self.node_to_interior[self.cell_nodes]
        out = np.stack([2 * k, 2 * k + 1], axis=-1)
        out[k < 0] = -1
        return out

    def nodal_velocity(self, u: np.ndarray) -> np.ndarray:
        """(n_nodes, 2) nodal values including the zero boundary nodes."""
        if len(u) != self.n_u:
            raise ValueError(f"velocity vector has length {len(u)}, expected {self.n_u}")
        out = np.zeros((self.n_nodes, 2))
        out[self.interior_nodes] = np.asarray(u).reshape(-1, 2)
        return out

    def local_velocity(self, u: np.ndarray) -> np.ndarray:
        """(nc, 6, 2) local P2 coefficients per cell."""
        return self.nodal_velocity(u)[self.cell_nodes]

    def local_pressure(self, p: np.ndarray) -> np.ndarray:
        if len(p) != self.n_p:
            raise ValueError(f"pressure vector has length {len(p)}, expected {self.n_p}")
        return np.asarray(p)[self.mesh.cells]

    def interpolate(self, fu=None, fp=None) -> Coefficients:
        """Nodal interpolant; ``fu(x, y) -> (ux, uy)``, ``fp(x, y) -> p``.

        Boundary velocity nodes are dropped whatever the field value there.
        """
        u = np.zeros(self.n_u)
        p = np.zeros(self.n_p)
        if fu is not None:
            x = self.node_coords[self.interior_nodes]
            vals = np.column_stack(np.broadcast_arrays(*fu(x[:, 0], x[:, 1])))
            u = vals.reshape(-1).astype(float)
        if fp is not None:
            x = self.mesh.vertices
            p = np.broadcast_to(fp(x[:, 0], x[:, 1]), (self.n_p,)).astype(float)
        return Coefficients(u, p)

    def locate(self, pts: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Cell containing each point and its barycentric coordinates (brute force)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g = bary_gradients(self.mesh)
        p = self.mesh.vertices[self.mesh.cells]
        cells = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 3))
        for i, x in enumerate(pts):
            lam = np.einsum("nkd,nkd->nk", x[None, None, :] - p[:, [1, 2, 0], :], g)
            worst = lam.min(axis=1)
            k = int(np.argmax(worst))
            if worst[k] < -tol:
                raise ValueError(f"point {x.tolist()} lies outside the domain")
            cells[i] = k
            bary[i] = lam[k]
        return cells, bary

    def evaluate(self, c: Coefficients, point) -> tuple[np.ndarray, float]:
        """Velocity vector and pressure at a single point."""
        cells, bary = self.locate(np.asarray(point, dtype=float)[None, :])
        k, lam = cells[0], bary[0]
        uloc = self.local_velocity(c.u)[k]
        vel = p2_values(lam) @ uloc
        pres = float(lam @ self.local_pressure(c.p)[k])
        return vel, pres


def build_space(mesh: Mesh) -> THSpace:
    return THSpace(mesh)


def _check_lineage(coarse: THSpace, fine: THSpace, cmap: CellMap) -> None:
    if cmap.n_coarse != coarse.mesh.n_cells or cmap.n_fine != fine.mesh.n_cells:
        raise ValueError("cell map does not connect these meshes")


def prolongate(coarse: THSpace, fine: THSpace, cmap: CellMap, c: Coefficients) -> Coefficients:
    """Exact embedding of a coarse Taylor-Hood function into the refined space."""
    _check_lineage(coarse, fine, cmap)
    fm = fine.mesh
    pts = fine.node_coords[fine.cell_nodes]                      # (nf, 6, 2)
    anc = cmap.parent
    lam = barycentric(coarse.mesh, anc, pts)                     # (nf, 6, 3)
    if lam.min() < -1e-9:
        raise ValueError("fine cells are not nested in their recorded ancestors")
    uloc = coarse.local_velocity(c.u)[anc]                       # (nf, 6, 2)
    vals = np.einsum("nqa,nad->nqd", p2_values(lam), uloc)
    nodal = np.zeros((fine.n_nodes, 2))
    nodal[fine.cell_nodes.reshape(-1)] = vals.reshape(-1, 2)
    u = nodal[fine.interior_nodes].reshape(-1)

    ploc = coarse.local_pressure(c.p)[anc]                       # (nf, 3)
    pv = np.einsum("nqa,na->nq", lam[:, :3], ploc)
    p = np.zeros(fine.n_p)
    p[fm.cells.reshape(-1)] = pv.reshape(-1)
    return Coefficients(u, p)
