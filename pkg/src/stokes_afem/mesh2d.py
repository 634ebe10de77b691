"""Conforming triangle meshes with newest-vertex bisection (NVB).

Cells are stored counterclockwise with the newest vertex first, so the
refinement edge of every cell is local edge 0 (the edge opposite vertex 0).
Local edge ``i`` always joins vertices ``i+1`` and ``i+2`` (mod 3).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

DOMAINS = ("lshape", "slit", "square")

# local edge i -> (local vertex i+1, local vertex i+2)
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (nv, 2) float
    cells: np.ndarray             # (nc, 3) int, newest vertex first
    domain_tag: str | None = None
    parent: np.ndarray | None = None      # (nc,) cell id in the previous mesh, -1 for roots
    generation: np.ndarray | None = None  # (nc,) number of bisections since the initial mesh

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        c = np.ascontiguousarray(self.cells, dtype=np.int64)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)
        n = len(c)
        if self.parent is None:
            object.__setattr__(self, "parent", np.full(n, -1, dtype=np.int64))
        if self.generation is None:
            object.__setattr__(self, "generation", np.zeros(n, dtype=np.int64))
        for arr in (v, c, self.parent, self.generation):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def refinement_edge(self) -> np.ndarray:
        return np.zeros(self.n_cells, dtype=np.int64)

    # -- derived geometry -------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths_local(self) -> np.ndarray:
        """(nc, 3) length of local edge i."""
        p = self.vertices[self.cells]
        a = p[:, LOCAL_EDGES[:, 0]]
        b = p[:, LOCAL_EDGES[:, 1]]
        return np.linalg.norm(b - a, axis=2)

    @property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths_local.max(axis=1)

    def angles(self) -> np.ndarray:
        """(nc, 3) interior angle at each local vertex."""
        L = self.edge_lengths_local
        out = np.empty_like(L)
        for i in range(3):
            a, b, c = L[:, i], L[:, (i + 1) % 3], L[:, (i + 2) % 3]
            cosv = (b * b + c * c - a * a) / (2 * b * c)
            out[:, i] = np.arccos(np.clip(cosv, -1.0, 1.0))
        return out

    # -- topology ---------------------------------------------------------
    @cached_property
    def _topology(self):
        c = self.cells
        pairs = np.stack([c[:, LOCAL_EDGES[:, 0]], c[:, LOCAL_EDGES[:, 1]]], axis=2).reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        edges, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.reshape(-1)
        cell2edge = inv.reshape(-1, 3)
        # edge -> up to two incident (cell, local edge) slots, ordered by cell id
        order = np.argsort(inv, kind="stable")
        sorted_edges = inv[order]
        first = np.searchsorted(sorted_edges, np.arange(len(edges)))
        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_local = np.full((len(edges), 2), -1, dtype=np.int64)
        pos = np.arange(len(order)) - first[sorted_edges]
        ok = pos < 2
        edge_cells[sorted_edges[ok], pos[ok]] = order[ok] // 3
        edge_local[sorted_edges[ok], pos[ok]] = order[ok] % 3
        for arr in (edges, cell2edge, counts, edge_cells, edge_local):
            arr.setflags(write=False)
        return edges, cell2edge, counts, edge_cells, edge_local

    @property
    def edges(self) -> np.ndarray:
        """(ne, 2) sorted vertex pairs."""
        return self._topology[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """(nc, 3) global edge id of local edge i."""
        return self._topology[1]

    @property
    def edge_cell_count(self) -> np.ndarray:
        return self._topology[2]

    @property
    def edge_cells(self) -> np.ndarray:
        """(ne, 2) incident cells, -1 where absent."""
        return self._topology[3]

    @property
    def edge_local_index(self) -> np.ndarray:
        return self._topology[4]

    @property
    def boundary_edges(self) -> np.ndarray:
        return self.edge_cell_count == 1

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.edges[self.boundary_edges].ravel()] = True
        return mask

    @property
    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    # -- serialization ----------------------------------------------------
    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "cells": [[int(a), int(b), int(c), 0] for a, b, c in self.cells],
            "domain_tag": self.domain_tag,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Mesh":
        raw = np.asarray(data["cells"], dtype=np.int64)
        cells = raw[:, :3]
        refedge = raw[:, 3] if raw.shape[1] > 3 else np.zeros(len(raw), dtype=np.int64)
        return cls(np.asarray(data["vertices"], dtype=float),
                   _rotate_newest_first(cells, refedge),
                   data.get("domain_tag"))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Mesh":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class CellMap:
    """Ancestry from a coarse mesh to a mesh obtained by refining it."""

    parent: np.ndarray        # (n_fine,) coarse ancestor of each fine cell
    n_coarse: int
    refined_set: frozenset = field(default_factory=frozenset)

    @property
    def n_fine(self) -> int:
        return len(self.parent)

    @cached_property
    def descendants(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_coarse)]
        for fine, coarse in enumerate(self.parent.tolist()):
            out[coarse].append(fine)
        return out

    def compose(self, finer: "CellMap") -> "CellMap":
        """Map from this map's coarse mesh to ``finer``'s fine mesh."""
        if finer.n_coarse != self.n_fine:
            raise ValueError("cell maps do not chain")
        parent = self.parent[finer.parent]
        counts = np.bincount(parent, minlength=self.n_coarse)
        refined = frozenset(np.flatnonzero(counts > 1).tolist()) | self.refined_set
        return CellMap(parent, self.n_coarse, refined)

    @classmethod
    def identity(cls, n: int) -> "CellMap":
        return cls(np.arange(n, dtype=np.int64), n, frozenset())


def _rotate_newest_first(cells: np.ndarray, refedge: np.ndarray) -> np.ndarray:
    idx = (refedge[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(cells, idx, axis=1)


def _label_longest_edge(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Orient cells ccw and rotate so the longest edge is the refinement edge.

    Ties go to the smallest opposite-vertex id.
    """
    cells = np.array(cells, dtype=np.int64)
    p = vertices[cells]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    cells[neg] = cells[neg][:, [0, 2, 1]]
    p = vertices[cells]
    L = np.linalg.norm(p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]], axis=2)
    ref = np.empty(len(cells), dtype=np.int64)
    for k in range(len(cells)):
        top = L[k].max()
        cands = [i for i in range(3) if L[k, i] >= top * (1 - 1e-12)]
        ref[k] = min(cands, key=lambda i: cells[k, i])
    return _rotate_newest_first(cells, ref)


def _square_template():
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]], dtype=float)
    c = [[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]]
    return v, c


def _lshape_template():
    # three unit squares, diagonals through the reentrant corner (0, 0)
    v = np.array([[-1, -1], [0, -1], [1, -1],
                  [-1, 0], [0, 0], [1, 0],
                  [-1, 1], [0, 1]], dtype=float)
    c = [[3, 4, 6], [4, 7, 6],      # (-1,0)x(0,1)
         [0, 1, 4], [0, 4, 3],      # (-1,0)x(-1,0)
         [1, 2, 4], [2, 5, 4]]      # (0,1)x(-1,0)
    return v, c


def _slit_template():
    # (-1,1)^2 cut along [0,1]x{0}; vertex 8 is the lower copy of (1, 0)
    v = np.array([[-1, -1], [0, -1], [1, -1],
                  [-1, 0], [0, 0], [1, 0],
                  [-1, 1], [0, 1], [1, 1],
                  [1, 0]], dtype=float)
    c = [[4, 5, 8], [4, 8, 7],      # (0,1)x(0,1), upper side of the cut
         [3, 4, 6], [4, 7, 6],      # (-1,0)x(0,1)
         [0, 1, 4], [0, 4, 3],      # (-1,0)x(-1,0)
         [1, 2, 4], [2, 9, 4]]      # (0,1)x(-1,0), lower side of the cut
    return v, c


def create_initial_mesh(domain_tag: str) -> Mesh:
    """Fixed initial triangulation for one of the supported domains.

    square: 4-cell criss-cross of (0,1)^2.  lshape: 6 cells bisected once
    along their shared diagonals (12 cells).  slit: 8 cells of (-1,1)^2 with
    the cut vertex at (1, 0) duplicated, refined uniformly once (32 cells) so
    that (0.5, 0) is duplicated as well.
    """
    if domain_tag == "square":
        v, c = _square_template()
        return Mesh(v, _label_longest_edge(v, c), "square")
    if domain_tag == "lshape":
        v, c = _lshape_template()
        base = Mesh(v, _label_longest_edge(v, c), "lshape")
        mesh, _ = refine(base, range(base.n_cells))
    elif domain_tag == "slit":
        v, c = _slit_template()
        base = Mesh(v, _label_longest_edge(v, c), "slit")
        mesh, _ = uniform_refine(base)
    else:
        raise ValueError(f"unknown domain_tag {domain_tag!r}; expected one of {DOMAINS}")
    # the template is T_0: reset the history
    return Mesh(mesh.vertices, mesh.cells, domain_tag)


def _bisect_marked_edges(mesh: Mesh, edge_marked: np.ndarray) -> tuple[Mesh, CellMap]:
    """Bisect every cell according to its marked edges (refinement edge included)."""
    c2e = mesh.cell_edges
    ne_new = int(edge_marked.sum())
    mid = np.full(len(mesh.edges), -1, dtype=np.int64)
    mid[edge_marked] = mesh.n_vertices + np.arange(ne_new)
    ev = mesh.edges[edge_marked]
    new_vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[ev[:, 0]] + mesh.vertices[ev[:, 1]])])

    c = mesh.cells
    m0 = mid[c2e[:, 0]]
    m1 = mid[c2e[:, 1]]
    m2 = mid[c2e[:, 2]]
    mk = edge_marked[c2e]
    bis = mk[:, 0]
    left = bis & mk[:, 2]     # child (m0, v0, v1) is bisected again on edge (v0, v1)
    right = bis & mk[:, 1]    # child (m0, v2, v0) is bisected again on edge (v2, v0)

    # up to 4 children per cell, in a fixed local order; unused slots dropped
    nc = mesh.n_cells
    slots = np.full((nc, 4, 3), -1, dtype=np.int64)
    depth = np.zeros((nc, 4), dtype=np.int64)
    used = np.zeros((nc, 4), dtype=bool)

    keep = ~bis
    slots[keep, 0] = c[keep]
    used[keep, 0] = True

    v0, v1, v2 = c[:, 0], c[:, 1], c[:, 2]
    # left child (m0, v0, v1)
    a = bis & ~left
    slots[a, 0] = np.stack([m0, v0, v1], axis=1)[a]
    depth[a, 0] = 1
    used[a, 0] = True
    a = left
    slots[a, 0] = np.stack([m2, m0, v0], axis=1)[a]
    slots[a, 1] = np.stack([m2, v1, m0], axis=1)[a]
    depth[a, :2] = 2
    used[a, :2] = True
    # right child (m0, v2, v0)
    a = bis & ~right
    slots[a, 2] = np.stack([m0, v2, v0], axis=1)[a]
    depth[a, 2] = 1
    used[a, 2] = True
    a = right
    slots[a, 2] = np.stack([m1, m0, v2], axis=1)[a]
    slots[a, 3] = np.stack([m1, v0, m0], axis=1)[a]
    depth[a, 2:] = 2
    used[a, 2:] = True

    flat_used = used.reshape(-1)
    new_cells = slots.reshape(-1, 3)[flat_used]
    parent = np.repeat(np.arange(nc), 4)[flat_used]
    gen = (mesh.generation[:, None] + depth).reshape(-1)[flat_used]
    fine = Mesh(new_vertices, new_cells, mesh.domain_tag, parent, gen)
    cmap = CellMap(parent, nc, frozenset(np.flatnonzero(bis).tolist()))
    return fine, cmap


def refine(mesh: Mesh, marked) -> tuple[Mesh, CellMap]:
    """NVB refinement of the marked cells followed by conformity closure."""
    marked = np.fromiter((int(k) for k in marked), dtype=np.int64)
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_cells):
        raise IndexError("marked cell id out of range")
    c2e = mesh.cell_edges
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[c2e[marked, 0]] = True
    # closure: any cell with a marked edge must bisect its refinement edge
    while True:
        need = edge_marked[c2e].any(axis=1) & ~edge_marked[c2e[:, 0]]
        if not need.any():
            break
        edge_marked[c2e[need, 0]] = True
    return _bisect_marked_edges(mesh, edge_marked)


def uniform_refine(mesh: Mesh) -> tuple[Mesh, CellMap]:
    """Two bisection sweeps: every cell is split into four."""
    return _bisect_marked_edges(mesh, np.ones(len(mesh.edges), dtype=bool))


# -- conformity -----------------------------------------------------------

def _on_domain_boundary(tag: str | None, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    if tag == "square":
        return (np.abs(x) < tol) | (np.abs(x - 1) < tol) | (np.abs(y) < tol) | (np.abs(y - 1) < tol)
    outer = (np.abs(np.abs(x) - 1) < tol) | (np.abs(np.abs(y) - 1) < tol)
    if tag == "lshape":
        inner = ((np.abs(x) < tol) & (y > -tol)) | ((np.abs(y) < tol) & (x > -tol))
        return outer | inner
    if tag == "slit":
        return outer | ((np.abs(y) < tol) & (x > -tol))
    # unknown geometry: trust the topology
    return np.ones(len(pts), dtype=bool)


def check_conformity(mesh: Mesh) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    out: list[str] = []
    if mesh.n_cells < 3:
        out.append(f"mesh has {mesh.n_cells} cells, at least 3 required")
    bad = np.flatnonzero(mesh.signed_areas <= 0)
    if bad.size:
        out.append(f"{bad.size} cells not counterclockwise (first: {bad[0]})")
    if mesh.n_cells == 0:
        return out
    counts = mesh.edge_cell_count
    over = np.flatnonzero(counts > 2)
    if over.size:
        out.append(f"{over.size} edges with more than 2 incident cells")
    lone = np.flatnonzero(counts == 1)
    e = mesh.edges[lone]
    mids = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    orphan = lone[~_on_domain_boundary(mesh.domain_tag, mids)]
    if orphan.size:
        oe = mesh.edges[orphan]
        a = mesh.vertices[oe[:, 0]]
        b = mesh.vertices[oe[:, 1]]
        cand = np.unique(oe.ravel())
        hanging = []
        for vid in cand.tolist():
            p = mesh.vertices[vid]
            d = b - a
            t = ((p - a) * d).sum(axis=1) / (d * d).sum(axis=1)
            cross = d[:, 0] * (p[1] - a[:, 1]) - d[:, 1] * (p[0] - a[:, 0])
            inside = (np.abs(cross) <= 1e-12 * (d * d).sum(axis=1)) & (t > 1e-12) & (t < 1 - 1e-12)
            if inside.any():
                hanging.append(vid)
        for vid in hanging:
            out.append(f"hanging vertex {vid} at {mesh.vertices[vid].tolist()}")
        if not hanging:
            out.append(f"{orphan.size} interior edges with a single incident cell")
    return out
