import json

import numpy as np
import pytest

from stokes_afem.mesh2d import (DOMAINS, CellMap, Mesh, check_conformity, create_initial_mesh,
                                refine, uniform_refine)


def _angle_classes(mesh, cells):
    ang = np.sort(mesh.angles()[cells], axis=1)
    return np.unique(np.round(ang, 9), axis=0)


def _random_refine(mesh, rng, steps, k=1):
    for _ in range(steps):
        marked = rng.choice(mesh.n_cells, size=min(k, mesh.n_cells), replace=False)
        mesh, _ = refine(mesh, marked)
        yield mesh


@pytest.mark.parametrize("domain,cells,area", [("square", 4, 1.0), ("lshape", 12, 3.0), ("slit", 32, 4.0)])
def test_initial_meshes(domain, cells, area):
    mesh = create_initial_mesh(domain)
    assert mesh.n_cells == cells
    assert mesh.areas.sum() == pytest.approx(area, abs=1e-12)
    assert check_conformity(mesh) == []
    assert np.all(mesh.signed_areas > 0)
    assert np.all(mesh.generation == 0) and np.all(mesh.parent == -1)


def test_unknown_domain():
    with pytest.raises(ValueError, match="unknown domain"):
        create_initial_mesh("annulus")


def test_lshape_covers_l():
    mesh = create_initial_mesh("lshape")
    cent = mesh.vertices[mesh.cells].mean(axis=1)
    assert not np.any((cent[:, 0] > 0) & (cent[:, 1] > 0))


def test_slit_cut_topology():
    mesh = create_initial_mesh("slit")
    v = mesh.vertices
    on_cut = (np.abs(v[:, 1]) < 1e-14) & (v[:, 0] > 1e-14)
    _, counts = np.unique(np.round(v[on_cut], 12), axis=0, return_counts=True)
    assert (counts == 2).sum() >= 2
    # cells above and below the cut share no edge
    cent = v[mesh.cells].mean(axis=1)
    upper = (cent[:, 0] > 0) & (cent[:, 1] > 0)
    lower = (cent[:, 0] > 0) & (cent[:, 1] < 0)
    eu = set(mesh.cell_edges[upper].ravel().tolist())
    el = set(mesh.cell_edges[lower].ravel().tolist())
    assert eu.isdisjoint(el)
    # every edge on the cut is a boundary edge
    e = mesh.edges
    mid = 0.5 * (v[e[:, 0]] + v[e[:, 1]])
    cut_edges = (np.abs(mid[:, 1]) < 1e-14) & (mid[:, 0] > 0)
    assert np.all(mesh.edge_cell_count[cut_edges] == 1)


def test_single_triangle_bisection():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    fine, cmap = refine(mesh, {0})
    assert fine.n_cells == 2
    assert fine.n_vertices == 4
    assert np.allclose(fine.vertices[3], [0.5, 0.5])
    assert all(3 in c for c in fine.cells.tolist())
    assert cmap.refined_set == frozenset({0})
    assert fine.generation.tolist() == [1, 1]


def test_closure_two_triangle_square():
    # both refinement edges on the diagonal (1,0)-(0,1)
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    mesh = Mesh(v, np.array([[0, 1, 2], [3, 2, 1]]), "square")
    fine, cmap = refine(mesh, {0})
    assert fine.n_cells == 4
    assert cmap.refined_set == frozenset({0, 1})
    assert fine.areas.sum() == pytest.approx(1.0, abs=1e-15)
    assert check_conformity(fine) == []


def test_empty_marking():
    mesh = create_initial_mesh("lshape")
    fine, cmap = refine(mesh, set())
    assert np.array_equal(fine.cells, mesh.cells)
    assert cmap.refined_set == frozenset()


def test_marked_out_of_range():
    mesh = create_initial_mesh("square")
    with pytest.raises(IndexError):
        refine(mesh, {4})


@pytest.mark.parametrize("domain,cells", [("square", 16), ("lshape", 48), ("slit", 128)])
def test_uniform_refine(domain, cells):
    mesh = create_initial_mesh(domain)
    fine, cmap = uniform_refine(mesh)
    assert fine.n_cells == cells
    assert fine.areas.sum() == pytest.approx(mesh.areas.sum(), rel=1e-12)
    assert all(len(d) == 4 for d in cmap.descendants)
    assert check_conformity(fine) == []
    # two bisection sweeps
    once, _ = refine(mesh, range(mesh.n_cells))
    twice, _ = refine(once, range(once.n_cells))
    assert twice.n_cells == cells


def test_cellmap_descendants_and_compose():
    mesh = create_initial_mesh("square")
    m1, c1 = refine(mesh, {0})
    m2, c2 = refine(m1, {0, 1})
    c = c1.compose(c2)
    assert c.n_coarse == mesh.n_cells and c.n_fine == m2.n_cells
    # descendants partition the fine mesh and conserve area
    flat = sorted(k for d in c.descendants for k in d)
    assert flat == list(range(m2.n_cells))
    for k, d in enumerate(c.descendants):
        assert m2.areas[d].sum() == pytest.approx(mesh.areas[k], rel=1e-12)
    assert c1.refined_set <= c.refined_set
    with pytest.raises(ValueError):
        c2.compose(c1)
    ident = CellMap.identity(4)
    assert ident.parent.tolist() == [0, 1, 2, 3]


def test_hanging_node_detected():
    v = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0.5], [1, 1]], dtype=float)
    cells = np.array([[0, 1, 2], [1, 4, 3], [3, 4, 2]])
    mesh = Mesh(v, cells, "square")
    report = check_conformity(mesh)
    assert len(report) == 1
    assert "hanging vertex 3" in report[0]


def test_conformity_other_violations():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 2, 1]]))
    report = check_conformity(mesh)
    assert any("at least 3" in r for r in report)
    assert any("counterclockwise" in r for r in report)


def test_mesh_is_immutable():
    mesh = create_initial_mesh("square")
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


@pytest.mark.parametrize("domain", DOMAINS)
def test_json_roundtrip(domain, tmp_path):
    mesh, _ = refine(create_initial_mesh(domain), {0, 3})
    data = mesh.to_json()
    assert all(len(c) == 4 and c[3] == 0 for c in data["cells"])
    path = tmp_path / "m.json"
    mesh.dump(path)
    back = Mesh.load(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.cells, mesh.cells)
    assert back.domain_tag == domain
    json.loads(path.read_text())


def test_json_honours_refinement_edge():
    data = {"vertices": [[0, 0], [1, 0], [0, 1], [1, 1]], "cells": [[1, 2, 0, 1], [3, 2, 1, 0]],
            "domain_tag": "square"}
    mesh = Mesh.from_json(data)
    # rotated so that the stored refinement edge (ids 0-1) becomes local edge 0
    assert mesh.cells[0].tolist() == [2, 0, 1]
    assert mesh.cells[1].tolist() == [3, 2, 1]


@pytest.mark.parametrize("domain", DOMAINS)
def test_refine_deterministic(domain):
    def seq():
        rng = np.random.default_rng(7)
        return list(_random_refine(create_initial_mesh(domain), rng, 20, k=3))[-1]

    a, b = seq(), seq()
    assert np.array_equal(a.cells, b.cells)
    assert np.array_equal(a.vertices, b.vertices)


@pytest.mark.parametrize("domain", DOMAINS)
def test_random_refine_properties(domain):
    rng = np.random.default_rng(42)
    mesh0 = create_initial_mesh(domain)
    area = mesh0.areas.sum()
    amin = mesh0.angles().min()
    mesh = mesh0
    for mesh in _random_refine(mesh0, rng, 60, k=2):
        assert check_conformity(mesh) == []
        assert abs(mesh.areas.sum() - area) <= 1e-12 * area
    # right-isosceles templates: NVB never creates smaller angles
    assert mesh.angles().min() >= amin - 1e-9


def test_generation_counts_bisections():
    mesh = create_initial_mesh("square")
    fine, _ = uniform_refine(mesh)
    assert np.all(fine.generation == 2)
    assert np.all(fine.parent >= 0)


def test_similarity_classes_generic_triangle():
    # a scalene root cell: NVB descendants fall into at most four shapes
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.1], [0.3, 0.8]]), np.array([[2, 0, 1]]))
    rng = np.random.default_rng(5)
    for mesh in _random_refine(mesh, rng, 150):
        pass
    n = len(_angle_classes(mesh, np.arange(mesh.n_cells)))
    assert 1 < n <= 4
