"""Shared fixtures.  The benchmark runs are expensive and computed once per session."""
import numpy as np
import pytest

from stokes_afem.adaptive import RunConfig, run
from stokes_afem.assembly import assemble
from stokes_afem.eigsolve import solve_evp
from stokes_afem.diagnostics import Level
from stokes_afem.mesh2d import create_initial_mesh, uniform_refine
from stokes_afem.th_space import build_space


def solve_level(mesh, tol=1e-10):
    space = build_space(mesh)
    ops = assemble(space)
    return Level(space, ops, solve_evp(ops, tol=tol)[0])


def uniform_meshes(domain, levels):
    """[(mesh, cmap from previous)] for levels 0..levels."""
    mesh = create_initial_mesh(domain)
    out = [(mesh, None)]
    for _ in range(levels):
        mesh, cmap = uniform_refine(mesh)
        out.append((mesh, cmap))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class _Benchmark:
    """Lazy cache of benchmark runs keyed by (domain, mode)."""

    def __init__(self):
        self._runs = {}

    def get(self, domain, mode):
        key = (domain, mode)
        if key not in self._runs:
            # uniform runs need one extra level on the slit to give six records
            max_dofs = 60_000 if mode == "adaptive" else 150_000
            marked = {}

            def grab(level, mesh, space, ops, pairs, ind, m):
                if mode == "adaptive":
                    cent = mesh.vertices[mesh.cells].mean(axis=1)
                    marked[level] = cent[sorted(m)]

            cfg = RunConfig(domain=domain, mode=mode, theta=0.5, nev=1, max_dofs=max_dofs)
            self._runs[key] = (cfg, run(cfg, on_level=grab), marked)
        return self._runs[key]


@pytest.fixture(scope="session")
def benchmarks():
    return _Benchmark()


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict[int, list] = {}


def record(criterion: int, title: str, label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, [title, []])[1].append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        title, rows = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in rows)
        parts = "; ".join(f"{lab}: {'ok' if p else 'FAIL'} ({d})" for lab, p, d in rows)
        tr.write_line(f"criterion {crit:2d} {'PASS' if ok else 'FAIL'}  {title} | {parts}")
