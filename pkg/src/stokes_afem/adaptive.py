"""SOLVE - ESTIMATE - MARK - REFINE driver, uniform driver, and rate fitting."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
import numpy as np

from .assembly import assemble
from .diagnostics import Level, identity_II_check
from .eigsolve import DEFAULT_TOL, EigenSolverError, solve_evp
from .estimator import compute_indicators, divergence_jump_ratio, global_eta, mark_dorfler
from .mesh2d import DOMAINS, create_initial_mesh, refine, uniform_refine
from .references import reference_eigenvalue
from .th_space import build_space, prolongate

log = logging.getLogger(__name__)

@dataclass
class RunConfig:
    domain: str = "lshape"
    theta: float = 0.5
    nev: int = 1
    max_dofs: int = 60_000
    max_levels: int = 60
    eig_tol: float = DEFAULT_TOL
    mode: str = "adaptive"
    lam_ref: float | None = None
    use_reference: bool = True

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.mode not in ("adaptive", "uniform"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.nev < 1 or self.max_levels < 1:
            raise ValueError("nev and max_levels must be positive")
        if self.lam_ref is None and self.use_reference:
            self.lam_ref = reference_eigenvalue(self.domain)


@dataclass
class RunRecord:
    level: int
    cells: int
    n_u: int
    n_p: int
    lam: list[float]
    eta: float
    marked: int
    sqrt_err: float | None
    t_solve: float
    t_estimate: float
    t_refine: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def dofs(self) -> int:
        return self.n_u + self.n_p


class LevelError(RuntimeError):
    def __init__(self, level: int, cause: Exception):
        super().__init__(f"level {level}: {cause}")
        self.level = level


def run(config: RunConfig, on_level=None) -> list[RunRecord]:
    """Run the loop until the next mesh would exceed ``max_dofs`` or ``max_levels``.

    ``on_level(level, mesh, space, ops, pairs, indicators, marked)`` is called
    once per level, before refinement.
    """
    mesh = create_initial_mesh(config.domain)
    records: list[RunRecord] = []
    prev = None            # (Level, tracked u prolongated later, cmap to current)
    start = None
    cmap = None
    for level in range(config.max_levels):
        t0 = time.perf_counter()
        space = build_space(mesh)
        if level > 0 and space.n_dofs > config.max_dofs:
            break
        ops = assemble(space)
        warm = None
        if prev is not None:
            warm = np.column_stack([prolongate(prev.space, space, cmap, pr.c).u for pr in start])
        try:
            pairs = solve_evp(ops, nev=config.nev, tol=config.eig_tol, start=warm)
        except EigenSolverError as exc:
            raise LevelError(level, exc) from exc
        k = 0
        if prev is not None and config.nev > 1:
            tracked_prev = warm[:, start_index]
            overlaps = [abs(pr.c.u @ (ops.M @ tracked_prev)) for pr in pairs]
            k = int(np.argmax(overlaps))
        pair = pairs[k]
        t_solve = time.perf_counter() - t0

        t0 = time.perf_counter()
        ind = compute_indicators(space, ops, pair)
        eta = global_eta(ind)
        t_est = time.perf_counter() - t0

        diag = {"tracked": k, "div_jump_ratio": divergence_jump_ratio(space, pair)}
        if prev is not None:
            rep = identity_II_check(prev, Level(space, ops, pair), cmap)
            diag["identity2_rel_gap"] = rep.rel_gap
        err = None
        if config.lam_ref is not None:
            err = math.sqrt(abs(config.lam_ref - pair.lam))
            diag["effectivity"] = eta ** 2 / err ** 2 if err > 0 else math.inf

        t0 = time.perf_counter()
        last = level == config.max_levels - 1
        if config.mode == "adaptive":
            marked = mark_dorfler(ind, config.theta)
        else:
            marked = set(range(mesh.n_cells))
        if on_level is not None:
            on_level(level, mesh, space, ops, pairs, ind, marked)
        if not last:
            if config.mode == "adaptive":
                new_mesh, new_cmap = refine(mesh, sorted(marked))
            else:
                new_mesh, new_cmap = uniform_refine(mesh)
        t_ref = time.perf_counter() - t0

        rec = RunRecord(level, mesh.n_cells, space.n_u, space.n_p, [p.lam for p in pairs],
                        eta, len(marked), err, t_solve, t_est, t_ref, diag)
        records.append(rec)
        log.info("level %d: cells=%d dofs=%d lam=%.10f eta=%.3e marked=%d",
                 level, rec.cells, rec.dofs, pair.lam, eta, rec.marked)
        if last:
            break
        prev = Level(space, ops, pair)
        start = pairs
        start_index = k
        mesh, cmap = new_mesh, new_cmap
    return records


def fit_rate(records, x_field: str = "dofs", y_field: str = "sqrt_err", tail: int | None = None) -> float:
    """Decay rate -d log(y) / d log(x) by least squares over the last ``tail`` records."""
    rows = list(records)[-tail:] if tail else list(records)
    if len(rows) < 3:
        raise ValueError("at least three records are needed")

    def get(r, name):
        return r[name] if isinstance(r, dict) else getattr(r, name)

    x = np.array([float(get(r, x_field)) for r in rows])
    y = np.array([float(get(r, y_field)) for r in rows])
    if np.any(y <= 0) or np.any(x <= 0):
        raise ValueError("rate fitting needs positive values")
    slope = np.polyfit(np.log(x), np.log(y), 1)[0]
    return float(-slope)


CSV_FIXED = ["level", "cells", "n_u", "n_p"]
CSV_TAIL = ["eta", "marked", "sqrt_err", "t_solve", "t_estimate", "t_refine"]


def records_to_csv(records: list[RunRecord], timings: bool = True) -> str:
    nev = len(records[0].lam) if records else 1
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIXED + [f"lambda{i + 1}" for i in range(nev)] + CSV_TAIL)
    for r in records:
        times = [r.t_solve, r.t_estimate, r.t_refine] if timings else [0.0, 0.0, 0.0]
        w.writerow([r.level, r.cells, r.n_u, r.n_p, *(repr(x) for x in r.lam), repr(r.eta), r.marked,
                    "" if r.sqrt_err is None else repr(r.sqrt_err), *(f"{t:.6f}" for t in times)])
    return buf.getvalue()


def records_to_json(config: RunConfig, records: list[RunRecord], diagnostics: dict | None = None) -> dict:
    return {
        "config": asdict(config),
        "records": [asdict(r) for r in records],
        "diagnostics": diagnostics or {},
    }
