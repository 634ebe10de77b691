"""Recompute the square-domain reference eigenvalue and store it as a fixture.

Six uniform refinements of the 4-cell criss-cross mesh, then Richardson
extrapolation of the last two levels assuming an h^4 error (smooth case).
"""
import json
from pathlib import Path

from stokes_afem.assembly import assemble
from stokes_afem.eigsolve import solve_evp
from stokes_afem.mesh2d import create_initial_mesh, uniform_refine
from stokes_afem.references import richardson
from stokes_afem.th_space import build_space

LEVELS = 6


def main():
    mesh = create_initial_mesh("square")
    lams = []
    for level in range(LEVELS + 1):
        space = build_space(mesh)
        lam = solve_evp(assemble(space), tol=1e-12)[0].lam
        lams.append(lam)
        print(f"level {level}: dofs={space.n_dofs} lambda={lam!r}")
        if level < LEVELS:
            mesh, _ = uniform_refine(mesh)
    d1, d2 = lams[-3] - lams[-2], lams[-2] - lams[-1]
    ref = richardson(lams[-2], lams[-1], 4)
    print(f"difference ratio {d1 / d2:.3f} (16 for h^4); extrapolated {ref!r}")
    path = Path(__file__).resolve().parents[1] / "src" / "stokes_afem" / "data" / "references.json"
    data = json.loads(path.read_text()) if path.exists() else {}
    data["square"] = {"lambda": ref, "levels": LEVELS, "uniform_values": lams,
                      "method": "richardson h^4 on the last two uniform levels"}
    path.write_text(json.dumps(data, indent=1) + "\n")


if __name__ == "__main__":
    main()
