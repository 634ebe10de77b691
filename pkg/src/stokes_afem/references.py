"""Reference eigenvalues for the benchmark domains."""
from __future__ import annotations

import json
from importlib import resources

# first Stokes eigenvalue, published benchmarks
BENCHMARKS = {"lshape": 32.13269465, "slit": 29.9168629}


def load_fixtures() -> dict:
    text = resources.files("stokes_afem").joinpath("data/references.json").read_text()
    return json.loads(text)


def reference_eigenvalue(domain: str) -> float | None:
    if domain in BENCHMARKS:
        return BENCHMARKS[domain]
    entry = load_fixtures().get(domain)
    return None if entry is None else float(entry["lambda"])


def richardson(lam_coarse: float, lam_fine: float, order: float) -> float:
    """Extrapolate two values on meshes with h ratio 2 for an error ~ h**order."""
    f = 2.0 ** order
    return (f * lam_fine - lam_coarse) / (f - 1)
