"""Legacy ASCII VTK export of discrete fields on a mapped parametric lattice."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .derham import evaluate_field
from .solver import FieldSolution

MAGIC = "# vtk DataFile Version 3.0"


def lattice(m: int, dim: int) -> np.ndarray:
    """Parametric ``m^dim`` lattice on the unit cube, first coordinate varying fastest."""
    if m < 2:
        raise ValueError("lattice needs at least two points per direction")
    t = np.linspace(0.0, 1.0, m)
    grids = np.meshgrid(*([t] * dim), indexing="ij")
    return np.stack([g.transpose(tuple(reversed(range(dim)))).ravel() for g in grids], axis=1)


def sample_patch(solution: FieldSolution, patch: int, zeta: np.ndarray) -> dict:
    """Physical points and field values at parametric points of one patch."""
    spaces = solution.spaces
    F = spaces.geometry.patches[patch]

    def ev(space, coeffs):
        return evaluate_field(space, patch, space.local_coefficients(coeffs, patch), zeta)["value"]

    u = ev(spaces.u, solution.u)
    return {
        "x": F(zeta),
        "u": u.reshape(len(zeta), -1),
        "sigma": ev(spaces.sigma, solution.sigma).reshape(len(zeta), -1),
        "p": ev(spaces.p, solution.p).reshape(len(zeta), -1),
    }


def _fmt(rows: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in rows)


def write_structured_grid(path, points: np.ndarray, shape: tuple[int, ...], arrays: dict[str, np.ndarray],
                          title: str = "hriga fields") -> Path:
    path = Path(path)
    n_pts = len(points)
    pts3 = np.zeros((n_pts, 3))
    pts3[:, : points.shape[1]] = points
    dims = list(shape) + [1] * (3 - len(shape))
    lines = [MAGIC, title, "ASCII", "DATASET STRUCTURED_GRID", "DIMENSIONS " + " ".join(map(str, dims)),
             f"POINTS {n_pts} double", _fmt(pts3), f"POINT_DATA {n_pts}", f"FIELD FieldData {len(arrays)}"]
    for name, arr in arrays.items():
        arr = np.asarray(arr).reshape(n_pts, -1)
        lines += [f"{name} {arr.shape[1]} {n_pts} double", _fmt(arr)]
    path.write_text("\n".join(lines) + "\n")
    return path


def export_vtk(solution: FieldSolution, path, m: int = 10) -> list[Path]:
    """Write one structured grid per patch (``stem_patchK.vtk`` when there are several)."""
    spaces = solution.spaces
    dim = spaces.dim
    zeta = lattice(m, dim)
    path = Path(path)
    patches = spaces.geometry.patches
    out = []
    for k in range(len(patches)):
        data = sample_patch(solution, k, zeta)
        target = path if len(patches) == 1 else path.with_name(f"{path.stem}_patch{k}{path.suffix or '.vtk'}")
        arrays = {"u": data["u"], "sigma": data["sigma"], "p": data["p"]}
        out.append(write_structured_grid(target, data["x"], (m,) * dim, arrays))
    return out


def read_structured_grid(path) -> dict:
    """Parse a file written by :func:`write_structured_grid`."""
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError("not a legacy VTK file")
    words = " ".join(tokens[4:]).split()
    i = 0

    def take(k):
        nonlocal i
        out = words[i : i + k]
        i += k
        return out

    assert take(1) == ["DIMENSIONS"]
    dims = tuple(int(v) for v in take(3))
    _, n_pts, _ = take(3)
    n_pts = int(n_pts)
    pts = np.array(take(3 * n_pts), dtype=float).reshape(n_pts, 3)
    take(2)
    _, _, n_arr = take(3)
    arrays = {}
    for _ in range(int(n_arr)):
        name, ncomp, _, _ = take(4)
        arrays[name] = np.array(take(int(ncomp) * n_pts), dtype=float).reshape(n_pts, int(ncomp))
    return {"dimensions": dims, "points": pts, "arrays": arrays}
