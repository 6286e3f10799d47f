"""Cook membrane: displacement at the midpoint of the loaded edge for a mesh sequence."""

import argparse
from pathlib import Path

from hriga.analysis import COOK_MESHES, REFERENCE_QUADRATURE, case_catalog, probe_trajectory, trajectory_csv

REFERENCE = (-7.248, 16.442)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--degrees", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--meshes", type=int, nargs="+", default=list(COOK_MESHES))
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    case = case_catalog("cook")
    for p in args.degrees:
        rows = probe_trajectory(case, p, p - 2, [1 / n for n in args.meshes], quadrature=REFERENCE_QUADRATURE,
                                callback=lambda r: print(f"p={p} dof={r.dof} ux={r.ux:.4f} uy={r.uy:.4f}"))
        path = out / f"cook_p{p}.csv"
        trajectory_csv(rows, path)
        last = rows[-1]
        print(f"wrote {path}; finest vs reference: ux {last.ux / REFERENCE[0] - 1:+.3%}, "
              f"uy {last.uy / REFERENCE[1] - 1:+.3%}")


if __name__ == "__main__":
    main()
