"""Convergence tables for the 2D manufactured cases, one CSV per degree."""

import argparse
from pathlib import Path

from hriga.analysis import DEFAULT_QUADRATURE, REFERENCE_QUADRATURE, case_catalog, convergence_study

HS = {
    "deformed_square": [1 / 2, 1 / 4, 1 / 6, 1 / 8, 1 / 10],
    "incompressible": [1 / 2, 1 / 4, 1 / 6, 1 / 8],
    "deformed_square_9patch": [1.0, 1 / 2, 1 / 3, 1 / 4],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("case", choices=sorted(HS))
    ap.add_argument("--degrees", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--out", default="results")
    ap.add_argument("--reference-quadrature", action="store_true", help="p+1 Gauss points everywhere")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    quad = REFERENCE_QUADRATURE if args.reference_quadrature else DEFAULT_QUADRATURE
    case = case_catalog(args.case)
    for p in args.degrees:
        rep = convergence_study(case, p, 0, HS[args.case], quadrature=quad,
                                callback=lambda r: print(f"p={p} h={r.h:.4g} sigma={r.err_sigma_hdiv:.6e} "
                                                         f"u={r.err_u_l2:.6e} p={r.err_p_l2:.6e}"))
        path = out / f"{args.case}_p{p}.csv"
        rep.to_csv(path)
        slopes = ", ".join(f"{c}={rep.fitted_rate(c, last=3):.2f}" for c in ("err_sigma_hdiv", "err_u_l2", "err_p_l2"))
        print(f"wrote {path}; slopes over the last three meshes: {slopes}")


if __name__ == "__main__":
    main()
