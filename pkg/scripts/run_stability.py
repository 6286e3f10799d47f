"""Inf-sup constants of the structured and the equal-degree spaces, written as JSON."""

import argparse
import json
from pathlib import Path

from hriga.geometry import catalog
from hriga.verification import infsup_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--geometry", default="deformed_square")
    ap.add_argument("--inverse-h", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    geom = catalog(args.geometry)
    hs = [1 / m for m in args.inverse_h]
    records = []
    for kw in ({}, {"naive": True}, {"aux": True}):
        res = infsup_probe(geom, hs, p=args.degree, **kw)
        print(res.label, [f"{v:.4g}" for v in res.values], "pass" if res.passed else "FAIL")
        records += res.records()
    (out / "stability.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
