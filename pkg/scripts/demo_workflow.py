#!/usr/bin/env python3
"""End-to-end demo: generate a checkerboard, fit, tune, and impute.

Writes everything under the output directory (default demo_out/):
data.csv, the fit/ and tune/ artifact folders, a copy with 5% of the
entries blanked out, and the impute/ folder that fills them back in.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from bicoclust.cli import main as cli_main
from bicoclust.io import format_value, write_matrix_csv
from bicoclust.simbench import CheckerboardSpec, generate_checkerboard


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--p", type=int, default=30)
    ap.add_argument("--sigma", type=float, default=1.5)
    ap.add_argument("--gamma", type=float, default=1200.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    spec = CheckerboardSpec(n=args.n, p=args.p, sigma=args.sigma,
                            n_row_clusters=3, n_col_clusters=3,
                            seed=args.seed)
    X, truth = generate_checkerboard(spec)
    data = root / "data.csv"
    write_matrix_csv(data, X.values)
    print(f"wrote {data} ({args.n}x{args.p}, 3x3 blocks, sigma={args.sigma})")

    code = cli_main(["fit", str(data), "--out", str(root / "fit"),
                     "--gamma", str(args.gamma)])
    if code != 0:
        return code

    code = cli_main(["tune", str(data), "--out", str(root / "tune"),
                     "--seed", str(args.seed)])
    if code != 0:
        return code

    rng = np.random.default_rng(args.seed)
    masked = X.values.copy().astype(object)
    holes = rng.random(masked.shape) < 0.05
    lines = []
    for i in range(masked.shape[0]):
        cells = ["NA" if holes[i, j] else format_value(masked[i, j])
                 for j in range(masked.shape[1])]
        lines.append(",".join(cells))
    gappy = root / "data_with_gaps.csv"
    gappy.write_text("\n".join(lines) + "\n")
    print(f"wrote {gappy} ({int(holes.sum())} entries blanked)")

    return cli_main(["impute", str(gappy), "--out", str(root / "impute"),
                     "--gamma", str(args.gamma)])


if __name__ == "__main__":
    sys.exit(main())
