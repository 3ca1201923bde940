#!/usr/bin/env python3
"""Run the desk-scale simulation studies and the bound check.

Writes results.csv and summary.csv for each study under the output
directory (default results/).  Pass --tiny for a fast smoke run.
"""

import argparse
import sys
from pathlib import Path

from bicoclust.cli import main as cli_main


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory root")
    ap.add_argument("--tiny", action="store_true",
                    help="run the smoke-scale presets instead of desk scale")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    scale = "tiny" if args.tiny else "desk"
    root = Path(args.out)
    for study in ("1", "2", "theorem1"):
        out = root / f"study_{study}"
        code = cli_main(["sim", study, "--scale", scale,
                         "--out", str(out), "--threads", str(args.threads)])
        if code != 0:
            return code
        print(f"study {study}: wrote {out}/results.csv and {out}/summary.csv")
    return 0


if __name__ == "__main__":
    sys.exit(main())
