"""Run the L-continuation through the CLI and print a compact table.

    python scripts/continuation.py --config my.cfg --out out/cont --L 8,12,16,24
"""

import argparse
import json
import os
import sys

from layerlab import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--out", default="out/continuation")
    ap.add_argument("--L", default=None, help="comma-separated strip lengths")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    argv = ["continue-l", "--out", args.out, "--threads", str(args.threads)]
    if args.config:
        argv += ["--config", args.config]
    if args.L:
        argv += ["--L", args.L]
    rc = cli.main(argv)
    if rc:
        sys.exit(rc)
    with open(os.path.join(args.out, "continuation.json")) as fh:
        res = json.load(fh)
    print(f"\n{'L':>6} {'eta_bar':>10} {'l_minus':>9} {'l_plus':>9} {'width':>8}")
    for row in zip(res["L_values"], res["eta_bar"], res["l_minus"], res["l_plus"], res["widths"]):
        print("{:6g} {:10.4f} {:9.3f} {:9.3f} {:8.3f}".format(*row))
    print(f"case {res['case']}, cauchy_ok {res['cauchy_ok']}, widths_stable {res['widths_stable']}")


if __name__ == "__main__":
    main()
