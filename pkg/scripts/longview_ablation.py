"""Compare the seven long-view features against the raw signal on the context regime."""

import argparse
import json
import logging

from lvcadenet.experiments import longview_vs_raw


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", help="write the per-seed table as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = longview_vs_raw(seeds=range(args.seeds))
    print("seed  long-view  raw")
    for r in out["runs"]:
        print(f"{r['seed']:4d}  {r['longview']:9.4f}  {r['raw']:.4f}")
    print(f"mean  {out['longview']:9.4f}  {out['raw']:.4f}  margin {100 * out['margin']:.1f} pp")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=1)


if __name__ == "__main__":
    main()
