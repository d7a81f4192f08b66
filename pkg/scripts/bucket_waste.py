"""Padding waste of resolution bucketing versus random batching over batch sizes."""

import argparse
import csv
from importlib import resources

from pixkit import anyres
from pixkit.numcore import RngState


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--csv", help="id,w,h rows; defaults to the shipped synthetic sizes")
    ap.add_argument("--batch-sizes", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    if args.csv:
        with open(args.csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        text = resources.files("pixkit.data").joinpath("synthetic_sizes.csv").read_text()
        rows = list(csv.DictReader(text.splitlines()))
    items = [(r["id"], int(r["w"]), int(r["h"])) for r in rows]
    cands = anyres.candidate_set()
    print(f"{len(items)} items, {len(cands)} candidate grids")
    print(f"{'batch':>6} {'bucketed':>9} {'random':>9}")
    for bs in args.batch_sizes:
        buck = rand = 0.0
        for s in range(args.seeds):
            buck += anyres.bucket_batches(items, cands, bs, RngState(s)).padding_waste
            rand += anyres.padding_waste(anyres.random_batches(items, bs, RngState(s, 1)), cands)
        print(f"{bs:>6} {buck / args.seeds:>9.4f} {rand / args.seeds:>9.4f}")


if __name__ == "__main__":
    main()
