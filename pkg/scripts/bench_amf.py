"""Wall time of the AMF field, fast (FFT) against oracle (per-voxel windows).

    python3 scripts/bench_amf.py --sizes 16,24,32,48,64 --oracle-max 32 --out bench.csv
"""
import argparse
import csv
import sys

from amfkit.cli import run_bench
from amfkit.config import RunConfig


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="16,24,32,64")
    p.add_argument("--oracle-max", dest="oracle_max", type=int, default=32)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    args = p.parse_args(argv)

    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run_bench(sizes, ["fast", "oracle"], args.oracle_max, args.density, args.seed,
                     RunConfig(workers=args.workers))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        fh.close()

    t = {(r["size"], r["mode"]): r["seconds"] for r in rows}
    for n in sizes:
        if (n, "oracle") in t:
            print(f"# {n}^3: oracle/fast = {t[(n, 'oracle')] / t[(n, 'fast')]:.0f}x", file=sys.stderr)


if __name__ == "__main__":
    main()
