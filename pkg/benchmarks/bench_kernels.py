"""Compare compiled kernels with the LDME_DISABLE_NUMBA fallback.

    python3 benchmarks/bench_kernels.py [--n 30000] [--repeats 5] [--json out.json]
"""

import argparse
import json

from ldme.bench import compare, format_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=30000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the raw timings here")
    args = ap.parse_args()
    result = compare(args.n, args.repeats)
    print(format_table(result))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()
