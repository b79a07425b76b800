"""Compare the pure-Python and compiled tree kernels.

    python3 benchmarks/bench_kernel.py [n]
"""

import json
import sys

from pmtx.harness.bench import bench

if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 100_000
    for row in bench(n=n):
        print(json.dumps(row))
