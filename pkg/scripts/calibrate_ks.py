"""Null calibration of the KS threshold for the scaling checks.

Under zeta = 1 every replica carries the same slice, so the slice is computed
once and only the keyed sampling and jitter are repeated; the keys follow
``run_scaling`` exactly (replica seed ``replica_seed(seed, r)``).  The t = 1
marginal of backward-sampled paths is the endpoint draw, so this also covers
path sampling.  The statistic per seed is the largest KS over coordinates.

    python3 scripts/calibrate_ks.py --d 1 --n 400 --replicas 1 --samples 10000
    python3 scripts/calibrate_ks.py --d 3 --n 200 --replicas 200 --samples 100 --c 3
"""

import argparse
import json
import math
import time

import numpy as np

from polymerlab.dp_core import EXACT, Truncation, run
from polymerlab.env import EnvironmentField, EnvironmentSpec, replica_seed
from polymerlab.metrics import marginal_report
from polymerlab.sampler import jitter_uniforms, sample_endpoints


def null_statistics(d, n, replicas, samples, truncation, seeds):
    slc = run(EnvironmentField(EnvironmentSpec("Constant")), d, n, truncation)
    idx = np.arange(samples)
    ks, cov = [], []
    for s in seeds:
        ends, jit = [], []
        for r in range(replicas):
            key = replica_seed(s, r)
            ends.append(sample_endpoints(slc, key, r, idx))
            jit.append(jitter_uniforms(key, r, idx, d))
        pos = np.concatenate(ends) / math.sqrt(n)
        reps = marginal_report(pos, n, 1.0, np.concatenate(jit))
        ks.append(max(r.ks for r in reps))
        cov.append(reps[0].covariance_deviation)
    return np.array(ks), np.array(cov)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--d", type=int, required=True)
    ap.add_argument("--n", type=int, required=True)
    ap.add_argument("--replicas", type=int, default=1)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--c", type=float, default=None, help="truncation constant (exact if omitted)")
    ap.add_argument("--seeds", type=int, default=100)
    ap.add_argument("--first-seed", type=int, default=1)
    ap.add_argument("--quantile", type=float, default=0.99)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    t0 = time.time()
    trunc = EXACT if args.c is None else Truncation(args.c)
    seeds = range(args.first_seed, args.first_seed + args.seeds)
    ks, cov = null_statistics(args.d, args.n, args.replicas, args.samples, trunc, seeds)
    result = {
        "d": args.d,
        "n": args.n,
        "replicas": args.replicas,
        "samples": args.samples,
        "truncation": args.c,
        "seeds": [seeds.start, seeds.stop - 1],
        "quantile": args.quantile,
        "ks_threshold": float(np.quantile(ks, args.quantile)),
        "ks_median": float(np.median(ks)),
        "ks_max": float(ks.max()),
        "covariance_deviation_max": float(cov.max()),
        "elapsed_s": round(time.time() - t0, 1),
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
