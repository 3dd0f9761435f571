"""Compare the numba kernels against the pure-numpy fallback.

Each backend runs in its own child process, selected through the
PCQA_DISABLE_NUMBA environment flag, so the switch is exercised exactly as a
user would.  Reports best-of-N wall time per stage and checks that both
backends produce identical scores.

    python benchmarks/bench_backends.py --points 200000 --repeat 3
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def make_pair(n, seed):
    # voxelized height field, roughly square, plus a jittered distorted copy
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n)))
    g = np.arange(side, dtype=np.float64)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    zz = np.round(side / 25 * np.sin(xx / (side / 14)) * np.cos(yy / (side / 11)))
    pos = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])[:n]
    col = rng.integers(0, 256, (n, 3), dtype=np.uint8)
    dpos = np.round(pos + rng.normal(scale=0.7, size=pos.shape))
    dcol = np.clip(col.astype(int) + rng.integers(-12, 13, col.shape), 0, 255).astype(np.uint8)
    return pos, col, dpos, dcol


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def worker(n, repeat, seed):
    from pcqa import _accel
    from pcqa.metrics import compute_features
    from pcqa.normals import normals_from_neighbors
    from pcqa.pointcloud import PointCloud
    from pcqa.spatial import SpatialIndex

    pos, col, dpos, dcol = make_pair(n, seed)
    ref, dist = PointCloud(pos, col), PointCloud(dpos, dcol)
    # compile (or load cached) kernels outside the timed region
    small = PointCloud(pos[:50], col[:50])
    compute_features(small, small)

    res = {"backend": _accel.backend(), "threads": _accel.num_threads()}
    res["build"], index = best_of(lambda: SpatialIndex(pos), repeat)
    res["knn20"], (nbr, _) = best_of(lambda: index.query_self(20), repeat)
    res["nearest"], _ = best_of(lambda: index.nearest_batch(dpos), repeat)
    res["normals"], _ = best_of(lambda: normals_from_neighbors(pos, nbr), repeat)
    res["features"], fv = best_of(lambda: compute_features(ref, dist), repeat)
    res["scores"] = [float(s) for s in fv.scores()]
    print(json.dumps(res))


def run_backend(name, args):
    env = dict(os.environ)
    env["PCQA_DISABLE_NUMBA"] = "1" if name == "numpy" else "0"
    cmd = [sys.executable, __file__, "--worker", "--points", str(args.points),
           "--repeat", str(args.repeat), "--seed", str(args.seed)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.points, args.repeat, args.seed)
        return

    results = {name: run_backend(name, args) for name in ("numba", "numpy")}
    nb, np_ = results["numba"], results["numpy"]
    print(f"{args.points} points, best of {args.repeat}; numba threads: {nb['threads']}")
    print(f"{'stage':<10}{'numba s':>10}{'numpy s':>10}{'speedup':>9}")
    for stage in ("build", "knn20", "nearest", "normals", "features"):
        print(f"{stage:<10}{nb[stage]:>10.3f}{np_[stage]:>10.3f}{np_[stage] / nb[stage]:>8.1f}x")
    same = nb["scores"] == np_["scores"]
    print("scores identical across backends:", same)
    if not same:
        print("  numba:", nb["scores"])
        print("  numpy:", np_["scores"])
        sys.exit(1)


if __name__ == "__main__":
    main()
