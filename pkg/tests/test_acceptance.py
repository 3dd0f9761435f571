"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines go
straight to the terminal (not captured) so they appear in tee'd logs.
"""
import csv
import math
import time

import numpy as np
import pytest

from pcqa import _accel
from pcqa.cli import main
from pcqa.evaluation import fit_logistic4, logistic4, srocc
from pcqa.metrics import MetricConfig, compute_features, p2plane_terms, score_p2plane
from pcqa.normals import estimate_normals
from pcqa.ply import load_ply, save_ply
from pcqa.pointcloud import PointCloud
from pcqa.spatial import SpatialIndex
from pcqa.svr import SvrHyperparams, load_model, rbf_kernel, save_model, train

import oracle
import svr_oracle
from conftest import fibonacci_sphere, fixture_clouds, jittered_plane, random_cloud, random_rotation

KEYS = ("s1", "s2", "s3", "s4", "s5")


class Verdict:
    """Collects named checks for one criterion and reports them in a single line."""

    def __init__(self, number, title, capsys):
        self.number = number
        self.title = title
        self.capsys = capsys
        self.failures = []
        self.notes = []

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)

    def note(self, text):
        self.notes.append(text)

    def finish(self):
        status = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.notes + [f"failed: {f}" for f in self.failures])
        with self.capsys.disabled():
            print(f"\n[criterion {self.number}] {status} {self.title} ({detail})")
        assert not self.failures, self.failures


@pytest.fixture
def verdict(capsys):
    def make(number, title):
        return Verdict(number, title, capsys)
    return make


def _warm_up():
    # one-time JIT compilation (or cache load) is not part of the measured runtime
    c = random_cloud(np.random.default_rng(0), 30)
    compute_features(c, c)


# 1 ----------------------------------------------------------------------


def test_criterion_1_identity(tmp_path, verdict):
    v = verdict(1, "identity suite on PLY fixtures")
    _warm_up()
    clouds = fixture_clouds(np.random.default_rng(1))
    t0 = time.perf_counter()
    for name, c in clouds.items():
        path = tmp_path / f"{name}.ply"
        save_ply(c, path)
        loaded = load_ply(path)
        s = compute_features(loaded, loaded).scores()
        v.check(s == (1.0, 1.0, 1.0, 1.0, 1.0), f"{name} -> {s}")
    elapsed = time.perf_counter() - t0
    v.check(len(clouds) >= 5, "at least five fixtures")
    v.check(elapsed < 5.0, f"runtime {elapsed:.2f}s < 5s")
    v.note(f"{len(clouds)} fixtures, {elapsed:.2f}s")
    v.finish()


# 2 ----------------------------------------------------------------------


def test_criterion_2_oracle(verdict):
    v = verdict(2, "S1-S5 vs O(N^2) oracle, 20 pairs, 1e-12")
    _warm_up()
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(20):
        n_r, n_d = (int(n) for n in rng.integers(5, 501, 2))
        ref = random_cloud(rng, n_r, scale=float(rng.uniform(0.5, 50)))
        if trial % 2:
            # distorted copy near the reference: the realistic regime
            keep = rng.choice(n_r, max(1, n_r * 3 // 4), replace=False)
            dist = PointCloud(ref.positions[keep] + rng.normal(scale=0.01, size=(len(keep), 3)),
                              rng.integers(0, 256, (len(keep), 3), dtype=np.uint8))
        else:
            dist = random_cloud(rng, n_d)
        got = compute_features(ref, dist)
        exp = oracle.scores(ref.positions, ref.colors, dist.positions, dist.colors)
        for k in KEYS:
            err = abs(getattr(got, k) - exp[k])
            worst = max(worst, err)
            v.check(err <= 1e-12, f"pair {trial} {k}: |diff|={err:.3g}")
    elapsed = time.perf_counter() - t0
    v.check(elapsed < 30.0, f"runtime {elapsed:.2f}s < 30s")
    v.note(f"max |diff| {worst:.3g}, {elapsed:.2f}s")
    v.finish()


# 3 ----------------------------------------------------------------------


def test_criterion_3_geometry(verdict):
    v = verdict(3, "plane offset, tangential shift, p2plane dominance")
    rng = np.random.default_rng(3)
    pos = jittered_plane(rng, 20)
    gray = np.full((len(pos), 3), 128, np.uint8)
    ref = estimate_normals(PointCloud(pos, gray))
    for h in (0.1, 0.5, 1.0):
        e, s = score_p2plane(ref, PointCloud(pos + [0, 0, h], gray))
        v.check(abs(e - h * h) <= 1e-9, f"h={h}: E={e!r}")
        v.check(abs(s - 1 / (1 + h * h)) <= 1e-9, f"h={h}: S2={s!r}")
        fv = compute_features(PointCloud(pos, gray), PointCloud(pos + [0, 0, h], gray))
        v.check(abs(fv.e_p2plane - h * h) <= 1e-9, f"pipeline h={h}: E={fv.e_p2plane!r}")
    shifted = PointCloud(pos + [0.2, 0.15, 0.0], gray)
    fv = compute_features(PointCloud(pos, gray), shifted)
    v.check(fv.s2 >= 0.999 and fv.s1 < 1.0, f"tangential: S2={fv.s2}, S1={fv.s1}")
    v.note(f"tangential S2={fv.s2:.6f} S1={fv.s1:.6f}")
    for trial in range(10):
        r = estimate_normals(random_cloud(rng, 200))
        d = random_cloud(rng, 150)
        nn, d2 = SpatialIndex(r.positions).nearest_batch(d.positions)
        terms = p2plane_terms(d.positions, r.positions, r.normals, nn)
        v.check(bool(np.all(terms <= d2 * (1 + 1e-12))), f"dominance pair {trial}")
        e_plane = score_p2plane(r, d)[0]
        v.check(e_plane <= float(np.mean(d2)) * (1 + 1e-12), f"mean dominance pair {trial}")
    v.finish()


# 4 ----------------------------------------------------------------------


def test_criterion_4_defaults(verdict):
    v = verdict(4, "defaults K3=20 K4=5 sampling on; no-sampling ablation differs")
    cfg = MetricConfig()
    v.check((cfg.k3, cfg.k4, cfg.sampling) == (20, 5, True), f"config {cfg}")
    from pcqa.cli import build_parser
    args = build_parser().parse_args(["score", "--ref", "a", "--dist", "b"])
    v.check((args.k3, args.k4, args.no_sampling) == (20, 5, False), "CLI defaults")
    rng = np.random.default_rng(4)
    ref = random_cloud(rng, 2000, scale=20.0)
    keep = rng.choice(2000, 1200, replace=False)
    noisy = PointCloud(ref.positions[keep] + rng.normal(scale=0.4, size=(1200, 3)),
                       np.clip(ref.colors[keep].astype(int) + rng.integers(-25, 26, (1200, 3)), 0, 255))
    on = compute_features(ref, noisy)
    off = compute_features(ref, noisy, MetricConfig(sampling=False))
    v.check(on.s3 != off.s3 and on.s4 != off.s4, f"S3 {on.s3} vs {off.s3}, S4 {on.s4} vs {off.s4}")
    v.note(f"S3 {on.s3:.4f}/{off.s3:.4f}, S4 {on.s4:.4f}/{off.s4:.4f}")
    v.finish()


# 5 ----------------------------------------------------------------------


def test_criterion_5_normals(verdict):
    v = verdict(5, "normals: planes 1e-6, sphere 5 deg, rotation 1e-6")
    rng = np.random.default_rng(5)
    for backend in ("numba", "numpy"):
        prev = _accel.set_backend(backend)
        try:
            black = lambda p: PointCloud(p, np.zeros((len(p), 3), np.uint8))  # noqa: E731
            n = estimate_normals(black(jittered_plane(rng, 15))).normals
            v.check(bool(np.all(np.abs(n[:, 2]) >= 1 - 1e-6)), f"{backend}: plane z=0")
            shift = np.array([1.0, 2.0, -2.0]) / 3.0
            rot = random_rotation(rng)
            tilted = jittered_plane(rng, 15) @ rot.T
            n = estimate_normals(black(tilted)).normals
            v.check(bool(np.all(np.abs(n @ rot[:, 2]) >= 1 - 1e-6)), f"{backend}: tilted plane")
            sph = fibonacci_sphere(500, 3.0)
            n = estimate_normals(black(sph)).normals
            worst = float(np.degrees(np.arccos(np.clip(np.abs(np.sum(n * sph / 3.0, axis=1)).min(), 0, 1))))
            v.check(worst <= 5.0, f"{backend}: sphere worst {worst:.3f} deg")
            pts = rng.normal(size=(500, 3)) * [4.0, 2.0, 0.3]
            a = estimate_normals(black(pts)).normals
            b = estimate_normals(black(pts @ rot.T + shift)).normals
            v.check(bool(np.all(np.abs(np.sum((a @ rot.T) * b, axis=1)) >= 1 - 1e-6)), f"{backend}: rotation")
        finally:
            _accel.set_backend(prev)
        v.note(f"{backend} sphere worst {worst:.3f} deg")
    v.finish()


# 6 ----------------------------------------------------------------------


def _kkt_ok(model, x, y, tol):
    xs = model.standardize(x)
    beta = np.zeros(len(x))
    for sv, b in zip(model.support_vectors, model.coefficients):
        beta[np.flatnonzero(np.all(xs == sv, axis=1))[0]] = b
    r = y - model.predict(x)
    eps, C = model.epsilon, model.C
    ok = abs(beta.sum()) <= 1e-6 * C and bool(np.all(np.abs(beta) <= C))
    ok &= bool(np.all(np.abs(r[beta == 0]) <= eps + tol))
    ok &= bool(np.all(r[beta > 0] >= eps - tol)) and bool(np.all(r[beta < 0] <= -eps + tol))
    free = (beta != 0) & (np.abs(beta) < C)
    ok &= bool(np.all(np.abs(np.abs(r[free]) - eps) <= tol))
    return ok and model.converged and model.kkt_violation <= tol, beta


def test_criterion_6_svr(tmp_path, verdict):
    v = verdict(6, "SVR: KKT, PG-oracle objective, sin RMSE, save/load")
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst_gap = 0.0
    for trial in range(10):
        n = int(rng.integers(5, 51))
        d = int(rng.integers(1, 6))
        x = rng.normal(size=(n, d))
        y = np.sin(x[:, 0]) + rng.normal(scale=0.3, size=n)
        tol = 1e-6
        m = train(x, y, SvrHyperparams(C=float(rng.uniform(0.5, 5.0)), kkt_tolerance=tol))
        ok, beta = _kkt_ok(m, x, y, tol)
        v.check(ok, f"(a) problem {trial} feasibility/KKT")
        xs = m.standardize(x)
        _, ref = svr_oracle.solve(rbf_kernel(xs, xs, m.gamma), y, m.C, m.epsilon)
        gap = abs(m.dual_objective - ref) / max(abs(ref), 1e-12)
        worst_gap = max(worst_gap, gap)
        v.check(gap <= 1e-4, f"(b) problem {trial} relative gap {gap:.3g}")
    x = np.linspace(0.0, 1.0, 200)[:, None]
    y = np.sin(2 * np.pi * x[:, 0])
    m = train(x, y, SvrHyperparams(C=10, epsilon=0.01, gamma=50))
    ok, _ = _kkt_ok(m, x, y, 1e-3)
    v.check(ok, "(a) sin model feasibility/KKT at default tolerance")
    rmse = float(np.sqrt(np.mean((m.predict(x) - y) ** 2)))
    v.check(rmse <= 0.05, f"(c) sin RMSE {rmse:.4g}")
    save_model(m, tmp_path / "m.json")
    q = rng.normal(size=(100, 1))
    v.check(load_model(tmp_path / "m.json").predict(q).tobytes() == m.predict(q).tobytes(), "(d) round trip")
    elapsed = time.perf_counter() - t0
    v.check(elapsed < 60.0, f"runtime {elapsed:.1f}s < 60s")
    v.note(f"worst objective gap {worst_gap:.2g}, sin RMSE {rmse:.4f}, {elapsed:.1f}s")
    v.finish()


# 7 ----------------------------------------------------------------------


def test_criterion_7_evaluation(verdict):
    v = verdict(7, "SROCC closed form, tie oracle, monotone invariance, 4PL recovery")
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(3, 200))
        x = rng.permutation(n).astype(float)
        y = rng.permutation(n).astype(float)
        closed = 1 - 6 * np.sum((x - y) ** 2) / (n * (n * n - 1))
        v.check(abs(srocc(x, y) - closed) <= 1e-12, f"closed form n={n}")
        xt = rng.integers(0, 6, 30).astype(float)
        yt = rng.integers(0, 6, 30).astype(float)
        exp = oracle.pearson(oracle.average_ranks(xt), oracle.average_ranks(yt))
        v.check(abs(srocc(xt, yt) - exp) <= 1e-12, "ties vs O(n^2) rank oracle")
        xr, yr = rng.normal(size=40), rng.normal(size=40)
        base = srocc(xr, yr)
        for name, t in (("exp", np.exp), ("cube", lambda u: u ** 3), ("affine", lambda u: 2.5 * u + 7)):
            v.check(abs(srocc(t(xr), yr) - base) <= 1e-12 and abs(srocc(xr, t(yr)) - base) <= 1e-12, name)
    worst = 0.0
    for beta in ((5.0, 1.0, 0.5, 0.1), (90.0, 10.0, 40.0, 8.0), (1.0, 4.0, 3.0, 0.7), (4.0, 2.0, 0.0, 2.0)):
        x = np.sort(rng.uniform(beta[2] - 4 * beta[3], beta[2] + 4 * beta[3], 60))
        y = logistic4(x, *beta)
        fit = fit_logistic4(x, y)
        rel = float(np.sqrt(np.mean((fit(x) - y) ** 2))) / (y.max() - y.min())
        worst = max(worst, rel)
        v.check(rel <= 1e-6, f"4PL {beta}: RMSE/range {rel:.3g}")
    v.note(f"worst 4PL RMSE/range {worst:.2g}")
    v.finish()


# 8 ----------------------------------------------------------------------


def test_criterion_8_batch_determinism(tmp_path, verdict):
    v = verdict(8, "batch output byte-identical for --jobs 1/4/8")
    rng = np.random.default_rng(8)
    rows = []
    for i in range(10):
        ref = random_cloud(rng, int(rng.integers(200, 800)), scale=10.0)
        n = len(ref)
        dist = PointCloud(ref.positions + rng.normal(scale=0.2, size=(n, 3)),
                          np.clip(ref.colors.astype(int) + rng.integers(-20, 21, (n, 3)), 0, 255))
        save_ply(ref, tmp_path / f"ref{i}.ply")
        save_ply(dist, tmp_path / f"dist{i}.ply")
        rows.append([f"ref{i}.ply", f"dist{i}.ply", f"{1 + i * 0.4:.1f}"])
    manifest = tmp_path / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref_path", "dist_path", "mos"])
        w.writerows(rows)
    outputs = {}
    for jobs in (1, 4, 8):
        out = tmp_path / f"out{jobs}.csv"
        code = main(["batch", "--manifest", str(manifest), "--out", str(out), "--jobs", str(jobs)])
        v.check(code == 0, f"jobs={jobs} exit {code}")
        outputs[jobs] = out.read_bytes()
    v.check(outputs[1] == outputs[4] == outputs[8], "byte-identical outputs")
    v.check(len(outputs[1].splitlines()) == 11, "10 rows plus header")
    v.note(f"{len(outputs[1])} bytes each")
    v.finish()


# 9 ----------------------------------------------------------------------


def _million_point_pair(rng):
    # voxelized height field: a 1000 x 1000 grid, integer heights
    g = np.arange(1000, dtype=np.float64)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    zz = np.round(40 * np.sin(xx / 70) * np.cos(yy / 90))
    pos = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])
    base = np.column_stack([xx.ravel() / 4, yy.ravel() / 4, (zz.ravel() + 40) * 3])
    col = np.clip(base + rng.normal(scale=8, size=base.shape), 0, 255).astype(np.uint8)
    ref = PointCloud(pos, col)
    dpos = np.round(pos + rng.normal(scale=0.7, size=pos.shape))
    dcol = np.clip(col.astype(int) + rng.integers(-12, 13, col.shape), 0, 255)
    return ref, PointCloud(dpos, dcol)


@pytest.mark.slow
def test_criterion_9_performance(verdict):
    v = verdict(9, "1M-point pair under 120 s")
    _warm_up()
    ref, dist = _million_point_pair(np.random.default_rng(9))
    t0 = time.perf_counter()
    fv = compute_features(ref, dist, MetricConfig(k3=20, k4=5))
    elapsed = time.perf_counter() - t0
    v.check(len(ref) == 1_000_000, "reference has 1M points")
    v.check(elapsed < 120.0, f"runtime {elapsed:.1f}s < 120s")
    v.check(all(0 < s <= 1 and math.isfinite(s) for s in fv.scores()), f"scores {fv.scores()}")
    v.note(f"{elapsed:.1f}s on backend {_accel.backend()} with {_accel.num_threads()} thread(s)")
    v.finish()


# 10 ---------------------------------------------------------------------


def test_criterion_10_full_dataset_documented(capsys):
    with capsys.disabled():
        print("\n[criterion 10] NOT GATED full-dataset reproduction needs the licensed MOS datasets; "
              "see README 'Full-dataset check'")
    pytest.skip("full-dataset reproduction is documented, not gated")
