"""Epsilon-support vector regression with an RBF kernel, trained by SMO.

The dual is solved in the standard 2n-variable form: with ``z = [a; a*]``,
labels ``s = [+1...; -1...]`` and ``Q_tu = s_t s_u k(x_t, x_u)``::

    minimize   1/2 z'Qz + p'z,   p = [eps - y; eps + y]
    subject to s'z = 0,  0 <= z <= C

and the regression coefficients are ``beta = a - a*``.  Each iteration
takes the maximal KKT violator as the first variable, picks its partner by
the largest second-order decrease, and solves the pair analytically.
Convergence is judged on the maximal violating pair gap.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

SCHEMA_VERSION = 1
_TAU = 1e-12
_FULL_KERNEL_MAX = 4000


class ModelFormatError(ValueError):
    """Unreadable or incompatible model file."""


@dataclass(frozen=True)
class SvrHyperparams:
    """Training settings.

    ``epsilon=None`` means ``0.1 * std(targets)``; ``gamma=None`` means
    ``1 / n_features`` (on standardized features).
    """

    C: float = 1.0
    epsilon: Optional[float] = None
    gamma: Optional[float] = None
    kkt_tolerance: float = 1e-3
    max_passes: int = 1_000_000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if self.epsilon is not None and not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be > 0")
        if self.max_passes < 0:
            raise ValueError("max_passes must be >= 0")


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # (m, d), standardized
    coefficients: np.ndarray  # (m,)
    bias: float
    gamma: float
    C: float
    epsilon: float
    means: np.ndarray
    scales: np.ndarray
    converged: bool = True
    iterations: int = 0
    kkt_violation: float = 0.0
    dual_objective: float = 0.0
    objective_trace: Optional[list] = field(default=None, repr=False, compare=False)

    @property
    def n_features(self) -> int:
        return self.means.shape[0]

    @property
    def n_support(self) -> int:
        return self.coefficients.shape[0]

    def standardize(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (x - self.means) / self.scales

    def predict(self, features) -> np.ndarray:
        """Predictions for an ``(n, d)`` matrix (or a single ``(d,)`` row)."""
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        xs = self.standardize(np.atleast_2d(x))
        if self.n_support:
            f = rbf_kernel(xs, self.support_vectors, self.gamma) @ self.coefficients + self.bias
        else:
            f = np.full(xs.shape[0], self.bias)
        return f[0] if single else f


def rbf_kernel(a, b, gamma):
    """``exp(-gamma * ||a_i - b_j||^2)`` for all row pairs."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    d2 = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


def standardize_fit(features):
    """Per-column mean and population std; near-constant columns get scale 1."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("features must be a non-empty (n, d) matrix")
    means = x.mean(axis=0)
    scales = x.std(axis=0)
    scales = np.where(scales <= 1e-12, 1.0, scales)
    return means, scales


class _KernelRows:
    """Kernel rows over the training set; the full matrix when it fits, else an LRU of rows."""

    def __init__(self, x, gamma, max_rows=1024):
        self.x = x
        self.gamma = gamma
        n = x.shape[0]
        self.full = rbf_kernel(x, x, gamma) if n <= _FULL_KERNEL_MAX else None
        self.diag = np.ones(n)
        self._cache = OrderedDict()
        self._max = max_rows

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        r = self._cache.get(i)
        if r is None:
            r = rbf_kernel(self.x[i:i + 1], self.x, self.gamma)[0]
            self._cache[i] = r
            if len(self._cache) > self._max:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(i)
        return r


def _dual_value(z, grad, p):
    # f(z) = 1/2 z'Qz + p'z = 1/2 z'(grad + p)
    return 0.5 * float(z @ (grad + p))


def _solve_smo(kernel, y, C, eps, tol, max_iter, trace=None):
    n = y.shape[0]
    s = np.concatenate([np.ones(n), -np.ones(n)])
    p = np.concatenate([eps - y, eps + y])
    z = np.zeros(2 * n)
    grad = p.copy()
    it = 0
    gap = 0.0
    converged = False
    while True:
        ys_grad = -s * grad
        up = ((s > 0) & (z < C)) | ((s < 0) & (z > 0))
        low = ((s > 0) & (z > 0)) | ((s < 0) & (z < C))
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, ys_grad, -np.inf)))
        gap = ys_grad[i] - float(np.min(np.where(low, ys_grad, np.inf)))
        if gap <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1

        # second-order choice of j: largest guaranteed decrease b^2 / a
        ki = kernel.row(i % n)
        b = ys_grad[i] - ys_grad
        a = kernel.diag[i % n] + np.concatenate([kernel.diag, kernel.diag]) - 2.0 * np.concatenate([ki, ki])
        a = np.where(a > 0, a, _TAU)
        j = int(np.argmax(np.where(low & (b > 0), b * b / a, -np.inf)))
        kj = kernel.row(j % n)
        si, sj = s[i], s[j]
        qii = kernel.diag[i % n]
        qjj = kernel.diag[j % n]
        qij = si * sj * ki[j % n]
        zi_old, zj_old = z[i], z[j]
        # two-variable subproblem, clipped to the box (libsvm-style update)
        if si != sj:
            quad = qii + qjj + 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = z[i] - z[j]
            z[i] += delta
            z[j] += delta
            if diff > 0:
                if z[j] < 0:
                    z[j] = 0.0
                    z[i] = diff
            else:
                if z[i] < 0:
                    z[i] = 0.0
                    z[j] = -diff
            if diff > 0:
                if z[i] > C:
                    z[i] = C
                    z[j] = C - diff
            else:
                if z[j] > C:
                    z[j] = C
                    z[i] = C + diff
        else:
            quad = qii + qjj - 2.0 * qij
            if quad <= 0:
                quad = _TAU
            delta = (grad[i] - grad[j]) / quad
            total = z[i] + z[j]
            z[i] -= delta
            z[j] += delta
            if total > C:
                if z[i] > C:
                    z[i] = C
                    z[j] = total - C
            else:
                if z[j] < 0:
                    z[j] = 0.0
                    z[i] = total
            if total > C:
                if z[j] > C:
                    z[j] = C
                    z[i] = total - C
            else:
                if z[i] < 0:
                    z[i] = 0.0
                    z[j] = total
        dzi = z[i] - zi_old
        dzj = z[j] - zj_old
        # Q[:, t] = s * s_t * K[:, t mod n], tiled over both halves
        kcol = si * dzi * ki + sj * dzj * kj
        grad += s * np.concatenate([kcol, kcol])
        if trace is not None:
            trace.append(-_dual_value(z, grad, p))
    return z, grad, s, it, gap, converged


def _bias(z, grad, s, C):
    yg = s * grad
    at_upper = z >= C
    at_lower = z <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        ub_mask = (at_upper & (s < 0)) | (at_lower & (s > 0))
        lb_mask = (at_upper & (s > 0)) | (at_lower & (s < 0))
        ub = float(np.min(yg[ub_mask])) if ub_mask.any() else math.inf
        lb = float(np.max(yg[lb_mask])) if lb_mask.any() else -math.inf
        rho = (ub + lb) / 2.0
    return -rho


def train(features, targets, hp: Optional[SvrHyperparams] = None, record_trace: bool = False) -> SvrModel:
    """Fit an RBF epsilon-SVR on standardized ``features`` (n, d) to ``targets`` (n,)."""
    hp = hp or SvrHyperparams()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise ValueError("features must be (n, d) with one target per row")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("features and targets must be finite")

    means, scales = standardize_fit(x)
    xs = (x - means) / scales
    d = x.shape[1]
    gamma = hp.gamma if hp.gamma is not None else 1.0 / d
    eps = hp.epsilon if hp.epsilon is not None else 0.1 * float(np.std(y))
    C = float(hp.C)

    kernel = _KernelRows(xs, gamma)
    trace = [] if record_trace else None
    z, grad, s, it, gap, converged = _solve_smo(kernel, y, C, eps, hp.kkt_tolerance, hp.max_passes, trace)
    n = y.shape[0]
    beta = z[:n] - z[n:]
    keep = beta != 0.0
    return SvrModel(
        support_vectors=xs[keep].copy(),
        coefficients=beta[keep].copy(),
        bias=_bias(z, grad, s, C),
        gamma=float(gamma),
        C=C,
        epsilon=float(eps),
        means=means,
        scales=scales,
        converged=bool(converged),
        iterations=int(it),
        kkt_violation=float(max(gap, 0.0)),
        dual_objective=-_dual_value(z, grad, np.concatenate([eps - y, eps + y])),
        objective_trace=trace,
    )


def dual_objective(beta, kernel_matrix, targets, epsilon):
    """``-1/2 b'Kb - eps*sum|b| + b'y`` (the quantity SMO maximizes)."""
    b = np.asarray(beta, dtype=np.float64)
    return float(-0.5 * b @ kernel_matrix @ b - epsilon * np.sum(np.abs(b)) + b @ np.asarray(targets))


def predict(model: SvrModel, features):
    return model.predict(features)


def _floats(a):
    return [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]


def model_to_dict(model: SvrModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kernel": "rbf",
        "gamma": float(model.gamma),
        "C": float(model.C),
        "epsilon": float(model.epsilon),
        "bias": float(model.bias),
        "means": _floats(model.means),
        "scales": _floats(model.scales),
        "support_vectors": [_floats(r) for r in model.support_vectors],
        "coefficients": _floats(model.coefficients),
        "converged": bool(model.converged),
        "iterations": int(model.iterations),
        "kkt_violation": float(model.kkt_violation),
    }


def model_from_dict(data: dict) -> SvrModel:
    if not isinstance(data, dict):
        raise ModelFormatError("model file must contain a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    if data.get("kernel") != "rbf":
        raise ModelFormatError(f"unsupported kernel {data.get('kernel')!r}")
    try:
        means = np.array(data["means"], dtype=np.float64)
        scales = np.array(data["scales"], dtype=np.float64)
        coef = np.array(data["coefficients"], dtype=np.float64)
        d = means.shape[0]
        sv = np.array(data["support_vectors"], dtype=np.float64).reshape(len(coef), d)
        model = SvrModel(
            support_vectors=sv,
            coefficients=coef,
            bias=float(data["bias"]),
            gamma=float(data["gamma"]),
            C=float(data["C"]),
            epsilon=float(data["epsilon"]),
            means=means,
            scales=scales,
            converged=bool(data.get("converged", True)),
            iterations=int(data.get("iterations", 0)),
            kkt_violation=float(data.get("kkt_violation", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"corrupted model field: {exc}") from exc
    if means.ndim != 1 or scales.shape != means.shape or coef.ndim != 1:
        raise ModelFormatError("inconsistent model dimensions")
    if not np.all(scales > 0):
        raise ModelFormatError("scales must be positive")
    finite = [model.gamma, model.bias, model.C, model.epsilon]
    if not (np.all(np.isfinite(finite)) and np.all(np.isfinite(sv)) and np.all(np.isfinite(coef))):
        raise ModelFormatError("non-finite values in model")
    if not model.gamma > 0:
        raise ModelFormatError("gamma must be positive")
    return model


def save_model(model: SvrModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        # json writes floats with repr(), which round-trips exactly
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> SvrModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(data)
