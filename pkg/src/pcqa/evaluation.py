"""Agreement between objective predictions and subjective scores.

PLCC is computed after mapping predictions through a monotone
four-parameter logistic; SROCC is computed on the raw predictions.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata

MAX_ITER = 2000
REL_TOL = 1e-10
ROUND_ITER = 500


def logistic4(x, b1, b2, b3, b4):
    """``(b1 - b2) / (1 + exp(-(x - b3) / b4)) + b2``."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        return (b1 - b2) / (1.0 + np.exp(-(x - b3) / b4)) + b2


def pearson(x, y) -> float:
    """Pearson correlation; 0 (with a warning) if either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if x.shape[0] < 3:
        raise ValueError("at least 3 samples are required")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        warnings.warn("zero variance input; correlation reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    return rankdata(np.asarray(x, dtype=np.float64), method="average")


def srocc(x, y) -> float:
    """Spearman rank-order correlation (Pearson on average ranks)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if x.shape[0] < 3:
        raise ValueError("at least 3 samples are required")
    if np.all(x == x[0]) or np.all(y == y[0]):
        warnings.warn("constant input; SROCC reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return pearson(average_ranks(x), average_ranks(y))


@dataclass
class LogisticFit:
    params: tuple
    identity: bool
    rmse: float
    iterations: int

    def __call__(self, x):
        if self.identity:
            return np.asarray(x, dtype=np.float64)
        return logistic4(x, *self.params)


def _simplex_rounds(sse, x0):
    """Nelder-Mead restarted from the incumbent in rounds of ROUND_ITER.

    Stops at MAX_ITER iterations or once a round improves the squared error
    by less than REL_TOL relative.
    """
    best_x, best_f = x0, sse(x0)
    iters = 0
    while iters < MAX_ITER and best_f > 0.0:
        res = minimize(sse, best_x, method="Nelder-Mead",
                       options={"maxiter": min(ROUND_ITER, MAX_ITER - iters),
                                "xatol": 0.0, "fatol": 0.0, "adaptive": True})
        iters += max(int(res.nit), 1)
        gain = best_f - res.fun
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        if gain <= REL_TOL * best_f:
            break
    return best_x, best_f, iters


def _correlation_sign(x, y) -> float:
    return float(np.sign((x - x.mean()) @ (y - y.mean())))


def fit_logistic4(predictions, mos) -> LogisticFit:
    """Least-squares four-parameter logistic from predictions to MOS (Nelder-Mead).

    Falls back to the identity mapping when predictions are constant or the
    fitted curve correlates worse with MOS than the raw predictions do.
    """
    x = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(mos, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be 1-D and of equal length")
    if x.shape[0] < 5:
        raise ValueError("at least 5 samples are required for the logistic fit")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")

    def identity_fit():
        return LogisticFit((np.nan,) * 4, True, float(np.sqrt(np.mean((x - y) ** 2))), 0)

    sx = float(np.std(x))
    if sx == 0.0:
        warnings.warn("constant predictions; using identity mapping", RuntimeWarning, stacklevel=2)
        return identity_fit()

    def sse(b):
        if b[3] == 0.0:
            return np.inf
        r = logistic4(x, *b) - y
        return float(r @ r)

    x0 = np.array([y.max(), y.min(), float(np.median(x)), sx / 4.0])
    best_x, best_f, iters = _simplex_rounds(sse, x0)
    if _correlation_sign(x, y) < 0:
        # the default start describes an increasing curve; try the mirrored one too
        alt = _simplex_rounds(sse, x0 * [1.0, 1.0, 1.0, -1.0])
        if alt[1] < best_f:
            best_x, best_f, iters = alt
    params = tuple(float(v) for v in best_x)
    fit = LogisticFit(params, False, float(np.sqrt(best_f / x.shape[0])), iters)

    mapped = fit(x)
    if not np.all(np.isfinite(mapped)) or np.std(mapped) == 0.0:
        warnings.warn("degenerate logistic fit; using identity mapping", RuntimeWarning, stacklevel=2)
        return identity_fit()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if pearson(mapped, y) < pearson(x, y):
            warnings.warn("logistic fit worse than raw predictions; using identity mapping",
                          RuntimeWarning, stacklevel=2)
            return identity_fit()
    return fit


def plcc(predictions, mos, fit: Optional[LogisticFit] = None) -> float:
    """Pearson correlation between logistic-mapped predictions and MOS."""
    fit = fit or fit_logistic4(predictions, mos)
    return pearson(fit(predictions), mos)


@dataclass
class EvalReport:
    n: int
    plcc: float
    srocc: float
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    rmse: float
    identity_mapping: bool = False

    CSV_HEADER = "n,plcc,srocc,beta1,beta2,beta3,beta4,rmse"

    def csv_row(self) -> str:
        vals = [self.plcc, self.srocc, self.beta1, self.beta2, self.beta3, self.beta4, self.rmse]
        return ",".join([str(self.n)] + [f"{v:.17g}" for v in vals])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def evaluate(predictions, mos) -> EvalReport:
    x = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(mos, dtype=np.float64)
    fit = fit_logistic4(x, y)
    mapped = fit(x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        p = pearson(mapped, y)
        s = srocc(x, y)
    return EvalReport(
        n=int(x.shape[0]), plcc=p, srocc=s,
        beta1=fit.params[0], beta2=fit.params[1], beta3=fit.params[2], beta4=fit.params[3],
        rmse=float(np.sqrt(np.mean((mapped - y) ** 2))),
        identity_mapping=fit.identity,
    )
