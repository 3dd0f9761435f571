"""Backend switch for the hot kernels.

Kernels are compiled with numba when available.  Setting the environment
variable ``PCQA_DISABLE_NUMBA=1`` (or calling :func:`set_backend`) routes
every dispatcher to the vectorized numpy/scipy implementation instead.
"""
import os

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # the bundled TBB is too old for numba; prefer OpenMP and skip the noisy probe
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False
    numba = None
    prange = range

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def _env_disabled():
    return os.environ.get("PCQA_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


_use_numba = HAVE_NUMBA and not _env_disabled()


def use_numba():
    return _use_numba


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if _use_numba else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` for subsequent calls; returns the previous name."""
    global _use_numba
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def set_num_threads(n):
    """Cap numba's thread pool (no-op on the numpy backend)."""
    if HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def num_threads():
    """Threads the numba kernels will use (1 on the numpy backend)."""
    return numba.get_num_threads() if use_numba() else 1


__all__ = ["HAVE_NUMBA", "njit", "prange", "use_numba", "backend", "set_backend", "set_num_threads", "num_threads"]
