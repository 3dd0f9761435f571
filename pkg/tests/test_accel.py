import os
import subprocess
import sys

import pytest

from pcqa import _accel


@pytest.mark.parametrize("value, expected", [("1", "numpy"), ("true", "numpy"), ("0", "numba"), ("", "numba")])
def test_env_flag_selects_backend(value, expected):
    if expected == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    env = dict(os.environ, PCQA_DISABLE_NUMBA=value)
    out = subprocess.run([sys.executable, "-c", "import pcqa; print(pcqa.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_set_backend_round_trip():
    prev = _accel.set_backend("numpy")
    try:
        assert _accel.backend() == "numpy" and _accel.num_threads() == 1
    finally:
        _accel.set_backend(prev)
    assert _accel.backend() == prev


def test_unknown_backend():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")
