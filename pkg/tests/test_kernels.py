"""Compute-lane equivalence.

The hot kernels run either jitted or as plain numpy, selected once at import
by VFMLAB_DISABLE_NUMBA. Both lanes execute the same source, so every public
number they produce must agree to floating-point reassociation. The battery
below runs in two subprocesses (one per lane) and the results are diffed.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

BATTERY = r"""
import sys
import numpy as np
import vfmlab
from vfmlab import (LossSpec, MtlParams, NetworkShape, WellDataset, fit_scaler,
                    init_model)
from vfmlab.diff import loss_gradient
from vfmlab.optim import map_loss
from vfmlab._jit import NUMBA_ENABLED

rng = np.random.default_rng(42)
n = 64
p1 = rng.uniform(9e6, 2e7, n)
X = np.column_stack([
    rng.uniform(0.1, 0.95, n),
    p1,
    p1 * rng.uniform(0.4, 0.9, n),
    rng.uniform(310, 370, n),
    rng.uniform(0.1, 0.5, n),
    rng.uniform(0.1, 0.6, n),
])
y = rng.uniform(5e3, 6e4, n)
t = np.arange(n, dtype=float) * 600.0
wells = rng.integers(1, 4, n)
source = np.zeros(n, dtype=np.uint8)
ds = WellDataset(t, X, y, source, wells.astype(np.int64))
scaler = fit_scaler(ds)

out = {"numba_enabled": np.array([NUMBA_ENABLED], dtype=bool)}
loss = LossSpec(noise_std=0.03 * float(np.mean(y)))
specs = [
    ("lr", {}),
    ("nn", dict(shape=NetworkShape(hidden=(12, 8)))),
    ("mm", {}),
    ("hem", dict(shape=NetworkShape(hidden=(10,)))),
    ("ham", dict(shape=NetworkShape(hidden=(10,)))),
    ("mtl", dict(mtl=MtlParams(well_ids=(1, 2, 3), task_dim=4,
                               block_width=12, n_blocks=2))),
]
for kind, kw in specs:
    m = init_model(kind, seed=7, scaler=scaler, **kw)
    theta = m.params.values + 0.05 * rng.standard_normal(len(m.params))
    m = m.with_values(theta)
    out[f"{kind}_pred"] = vfmlab.predict(m, X, wells if kind == "mtl" else None)
    g = loss_gradient(m, ds, loss)
    out[f"{kind}_loss"] = np.array([g.loss])
    out[f"{kind}_grad"] = g.grad
    out[f"{kind}_maploss"] = np.array([map_loss(m, ds, loss)])

np.savez(sys.argv[1], **out)
"""


@pytest.fixture(scope="module")
def lane_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("lanes")
    results = {}
    for lane, flag in [("numba", "0"), ("numpy", "1")]:
        env = dict(os.environ, VFMLAB_DISABLE_NUMBA=flag)
        out = root / f"{lane}.npz"
        proc = subprocess.run([sys.executable, "-c", BATTERY, str(out)],
                              env=env, capture_output=True, text=True,
                              timeout=600)
        assert proc.returncode == 0, proc.stderr[-2000:]
        results[lane] = dict(np.load(out))
    return results


def test_env_flag_selects_the_lane(lane_outputs):
    assert bool(lane_outputs["numba"]["numba_enabled"][0]) is True
    assert bool(lane_outputs["numpy"]["numba_enabled"][0]) is False


@pytest.mark.parametrize("kind", ["lr", "nn", "mm", "hem", "ham", "mtl"])
def test_lanes_agree_on_predictions(lane_outputs, kind):
    a = lane_outputs["numba"][f"{kind}_pred"]
    b = lane_outputs["numpy"][f"{kind}_pred"]
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("kind", ["lr", "nn", "mm", "hem", "ham", "mtl"])
def test_lanes_agree_on_loss_and_gradient(lane_outputs, kind):
    na, nb = lane_outputs["numba"], lane_outputs["numpy"]
    np.testing.assert_allclose(na[f"{kind}_loss"], nb[f"{kind}_loss"], rtol=1e-10)
    np.testing.assert_allclose(na[f"{kind}_maploss"], nb[f"{kind}_maploss"],
                               rtol=1e-10)
    ga, gb = na[f"{kind}_grad"], nb[f"{kind}_grad"]
    scale = np.maximum(np.abs(ga), np.abs(gb)).max() + 1e-30
    np.testing.assert_allclose(ga, gb, rtol=1e-9, atol=1e-9 * scale)


def test_numpy_lane_functions_are_plain_python():
    proc = subprocess.run(
        [sys.executable, "-c",
         "from vfmlab import kernels; import types; "
         "assert isinstance(kernels.lr_predict, types.FunctionType), "
         "type(kernels.lr_predict)"],
        env=dict(os.environ, VFMLAB_DISABLE_NUMBA="1"),
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr[-1000:]
